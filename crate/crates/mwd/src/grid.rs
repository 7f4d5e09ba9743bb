//! Stencil descriptors, double-buffered grid storage and run configuration.
//!
//! A grid holds two solution buffers (Jacobi update: read one level, write
//! the next) plus the per-point coefficient arrays a stencil needs. Storage
//! is x unit-stride, `idx = x + nx*(y + ny*z)`, double precision throughout.
//! Boundary values form a Dirichlet shell of width `radius` on every face;
//! they are never written by a sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Whether a stencil reads scalar weights or per-point coefficient arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CoefficientMode {
    Constant,
    Variable,
}

/// Static description of one stencil kernel.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StencilSpec {
    pub name: &'static str,
    /// Neighbourhood radius along each axis.
    pub radius: usize,
    pub mode: CoefficientMode,
    /// Per-point coefficient arrays held by the grid.
    pub coeff_arrays: usize,
    /// Memory streams touched per lattice update: the two solution buffers
    /// plus every coefficient array. Drives the traffic models.
    pub streams: usize,
    /// Points read by one update.
    pub points: usize,
}

/// Symmetric second-order 7-point star with two scalar weights.
pub const SEVEN_POINT_CONST: StencilSpec = StencilSpec {
    name: "7pt-const",
    radius: 1,
    mode: CoefficientMode::Constant,
    coeff_arrays: 0,
    streams: 2,
    points: 7,
};

/// 7-point star with one coefficient array per point, no symmetry assumed.
pub const SEVEN_POINT_VAR: StencilSpec = StencilSpec {
    name: "7pt-var",
    radius: 1,
    mode: CoefficientMode::Variable,
    coeff_arrays: 7,
    streams: 9,
    points: 7,
};

/// Eighth-order 25-point star, variable coefficients with axis symmetry
/// (one shared coefficient per +/- offset pair).
pub const TWENTY_FIVE_POINT_VAR: StencilSpec = StencilSpec {
    name: "25pt-var",
    radius: 4,
    mode: CoefficientMode::Variable,
    coeff_arrays: 13,
    streams: 15,
    points: 25,
};

/// Looks up a stencil by the name used on the command line.
pub fn make_spec(name: &str) -> Result<StencilSpec> {
    match name {
        "7pt-const" => Ok(SEVEN_POINT_CONST),
        "7pt-var" => Ok(SEVEN_POINT_VAR),
        "25pt-var" => Ok(TWENTY_FIVE_POINT_VAR),
        other => Err(Error::UnknownStencil(other.to_string())),
    }
}

/// Double-buffered scalar field with coefficient arrays.
#[derive(Clone)]
pub struct Grid3D {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub radius: usize,
    /// Solution buffers. Time level `L` lives in buffer `L % 2`, with
    /// buffer 0 = `u`.
    u: Vec<f64>,
    v: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
    /// Time level currently held by the front buffer.
    level: usize,
}

/// Builds a grid for `spec` and fills it deterministically from `seed`:
/// the solution gets uniform values in [0, 1), every coefficient array
/// uniform values in [0.01, 1]. The fill order (solution first, then the
/// coefficient arrays in index order, each in linear storage order) is part
/// of the reproducibility contract: identical (seed, extents) always yield
/// bit-identical grids.
pub fn init_grid(spec: &StencilSpec, nx: usize, ny: usize, nz: usize, seed: u64) -> Grid3D {
    let n = nx * ny * nz;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; n];
    for x in u.iter_mut() {
        *x = rng.gen_range(0.0..1.0);
    }
    let mut coeffs = Vec::with_capacity(spec.coeff_arrays);
    for _ in 0..spec.coeff_arrays {
        let mut c = vec![0.0; n];
        for x in c.iter_mut() {
            *x = rng.gen_range(0.01..=1.0);
        }
        coeffs.push(c);
    }
    Grid3D {
        nx,
        ny,
        nz,
        radius: spec.radius,
        u,
        v: vec![0.0; n],
        coeffs,
        level: 0,
    }
}

impl Grid3D {
    /// Linear index of point (x, y, z); x is the unit-stride direction.
    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    /// Interior extent along one axis: [radius, n - radius).
    #[inline]
    pub fn interior(&self, n: usize) -> (usize, usize) {
        (self.radius, n - self.radius)
    }

    pub fn coeff(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    /// Buffer holding the newest time level.
    pub fn front(&self) -> &[f64] {
        if self.level % 2 == 0 {
            &self.u
        } else {
            &self.v
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Value of the newest level at (x, y, z).
    pub fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.front()[self.linear_index(x, y, z)]
    }

    /// Raw pointers to both buffers plus shared coefficient slices, for the
    /// threaded executor. Writes through the pointers must stay disjoint.
    pub(crate) fn raw_parts(&mut self) -> (*mut f64, *mut f64, &[Vec<f64>]) {
        let u = self.u.as_mut_ptr();
        let v = self.v.as_mut_ptr();
        (u, v, &self.coeffs)
    }

    pub(crate) fn advance(&mut self, steps: usize) {
        self.level += steps;
    }

    /// Overwrites the newest level with `f(x, y, z)`.
    pub fn fill_solution(&mut self, f: impl Fn(usize, usize, usize) -> f64) {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let buf = if self.level % 2 == 0 {
            &mut self.u
        } else {
            &mut self.v
        };
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    buf[i] = f(x, y, z);
                    i += 1;
                }
            }
        }
    }

    /// Overwrites coefficient array `k` with `f(x, y, z)`.
    pub fn fill_coeff(&mut self, k: usize, f: impl Fn(usize, usize, usize) -> f64) {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let buf = &mut self.coeffs[k];
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    buf[i] = f(x, y, z);
                    i += 1;
                }
            }
        }
    }

    /// Copies the boundary shell from the buffer holding the current level
    /// into the other buffer, so reads of boundary values work at either
    /// parity. Sweeps call this once before stepping.
    pub fn mirror_halo(&mut self) {
        let (nx, ny, nz, r) = (self.nx, self.ny, self.nz, self.radius);
        let (src, dst) = if self.level % 2 == 0 {
            (&self.u, &mut self.v)
        } else {
            (&self.v, &mut self.u)
        };
        for z in 0..nz {
            for y in 0..ny {
                let row = nx * (y + ny * z);
                if z < r || z >= nz - r || y < r || y >= ny - r {
                    dst[row..row + nx].copy_from_slice(&src[row..row + nx]);
                } else {
                    dst[row..row + r].copy_from_slice(&src[row..row + r]);
                    dst[row + nx - r..row + nx].copy_from_slice(&src[row + nx - r..row + nx]);
                }
            }
        }
    }

    /// Total bytes held in solution and coefficient storage.
    pub fn bytes(&self) -> u64 {
        let arrays = 2 + self.coeffs.len();
        (arrays * self.u.len() * std::mem::size_of::<f64>()) as u64
    }

    /// Interior point count.
    pub fn interior_points(&self) -> u64 {
        let ix = (self.nx - 2 * self.radius) as u64;
        let iy = (self.ny - 2 * self.radius) as u64;
        let iz = (self.nz - 2 * self.radius) as u64;
        ix * iy * iz
    }
}

/// Result of comparing the front buffers of two grids.
#[derive(Debug, Clone, Serialize)]
pub struct BufferDiff {
    pub bit_equal: bool,
    /// Largest distance in units in the last place over all points.
    pub max_ulp: u64,
    /// First differing point in storage order, if any.
    pub first_diff: Option<(usize, usize, usize)>,
}

/// Compares the newest levels of two same-shaped grids bit for bit.
pub fn compare_front(a: &Grid3D, b: &Grid3D) -> BufferDiff {
    assert_eq!((a.nx, a.ny, a.nz), (b.nx, b.ny, b.nz), "grid shapes differ");
    let fa = a.front();
    let fb = b.front();
    let mut max_ulp = 0u64;
    let mut first = None;
    for (i, (x, y)) in fa.iter().zip(fb).enumerate() {
        if x.to_bits() != y.to_bits() {
            let ulp = ulp_distance(*x, *y);
            if first.is_none() {
                let xi = i % a.nx;
                let yi = (i / a.nx) % a.ny;
                let zi = i / (a.nx * a.ny);
                first = Some((xi, yi, zi));
            }
            max_ulp = max_ulp.max(ulp);
        }
    }
    BufferDiff {
        bit_equal: first.is_none(),
        max_ulp,
        first_diff: first,
    }
}

fn ulp_distance(a: f64, b: f64) -> u64 {
    // Map to a monotone integer line so the distance works across zero.
    fn key(x: f64) -> i64 {
        let b = x.to_bits() as i64;
        if b < 0 {
            i64::MIN.wrapping_add(-b)
        } else {
            b
        }
    }
    key(a).abs_diff(key(b))
}

/// Full parameter set for one tiled run.
#[derive(Clone, Debug, Serialize)]
pub struct MwdConfig {
    pub stencil: StencilSpec,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub steps: usize,
    /// Diamond extent along y; a positive multiple of 4*radius dividing ny.
    pub diamond_width: usize,
    /// z lines kept in flight per time level of the wavefront; split evenly
    /// across the owning thread group.
    pub frontlines: usize,
    /// x points updated per tile pass of the inner loop.
    pub x_tile: usize,
    pub threads: usize,
    pub group_size: usize,
    /// Shared-cache budget the block model is checked against.
    pub cache_bytes: u64,
    pub seed: u64,
}

impl MwdConfig {
    /// A valid starting point for the given stencil and extents: smallest
    /// diamond, one thread, full-stride x tile.
    pub fn new(stencil: StencilSpec, nx: usize, ny: usize, nz: usize) -> Self {
        MwdConfig {
            stencil,
            nx,
            ny,
            nz,
            steps: 8,
            diamond_width: 4 * stencil.radius,
            frontlines: 1,
            x_tile: nx.saturating_sub(2 * stencil.radius).max(1),
            threads: 1,
            group_size: 1,
            cache_bytes: 4 << 20,
            seed: 0,
        }
    }

    pub fn groups(&self) -> usize {
        self.threads / self.group_size.max(1)
    }

    pub fn frontlines_per_thread(&self) -> usize {
        self.frontlines / self.group_size.max(1)
    }

    /// Interior x extent, the range a full-stride x tile covers.
    pub fn interior_x(&self) -> usize {
        self.nx - 2 * self.stencil.radius
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.stencil.radius;
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.nx <= 2 * r || self.ny <= 2 * r || self.nz <= 2 * r {
            return fail(format!(
                "extents {}x{}x{} leave no interior for radius {}",
                self.nx, self.ny, self.nz, r
            ));
        }
        if self.diamond_width == 0 || self.diamond_width % (4 * r) != 0 {
            return fail(format!(
                "diamond width {} must be a positive multiple of {}",
                self.diamond_width,
                4 * r
            ));
        }
        if self.ny % self.diamond_width != 0 {
            return fail(format!(
                "ny={} is not a multiple of diamond width {}",
                self.ny, self.diamond_width
            ));
        }
        if self.threads == 0 || self.group_size == 0 || self.threads % self.group_size != 0 {
            return fail(format!(
                "group size {} must divide thread count {}",
                self.group_size, self.threads
            ));
        }
        if self.frontlines < self.group_size || self.frontlines % self.group_size != 0 {
            return fail(format!(
                "frontlines {} must be a multiple of group size {} (>= 1 per thread)",
                self.frontlines, self.group_size
            ));
        }
        if self.x_tile == 0 || self.x_tile > self.interior_x() {
            return fail(format!(
                "x tile {} outside 1..={} (interior x extent)",
                self.x_tile,
                self.interior_x()
            ));
        }
        // Hard sanity bound: a cache block bigger than the whole problem
        // means the tile shape is nonsense, whatever the cache size.
        let block = crate::models::cache_block_bytes(
            self.diamond_width,
            self.frontlines,
            self.x_tile,
            r,
            self.stencil.streams,
        );
        let total = (self.stencil.streams * self.nx * self.ny * self.nz * 8) as u64;
        if block > total {
            return fail(format!(
                "cache block estimate {} B exceeds total grid storage {} B",
                block, total
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_is_x_unit_stride() {
        let g = init_grid(&SEVEN_POINT_CONST, 8, 4, 5, 1);
        assert_eq!(g.linear_index(0, 0, 0), 0);
        assert_eq!(g.linear_index(1, 0, 0), 1);
        assert_eq!(g.linear_index(1, 2, 3), 1 + 8 * (2 + 4 * 3));
        assert_eq!(g.linear_index(7, 3, 4), 8 * 4 * 5 - 1);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_grid(&SEVEN_POINT_VAR, 6, 6, 6, 42);
        let b = init_grid(&SEVEN_POINT_VAR, 6, 6, 6, 42);
        let c = init_grid(&SEVEN_POINT_VAR, 6, 6, 6, 43);
        assert_eq!(a.front(), b.front());
        for k in 0..7 {
            assert_eq!(a.coeff(k), b.coeff(k));
        }
        assert_ne!(a.front(), c.front());
    }

    #[test]
    fn coefficients_stay_in_declared_range() {
        let g = init_grid(&TWENTY_FIVE_POINT_VAR, 10, 10, 10, 7);
        for k in 0..13 {
            for &c in g.coeff(k) {
                assert!((0.01..=1.0).contains(&c));
            }
        }
        for &x in g.front() {
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn mirror_halo_copies_the_shell_only() {
        let mut g = init_grid(&SEVEN_POINT_CONST, 6, 5, 4, 3);
        g.mirror_halo();
        let (r, nx, ny, nz) = (g.radius, g.nx, g.ny, g.nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = g.linear_index(x, y, z);
                    let boundary = x < r
                        || x >= nx - r
                        || y < r
                        || y >= ny - r
                        || z < r
                        || z >= nz - r;
                    if boundary {
                        assert_eq!(g.v[i].to_bits(), g.u[i].to_bits());
                    } else {
                        assert_eq!(g.v[i], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_stencil_is_rejected() {
        assert!(make_spec("9pt").is_err());
        assert_eq!(make_spec("25pt-var").unwrap().streams, 15);
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut c = MwdConfig::new(SEVEN_POINT_CONST, 16, 16, 16);
        assert!(c.validate().is_ok());
        c.diamond_width = 6;
        assert!(c.validate().is_err()); // not a multiple of 4
        c.diamond_width = 8;
        assert!(c.validate().is_ok());
        c.ny = 20;
        assert!(c.validate().is_err()); // 20 % 8 != 0
        c.ny = 16;
        c.threads = 4;
        c.group_size = 3;
        assert!(c.validate().is_err()); // 3 does not divide 4
        c.group_size = 2;
        c.frontlines = 3;
        assert!(c.validate().is_err()); // 3 not a multiple of 2
        c.frontlines = 4;
        assert!(c.validate().is_ok());
        assert_eq!(c.frontlines_per_thread(), 2);
        assert_eq!(c.groups(), 2);
    }

    #[test]
    fn config_validation_rejects_blocks_larger_than_the_problem() {
        let mut c = MwdConfig::new(SEVEN_POINT_CONST, 16, 16, 16);
        c.diamond_width = 16;
        c.frontlines = 1000;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.frontlines = 4;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn fill_coeff_targets_one_array() {
        let mut g = init_grid(&SEVEN_POINT_VAR, 4, 4, 4, 0);
        let before: Vec<f64> = g.coeff(1).to_vec();
        g.fill_coeff(0, |x, y, z| (x + 10 * y + 100 * z) as f64);
        assert_eq!(g.coeff(0)[g.linear_index(3, 2, 1)], 123.0);
        assert_eq!(g.coeff(1), &before[..]);
    }
}
