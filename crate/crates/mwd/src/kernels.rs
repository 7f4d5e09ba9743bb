//! Stencil row kernels and the reference sweeps built on them.
//!
//! Exactly one row routine exists per stencil, and every execution path --
//! the level-by-level reference, the spatially blocked sweep and the
//! diamond-tiled runtime -- funnels through it. The routines fix the
//! floating-point accumulation order, which is why any two schedules of the
//! same problem agree bit for bit: per point the result is a pure function
//! of the previous level, evaluated by the same instruction sequence.

use crate::grid::{CoefficientMode, Grid3D, StencilSpec};

/// Weights of the constant-coefficient star: center plus one shared weight
/// for the six face neighbours.
pub const CENTER_WEIGHT: f64 = 0.4;
pub const NEIGHBOR_WEIGHT: f64 = 0.1;

/// Read/write buffer pair as raw pointers, shareable across worker threads.
/// Callers guarantee that concurrently written rows are disjoint.
#[derive(Clone, Copy)]
pub(crate) struct BufPair {
    pub u: *mut f64,
    pub v: *mut f64,
}

unsafe impl Send for BufPair {}
unsafe impl Sync for BufPair {}

impl BufPair {
    /// (read, write) pointers for the update that produces level
    /// `time_step + 1`. Level L lives in buffer L % 2.
    pub fn step(&self, time_step: usize) -> (*const f64, *mut f64) {
        if time_step % 2 == 0 {
            (self.u as *const f64, self.v)
        } else {
            (self.v as *const f64, self.u)
        }
    }
}

unsafe fn row_7pt_const(
    src: *const f64,
    dst: *mut f64,
    sy: usize,
    sz: usize,
    base: usize,
    x0: usize,
    x1: usize,
) {
    for i in base + x0..base + x1 {
        let v = src.add(i);
        *dst.add(i) = CENTER_WEIGHT * *v
            + NEIGHBOR_WEIGHT * (*v.add(1) + *v.sub(1))
            + NEIGHBOR_WEIGHT * (*v.add(sy) + *v.sub(sy))
            + NEIGHBOR_WEIGHT * (*v.add(sz) + *v.sub(sz));
    }
}

unsafe fn row_7pt_var(
    src: *const f64,
    dst: *mut f64,
    coeffs: &[Vec<f64>],
    sy: usize,
    sz: usize,
    base: usize,
    x0: usize,
    x1: usize,
) {
    // Array order: center, x+1, x-1, y+1, y-1, z+1, z-1.
    let c: [*const f64; 7] = std::array::from_fn(|k| coeffs[k].as_ptr());
    for i in base + x0..base + x1 {
        let v = src.add(i);
        *dst.add(i) = *c[0].add(i) * *v
            + *c[1].add(i) * *v.add(1)
            + *c[2].add(i) * *v.sub(1)
            + *c[3].add(i) * *v.add(sy)
            + *c[4].add(i) * *v.sub(sy)
            + *c[5].add(i) * *v.add(sz)
            + *c[6].add(i) * *v.sub(sz);
    }
}

unsafe fn row_25pt_var(
    src: *const f64,
    dst: *mut f64,
    coeffs: &[Vec<f64>],
    sy: usize,
    sz: usize,
    base: usize,
    x0: usize,
    x1: usize,
) {
    // Array 0 is the center; then one shared array per (distance, axis)
    // pair, distance-major: x1 y1 z1 x2 y2 z2 x3 y3 z3 x4 y4 z4.
    let c: [*const f64; 13] = std::array::from_fn(|k| coeffs[k].as_ptr());
    for i in base + x0..base + x1 {
        let v = src.add(i);
        let mut acc = *c[0].add(i) * *v;
        let mut k = 1;
        for d in 1..=4usize {
            acc += *c[k].add(i) * (*v.add(d) + *v.sub(d));
            acc += *c[k + 1].add(i) * (*v.add(d * sy) + *v.sub(d * sy));
            acc += *c[k + 2].add(i) * (*v.add(d * sz) + *v.sub(d * sz));
            k += 3;
        }
        *dst.add(i) = acc;
    }
}

/// Updates row (y, z), x in [x0, x1), reading level values from `src` and
/// writing the next level into `dst`.
///
/// # Safety
/// `src` and `dst` point into the two same-shaped buffers of one grid and
/// `coeffs` holds the stencil's arrays at full grid size. The row must lie
/// in the interior ([radius, n - radius) per axis, x0/x1 included), so all
/// neighbour reads stay in bounds. Concurrent callers must write disjoint
/// rows; reads may overlap freely since `dst` is never read.
pub(crate) unsafe fn update_row_raw(
    spec: &StencilSpec,
    src: *const f64,
    dst: *mut f64,
    coeffs: &[Vec<f64>],
    nx: usize,
    ny: usize,
    y: usize,
    z: usize,
    x0: usize,
    x1: usize,
) {
    let sy = nx;
    let sz = nx * ny;
    let base = nx * (y + ny * z);
    match (spec.points, spec.mode) {
        (7, CoefficientMode::Constant) => row_7pt_const(src, dst, sy, sz, base, x0, x1),
        (7, CoefficientMode::Variable) => row_7pt_var(src, dst, coeffs, sy, sz, base, x0, x1),
        (25, CoefficientMode::Variable) => row_25pt_var(src, dst, coeffs, sy, sz, base, x0, x1),
        _ => unreachable!("no kernel for {}", spec.name),
    }
}

/// Applies one update at interior point (x, y, z): reads the grid's current
/// level, writes the next-level value into the back buffer and returns it.
/// The grid's level counter does not move. Goes through the same row routine
/// as the sweeps, over a one-point range, so the value is bit-identical to
/// what any schedule produces there.
pub fn update_point(spec: &StencilSpec, grid: &mut Grid3D, x: usize, y: usize, z: usize) -> f64 {
    let r = grid.radius;
    assert!(
        x >= r && x < grid.nx - r && y >= r && y < grid.ny - r && z >= r && z < grid.nz - r,
        "({}, {}, {}) is not interior",
        x,
        y,
        z
    );
    let (nx, ny) = (grid.nx, grid.ny);
    let level = grid.level();
    let i = grid.linear_index(x, y, z);
    let (u, v, coeffs) = grid.raw_parts();
    let bufs = BufPair { u, v };
    let (src, dst) = bufs.step(level);
    unsafe {
        update_row_raw(spec, src, dst, coeffs, nx, ny, y, z, x, x + 1);
        *dst.add(i)
    }
}

/// Level-by-level reference sweep: advances the grid `steps` levels,
/// visiting rows in plain storage order. Zero steps is the identity.
pub fn naive_sweep(spec: &StencilSpec, grid: &mut Grid3D, steps: usize) {
    if steps == 0 {
        return;
    }
    grid.mirror_halo();
    let (nx, ny, nz, r) = (grid.nx, grid.ny, grid.nz, grid.radius);
    let base_level = grid.level();
    {
        let (u, v, coeffs) = grid.raw_parts();
        let bufs = BufPair { u, v };
        for t in 0..steps {
            let (src, dst) = bufs.step(base_level + t);
            for z in r..nz - r {
                for y in r..ny - r {
                    unsafe {
                        update_row_raw(spec, src, dst, coeffs, nx, ny, y, z, r, nx - r);
                    }
                }
            }
        }
    }
    grid.advance(steps);
}

/// Spatially blocked sweep: every time level is barrier-synchronized, with
/// the interior z range split into one contiguous chunk per thread. This is
/// the non-temporal baseline the diamond runtime is measured against.
pub fn spatial_blocked_sweep(spec: &StencilSpec, grid: &mut Grid3D, steps: usize, threads: usize) {
    assert!(threads >= 1);
    if steps == 0 {
        return;
    }
    grid.mirror_halo();
    let (nx, ny, nz, r) = (grid.nx, grid.ny, grid.nz, grid.radius);
    let base_level = grid.level();
    let chunk = (nz - 2 * r).div_ceil(threads);
    {
        let (u, v, coeffs) = grid.raw_parts();
        let bufs = BufPair { u, v };
        for t in 0..steps {
            std::thread::scope(|scope| {
                for w in 0..threads {
                    let z_lo = r + w * chunk;
                    let z_hi = (z_lo + chunk).min(nz - r);
                    if z_lo >= z_hi {
                        break;
                    }
                    let coeffs: &[Vec<f64>] = coeffs;
                    scope.spawn(move || {
                        let (src, dst) = bufs.step(base_level + t);
                        for z in z_lo..z_hi {
                            for y in r..ny - r {
                                // Safety: chunks are disjoint in z.
                                unsafe {
                                    update_row_raw(spec, src, dst, coeffs, nx, ny, y, z, r, nx - r);
                                }
                            }
                        }
                    });
                }
            });
        }
    }
    grid.advance(steps);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compare_front, init_grid, make_spec};

    #[test]
    fn zero_steps_is_identity() {
        let spec = make_spec("7pt-const").unwrap();
        let mut g = init_grid(&spec, 8, 8, 8, 3);
        let before = g.clone();
        naive_sweep(&spec, &mut g, 0);
        assert!(compare_front(&before, &g).bit_equal);
        assert_eq!(g.level(), 0);
    }

    #[test]
    fn uniform_field_is_a_fixed_point() {
        // The constant star's weights sum to 1, and for a uniform field the
        // accumulation 0.4 + 0.2 + 0.2 + 0.2 happens to round to exactly 1
        // in binary64, so ones map to ones bit for bit, step after step.
        let spec = make_spec("7pt-const").unwrap();
        let mut g = init_grid(&spec, 10, 9, 8, 0);
        g.fill_solution(|_, _, _| 1.0);
        naive_sweep(&spec, &mut g, 6);
        for &x in g.front() {
            assert_eq!(x.to_bits(), 1.0f64.to_bits());
        }
    }

    /// Test-local scalar oracles, written term by term from the kernel
    /// definitions, independent of the row routines' loop structure.
    fn oracle(spec: &StencilSpec, g: &Grid3D, x: usize, y: usize, z: usize) -> f64 {
        let at = |dx: isize, dy: isize, dz: isize| {
            g.value(
                (x as isize + dx) as usize,
                (y as isize + dy) as usize,
                (z as isize + dz) as usize,
            )
        };
        let c = |k: usize| g.coeff(k)[g.linear_index(x, y, z)];
        match spec.name {
            "7pt-const" => {
                0.4 * at(0, 0, 0)
                    + 0.1 * (at(1, 0, 0) + at(-1, 0, 0))
                    + 0.1 * (at(0, 1, 0) + at(0, -1, 0))
                    + 0.1 * (at(0, 0, 1) + at(0, 0, -1))
            }
            "7pt-var" => {
                c(0) * at(0, 0, 0)
                    + c(1) * at(1, 0, 0)
                    + c(2) * at(-1, 0, 0)
                    + c(3) * at(0, 1, 0)
                    + c(4) * at(0, -1, 0)
                    + c(5) * at(0, 0, 1)
                    + c(6) * at(0, 0, -1)
            }
            "25pt-var" => {
                c(0) * at(0, 0, 0)
                    + c(1) * (at(1, 0, 0) + at(-1, 0, 0))
                    + c(2) * (at(0, 1, 0) + at(0, -1, 0))
                    + c(3) * (at(0, 0, 1) + at(0, 0, -1))
                    + c(4) * (at(2, 0, 0) + at(-2, 0, 0))
                    + c(5) * (at(0, 2, 0) + at(0, -2, 0))
                    + c(6) * (at(0, 0, 2) + at(0, 0, -2))
                    + c(7) * (at(3, 0, 0) + at(-3, 0, 0))
                    + c(8) * (at(0, 3, 0) + at(0, -3, 0))
                    + c(9) * (at(0, 0, 3) + at(0, 0, -3))
                    + c(10) * (at(4, 0, 0) + at(-4, 0, 0))
                    + c(11) * (at(0, 4, 0) + at(0, -4, 0))
                    + c(12) * (at(0, 0, 4) + at(0, 0, -4))
            }
            other => panic!("no oracle for {}", other),
        }
    }

    fn single_step_matches_oracle(name: &str, nx: usize, ny: usize, nz: usize) {
        let spec = make_spec(name).unwrap();
        let before = init_grid(&spec, nx, ny, nz, 17);
        let mut after = before.clone();
        naive_sweep(&spec, &mut after, 1);
        let r = spec.radius;
        for z in r..nz - r {
            for y in r..ny - r {
                for x in r..nx - r {
                    let want = oracle(&spec, &before, x, y, z);
                    let got = after.value(x, y, z);
                    assert_eq!(
                        got.to_bits(),
                        want.to_bits(),
                        "{} at ({}, {}, {}): {} vs {}",
                        name,
                        x,
                        y,
                        z,
                        got,
                        want
                    );
                }
            }
        }
    }

    #[test]
    fn kernels_match_scalar_oracles() {
        single_step_matches_oracle("7pt-const", 8, 7, 6);
        single_step_matches_oracle("7pt-var", 8, 7, 6);
        single_step_matches_oracle("25pt-var", 12, 11, 10);
    }

    #[test]
    fn update_point_agrees_with_the_sweep() {
        let spec = make_spec("7pt-var").unwrap();
        let mut g = init_grid(&spec, 8, 7, 6, 23);
        let probe = update_point(&spec, &mut g, 3, 2, 4);
        assert_eq!(probe.to_bits(), oracle(&spec, &g, 3, 2, 4).to_bits());
        assert_eq!(g.level(), 0); // probing does not advance time

        // Uniform ones under the constant star stay exactly 1.
        let spec = make_spec("7pt-const").unwrap();
        let mut g = init_grid(&spec, 8, 7, 6, 0);
        g.fill_solution(|_, _, _| 1.0);
        assert_eq!(update_point(&spec, &mut g, 4, 3, 2).to_bits(), 1.0f64.to_bits());

        // Zeroed coefficients annihilate any field.
        let spec = make_spec("25pt-var").unwrap();
        let mut g = init_grid(&spec, 12, 12, 12, 9);
        for k in 0..13 {
            g.fill_coeff(k, |_, _, _| 0.0);
        }
        assert_eq!(update_point(&spec, &mut g, 5, 6, 7), 0.0);
    }

    #[test]
    fn boundary_shell_is_never_written() {
        let spec = make_spec("25pt-var").unwrap();
        let before = init_grid(&spec, 12, 12, 12, 5);
        let mut after = before.clone();
        naive_sweep(&spec, &mut after, 3);
        let r = spec.radius;
        for z in 0..12 {
            for y in 0..12 {
                for x in 0..12 {
                    let shell = [x, y, z].iter().any(|&c| c < r || c >= 12 - r);
                    if shell {
                        assert_eq!(
                            after.value(x, y, z).to_bits(),
                            before.value(x, y, z).to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_blocking_matches_reference_bit_for_bit() {
        for (name, threads) in [("7pt-var", 3), ("25pt-var", 4), ("7pt-const", 7)] {
            let spec = make_spec(name).unwrap();
            let mut a = init_grid(&spec, 14, 13, 12, 29);
            let mut b = a.clone();
            naive_sweep(&spec, &mut a, 5);
            spatial_blocked_sweep(&spec, &mut b, 5, threads);
            let diff = compare_front(&a, &b);
            assert!(diff.bit_equal, "{} diverged at {:?}", name, diff.first_diff);
        }
    }

    #[test]
    fn chained_sweeps_match_one_long_sweep() {
        let spec = make_spec("7pt-var").unwrap();
        let mut a = init_grid(&spec, 9, 8, 7, 41);
        let mut b = a.clone();
        naive_sweep(&spec, &mut a, 5);
        naive_sweep(&spec, &mut b, 2);
        naive_sweep(&spec, &mut b, 3);
        assert_eq!(b.level(), 5);
        assert!(compare_front(&a, &b).bit_equal);
    }
}
