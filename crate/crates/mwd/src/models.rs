//! Analytic cache, traffic and power models for diamond-tiled sweeps.
//!
//! All byte figures assume 8-byte values. The block model counts the working
//! set one extruded diamond drags through cache per wavefront step; the
//! balance model counts main-memory bytes per lattice update once that
//! working set fits. Both are exact integer/rational expressions, so tests
//! compare them bit for bit, not approximately.

use serde::Serialize;

use crate::error::{Error, Result};

/// z extent of a diamond's wavefront: the trailing edge lags the leading
/// one by `diamond_width - 2*radius` lines, plus the frontline block that
/// every level advances per step.
pub fn wavefront_width(diamond_width: usize, radius: usize, frontlines: usize) -> usize {
    diamond_width - 2 * radius + frontlines
}

/// Cache footprint in bytes of one extruded diamond in flight.
///
/// Per x point the wavefront holds, for each of the `streams` arrays, the
/// parallelogram of y rows its live time levels span, plus the two y-halo
/// wedges (leading and trailing edge) of the solution buffers. The bracket
/// is exact in integers: `diamond_width` is an even multiple of the radius,
/// so the half-width division never truncates.
pub fn cache_block_bytes(
    diamond_width: usize,
    frontlines: usize,
    x_tile: usize,
    radius: usize,
    streams: usize,
) -> u64 {
    let dw = diamond_width as u64;
    let nf = frontlines as u64;
    let r = radius as u64;
    let nd = streams as u64;
    let ww = wavefront_width(diamond_width, radius, frontlines) as u64;
    let words = nd * dw * (dw / 2 - r + nf) + 2 * r * (dw + ww);
    8 * x_tile as u64 * words
}

/// Block footprint specialised to radius-1 stencils, derived independently
/// of the general expression. Kept as a cross-check: for radius 1 the two
/// must agree exactly.
pub fn cache_block_bytes_unit_radius(
    diamond_width: usize,
    frontlines: usize,
    x_tile: usize,
    streams: usize,
) -> u64 {
    let dw = diamond_width as u64;
    let nf = frontlines as u64;
    let nd = streams as u64;
    let ww = wavefront_width(diamond_width, 1, frontlines) as u64;
    // Leading term is the diamond area dw^2/2 plus the extra dw*(nf - 1)
    // rows the deeper frontlines keep live; summands ordered so the
    // subtraction cannot underflow for dw >= 4.
    let words = nd * (dw * dw / 2 + dw * nf - dw) + 2 * (dw + ww);
    8 * x_tile as u64 * words
}

/// Main-memory bytes per lattice update of a diamond-tiled sweep whose
/// block fits in cache: each array is streamed once per diamond pass, the
/// y-halo wedges are re-read at the seams, and the diamond amortises
/// `diamond_width^2 / (2*radius)` updates per column.
pub fn code_balance(diamond_width: usize, radius: usize, streams: usize) -> f64 {
    let dw = diamond_width as f64;
    let r = radius as f64;
    let nd = streams as f64;
    16.0 * r * ((2.0 * dw - 2.0 * r) + (nd * dw + 2.0 * r)) / (dw * dw)
}

/// Radius-1 balance, independently derived; must equal `code_balance`
/// exactly at radius 1.
pub fn code_balance_unit_radius(diamond_width: usize, streams: usize) -> f64 {
    let dw = diamond_width as f64;
    let nd = streams as f64;
    16.0 * ((2.0 * dw - 2.0) + (nd * dw + 2.0)) / (dw * dw)
}

/// Bandwidth-bound throughput in MLUP/s for a given memory bandwidth and
/// code balance.
pub fn roofline_mlups(bandwidth_bytes_per_s: f64, bytes_per_lup: f64) -> f64 {
    bandwidth_bytes_per_s / bytes_per_lup / 1e6
}

/// Block footprint with its inputs, for reports. `total_bytes` is the
/// aggregate footprint of all concurrently active thread groups, each
/// working its own diamond.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BlockEstimate {
    pub diamond_width: usize,
    pub frontlines: usize,
    pub x_tile: usize,
    pub wavefront_width: usize,
    pub bytes: u64,
    pub groups: usize,
    pub total_bytes: u64,
}

pub fn estimate_block(
    diamond_width: usize,
    frontlines: usize,
    x_tile: usize,
    radius: usize,
    streams: usize,
    groups: usize,
) -> BlockEstimate {
    let bytes = cache_block_bytes(diamond_width, frontlines, x_tile, radius, streams);
    BlockEstimate {
        diamond_width,
        frontlines,
        x_tile,
        wavefront_width: wavefront_width(diamond_width, radius, frontlines),
        bytes,
        groups,
        total_bytes: groups as u64 * bytes,
    }
}

/// Balance figure with its inputs, for reports.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BalanceEstimate {
    pub diamond_width: usize,
    pub bytes_per_lup: f64,
}

pub fn estimate_balance(diamond_width: usize, radius: usize, streams: usize) -> BalanceEstimate {
    BalanceEstimate {
        diamond_width,
        bytes_per_lup: code_balance(diamond_width, radius, streams),
    }
}

/// Affine package power: a baseline the socket draws regardless of load
/// plus a fixed increment per active core.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerModel {
    pub static_watts: f64,
    pub dynamic_watts_per_core: f64,
}

impl PowerModel {
    pub fn watts(&self, cores: usize) -> f64 {
        self.static_watts + cores as f64 * self.dynamic_watts_per_core
    }
}

/// Least-squares fit of the affine power model to (cores, watts) samples.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PowerFit {
    pub model: PowerModel,
    pub rms_residual: f64,
    pub max_abs_residual: f64,
}

pub fn fit_power(samples: &[(usize, f64)]) -> Result<PowerFit> {
    let distinct = {
        let mut cores: Vec<usize> = samples.iter().map(|s| s.0).collect();
        cores.sort_unstable();
        cores.dedup();
        cores.len()
    };
    if distinct < 2 {
        return Err(Error::InvalidConfig(format!(
            "power fit needs samples at >= 2 distinct core counts, got {}",
            distinct
        )));
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in samples {
        let dx = x as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    let slope = sxy / sxx;
    let model = PowerModel {
        static_watts: mean_y - slope * mean_x,
        dynamic_watts_per_core: slope,
    };
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for &(x, y) in samples {
        let r = y - model.watts(x);
        sq += r * r;
        max_abs = max_abs.max(r.abs());
    }
    Ok(PowerFit {
        model,
        rms_residual: (sq / n).sqrt(),
        max_abs_residual: max_abs,
    })
}

/// Energy per lattice update in nanojoules at the given package power and
/// throughput.
pub fn energy_per_lup_nj(watts: f64, mlups: f64) -> f64 {
    watts * 1e3 / mlups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavefront_width_worked_examples() {
        assert_eq!(wavefront_width(8, 1, 4), 10);
        assert_eq!(wavefront_width(8, 1, 2), 8);
        assert_eq!(wavefront_width(16, 4, 10), 18);
    }

    #[test]
    fn block_bytes_worked_examples() {
        // 2-stream radius-1 stencil, width 8, 4 frontlines: 148 values per
        // x point.
        assert_eq!(cache_block_bytes(8, 4, 1, 1, 2), 148 * 8);
        assert_eq!(cache_block_bytes(8, 4, 17, 1, 2), 148 * 8 * 17);
        // 15-stream radius-4 stencil, width 16, 10 frontlines: 3632 values.
        assert_eq!(cache_block_bytes(16, 10, 1, 4, 15), 3632 * 8);
        assert_eq!(cache_block_bytes(16, 10, 340, 4, 15), 3632 * 8 * 340);
    }

    #[test]
    fn unit_radius_block_matches_general_form() {
        for dw in (4..=64).step_by(4) {
            for nf in 1..=8 {
                for &nd in &[2usize, 9, 15] {
                    assert_eq!(
                        cache_block_bytes(dw, nf, 3, 1, nd),
                        cache_block_bytes_unit_radius(dw, nf, 3, nd),
                        "dw={} nf={} nd={}",
                        dw,
                        nf,
                        nd
                    );
                }
            }
        }
    }

    #[test]
    fn block_estimate_totals_scale_with_groups() {
        let one = estimate_block(8, 4, 100, 1, 2, 1);
        let ten = estimate_block(8, 4, 100, 1, 2, 10);
        assert_eq!(one.bytes, 148 * 8 * 100);
        assert_eq!(one.total_bytes, one.bytes);
        assert_eq!(ten.bytes, one.bytes);
        assert_eq!(ten.total_bytes, 10 * one.bytes);
        assert_eq!(ten.wavefront_width, 10);
    }

    #[test]
    fn balance_worked_example_and_closed_form() {
        assert_eq!(code_balance(8, 1, 2), 8.0);
        // The textual form collapses to 16*r*(streams + 2)/dw.
        for &(dw, r, nd) in &[(8usize, 1usize, 2usize), (16, 4, 15), (32, 4, 15), (12, 1, 9)] {
            let closed = 16.0 * r as f64 * (nd as f64 + 2.0) / dw as f64;
            assert_eq!(code_balance(dw, r, nd).to_bits(), closed.to_bits());
        }
        assert_eq!(
            code_balance(8, 1, 2).to_bits(),
            code_balance_unit_radius(8, 2).to_bits()
        );
    }

    #[test]
    fn roofline_worked_examples() {
        assert_eq!(roofline_mlups(40e9, 8.0), 5000.0);
        assert_eq!(roofline_mlups(45e9, 8.0), 5625.0);
    }

    #[test]
    fn power_fit_recovers_exact_affine_data() {
        let fit = fit_power(&[(1, 12.0), (2, 14.0), (4, 18.0)]).unwrap();
        assert!((fit.model.static_watts - 10.0).abs() < 1e-12);
        assert!((fit.model.dynamic_watts_per_core - 2.0).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
        assert!(fit.max_abs_residual < 1e-12);
        assert!((fit.model.watts(8) - 26.0).abs() < 1e-12);
    }

    #[test]
    fn power_fit_rejects_degenerate_input() {
        assert!(fit_power(&[]).is_err());
        assert!(fit_power(&[(4, 40.0)]).is_err());
        assert!(fit_power(&[(4, 40.0), (4, 41.0)]).is_err());
    }

    #[test]
    fn power_fit_flat_samples_give_zero_dynamic_term() {
        let fit = fit_power(&[(1, 30.0), (2, 30.0), (3, 30.0)]).unwrap();
        assert!(fit.model.dynamic_watts_per_core.abs() < 1e-12);
        assert!((fit.model.static_watts - 30.0).abs() < 1e-12);
    }

    #[test]
    fn energy_units_are_nanojoules_per_update() {
        // 100 W at 1000 MLUP/s = 1e-7 J per update = 100 nJ.
        assert_eq!(energy_per_lup_nj(100.0, 1000.0), 100.0);
        // Memory-side draw of 27.44 W at 3481 MLUP/s.
        assert!((energy_per_lup_nj(27.44, 3481.0) - 7.88).abs() < 5e-3);
    }
}
