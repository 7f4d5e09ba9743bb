//! Report assembly and machine-readable emission.
//!
//! Every table leaves the program in one of two shapes: CSV with a
//! versioned comment header (`# mwd csv v1 <kind>`) followed by a fixed,
//! documented column row, or JSON carrying the same fields under the same
//! names. Optional columns are empty in CSV and null in JSON. Schemas only
//! grow; the version number bumps on any breaking change.

use std::io::{self, Write};

use serde::Serialize;

use crate::cachesim::TrafficReport;
use crate::grid::MwdConfig;
use crate::models::{self, estimate_balance, estimate_block};
use crate::power::PowerReading;
use crate::runtime::RunStats;
use crate::tuner::TuneOutcome;

pub const CSV_VERSION: u32 = 1;

fn csv_preamble(kind: &str, columns: &[&str], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "# mwd csv v{} {}", CSV_VERSION, kind)?;
    writeln!(w, "{}", columns.join(","))
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Serializes any report row set as pretty JSON, the mirror of its CSV.
pub fn write_json<T: Serialize>(value: &T, w: &mut impl Write) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)
}

/// Everything one benchmarked run tells us, model figures alongside.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: MwdConfig,
    pub mlups: f64,
    pub seconds: f64,
    pub queue_wait_seconds: f64,
    pub tiles_per_group: Vec<u64>,
    /// Predicted cache block of one group, and of all groups together.
    pub block_bytes: u64,
    pub total_block_bytes: u64,
    pub model_bytes_per_lup: f64,
    /// Bandwidth-limited throughput; needs a bandwidth figure.
    pub roofline_mlups: Option<f64>,
    /// From the cache simulator, when a simulation ran alongside.
    pub measured_bytes_per_lup: Option<f64>,
    pub cpu_watts: Option<f64>,
    pub dram_watts: Option<f64>,
    pub cpu_nj_per_lup: Option<f64>,
    pub dram_nj_per_lup: Option<f64>,
    pub total_nj_per_lup: Option<f64>,
}

impl RunReport {
    pub fn new(
        cfg: &MwdConfig,
        stats: &RunStats,
        bandwidth_bytes_per_s: Option<f64>,
        measured_bytes_per_lup: Option<f64>,
        power: Option<&PowerReading>,
    ) -> RunReport {
        let spec = cfg.stencil;
        let block = estimate_block(
            cfg.diamond_width,
            cfg.frontlines,
            cfg.x_tile,
            spec.radius,
            spec.streams,
            cfg.groups(),
        );
        let balance = estimate_balance(cfg.diamond_width, spec.radius, spec.streams);
        let energy = |watts: f64| models::energy_per_lup_nj(watts, stats.mlups);
        RunReport {
            config: cfg.clone(),
            mlups: stats.mlups,
            seconds: stats.seconds,
            queue_wait_seconds: stats.queue_wait_seconds,
            tiles_per_group: stats.tiles_per_group.clone(),
            block_bytes: block.bytes,
            total_block_bytes: block.total_bytes,
            model_bytes_per_lup: balance.bytes_per_lup,
            roofline_mlups: bandwidth_bytes_per_s
                .map(|b| models::roofline_mlups(b, balance.bytes_per_lup)),
            measured_bytes_per_lup,
            cpu_watts: power.map(|p| p.cpu_watts),
            dram_watts: power.map(|p| p.dram_watts),
            cpu_nj_per_lup: power.map(|p| energy(p.cpu_watts)),
            dram_nj_per_lup: power.map(|p| energy(p.dram_watts)),
            total_nj_per_lup: power.map(|p| energy(p.cpu_watts + p.dram_watts)),
        }
    }
}

pub const RUN_COLUMNS: &[&str] = &[
    "stencil",
    "nx",
    "ny",
    "nz",
    "time_steps",
    "dw",
    "nf",
    "nxb",
    "threads",
    "group_size",
    "mlups",
    "seconds",
    "queue_wait_seconds",
    "block_bytes",
    "total_block_bytes",
    "model_bytes_per_lup",
    "roofline_mlups",
    "measured_bytes_per_lup",
    "cpu_watts",
    "dram_watts",
    "total_nj_per_lup",
];

pub fn write_run_csv(reports: &[RunReport], w: &mut impl Write) -> io::Result<()> {
    csv_preamble("run", RUN_COLUMNS, w)?;
    for r in reports {
        let c = &r.config;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.stencil.name,
            c.nx,
            c.ny,
            c.nz,
            c.steps,
            c.diamond_width,
            c.frontlines,
            c.x_tile,
            c.threads,
            c.group_size,
            r.mlups,
            r.seconds,
            r.queue_wait_seconds,
            r.block_bytes,
            r.total_block_bytes,
            r.model_bytes_per_lup,
            opt_f64(r.roofline_mlups),
            opt_f64(r.measured_bytes_per_lup),
            opt_f64(r.cpu_watts),
            opt_f64(r.dram_watts),
            opt_f64(r.total_nj_per_lup),
        )?;
    }
    Ok(())
}

/// One row of the analytic model table.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ModelRow {
    pub dw: usize,
    pub wavefront_width: usize,
    pub block_bytes: u64,
    pub bytes_per_lup: f64,
    pub roofline_mlups: f64,
}

/// Evaluates the models over a width list: rows come back sorted ascending
/// and deduplicated. Widths that violate the shape preconditions error.
pub fn model_rows(
    radius: usize,
    streams: usize,
    diamond_widths: &[usize],
    frontlines: usize,
    x_tile: usize,
    bandwidth_bytes_per_s: f64,
) -> crate::error::Result<Vec<ModelRow>> {
    let mut widths = diamond_widths.to_vec();
    widths.sort_unstable();
    widths.dedup();
    let mut rows = Vec::with_capacity(widths.len());
    for dw in widths {
        let params = crate::tiling::wavefront_params(dw, frontlines, radius)?;
        let balance = estimate_balance(dw, radius, streams);
        rows.push(ModelRow {
            dw,
            wavefront_width: params.wavefront_width,
            block_bytes: models::cache_block_bytes(dw, frontlines, x_tile, radius, streams),
            bytes_per_lup: balance.bytes_per_lup,
            roofline_mlups: models::roofline_mlups(bandwidth_bytes_per_s, balance.bytes_per_lup),
        });
    }
    Ok(rows)
}

pub const MODEL_COLUMNS: &[&str] = &[
    "dw",
    "wavefront_width",
    "block_bytes",
    "bytes_per_lup",
    "roofline_mlups",
];

pub fn write_model_csv(rows: &[ModelRow], w: &mut impl Write) -> io::Result<()> {
    csv_preamble("model", MODEL_COLUMNS, w)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.dw, r.wavefront_width, r.block_bytes, r.bytes_per_lup, r.roofline_mlups
        )?;
    }
    Ok(())
}

/// The width where the half-cache rule first breaks: smallest diamond width
/// whose combined blocks exceed half the cache. None while everything fits.
pub fn crossover_width(reports: &[TrafficReport]) -> Option<usize> {
    reports
        .iter()
        .filter(|r| r.diamond_width > 0 && 2 * r.groups as u64 * r.block_bytes > r.cache_bytes)
        .map(|r| r.diamond_width)
        .min()
}

pub const TRAFFIC_COLUMNS: &[&str] = &[
    "stencil",
    "schedule",
    "dw",
    "nf",
    "nxb",
    "time_steps",
    "groups",
    "cache_bytes",
    "simulated_capacity_bytes",
    "block_bytes",
    "in_regime",
    "crossover",
    "lups",
    "traffic_bytes",
    "measured_bytes_per_lup",
    "model_bytes_per_lup",
];

pub fn write_traffic_csv(reports: &[TrafficReport], w: &mut impl Write) -> io::Result<()> {
    let crossover = crossover_width(reports);
    csv_preamble("traffic", TRAFFIC_COLUMNS, w)?;
    for r in reports {
        writeln!(
            w,
            "{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.stencil,
            r.schedule,
            r.diamond_width,
            r.frontlines,
            r.x_tile,
            r.steps,
            r.groups,
            r.cache_bytes,
            r.simulated_capacity_bytes,
            r.block_bytes,
            r.in_regime,
            crossover == Some(r.diamond_width),
            r.lups,
            r.traffic_bytes,
            r.measured_bytes_per_lup,
            r.model_bytes_per_lup,
        )?;
    }
    Ok(())
}

/// One thread count of a scaling series.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub threads: usize,
    pub group_size: usize,
    pub mlups: f64,
    pub seconds: f64,
    pub cpu_watts: Option<f64>,
    pub dram_watts: Option<f64>,
    pub total_nj_per_lup: Option<f64>,
}

pub const SCALING_COLUMNS: &[&str] = &[
    "threads",
    "group_size",
    "mlups",
    "seconds",
    "cpu_watts",
    "dram_watts",
    "total_nj_per_lup",
];

pub fn write_scaling_csv(rows: &[ScalingRow], w: &mut impl Write) -> io::Result<()> {
    csv_preamble("scaling", SCALING_COLUMNS, w)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.threads,
            r.group_size,
            r.mlups,
            r.seconds,
            opt_f64(r.cpu_watts),
            opt_f64(r.dram_watts),
            opt_f64(r.total_nj_per_lup),
        )?;
    }
    Ok(())
}

/// One diamond width of an energy-versus-balance sweep: predicted balance
/// on the x axis, energy per update on the y axis.
#[derive(Clone, Debug, Serialize)]
pub struct BalanceEnergyRow {
    pub dw: usize,
    pub bytes_per_lup: f64,
    pub mlups: f64,
    pub cpu_watts: Option<f64>,
    pub dram_watts: Option<f64>,
    pub total_nj_per_lup: Option<f64>,
}

pub const BALANCE_ENERGY_COLUMNS: &[&str] = &[
    "dw",
    "bytes_per_lup",
    "mlups",
    "cpu_watts",
    "dram_watts",
    "total_nj_per_lup",
];

pub fn write_balance_energy_csv(rows: &[BalanceEnergyRow], w: &mut impl Write) -> io::Result<()> {
    csv_preamble("balance-energy", BALANCE_ENERGY_COLUMNS, w)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.dw,
            r.bytes_per_lup,
            r.mlups,
            opt_f64(r.cpu_watts),
            opt_f64(r.dram_watts),
            opt_f64(r.total_nj_per_lup),
        )?;
    }
    Ok(())
}

pub const TUNE_COLUMNS: &[&str] = &[
    "rank",
    "stencil",
    "dw",
    "nf",
    "nxb",
    "group_size",
    "threads",
    "block_bytes",
    "total_block_bytes",
    "model_bytes_per_lup",
    "mlups",
    "measured_bytes_per_lup",
    "cpu_watts",
    "dram_watts",
    "total_nj_per_lup",
    "note",
];

/// Optional per-candidate extras the tuner itself does not produce.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct TuneExtras {
    pub measured_bytes_per_lup: Option<f64>,
    pub cpu_watts: Option<f64>,
    pub dram_watts: Option<f64>,
    pub total_nj_per_lup: Option<f64>,
}

pub fn write_tune_csv(
    outcome: &TuneOutcome,
    extras: &[TuneExtras],
    w: &mut impl Write,
) -> io::Result<()> {
    assert!(extras.is_empty() || extras.len() == outcome.table.len());
    csv_preamble("tune", TUNE_COLUMNS, w)?;
    for (i, r) in outcome.table.iter().enumerate() {
        let c = &r.candidate.config;
        let e = extras.get(i).copied().unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            c.stencil.name,
            c.diamond_width,
            c.frontlines,
            c.x_tile,
            c.group_size,
            c.threads,
            r.candidate.block.bytes,
            r.candidate.block.total_bytes,
            r.candidate.balance.bytes_per_lup,
            opt_f64(r.mlups),
            opt_f64(e.measured_bytes_per_lup),
            opt_f64(e.cpu_watts),
            opt_f64(e.dram_watts),
            opt_f64(e.total_nj_per_lup),
            r.error.as_deref().unwrap_or(""),
        )?;
    }
    Ok(())
}

/// Outcome of the equivalence check plus the dependence replay.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub config: MwdConfig,
    pub bit_equal: bool,
    pub max_ulp: u64,
    pub first_diff: Option<(usize, usize, usize)>,
    pub replay_tiles: usize,
    pub replay_rows_updated: u64,
    pub replay_error: Option<String>,
    pub passed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cachesim::{simulate_traffic, Schedule};
    use crate::grid::make_spec;

    fn sample_stats(cfg: &MwdConfig) -> RunStats {
        RunStats {
            stencil: cfg.stencil.name,
            nx: cfg.nx,
            ny: cfg.ny,
            nz: cfg.nz,
            steps: cfg.steps,
            diamond_width: cfg.diamond_width,
            frontlines: cfg.frontlines,
            x_tile: cfg.x_tile,
            threads: cfg.threads,
            group_size: cfg.group_size,
            tiles: 10,
            tiles_per_group: vec![10],
            queue_wait_seconds: 0.001,
            lups: 2_000_000,
            seconds: 0.5,
            mlups: 4.0,
        }
    }

    #[test]
    fn energy_fields_are_consistent_with_power_and_throughput() {
        let cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 18, 16, 12);
        let stats = sample_stats(&cfg);
        let power = PowerReading {
            seconds: 0.5,
            cpu_joules: 40.0,
            dram_joules: 5.0,
            cpu_watts: 80.0,
            dram_watts: 10.0,
            samples: 6,
        };
        let report = RunReport::new(&cfg, &stats, Some(40e9), None, Some(&power));
        let total = report.total_nj_per_lup.unwrap();
        let recomputed = (report.cpu_watts.unwrap() + report.dram_watts.unwrap()) * 1e3
            / report.mlups;
        assert!((total - recomputed).abs() / recomputed < 0.01);
        assert_eq!(report.cpu_nj_per_lup.unwrap(), 80.0 * 1e3 / 4.0);
    }

    #[test]
    fn energy_fields_are_null_without_a_provider() {
        let cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 18, 16, 12);
        let report = RunReport::new(&cfg, &sample_stats(&cfg), None, None, None);
        assert!(report.cpu_watts.is_none());
        assert!(report.total_nj_per_lup.is_none());
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["cpu_watts"].is_null());
        assert_eq!(json["mlups"], 4.0);
    }

    #[test]
    fn model_rows_sort_and_match_the_closed_forms() {
        let rows = model_rows(1, 2, &[16, 8, 8], 4, 1, 40e9).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].dw, 8);
        assert_eq!(rows[0].block_bytes, 148 * 8);
        assert_eq!(rows[0].bytes_per_lup, 8.0);
        assert_eq!(rows[0].roofline_mlups, 5000.0);
        assert!(rows[1].bytes_per_lup < rows[0].bytes_per_lup);
        assert!(model_rows(1, 2, &[6], 1, 1, 40e9).is_err());
    }

    #[test]
    fn empty_model_table_is_header_only() {
        let mut buf = Vec::new();
        write_model_csv(&model_rows(1, 2, &[], 1, 1, 40e9).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "# mwd csv v1 model");
        assert_eq!(lines[1], MODEL_COLUMNS.join(","));
    }

    #[test]
    fn crossover_is_the_smallest_overcommitted_width() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 34, 64, 16);
        cfg.steps = 4;
        cfg.cache_bytes = 24 << 10;
        let mut reports = Vec::new();
        for dw in [4, 8, 16, 32] {
            cfg.diamond_width = dw;
            reports.push(simulate_traffic(&cfg, Schedule::Tiled).unwrap());
        }
        // Blocks grow with width; find the first one that spills by hand.
        let expect = reports
            .iter()
            .find(|r| 2 * r.block_bytes > cfg.cache_bytes)
            .map(|r| r.diamond_width);
        assert!(expect.is_some());
        assert_eq!(crossover_width(&reports), expect);
        let mut buf = Vec::new();
        write_traffic_csv(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# mwd csv v1 traffic\n"));
        let crossover_col = TRAFFIC_COLUMNS.iter().position(|c| *c == "crossover").unwrap();
        let dw_col = TRAFFIC_COLUMNS.iter().position(|c| *c == "dw").unwrap();
        for line in text.lines().skip(2) {
            let fields: Vec<&str> = line.split(',').collect();
            let flagged = fields[crossover_col] == "true";
            let dw: usize = fields[dw_col].parse().unwrap();
            assert_eq!(flagged, Some(dw) == expect, "row {}", line);
        }
    }

    #[test]
    fn csv_and_json_share_field_names() {
        let rows = model_rows(4, 15, &[16, 32], 10, 340, 45e9).unwrap();
        let mut csv = Vec::new();
        write_model_csv(&rows, &mut csv).unwrap();
        let json = serde_json::to_value(&rows).unwrap();
        for col in MODEL_COLUMNS {
            assert!(
                json[0].get(*col).is_some(),
                "JSON is missing CSV column {}",
                col
            );
        }
    }
}
