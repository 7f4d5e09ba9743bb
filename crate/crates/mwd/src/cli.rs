//! The command-line front end: `verify`, `bench`, `model`, `simulate` and
//! `tune` over the same library calls the examples use.
//!
//! Configuration resolves in three layers: built-in defaults, then a
//! `key = value` config file (`--config`), then explicit flags. Flags win.
//! Machine output goes to `--out` (stdout when omitted) as versioned CSV or
//! JSON; progress and summaries stay on stderr so pipes see clean tables.
//!
//! Exit codes: 0 on success, 1 when verification fails, 2 for an invalid
//! or empty configuration, 3 for environment and provider trouble.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cachesim::{
    balance_sweep, simulate_traffic, CachePartition, Schedule, SweepOptions, TrafficReport,
};
use crate::error::{Error, Result};
use crate::grid::{compare_front, init_grid, make_spec, MwdConfig};
use crate::kernels::naive_sweep;
use crate::models::{energy_per_lup_nj, estimate_balance, fit_power, PowerModel};
use crate::power::{PowerMeter, PowerReading, PowerSampleProvider, SyntheticPower, SystemPower};
use crate::report::{self, BalanceEnergyRow, RunReport, ScalingRow, TuneExtras, VerifyReport};
use crate::runtime::{mwd_run, replay_schedule, RunStats};
use crate::tiling::build_tile_dag;
use crate::tuner::{autotune, enumerate, median_mlups, SearchSpace};

#[derive(Parser, Debug)]
#[command(
    name = "mwd",
    version,
    about = "Diamond-tiled stencil engine: verification, benchmarks, models, cache simulation, tuning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the tiled executor against the reference sweep and replay the
    /// tile schedule against the dependence rules.
    Verify(VerifyArgs),
    /// Time tiled runs; optionally sweep thread counts or diamond widths.
    Bench(BenchArgs),
    /// Print the analytic block-size / code-balance / roofline table.
    Model(ModelArgs),
    /// Replay schedules through the LRU cache simulator and compare the
    /// measured traffic with the balance model.
    Simulate(SimulateArgs),
    /// Enumerate admissible configurations and pick the fastest by timing.
    Tune(TuneArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    /// Deterministic affine model; good for tests and demos.
    Synthetic,
    /// The kernel's powercap energy counters, when present.
    System,
    /// No power sampling; energy columns stay empty.
    None,
}

/// Flags shared by every subcommand. All optional: unset flags fall back to
/// the config file, then to the defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// `key = value` config file; explicit flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stencil: 7pt-const | 7pt-var | 25pt-var.
    #[arg(long)]
    pub stencil: Option<String>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub nz: Option<usize>,
    /// Time levels to advance.
    #[arg(long)]
    pub time_steps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Threads per tile group; must divide the thread count.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Diamond width(s); comma-separated where the command sweeps.
    #[arg(long, value_delimiter = ',')]
    pub dw: Option<Vec<usize>>,
    /// Wavefront frontline count(s).
    #[arg(long, value_delimiter = ',')]
    pub nf: Option<Vec<usize>>,
    /// x tile size(s), in points.
    #[arg(long, value_delimiter = ',')]
    pub nxb: Option<Vec<usize>>,
    /// Shared cache budget for the block model and the simulator.
    #[arg(long)]
    pub cache_bytes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write machine output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long, value_enum)]
    pub power_provider: Option<ProviderKind>,
    /// Idle watts of the synthetic power provider.
    #[arg(long)]
    pub static_watts: Option<f64>,
    /// Per-core watts of the synthetic power provider.
    #[arg(long)]
    pub dynamic_watts: Option<f64>,
    /// Memory bandwidth in bytes/s, for roofline figures.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Refuse grids above this many points (the reference sweep is slow).
    #[arg(long, default_value_t = 128 * 128 * 128)]
    pub max_points: usize,
    /// Test hook: violate the tile schedule before replaying it.
    #[arg(long, hide = true)]
    pub corrupt_schedule: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Timed repetitions after one warmup; the median run is reported.
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Sweep thread counts 1..=threads instead of a single run.
    #[arg(long, conflicts_with = "sweep_dw")]
    pub scale_threads: bool,
    /// Sweep diamond widths: code balance on x, energy per update on y.
    #[arg(long)]
    pub sweep_dw: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Diamond rows per simulated run; steps scale with the width so every
    /// width executes the same number of whole rows.
    #[arg(long, default_value_t = 12)]
    pub rows_per_run: usize,
    /// Append the spatial-baseline schedule (its dw column reads 0).
    #[arg(long)]
    pub spatial: bool,
    /// Give every group the full cache in turn instead of a 1/groups share.
    #[arg(long)]
    pub serialized: bool,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Lower bound on the combined block footprint, bytes.
    #[arg(long, default_value_t = 0)]
    pub cache_lo: u64,
    /// Upper bound on the combined block footprint, bytes. Default: the
    /// half-cache rule against --cache-bytes.
    #[arg(long)]
    pub cache_hi: Option<u64>,
    /// Group sizes to consider; default every divisor of the thread count.
    #[arg(long, value_delimiter = ',')]
    pub group_sizes: Option<Vec<usize>>,
    /// Timed repetitions per candidate after one warmup.
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Also run each candidate through the cache simulator for a measured
    /// bytes-per-update column.
    #[arg(long)]
    pub simulate_traffic: bool,
}

/// Fully resolved settings: defaults, then the config file, then flags.
#[derive(Clone, Debug)]
pub struct Settings {
    pub stencil: String,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub steps: usize,
    pub threads: usize,
    pub group_size: usize,
    pub dw: Vec<usize>,
    pub nf: Vec<usize>,
    pub nxb: Vec<usize>,
    pub cache_bytes: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub power: ProviderKind,
    pub static_watts: f64,
    pub dynamic_watts: f64,
    pub bandwidth: Option<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            stencil: "7pt-const".into(),
            nx: 64,
            ny: 64,
            nz: 64,
            steps: 8,
            threads: 1,
            group_size: 1,
            dw: Vec::new(),
            nf: Vec::new(),
            nxb: Vec::new(),
            cache_bytes: 32 << 20,
            seed: 0,
            out: None,
            format: OutputFormat::Csv,
            power: ProviderKind::None,
            static_watts: 25.0,
            dynamic_watts: 3.2,
            bandwidth: None,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value '{}' for {}", value, key)))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_scalar(key, v.trim()))
        .collect()
}

impl Settings {
    pub fn resolve(common: &CommonArgs) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path)?;
            s.apply_file(&text)?;
        }
        s.apply_flags(common);
        Ok(s)
    }

    /// Applies a config file: one `key = value` per line, `#` comments,
    /// keys named after the flags. Unknown keys are errors, not typos to
    /// silently ignore.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "config line {}: expected 'key = value', got '{}'",
                    n + 1,
                    line
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidConfig(msg) => {
                    Error::InvalidConfig(format!("config line {}: {}", n + 1, msg))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stencil" => self.stencil = value.to_string(),
            "nx" => self.nx = parse_scalar(key, value)?,
            "ny" => self.ny = parse_scalar(key, value)?,
            "nz" => self.nz = parse_scalar(key, value)?,
            "time-steps" => self.steps = parse_scalar(key, value)?,
            "threads" => self.threads = parse_scalar(key, value)?,
            "group-size" => self.group_size = parse_scalar(key, value)?,
            "dw" => self.dw = parse_list(key, value)?,
            "nf" => self.nf = parse_list(key, value)?,
            "nxb" => self.nxb = parse_list(key, value)?,
            "cache-bytes" => self.cache_bytes = parse_scalar(key, value)?,
            "seed" => self.seed = parse_scalar(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => {
                self.format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "format must be csv or json, got '{}'",
                            value
                        )))
                    }
                }
            }
            "power-provider" => {
                self.power = match value {
                    "synthetic" => ProviderKind::Synthetic,
                    "system" => ProviderKind::System,
                    "none" => ProviderKind::None,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "power-provider must be synthetic, system or none, got '{}'",
                            value
                        )))
                    }
                }
            }
            "static-watts" => self.static_watts = parse_scalar(key, value)?,
            "dynamic-watts" => self.dynamic_watts = parse_scalar(key, value)?,
            "bandwidth" => self.bandwidth = Some(parse_scalar(key, value)?),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key '{}'",
                    key
                )))
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, c: &CommonArgs) {
        if let Some(v) = &c.stencil {
            self.stencil = v.clone();
        }
        if let Some(v) = c.nx {
            self.nx = v;
        }
        if let Some(v) = c.ny {
            self.ny = v;
        }
        if let Some(v) = c.nz {
            self.nz = v;
        }
        if let Some(v) = c.time_steps {
            self.steps = v;
        }
        if let Some(v) = c.threads {
            self.threads = v;
        }
        if let Some(v) = c.group_size {
            self.group_size = v;
        }
        if let Some(v) = &c.dw {
            self.dw = v.clone();
        }
        if let Some(v) = &c.nf {
            self.nf = v.clone();
        }
        if let Some(v) = &c.nxb {
            self.nxb = v.clone();
        }
        if let Some(v) = c.cache_bytes {
            self.cache_bytes = v;
        }
        if let Some(v) = c.seed {
            self.seed = v;
        }
        if let Some(v) = &c.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = c.format {
            self.format = v;
        }
        if let Some(v) = c.power_provider {
            self.power = v;
        }
        if let Some(v) = c.static_watts {
            self.static_watts = v;
        }
        if let Some(v) = c.dynamic_watts {
            self.dynamic_watts = v;
        }
        if let Some(v) = c.bandwidth {
            self.bandwidth = Some(v);
        }
    }
}

/// Commands that run one configuration take exactly one value per flag;
/// lists are for the sweeping commands.
fn single(list: &[usize], flag: &str) -> Result<Option<usize>> {
    match list {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(Error::InvalidConfig(format!(
            "{} accepts a single value for this command, got {} values",
            flag,
            list.len()
        ))),
    }
}

/// Builds the run configuration shared by every command; the diamond width
/// stays at its default so sweeps can overwrite it, and nothing is
/// validated yet.
fn assemble_config(s: &Settings) -> Result<MwdConfig> {
    let spec = make_spec(&s.stencil)?;
    let mut cfg = MwdConfig::new(spec, s.nx, s.ny, s.nz);
    cfg.steps = s.steps;
    cfg.threads = s.threads;
    cfg.group_size = s.group_size;
    cfg.cache_bytes = s.cache_bytes;
    cfg.seed = s.seed;
    // One frontline per group member unless told otherwise.
    cfg.frontlines = match single(&s.nf, "--nf")? {
        Some(nf) => nf,
        None => s.group_size.max(1),
    };
    if let Some(nxb) = single(&s.nxb, "--nxb")? {
        cfg.x_tile = nxb;
    }
    Ok(cfg)
}

/// The single-run configuration: sweepable flags must hold one value.
fn build_config(s: &Settings) -> Result<MwdConfig> {
    let mut cfg = assemble_config(s)?;
    if let Some(dw) = single(&s.dw, "--dw")? {
        cfg.diamond_width = dw;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Every diamond width admissible for the row count: the multiples of
/// 4*radius that divide ny.
fn derived_widths(radius: usize, ny: usize) -> Vec<usize> {
    let base = 4 * radius;
    (1..=ny / base)
        .map(|k| k * base)
        .filter(|dw| ny % dw == 0)
        .collect()
}

fn width_list(s: &Settings, radius: usize) -> Vec<usize> {
    if s.dw.is_empty() {
        derived_widths(radius, s.ny)
    } else {
        s.dw.clone()
    }
}

fn make_provider(s: &Settings, cores: usize) -> Result<Option<Box<dyn PowerSampleProvider>>> {
    match s.power {
        ProviderKind::None => Ok(None),
        ProviderKind::Synthetic => {
            let model = PowerModel {
                static_watts: s.static_watts,
                dynamic_watts_per_core: s.dynamic_watts,
            };
            Ok(Some(Box::new(SyntheticPower::new(model, cores))))
        }
        ProviderKind::System => SystemPower::detect()
            .map(|p| Some(Box::new(p) as Box<dyn PowerSampleProvider>))
            .ok_or_else(|| {
                Error::Provider(
                    "no powercap energy counters found (try --power-provider synthetic or none)"
                        .into(),
                )
            }),
    }
}

fn open_output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(io::stdout().lock()),
    })
}

/// Runs `work` with the power meter sampling around it. A provider that
/// fails mid-run costs the energy columns and a warning, never the run.
fn metered<T>(
    provider: Option<Box<dyn PowerSampleProvider>>,
    work: impl FnOnce() -> Result<T>,
) -> Result<(T, Option<PowerReading>)> {
    match provider {
        None => Ok((work()?, None)),
        Some(p) => {
            let meter = PowerMeter::start(p);
            let value = work();
            let reading = meter.stop(); // always join the sampler
            let value = value?;
            match reading {
                Ok(r) => Ok((value, Some(r))),
                Err(e) => {
                    eprintln!("warning: power sampling failed ({}); energy columns omitted", e);
                    Ok((value, None))
                }
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Model(a) => cmd_model(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tune(a) => cmd_tune(a),
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    let cfg = build_config(&s)?;
    let points = cfg.nx * cfg.ny * cfg.nz;
    if points > args.max_points {
        return Err(Error::InvalidConfig(format!(
            "{}x{}x{} = {} points exceeds the verify bound of {}; raise --max-points to run anyway",
            cfg.nx, cfg.ny, cfg.nz, points, args.max_points
        )));
    }

    // Equivalence: the tiled executor against the level-by-level sweep.
    let mut reference = init_grid(&cfg.stencil, cfg.nx, cfg.ny, cfg.nz, cfg.seed);
    let mut tiled = reference.clone();
    naive_sweep(&cfg.stencil, &mut reference, cfg.steps);
    mwd_run(&cfg, &mut tiled)?;
    let diff = compare_front(&reference, &tiled);

    // Dependence replay of the FIFO schedule, optionally sabotaged: moving
    // a dependent tile ahead of all its predecessors must trip a hazard.
    let dag = build_tile_dag(cfg.ny, cfg.diamond_width, cfg.stencil.radius, cfg.steps);
    let mut order = dag.fifo_order();
    if args.corrupt_schedule {
        match order.iter().position(|&id| !dag.preds(id).is_empty()) {
            Some(pos) => {
                let id = order.remove(pos);
                order.insert(0, id);
            }
            None => eprintln!("warning: schedule has no dependences to violate"),
        }
    }
    let replay = replay_schedule(&cfg, &dag, &order);

    let report = VerifyReport {
        config: cfg.clone(),
        bit_equal: diff.bit_equal,
        max_ulp: diff.max_ulp,
        first_diff: diff.first_diff,
        replay_tiles: replay.as_ref().map_or(0, |r| r.tiles),
        replay_rows_updated: replay.as_ref().map_or(0, |r| r.rows_updated),
        replay_error: replay.as_ref().err().map(|e| e.to_string()),
        passed: diff.bit_equal && replay.is_ok(),
    };
    if let Some(path) = &s.out {
        let mut w = fs::File::create(path)?;
        report::write_json(&report, &mut w)?;
    }

    println!(
        "equivalence: {} ({} {}x{}x{}, {} levels)",
        if diff.bit_equal {
            "bit-identical to the reference sweep"
        } else {
            "MISMATCH"
        },
        cfg.stencil.name,
        cfg.nx,
        cfg.ny,
        cfg.nz,
        cfg.steps,
    );
    match &replay {
        Ok(r) => println!(
            "replay: {} tiles, {} row updates, no hazards",
            r.tiles, r.rows_updated
        ),
        Err(e) => println!("replay: {}", e),
    }

    let _ = replay?; // a hazard exits 1, coordinates in the message
    if !diff.bit_equal {
        let (x, y, z) = diff.first_diff.unwrap();
        return Err(Error::Verification(format!(
            "tiled result differs from the reference sweep: max ulp {}, first at ({}, {}, {})",
            diff.max_ulp, x, y, z
        )));
    }
    println!("verify: PASS");
    Ok(())
}

fn cmd_model(args: &ModelArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    let spec = make_spec(&s.stencil)?;
    let nf = single(&s.nf, "--nf")?.unwrap_or(1);
    let nxb = single(&s.nxb, "--nxb")?.unwrap_or(1);
    let bandwidth = s.bandwidth.unwrap_or(40e9);
    // No default width list here: the table holds exactly what was asked
    // for, and an empty request is a header-only table.
    let rows = report::model_rows(spec.radius, spec.streams, &s.dw, nf, nxb, bandwidth)?;
    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_model_csv(&rows, &mut w)?,
        OutputFormat::Json => report::write_json(&rows, &mut w)?,
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    let base = assemble_config(&s)?;
    let opts = SweepOptions {
        diamond_widths: width_list(&s, base.stencil.radius),
        rows_per_run: args.rows_per_run,
        include_spatial: args.spatial,
        spatial_steps: s.steps,
        partition: if args.serialized {
            CachePartition::Serialized
        } else {
            CachePartition::CapacityScaled
        },
    };
    let reports = balance_sweep(&base, &opts)?;
    let crossover = report::crossover_width(&reports);

    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_traffic_csv(&reports, &mut w)?,
        OutputFormat::Json => {
            #[derive(serde::Serialize)]
            struct SimulateOutput<'a> {
                crossover_dw: Option<usize>,
                reports: &'a [TrafficReport],
            }
            report::write_json(
                &SimulateOutput {
                    crossover_dw: crossover,
                    reports: &reports,
                },
                &mut w,
            )?;
        }
    }
    match crossover {
        Some(dw) => eprintln!(
            "crossover: dw={} is the first width whose combined blocks exceed half the cache",
            dw
        ),
        None => eprintln!("crossover: none; every width obeys the half-cache rule"),
    }
    Ok(())
}

/// One warmup, `repetitions` timed runs, and the run with the median
/// throughput is the one reported.
fn timed_median(cfg: &MwdConfig, repetitions: usize) -> Result<RunStats> {
    let mut grid = init_grid(&cfg.stencil, cfg.nx, cfg.ny, cfg.nz, cfg.seed);
    mwd_run(cfg, &mut grid)?; // warmup
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        runs.push(mwd_run(cfg, &mut grid)?);
    }
    runs.sort_by(|a, b| a.mlups.total_cmp(&b.mlups));
    let mid = runs.len() / 2;
    Ok(runs.swap_remove(mid))
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    if args.repetitions == 0 {
        return Err(Error::InvalidConfig("--repetitions must be >= 1".into()));
    }
    if args.scale_threads {
        bench_scaling(&s, args.repetitions)
    } else if args.sweep_dw {
        bench_balance_energy(&s, args.repetitions)
    } else {
        bench_single(&s, args.repetitions)
    }
}

fn bench_single(s: &Settings, repetitions: usize) -> Result<()> {
    let cfg = build_config(s)?;
    let provider = make_provider(s, cfg.threads)?;
    let (stats, power) = metered(provider, || timed_median(&cfg, repetitions))?;
    let report = RunReport::new(&cfg, &stats, s.bandwidth, None, power.as_ref());
    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_run_csv(&[report], &mut w)?,
        OutputFormat::Json => report::write_json(&report, &mut w)?,
    }
    eprintln!(
        "bench: {:.1} MLUP/s, median of {} runs (dw={} nf={} nxb={} threads={})",
        stats.mlups, repetitions, cfg.diamond_width, cfg.frontlines, cfg.x_tile, cfg.threads
    );
    Ok(())
}

fn bench_scaling(s: &Settings, repetitions: usize) -> Result<()> {
    let mut rows = Vec::new();
    let mut watt_samples: Vec<(usize, f64)> = Vec::new();
    for t in 1..=s.threads {
        // Keep the requested group shape where it divides, else fall back
        // to singleton groups so every thread count is measurable.
        let gs = if s.group_size > 0 && t % s.group_size == 0 {
            s.group_size
        } else {
            1
        };
        let mut st = s.clone();
        st.threads = t;
        st.group_size = gs;
        let cfg = build_config(&st)?;
        let provider = make_provider(s, t)?;
        let (stats, power) = metered(provider, || timed_median(&cfg, repetitions))?;
        if let Some(p) = &power {
            watt_samples.push((t, p.cpu_watts));
        }
        rows.push(ScalingRow {
            threads: t,
            group_size: gs,
            mlups: stats.mlups,
            seconds: stats.seconds,
            cpu_watts: power.as_ref().map(|p| p.cpu_watts),
            dram_watts: power.as_ref().map(|p| p.dram_watts),
            total_nj_per_lup: power
                .as_ref()
                .map(|p| energy_per_lup_nj(p.cpu_watts + p.dram_watts, stats.mlups)),
        });
        eprintln!("threads={}: {:.1} MLUP/s", t, stats.mlups);
    }
    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_scaling_csv(&rows, &mut w)?,
        OutputFormat::Json => report::write_json(&rows, &mut w)?,
    }
    if watt_samples.len() >= 2 {
        if let Ok(fit) = fit_power(&watt_samples) {
            eprintln!(
                "power fit: {:.2} W static + {:.2} W/core (rms residual {:.3} W)",
                fit.model.static_watts, fit.model.dynamic_watts_per_core, fit.rms_residual
            );
        }
    }
    Ok(())
}

fn bench_balance_energy(s: &Settings, repetitions: usize) -> Result<()> {
    let base = assemble_config(s)?;
    let spec = base.stencil;
    let mut rows = Vec::new();
    for dw in width_list(s, spec.radius) {
        let mut cfg = base.clone();
        cfg.diamond_width = dw;
        if let Err(e) = cfg.validate() {
            eprintln!("warning: skipping dw={}: {}", dw, e);
            continue;
        }
        let provider = make_provider(s, cfg.threads)?;
        let (stats, power) = metered(provider, || timed_median(&cfg, repetitions))?;
        rows.push(BalanceEnergyRow {
            dw,
            bytes_per_lup: estimate_balance(dw, spec.radius, spec.streams).bytes_per_lup,
            mlups: stats.mlups,
            cpu_watts: power.as_ref().map(|p| p.cpu_watts),
            dram_watts: power.as_ref().map(|p| p.dram_watts),
            total_nj_per_lup: power
                .as_ref()
                .map(|p| energy_per_lup_nj(p.cpu_watts + p.dram_watts, stats.mlups)),
        });
        eprintln!("dw={}: {:.1} MLUP/s", dw, stats.mlups);
    }
    if rows.is_empty() {
        return Err(Error::NoValidConfig(
            "no admissible diamond width in the sweep".into(),
        ));
    }
    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_balance_energy_csv(&rows, &mut w)?,
        OutputFormat::Json => report::write_json(&rows, &mut w)?,
    }
    Ok(())
}

fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let s = Settings::resolve(&args.common)?;
    if args.repetitions == 0 {
        return Err(Error::InvalidConfig("--repetitions must be >= 1".into()));
    }
    let spec = make_spec(&s.stencil)?;
    let space = SearchSpace {
        diamond_widths: s.dw.clone(),
        frontlines: s.nf.clone(),
        x_tiles: s.nxb.clone(),
        group_sizes: args.group_sizes.clone().unwrap_or_default(),
        block_window: (args.cache_lo, args.cache_hi),
    };
    let mut candidates = enumerate(&space, &spec, (s.nx, s.ny, s.nz), s.threads, s.cache_bytes)?;
    for c in &mut candidates {
        c.config.steps = s.steps;
        c.config.seed = s.seed;
    }
    eprintln!("tune: {} candidates", candidates.len());
    // Fail on a missing system provider before the first candidate runs.
    let _probe = make_provider(&s, s.threads)?;

    type Key = (usize, usize, usize, usize);
    let key_of =
        |c: &MwdConfig| -> Key { (c.diamond_width, c.frontlines, c.x_tile, c.group_size) };
    let mut extras: HashMap<Key, TuneExtras> = HashMap::new();
    let repetitions = args.repetitions;
    let want_traffic = args.simulate_traffic;
    let outcome = {
        let mut benchmark = |cfg: &MwdConfig| -> Result<f64> {
            let provider = make_provider(&s, cfg.threads)?;
            let (mlups, power) = metered(provider, || median_mlups(cfg, repetitions))?;
            let mut extra = TuneExtras::default();
            if let Some(p) = power {
                extra.cpu_watts = Some(p.cpu_watts);
                extra.dram_watts = Some(p.dram_watts);
                extra.total_nj_per_lup =
                    Some(energy_per_lup_nj(p.cpu_watts + p.dram_watts, mlups));
            }
            if want_traffic {
                extra.measured_bytes_per_lup =
                    Some(simulate_traffic(cfg, Schedule::Tiled)?.measured_bytes_per_lup);
            }
            extras.insert(key_of(cfg), extra);
            Ok(mlups)
        };
        autotune(&candidates, &mut benchmark)?
    };
    for warning in &outcome.warnings {
        eprintln!("warning: {}", warning);
    }

    // The table was re-ranked by throughput; line the extras back up.
    let aligned: Vec<TuneExtras> = outcome
        .table
        .iter()
        .map(|r| {
            extras
                .get(&key_of(&r.candidate.config))
                .copied()
                .unwrap_or_default()
        })
        .collect();
    let mut w = open_output(&s.out)?;
    match s.format {
        OutputFormat::Csv => report::write_tune_csv(&outcome, &aligned, &mut w)?,
        OutputFormat::Json => {
            #[derive(serde::Serialize)]
            struct TuneOutput<'a> {
                #[serde(flatten)]
                outcome: &'a crate::tuner::TuneOutcome,
                extras: &'a [TuneExtras],
            }
            report::write_json(
                &TuneOutput {
                    outcome: &outcome,
                    extras: &aligned,
                },
                &mut w,
            )?;
        }
    }
    let b = &outcome.best.config;
    eprintln!(
        "best: dw={} nf={} nxb={} group_size={} threads={} at {:.1} MLUP/s",
        b.diamond_width, b.frontlines, b.x_tile, b.group_size, b.threads, outcome.best_mlups
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_file_and_flags_layer_in_order() {
        let mut s = Settings::default();
        assert_eq!(s.stencil, "7pt-const");
        assert_eq!((s.nx, s.ny, s.nz), (64, 64, 64));
        assert_eq!(s.cache_bytes, 32 << 20);
        assert_eq!(s.power, ProviderKind::None);
        s.apply_file(
            "stencil = 7pt-var\n\
             nx = 32 # inline comment\n\
             \n\
             # a full-line comment\n\
             time-steps = 4\n\
             dw = 8,16\n\
             bandwidth = 4e10\n",
        )
        .unwrap();
        assert_eq!(s.stencil, "7pt-var");
        assert_eq!(s.nx, 32);
        assert_eq!(s.steps, 4);
        assert_eq!(s.dw, vec![8, 16]);
        assert_eq!(s.bandwidth, Some(4e10));
        let flags = CommonArgs {
            stencil: Some("25pt-var".into()),
            nx: Some(96),
            ..Default::default()
        };
        s.apply_flags(&flags);
        assert_eq!(s.stencil, "25pt-var");
        assert_eq!(s.nx, 96);
        // File values survive where no flag overrides them.
        assert_eq!(s.steps, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut s = Settings::default();
        assert!(matches!(
            s.apply_file("nonsense = 1\n"),
            Err(Error::InvalidConfig(_))
        ));
        let err = s.apply_file("nx = lots\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{}", err);
        assert!(s.apply_file("just-a-token\n").is_err());
        assert!(s.apply_file("format = yaml\n").is_err());
        assert!(s.apply_file("power-provider = battery\n").is_err());
    }

    #[test]
    fn sweep_flags_must_be_single_valued_for_one_run() {
        let mut s = Settings::default();
        s.dw = vec![8, 16];
        assert!(matches!(build_config(&s), Err(Error::InvalidConfig(_))));
        s.dw = vec![8];
        let cfg = build_config(&s).unwrap();
        assert_eq!(cfg.diamond_width, 8);
        assert_eq!(cfg.frontlines, 1);
        assert_eq!(cfg.cache_bytes, 32 << 20);
    }

    #[test]
    fn group_size_drives_the_default_frontline_count() {
        let mut s = Settings::default();
        s.threads = 4;
        s.group_size = 2;
        let cfg = build_config(&s).unwrap();
        assert_eq!(cfg.frontlines, 2);
        cfg.validate().unwrap();
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(Error::UnknownStencil("x".into()).exit_code(), 2);
        assert_eq!(Error::InvalidConfig("x".into()).exit_code(), 2);
        assert_eq!(Error::NoValidConfig("x".into()).exit_code(), 2);
        assert_eq!(Error::Verification("x".into()).exit_code(), 1);
        let hazard = Error::Hazard {
            tile: 0,
            kind: "stale read",
            t: 0,
            y: 0,
            z: 0,
        };
        assert_eq!(hazard.exit_code(), 1);
        assert_eq!(Error::Provider("x".into()).exit_code(), 3);
        assert_eq!(Error::Io(io::Error::other("x")).exit_code(), 3);
    }

    #[test]
    fn a_corrupted_schedule_replays_to_a_hazard() {
        let mut s = Settings::default();
        s.nx = 18;
        s.ny = 16;
        s.nz = 12;
        let cfg = build_config(&s).unwrap();
        let dag = build_tile_dag(cfg.ny, cfg.diamond_width, cfg.stencil.radius, cfg.steps);
        let mut order = dag.fifo_order();
        assert!(replay_schedule(&cfg, &dag, &order).is_ok());
        let pos = order.iter().position(|&id| !dag.preds(id).is_empty()).unwrap();
        let id = order.remove(pos);
        order.insert(0, id);
        assert!(matches!(
            replay_schedule(&cfg, &dag, &order),
            Err(Error::Hazard { .. })
        ));
    }

    #[test]
    fn derived_widths_divide_the_row_count() {
        assert_eq!(derived_widths(1, 64), vec![4, 8, 16, 32, 64]);
        assert_eq!(derived_widths(4, 96), vec![16, 32, 48, 96]);
    }

    #[test]
    fn cli_parses_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "mwd",
            "bench",
            "--stencil",
            "7pt-var",
            "--nx",
            "64",
            "--dw",
            "8",
            "--power-provider",
            "synthetic",
            "--format",
            "json",
            "--scale-threads",
            "--threads",
            "4",
        ])
        .unwrap();
        match cli.command {
            Command::Bench(a) => {
                assert!(a.scale_threads);
                assert_eq!(a.common.dw, Some(vec![8]));
                assert_eq!(a.common.power_provider, Some(ProviderKind::Synthetic));
                assert_eq!(a.common.format, Some(OutputFormat::Json));
            }
            _ => panic!("wrong subcommand"),
        }
        let multi = Cli::try_parse_from(["mwd", "simulate", "--dw", "4,8,16"]).unwrap();
        match multi.command {
            Command::Simulate(a) => assert_eq!(a.common.dw, Some(vec![4, 8, 16])),
            _ => panic!("wrong subcommand"),
        }
        // The bench sweep modes are mutually exclusive.
        assert!(Cli::try_parse_from(["mwd", "bench", "--scale-threads", "--sweep-dw"]).is_err());
    }
}
