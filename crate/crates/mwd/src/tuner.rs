//! Parameter-space enumeration and benchmark-driven selection.
//!
//! The search space is pruned analytically before anything runs: a candidate
//! must satisfy the divisibility rules of the run configuration, give every
//! group a diamond column to work on, and keep the combined cache blocks of
//! all groups within half the target cache (the usable fraction in
//! practice), optionally narrowed further to an explicit window. Surviving
//! candidates are ranked by predicted code balance and then timed; measured
//! throughput has the final word.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{init_grid, MwdConfig, StencilSpec};
use crate::models::{estimate_balance, estimate_block, BalanceEstimate, BlockEstimate};
use crate::runtime::mwd_run;

/// Constraints of one tuning run. Empty lists mean "derive the natural
/// candidates from the problem shape".
#[derive(Clone, Debug)]
pub struct SearchSpace {
    /// Diamond widths to consider; empty = every multiple of 4*radius that
    /// divides ny.
    pub diamond_widths: Vec<usize>,
    /// Frontline counts; empty = the smallest multiple of each group size.
    /// Entries that do not split evenly over a group are skipped for it.
    pub frontlines: Vec<usize>,
    /// x tile sizes; empty = full interior stride and half of it.
    pub x_tiles: Vec<usize>,
    /// Threads per group; empty = every divisor of the thread count.
    pub group_sizes: Vec<usize>,
    /// Admissible [lo, hi] bytes for the total block footprint
    /// (groups * block); `None` leaves the upper end to the half-cache rule.
    pub block_window: (u64, Option<u64>),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            diamond_widths: Vec::new(),
            frontlines: Vec::new(),
            x_tiles: Vec::new(),
            group_sizes: Vec::new(),
            block_window: (0, None),
        }
    }
}

/// One admissible configuration with its model predictions. `config.steps`
/// is left at 0: enumeration is about shape, the driver picks the horizon.
#[derive(Clone, Debug, Serialize)]
pub struct Candidate {
    pub config: MwdConfig,
    pub block: BlockEstimate,
    pub balance: BalanceEstimate,
}

/// Why candidates were rejected, for the "nothing survived" error.
#[derive(Default)]
struct Rejections {
    width_divisibility: usize,
    concurrency: usize,
    frontline_split: usize,
    half_cache: usize,
    window_low: usize,
    window_high: usize,
    invariants: usize,
}

impl Rejections {
    fn describe(&self) -> String {
        let mut parts = Vec::new();
        let mut push = |n: usize, what: &str| {
            if n > 0 {
                parts.push(format!("{} by {}", n, what));
            }
        };
        push(self.width_divisibility, "diamond width divisibility");
        push(self.concurrency, "concurrency < groups");
        push(self.frontline_split, "frontlines not splitting over the group");
        push(self.half_cache, "the half-cache rule");
        push(self.window_low, "the block window lower bound");
        push(self.window_high, "the block window upper bound");
        push(self.invariants, "configuration invariants");
        if parts.is_empty() {
            "the search space was empty".into()
        } else {
            format!("rejected {}", parts.join(", "))
        }
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Enumerates every admissible candidate, ordered by predicted code balance
/// ascending (ties broken by smaller width, then frontlines, x tile and
/// group size). Errors when nothing survives, naming the binding
/// constraints.
pub fn enumerate(
    space: &SearchSpace,
    spec: &StencilSpec,
    extents: (usize, usize, usize),
    threads: usize,
    cache_bytes: u64,
) -> Result<Vec<Candidate>> {
    let (nx, ny, nz) = extents;
    let r = spec.radius;
    if threads == 0 {
        return Err(Error::InvalidConfig("thread count must be >= 1".into()));
    }
    if nx <= 2 * r || ny <= 2 * r || nz <= 2 * r {
        return Err(Error::InvalidConfig(format!(
            "extents {}x{}x{} leave no interior for radius {}",
            nx, ny, nz, r
        )));
    }

    let widths: Vec<usize> = if space.diamond_widths.is_empty() {
        (1..=ny / (4 * r)).map(|k| 4 * r * k).collect()
    } else {
        space.diamond_widths.clone()
    };
    let group_sizes: Vec<usize> = if space.group_sizes.is_empty() {
        divisors(threads)
    } else {
        space.group_sizes.clone()
    };
    let interior_x = nx - 2 * r;
    let x_tiles: Vec<usize> = if space.x_tiles.is_empty() {
        let mut v = vec![interior_x];
        if interior_x / 2 >= 1 && interior_x / 2 != interior_x {
            v.push(interior_x / 2);
        }
        v
    } else {
        space.x_tiles.clone()
    };

    let (window_lo, window_hi) = space.block_window;
    let mut rejected = Rejections::default();
    let mut out = Vec::new();
    for &gs in &group_sizes {
        if gs == 0 || threads % gs != 0 {
            rejected.invariants += 1;
            continue;
        }
        let groups = threads / gs;
        let frontlines: Vec<usize> = if space.frontlines.is_empty() {
            vec![gs]
        } else {
            space.frontlines.clone()
        };
        for &dw in &widths {
            if dw == 0 || dw % (4 * r) != 0 || ny % dw != 0 {
                rejected.width_divisibility += 1;
                continue;
            }
            if ny / dw < groups {
                rejected.concurrency += 1;
                continue;
            }
            for &nf in &frontlines {
                if nf == 0 || nf % gs != 0 {
                    rejected.frontline_split += 1;
                    continue;
                }
                for &nxb in &x_tiles {
                    let block = estimate_block(dw, nf, nxb, r, spec.streams, groups);
                    if 2 * block.total_bytes > cache_bytes {
                        rejected.half_cache += 1;
                        continue;
                    }
                    if block.total_bytes < window_lo {
                        rejected.window_low += 1;
                        continue;
                    }
                    if let Some(hi) = window_hi {
                        if block.total_bytes > hi {
                            rejected.window_high += 1;
                            continue;
                        }
                    }
                    let config = MwdConfig {
                        stencil: *spec,
                        nx,
                        ny,
                        nz,
                        steps: 0,
                        diamond_width: dw,
                        frontlines: nf,
                        x_tile: nxb,
                        threads,
                        group_size: gs,
                        cache_bytes,
                        seed: 0,
                    };
                    if config.validate().is_err() {
                        rejected.invariants += 1;
                        continue;
                    }
                    out.push(Candidate {
                        config,
                        block,
                        balance: estimate_balance(dw, r, spec.streams),
                    });
                }
            }
        }
    }

    if out.is_empty() {
        return Err(Error::NoValidConfig(rejected.describe()));
    }
    out.sort_by(|a, b| {
        a.balance
            .bytes_per_lup
            .total_cmp(&b.balance.bytes_per_lup)
            .then_with(|| {
                let ka = (a.config.diamond_width, a.config.frontlines, a.config.x_tile, a.config.group_size);
                let kb = (b.config.diamond_width, b.config.frontlines, b.config.x_tile, b.config.group_size);
                ka.cmp(&kb)
            })
    });
    Ok(out)
}

/// One benchmarked candidate: throughput, or the reason it was skipped.
#[derive(Clone, Debug, Serialize)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub mlups: Option<f64>,
    pub error: Option<String>,
}

/// Everything `autotune` learned, best first in `table`.
#[derive(Clone, Debug, Serialize)]
pub struct TuneOutcome {
    pub best: Candidate,
    pub best_mlups: f64,
    pub table: Vec<RankedCandidate>,
    pub warnings: Vec<String>,
}

/// Benchmarks every candidate and picks the throughput winner; exact ties
/// break toward the smaller predicted balance, then the smaller width. A
/// failing benchmark skips its candidate with a warning; only all of them
/// failing is fatal.
pub fn autotune(
    candidates: &[Candidate],
    benchmark: &mut dyn FnMut(&MwdConfig) -> Result<f64>,
) -> Result<TuneOutcome> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("autotune needs >= 1 candidate".into()));
    }
    let mut warnings = Vec::new();
    let mut table: Vec<RankedCandidate> = Vec::with_capacity(candidates.len());
    for c in candidates {
        match benchmark(&c.config) {
            Ok(mlups) => table.push(RankedCandidate {
                candidate: c.clone(),
                mlups: Some(mlups),
                error: None,
            }),
            Err(e) => {
                warnings.push(format!(
                    "skipping dw={} nf={} nxb={} group={}: {}",
                    c.config.diamond_width, c.config.frontlines, c.config.x_tile,
                    c.config.group_size, e
                ));
                table.push(RankedCandidate {
                    candidate: c.clone(),
                    mlups: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    // Throughput descending; unmeasured candidates sink to the bottom.
    let rank_key = |r: &RankedCandidate| {
        (
            r.mlups.unwrap_or(f64::NEG_INFINITY),
            -r.candidate.balance.bytes_per_lup,
            std::cmp::Reverse(r.candidate.config.diamond_width),
        )
    };
    table.sort_by(|a, b| {
        let (ma, ba, wa) = rank_key(a);
        let (mb, bb, wb) = rank_key(b);
        mb.total_cmp(&ma)
            .then(bb.total_cmp(&ba))
            .then(wb.cmp(&wa))
    });

    let best = &table[0];
    match best.mlups {
        Some(best_mlups) => Ok(TuneOutcome {
            best: best.candidate.clone(),
            best_mlups,
            table,
            warnings,
        }),
        None => Err(Error::NoValidConfig(
            "every candidate benchmark failed".into(),
        )),
    }
}

/// The default fitness: one warmup run, then the median throughput of
/// `repetitions` timed runs on a fresh seeded grid.
pub fn median_mlups(cfg: &MwdConfig, repetitions: usize) -> Result<f64> {
    assert!(repetitions >= 1);
    let mut grid = init_grid(&cfg.stencil, cfg.nx, cfg.ny, cfg.nz, cfg.seed);
    mwd_run(cfg, &mut grid)?; // warmup
    let mut rates: Vec<f64> = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        rates.push(mwd_run(cfg, &mut grid)?.mlups);
    }
    rates.sort_by(f64::total_cmp);
    let mid = rates.len() / 2;
    Ok(if rates.len() % 2 == 1 {
        rates[mid]
    } else {
        0.5 * (rates[mid - 1] + rates[mid])
    })
}
