//! Schedule tracer and LRU cache simulator.
//!
//! The tracer walks a schedule -- the diamond-tiled FIFO order or the plain
//! level-by-level sweep -- and streams the memory accesses its row updates
//! would issue, at 64-byte line granularity. The simulator replays that
//! stream against a fully associative write-allocate LRU cache and counts
//! the main-memory transfers: read miss fills, write-allocate fills, dirty
//! evictions and the final flush of still-dirty lines. Measured bytes per
//! update from this pipeline are what the analytic code-balance model is
//! validated against.
//!
//! Modeling choices, all deliberate:
//! - arrays live in disjoint line spaces (separate allocations, 64-byte
//!   aligned), so index math never aliases across arrays;
//! - per row segment each touched line is visited once; repeat touches
//!   within one row would only add hits, never transfers;
//! - the halo mirror done once before a sweep is setup, not steady-state
//!   traffic, and is excluded;
//! - multi-group runs are simulated as the serial FIFO stream against one
//!   group's share (capacity / groups) of the cache: groups work on
//!   disjoint tiles, so the share each sees is the honest budget. The
//!   spatial baseline gets the full capacity, which only flatters it.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::Result;
use crate::grid::{MwdConfig, StencilSpec};
use crate::models::{cache_block_bytes, code_balance};
use crate::runtime::{visit_tile_rows, WavefrontPlan};
use crate::tiling::{build_tile_dag, x_tiles};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One cache-line touch of one array.
#[derive(Clone, Copy, Debug)]
pub struct Access {
    /// 0 and 1 are the solution buffers; 2 + k is coefficient array k.
    pub array: u8,
    pub kind: AccessKind,
    /// Line index in the global space (arrays padded to whole lines).
    pub line: u64,
}

/// Which schedule the tracer walks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Schedule {
    /// Diamond tiles in FIFO order, each swept by the wavefront plan.
    Tiled,
    /// Level-by-level z-y sweep over full x rows.
    Spatial,
}

const POINTS_PER_LINE: usize = 8; // 64-byte lines, 8-byte values

struct Layout {
    nx: usize,
    ny: usize,
    lines_per_array: u64,
}

impl Layout {
    fn new(cfg: &MwdConfig) -> Layout {
        let points = cfg.nx * cfg.ny * cfg.nz;
        Layout {
            nx: cfg.nx,
            ny: cfg.ny,
            lines_per_array: points.div_ceil(POINTS_PER_LINE) as u64,
        }
    }

    fn arrays(&self, spec: &StencilSpec) -> u64 {
        2 + spec.coeff_arrays as u64
    }

    /// Emits the lines of row (y, z), x in [x0, x1), of `array`, ascending.
    fn emit(
        &self,
        array: u8,
        kind: AccessKind,
        y: usize,
        z: usize,
        x0: usize,
        x1: usize,
        f: &mut impl FnMut(Access),
    ) {
        let base = self.nx * (y + self.ny * z);
        let first = (base + x0) / POINTS_PER_LINE;
        let last = (base + x1 - 1) / POINTS_PER_LINE;
        let offset = array as u64 * self.lines_per_array;
        for line in first..=last {
            f(Access {
                array,
                kind,
                line: offset + line as u64,
            });
        }
    }

    /// All accesses of one row update at level `t`: the dilated center row,
    /// the y and z neighbour rows and the coefficient rows from the level-t
    /// buffer, then the write of the next level.
    fn emit_update_row(
        &self,
        spec: &StencilSpec,
        t: usize,
        y: usize,
        z: usize,
        x0: usize,
        x1: usize,
        f: &mut impl FnMut(Access),
    ) {
        let src = (t % 2) as u8;
        let dst = 1 - src;
        let r = spec.radius;
        self.emit(src, AccessKind::Read, y, z, x0 - r, x1 + r, f);
        for d in 1..=r {
            self.emit(src, AccessKind::Read, y - d, z, x0, x1, f);
            self.emit(src, AccessKind::Read, y + d, z, x0, x1, f);
        }
        for d in 1..=r {
            self.emit(src, AccessKind::Read, y, z - d, x0, x1, f);
            self.emit(src, AccessKind::Read, y, z + d, x0, x1, f);
        }
        for k in 0..spec.coeff_arrays {
            self.emit(2 + k as u8, AccessKind::Read, y, z, x0, x1, f);
        }
        self.emit(dst, AccessKind::Write, y, z, x0, x1, f);
    }
}

/// Streams the access trace of `schedule` under `cfg` into `f` and returns
/// the number of lattice updates traced. Nothing is materialized; traces
/// run to billions of events.
pub fn trace_schedule(
    cfg: &MwdConfig,
    schedule: Schedule,
    mut f: impl FnMut(Access),
) -> Result<u64> {
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(0);
    }
    let layout = Layout::new(cfg);
    let spec = cfg.stencil;
    let r = spec.radius;
    let mut lups = 0u64;
    match schedule {
        Schedule::Tiled => {
            let dag = build_tile_dag(cfg.ny, cfg.diamond_width, r, cfg.steps);
            let plan = WavefrontPlan::new(cfg);
            let segments: Vec<(usize, usize)> = x_tiles(cfg.interior_x(), cfg.x_tile)
                .into_iter()
                .map(|(lo, hi)| (r + lo, r + hi))
                .collect();
            for id in dag.fifo_order() {
                visit_tile_rows(&plan, &dag.tiles[id], |t, z, y_lo, y_hi| {
                    for &(x0, x1) in &segments {
                        for y in y_lo..y_hi {
                            layout.emit_update_row(&spec, t, y, z, x0, x1, &mut f);
                            lups += (x1 - x0) as u64;
                        }
                    }
                });
            }
        }
        Schedule::Spatial => {
            for t in 0..cfg.steps {
                for z in r..cfg.nz - r {
                    for y in r..cfg.ny - r {
                        layout.emit_update_row(&spec, t, y, z, r, cfg.nx - r, &mut f);
                        lups += (cfg.nx - 2 * r) as u64;
                    }
                }
            }
        }
    }
    Ok(lups)
}

/// Writes the trace as fixed 10-byte records: array id (1 byte), op
/// (1 byte, 0 = read / 1 = write), line index (8 bytes little endian).
/// Returns (updates, records).
pub fn write_trace(
    cfg: &MwdConfig,
    schedule: Schedule,
    out: &mut impl Write,
) -> Result<(u64, u64)> {
    let mut records = 0u64;
    let mut err: Option<io::Error> = None;
    let lups = trace_schedule(cfg, schedule, |a| {
        if err.is_some() {
            return;
        }
        let mut rec = [0u8; 10];
        rec[0] = a.array;
        rec[1] = (a.kind == AccessKind::Write) as u8;
        rec[2..].copy_from_slice(&a.line.to_le_bytes());
        match out.write_all(&rec) {
            Ok(()) => records += 1,
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok((lups, records))
}

/// Transfer counters of one simulation. Each counted event moves one
/// 64-byte line between cache and memory.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct CacheCounters {
    pub accesses: u64,
    pub hits: u64,
    pub read_misses: u64,
    pub write_allocate_fills: u64,
    pub dirty_evictions: u64,
    pub flush_writebacks: u64,
    /// First-ever touches, a lower bound no capacity can beat.
    pub compulsory_misses: u64,
    pub total_evictions: u64,
}

impl CacheCounters {
    /// Bytes moved to or from memory.
    pub fn traffic_bytes(&self) -> u64 {
        64 * (self.read_misses + self.write_allocate_fills + self.dirty_evictions
            + self.flush_writebacks)
    }
}

const NO_SLOT: u32 = u32::MAX;

/// Fully associative LRU cache of 64-byte lines with write-allocate.
///
/// Lookup is a dense table over the global line space (no hashing: traces
/// are billions of events), recency is an intrusive doubly linked list over
/// the slot arrays.
pub struct SimCache {
    capacity: u32,
    table: Vec<u32>,
    line_of: Vec<u64>,
    dirty: Vec<bool>,
    prev: Vec<u32>,
    next: Vec<u32>,
    head: u32,
    tail: u32,
    used: u32,
    seen: Vec<bool>,
    pub counters: CacheCounters,
}

impl SimCache {
    pub fn new(capacity_bytes: u64, total_lines: u64) -> SimCache {
        let capacity = (capacity_bytes / 64).max(1) as u32;
        let n = capacity as usize;
        SimCache {
            capacity,
            table: vec![NO_SLOT; total_lines as usize],
            line_of: vec![0; n],
            dirty: vec![false; n],
            prev: vec![NO_SLOT; n],
            next: vec![NO_SLOT; n],
            head: NO_SLOT,
            tail: NO_SLOT,
            used: 0,
            seen: vec![false; total_lines as usize],
            counters: CacheCounters::default(),
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity as u64 * 64
    }

    fn unlink(&mut self, s: u32) {
        let (p, n) = (self.prev[s as usize], self.next[s as usize]);
        if p == NO_SLOT {
            self.head = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NO_SLOT {
            self.tail = p;
        } else {
            self.prev[n as usize] = p;
        }
    }

    fn push_front(&mut self, s: u32) {
        self.prev[s as usize] = NO_SLOT;
        self.next[s as usize] = self.head;
        if self.head != NO_SLOT {
            self.prev[self.head as usize] = s;
        }
        self.head = s;
        if self.tail == NO_SLOT {
            self.tail = s;
        }
    }

    pub fn access(&mut self, a: Access) {
        self.counters.accesses += 1;
        let line = a.line as usize;
        let slot = self.table[line];
        if slot != NO_SLOT {
            self.counters.hits += 1;
            if self.head != slot {
                self.unlink(slot);
                self.push_front(slot);
            }
            if a.kind == AccessKind::Write {
                self.dirty[slot as usize] = true;
            }
            return;
        }

        if !self.seen[line] {
            self.seen[line] = true;
            self.counters.compulsory_misses += 1;
        }
        match a.kind {
            AccessKind::Read => self.counters.read_misses += 1,
            AccessKind::Write => self.counters.write_allocate_fills += 1,
        }

        let slot = if self.used < self.capacity {
            let s = self.used;
            self.used += 1;
            s
        } else {
            let s = self.tail;
            self.unlink(s);
            self.table[self.line_of[s as usize] as usize] = NO_SLOT;
            if self.dirty[s as usize] {
                self.counters.dirty_evictions += 1;
            }
            self.counters.total_evictions += 1;
            s
        };
        self.line_of[slot as usize] = a.line;
        self.dirty[slot as usize] = a.kind == AccessKind::Write;
        self.table[line] = slot;
        self.push_front(slot);
    }

    /// Writes back every dirty resident line; call once when a trace ends.
    pub fn flush(&mut self) {
        for s in 0..self.used as usize {
            if self.dirty[s] {
                self.dirty[s] = false;
                self.counters.flush_writebacks += 1;
            }
        }
    }

    /// Lines currently resident. Every fill either grew this count or
    /// evicted another line, so fills - evictions = resident always holds.
    pub fn resident_lines(&self) -> u64 {
        self.used as u64
    }
}

/// How concurrent thread groups share the simulated cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CachePartition {
    /// Groups run concurrently; each one's trace competes for an equal
    /// share, capacity / groups. The realistic default.
    CapacityScaled,
    /// Groups take turns, each enjoying the full capacity alone. An
    /// optimistic bound, useful to isolate capacity effects from sharing.
    Serialized,
}

/// One simulated schedule, with the matching model figures for comparison.
#[derive(Clone, Debug, Serialize)]
pub struct TrafficReport {
    pub stencil: &'static str,
    pub schedule: Schedule,
    pub partition: CachePartition,
    /// 0 for the spatial baseline.
    pub diamond_width: usize,
    pub frontlines: usize,
    pub x_tile: usize,
    pub steps: usize,
    pub groups: usize,
    pub cache_bytes: u64,
    /// Budget the simulation actually ran against (per-group share).
    pub simulated_capacity_bytes: u64,
    /// Analytic block footprint; 0 for the spatial baseline.
    pub block_bytes: u64,
    /// Block fits in half the simulated capacity, where the balance model
    /// claims validity.
    pub in_regime: bool,
    pub lups: u64,
    pub counters: CacheCounters,
    pub traffic_bytes: u64,
    pub measured_bytes_per_lup: f64,
    /// Analytic balance for the tiled schedule; for the spatial baseline,
    /// the ideal streaming floor of the plain sweep.
    pub model_bytes_per_lup: f64,
}

/// Traces `schedule` under `cfg` and replays it through the LRU simulator
/// with the default capacity-scaled sharing.
pub fn simulate_traffic(cfg: &MwdConfig, schedule: Schedule) -> Result<TrafficReport> {
    simulate_traffic_with(cfg, schedule, CachePartition::CapacityScaled)
}

/// As `simulate_traffic`, with an explicit group-sharing mode. The spatial
/// schedule has no groups to share between and always gets the full
/// capacity.
pub fn simulate_traffic_with(
    cfg: &MwdConfig,
    schedule: Schedule,
    partition: CachePartition,
) -> Result<TrafficReport> {
    cfg.validate()?;
    let spec = cfg.stencil;
    let layout = Layout::new(cfg);
    let total_lines = layout.arrays(&spec) * layout.lines_per_array;
    let capacity = match (schedule, partition) {
        (Schedule::Tiled, CachePartition::CapacityScaled) => cfg.cache_bytes / cfg.groups() as u64,
        _ => cfg.cache_bytes,
    };
    let mut cache = SimCache::new(capacity, total_lines);
    let lups = trace_schedule(cfg, schedule, |a| cache.access(a))?;
    cache.flush();

    let (block_bytes, model) = match schedule {
        Schedule::Tiled => (
            cache_block_bytes(
                cfg.diamond_width,
                cfg.frontlines,
                cfg.x_tile,
                spec.radius,
                spec.streams,
            ),
            code_balance(cfg.diamond_width, spec.radius, spec.streams),
        ),
        // The plain sweep at best streams every array once per step and
        // writes the solution back: 8 bytes per stream plus 8 for the
        // write-back.
        Schedule::Spatial => (0, 8.0 * (spec.streams + 1) as f64),
    };
    let traffic = cache.counters.traffic_bytes();
    Ok(TrafficReport {
        stencil: spec.name,
        schedule,
        partition,
        diamond_width: match schedule {
            Schedule::Tiled => cfg.diamond_width,
            Schedule::Spatial => 0,
        },
        frontlines: cfg.frontlines,
        x_tile: cfg.x_tile,
        steps: cfg.steps,
        groups: cfg.groups(),
        cache_bytes: cfg.cache_bytes,
        simulated_capacity_bytes: cache.capacity_bytes(),
        block_bytes,
        in_regime: schedule == Schedule::Tiled && 2 * block_bytes <= cache.capacity_bytes(),
        lups,
        counters: cache.counters,
        traffic_bytes: traffic,
        measured_bytes_per_lup: traffic as f64 / lups as f64,
        model_bytes_per_lup: model,
    })
}

/// Options for a diamond-width sweep at fixed grid and stencil.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub diamond_widths: Vec<usize>,
    /// Diamond rows per run; steps = rows * half-extent so every width runs
    /// the same number of whole rows.
    pub rows_per_run: usize,
    /// Append a spatial-baseline report at the end.
    pub include_spatial: bool,
    pub spatial_steps: usize,
    pub partition: CachePartition,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            diamond_widths: Vec::new(),
            rows_per_run: 12,
            include_spatial: false,
            spatial_steps: 4,
            partition: CachePartition::CapacityScaled,
        }
    }
}

/// Simulates `base` at each diamond width, holding everything else fixed.
/// Reports come back in the given width order, spatial baseline last.
pub fn balance_sweep(base: &MwdConfig, opts: &SweepOptions) -> Result<Vec<TrafficReport>> {
    let mut out = Vec::new();
    for &dw in &opts.diamond_widths {
        let mut cfg = base.clone();
        cfg.diamond_width = dw;
        cfg.steps = opts.rows_per_run * (dw / (2 * cfg.stencil.radius));
        out.push(simulate_traffic_with(&cfg, Schedule::Tiled, opts.partition)?);
    }
    if opts.include_spatial {
        let mut cfg = base.clone();
        cfg.steps = opts.spatial_steps;
        out.push(simulate_traffic_with(&cfg, Schedule::Spatial, opts.partition)?);
    }
    Ok(out)
}
