//! Threaded executor for diamond-tiled sweeps, plus a serial replay checker
//! that validates schedules against the data dependences.
//!
//! Threads are partitioned into fixed groups; each group claims whole tiles
//! from a shared ready queue and sweeps them along z as a multicore
//! wavefront. Within one wavefront step the group walks the tile's time
//! levels in ascending order, each level trailing the one below by `radius`
//! z lines, with a group barrier after every active level. That stagger is
//! exactly what correctness needs:
//!
//! - an update at level t+1, row z reads level-t rows up to z + radius,
//!   which is the last row the level-t pass of the same step completed;
//! - the same update overwrites the level t-1 value at z, which only
//!   remaining level-t updates at rows >= z + radius could still need, and
//!   those all lie beyond this step's level-t+1 window.
//!
//! Across tiles the ready queue enforces the tile DAG; tiles more than one
//! lattice row apart never share time levels, and same-row tiles stay
//! further than the stencil radius apart at every level, so predecessor
//! completion is the only cross-tile ordering required. The replay checker
//! re-verifies all of this per run with row-granular version counters.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid3D, MwdConfig};
use crate::kernels::{update_row_raw, BufPair};
use crate::tiling::{build_tile_dag, x_tiles, DiamondTile, TileDAG};

/// z-wavefront geometry shared by every tile of a run.
#[derive(Clone, Copy, Debug)]
pub(crate) struct WavefrontPlan {
    /// Interior z range [z0, z1).
    pub z0: usize,
    pub z1: usize,
    /// z lines one group advances per step, summed over its time levels.
    pub frontlines: usize,
    pub radius: usize,
}

impl WavefrontPlan {
    pub fn new(cfg: &MwdConfig) -> Self {
        let r = cfg.stencil.radius;
        WavefrontPlan {
            z0: r,
            z1: cfg.nz - r,
            frontlines: cfg.frontlines,
            radius: r,
        }
    }

    /// Wavefront steps needed to pull `levels` staggered frontline blocks
    /// across the interior.
    pub fn steps(&self, levels: usize) -> usize {
        let span = (self.z1 - self.z0) + (levels - 1) * self.radius;
        span.div_ceil(self.frontlines)
    }

    /// Unclipped start of the level-`l` window at step `s`; level l trails
    /// level 0 by l * radius lines.
    fn window_start(&self, s: usize, l: usize) -> isize {
        self.z0 as isize + (s * self.frontlines) as isize - (l * self.radius) as isize
    }

    /// Clipped z window of level `l` at step `s`.
    pub fn window(&self, s: usize, l: usize) -> Option<(usize, usize)> {
        let start = self.window_start(s, l);
        let lo = start.max(self.z0 as isize);
        let hi = (start + self.frontlines as isize).min(self.z1 as isize);
        if lo < hi {
            Some((lo as usize, hi as usize))
        } else {
            None
        }
    }

    /// The slice of the level window owned by `rank`: frontlines split into
    /// fixed per-thread runs, so each thread keeps its own z lines across
    /// steps.
    pub fn rank_chunk(
        &self,
        s: usize,
        l: usize,
        rank: usize,
        per_thread: usize,
    ) -> Option<(usize, usize)> {
        let start = self.window_start(s, l) + (rank * per_thread) as isize;
        let lo = start.max(self.z0 as isize);
        let hi = (start + per_thread as isize).min(self.z1 as isize);
        if lo < hi {
            Some((lo as usize, hi as usize))
        } else {
            None
        }
    }
}

/// Visits every (t, z-row) of `tile` in the canonical serial order: step by
/// step, levels ascending, z ascending. The callback gets
/// (t, z, y_lo, y_hi); rows within one level are mutually independent, so
/// this order represents every legal intra-tile interleaving.
pub(crate) fn visit_tile_rows(
    plan: &WavefrontPlan,
    tile: &DiamondTile,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let levels = tile.t_hi - tile.t_lo;
    for s in 0..plan.steps(levels) {
        for l in 0..levels {
            let t = tile.t_lo + l;
            let Some((y_lo, y_hi)) = tile.y_extent(t) else {
                continue;
            };
            let Some((z_lo, z_hi)) = plan.window(s, l) else {
                continue;
            };
            for z in z_lo..z_hi {
                f(t, z, y_lo, y_hi);
            }
        }
    }
}

/// Shared ready queue over a tile DAG. Group leaders pop, whole groups
/// execute, leaders complete; completion releases successors. `pop_at`
/// exists so schedule fuzzers can explore every legal execution order, not
/// just the FIFO one.
pub struct TileQueue<'a> {
    dag: &'a TileDAG,
    state: Mutex<QueueState>,
}

struct QueueState {
    ready: VecDeque<usize>,
    indegree: Vec<usize>,
    done: Vec<bool>,
    remaining: usize,
}

impl<'a> TileQueue<'a> {
    pub fn new(dag: &'a TileDAG) -> Self {
        let indegree: Vec<usize> = (0..dag.len()).map(|i| dag.preds(i).len()).collect();
        let ready = (0..dag.len()).filter(|&i| indegree[i] == 0).collect();
        TileQueue {
            dag,
            state: Mutex::new(QueueState {
                ready,
                indegree,
                done: vec![false; dag.len()],
                remaining: dag.len(),
            }),
        }
    }

    /// Oldest ready tile; blocks while other groups still hold tiles whose
    /// completion may release more. None once everything is done.
    pub fn pop_blocking(&self) -> Option<usize> {
        loop {
            {
                let mut st = self.state.lock().unwrap();
                if let Some(id) = st.ready.pop_front() {
                    return Some(id);
                }
                if st.remaining == 0 {
                    return None;
                }
            }
            std::thread::yield_now();
        }
    }

    /// Exploration hook for schedule fuzzing: pops the (pick % ready)-th
    /// ready tile instead of the oldest. Serial callers only; returns None
    /// when nothing is ready right now.
    pub fn pop_at(&self, pick: usize) -> Option<usize> {
        let mut st = self.state.lock().unwrap();
        if st.ready.is_empty() {
            return None;
        }
        let idx = pick % st.ready.len();
        st.ready.remove(idx)
    }

    /// Marks `id` executed and releases successors whose predecessors are
    /// all done. Completing a tile twice is a scheduler bug and panics.
    pub fn complete(&self, id: usize) {
        let mut st = self.state.lock().unwrap();
        assert!(!st.done[id], "tile {} completed twice", id);
        st.done[id] = true;
        for &s in self.dag.succs(id) {
            st.indegree[s] -= 1;
            if st.indegree[s] == 0 {
                st.ready.push_back(s);
            }
        }
        st.remaining -= 1;
    }

    /// True once every tile has been completed exactly once.
    pub fn all_complete(&self) -> bool {
        self.state.lock().unwrap().remaining == 0
    }
}

/// Timing and shape summary of one tiled run.
#[derive(Clone, Debug, Serialize)]
pub struct RunStats {
    pub stencil: &'static str,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub steps: usize,
    pub diamond_width: usize,
    pub frontlines: usize,
    pub x_tile: usize,
    pub threads: usize,
    pub group_size: usize,
    pub tiles: usize,
    /// Tiles executed by each thread group, in group order.
    pub tiles_per_group: Vec<u64>,
    /// Total time group leaders spent blocked on the ready queue, summed
    /// over groups. High values mean the DAG, not the work, is the limit.
    pub queue_wait_seconds: f64,
    pub lups: u64,
    pub seconds: f64,
    pub mlups: f64,
}

/// Advances `grid` by `cfg.steps` time levels with the diamond-tiled
/// multicore wavefront executor. Bit-identical to the level-by-level
/// reference sweep for any valid configuration. Zero steps is the identity.
pub fn mwd_run(cfg: &MwdConfig, grid: &mut Grid3D) -> Result<RunStats> {
    cfg.validate()?;
    if (grid.nx, grid.ny, grid.nz) != (cfg.nx, cfg.ny, cfg.nz) || grid.radius != cfg.stencil.radius
    {
        return Err(Error::InvalidConfig(
            "grid shape does not match configuration".into(),
        ));
    }
    if cfg.steps == 0 {
        return Ok(RunStats {
            stencil: cfg.stencil.name,
            nx: cfg.nx,
            ny: cfg.ny,
            nz: cfg.nz,
            steps: 0,
            diamond_width: cfg.diamond_width,
            frontlines: cfg.frontlines,
            x_tile: cfg.x_tile,
            threads: cfg.threads,
            group_size: cfg.group_size,
            tiles: 0,
            tiles_per_group: vec![0; cfg.groups()],
            queue_wait_seconds: 0.0,
            lups: 0,
            seconds: 0.0,
            mlups: 0.0,
        });
    }

    let dag = build_tile_dag(cfg.ny, cfg.diamond_width, cfg.stencil.radius, cfg.steps);
    let plan = WavefrontPlan::new(cfg);
    let spec = cfg.stencil;
    let (nx, ny) = (cfg.nx, cfg.ny);
    let r = spec.radius;
    let segments: Vec<(usize, usize)> = x_tiles(cfg.interior_x(), cfg.x_tile)
        .into_iter()
        .map(|(lo, hi)| (r + lo, r + hi))
        .collect();
    let per_thread = cfg.frontlines_per_thread();
    let groups = cfg.groups();
    let base_level = grid.level();

    grid.mirror_halo();
    let queue = TileQueue::new(&dag);
    let barriers: Vec<Barrier> = (0..groups).map(|_| Barrier::new(cfg.group_size)).collect();
    let slots: Vec<AtomicU64> = (0..groups).map(|_| AtomicU64::new(u64::MAX)).collect();
    let tile_counts: Vec<AtomicU64> = (0..groups).map(|_| AtomicU64::new(0)).collect();
    let wait_nanos = AtomicU64::new(0);
    let start = Instant::now();
    {
        let (u, v, coeffs) = grid.raw_parts();
        let bufs = BufPair { u, v };
        std::thread::scope(|scope| {
            for g in 0..groups {
                let barrier = &barriers[g];
                let slot = &slots[g];
                let count = &tile_counts[g];
                for rank in 0..cfg.group_size {
                    let queue = &queue;
                    let dag = &dag;
                    let segments = &segments;
                    let coeffs: &[Vec<f64>] = coeffs;
                    let wait_nanos = &wait_nanos;
                    scope.spawn(move || loop {
                        if rank == 0 {
                            let waited = Instant::now();
                            let next = queue.pop_blocking();
                            wait_nanos
                                .fetch_add(waited.elapsed().as_nanos() as u64, Ordering::Relaxed);
                            if next.is_some() {
                                count.fetch_add(1, Ordering::Relaxed);
                            }
                            slot.store(next.map_or(u64::MAX, |id| id as u64), Ordering::Release);
                        }
                        barrier.wait();
                        let id = slot.load(Ordering::Acquire);
                        if id == u64::MAX {
                            break;
                        }
                        let tile = &dag.tiles[id as usize];
                        execute_tile(
                            &plan, tile, rank, per_thread, barrier, &spec, bufs, coeffs, nx, ny,
                            segments, base_level,
                        );
                        barrier.wait();
                        if rank == 0 {
                            queue.complete(id as usize);
                        }
                    });
                }
            }
        });
    }
    let seconds = start.elapsed().as_secs_f64();
    debug_assert!(queue.all_complete());
    grid.advance(cfg.steps);

    let lups = grid.interior_points() * cfg.steps as u64;
    Ok(RunStats {
        stencil: spec.name,
        nx: cfg.nx,
        ny: cfg.ny,
        nz: cfg.nz,
        steps: cfg.steps,
        diamond_width: cfg.diamond_width,
        frontlines: cfg.frontlines,
        x_tile: cfg.x_tile,
        threads: cfg.threads,
        group_size: cfg.group_size,
        tiles: dag.len(),
        tiles_per_group: tile_counts.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
        queue_wait_seconds: wait_nanos.load(Ordering::Relaxed) as f64 * 1e-9,
        lups,
        seconds,
        mlups: lups as f64 / seconds / 1e6,
    })
}

/// One group's sweep over one tile. All ranks run this with the same
/// arguments except `rank`; the per-level barrier count is identical on
/// every rank because activity depends only on shared window geometry.
#[allow(clippy::too_many_arguments)]
fn execute_tile(
    plan: &WavefrontPlan,
    tile: &DiamondTile,
    rank: usize,
    per_thread: usize,
    barrier: &Barrier,
    spec: &crate::grid::StencilSpec,
    bufs: BufPair,
    coeffs: &[Vec<f64>],
    nx: usize,
    ny: usize,
    segments: &[(usize, usize)],
    base_level: usize,
) {
    let levels = tile.t_hi - tile.t_lo;
    for s in 0..plan.steps(levels) {
        for l in 0..levels {
            let t = tile.t_lo + l;
            let y_ext = tile.y_extent(t);
            let group_window = plan.window(s, l);
            if y_ext.is_none() || group_window.is_none() {
                continue; // nothing written at this level: no barrier needed
            }
            let (y_lo, y_hi) = y_ext.unwrap();
            if let Some((z_lo, z_hi)) = plan.rank_chunk(s, l, rank, per_thread) {
                let (src, dst) = bufs.step(base_level + t);
                for z in z_lo..z_hi {
                    for &(x_lo, x_hi) in segments {
                        for y in y_lo..y_hi {
                            // Safety: rows (y, z) of one level are owned by
                            // exactly one rank (disjoint z chunks) and the
                            // write buffer differs from the read buffer.
                            unsafe {
                                update_row_raw(spec, src, dst, coeffs, nx, ny, y, z, x_lo, x_hi);
                            }
                        }
                    }
                }
            }
            barrier.wait();
        }
    }
}

/// Outcome of replaying a schedule against the dependence rules.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReplayReport {
    pub tiles: usize,
    pub rows_updated: u64,
}

/// Re-executes `order` symbolically and verifies every read sees a live
/// value and every row is updated exactly once per level.
///
/// Row (y, z) carries a version counter: the number of updates applied to
/// it. A read of the level-t value is valid while the version is t (not yet
/// advanced) or t+1 (advanced once; the t value still sits in the other
/// buffer). A write must find version exactly t. Boundary rows are never
/// written and always readable. x tiling cannot change any of this -- x
/// segments of a row belong to the same level and buffer -- so the check
/// coalesces x and tracks whole rows.
pub fn replay_schedule(cfg: &MwdConfig, dag: &TileDAG, order: &[usize]) -> Result<ReplayReport> {
    cfg.validate()?;
    let r = cfg.stencil.radius;
    let (ny, nz) = (cfg.ny, cfg.nz);
    let plan = WavefrontPlan::new(cfg);
    let interior = |y: usize, z: usize| y >= r && y < ny - r && z >= r && z < nz - r;
    let mut version = vec![0usize; ny * nz];
    let mut rows_updated = 0u64;

    for &id in order {
        let tile = &dag.tiles[id];
        let mut hazard = None;
        visit_tile_rows(&plan, tile, |t, z, y_lo, y_hi| {
            if hazard.is_some() {
                return;
            }
            for y in y_lo..y_hi {
                // Reads: the level-t values of this row's y and z neighbours.
                let check_read = |ry: usize, rz: usize| {
                    if interior(ry, rz) {
                        let v = version[ry + ny * rz];
                        if v != t && v != t + 1 {
                            return Some((ry, rz));
                        }
                    }
                    None
                };
                let mut bad = None;
                for d in 1..=r {
                    bad = bad
                        .or_else(|| check_read(y - d, z))
                        .or_else(|| check_read(y + d, z))
                        .or_else(|| check_read(y, z - d))
                        .or_else(|| check_read(y, z + d));
                }
                if let Some((ry, rz)) = bad {
                    hazard = Some(Error::Hazard {
                        tile: id,
                        kind: "stale read",
                        t,
                        y: ry,
                        z: rz,
                    });
                    return;
                }
                let slot = &mut version[y + ny * z];
                if *slot != t {
                    hazard = Some(Error::Hazard {
                        tile: id,
                        kind: "write order",
                        t,
                        y,
                        z,
                    });
                    return;
                }
                *slot = t + 1;
                rows_updated += 1;
            }
        });
        if let Some(e) = hazard {
            return Err(e);
        }
    }

    for z in r..nz - r {
        for y in r..ny - r {
            let v = version[y + ny * z];
            if v != cfg.steps {
                return Err(Error::Hazard {
                    tile: usize::MAX,
                    kind: "incomplete coverage",
                    t: v,
                    y,
                    z,
                });
            }
        }
    }
    Ok(ReplayReport {
        tiles: order.len(),
        rows_updated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compare_front, init_grid, make_spec};
    use crate::kernels::naive_sweep;

    fn tiled_vs_naive(cfg: &MwdConfig) {
        let mut a = init_grid(&cfg.stencil, cfg.nx, cfg.ny, cfg.nz, cfg.seed);
        let mut b = a.clone();
        naive_sweep(&cfg.stencil, &mut a, cfg.steps);
        let stats = mwd_run(cfg, &mut b).unwrap();
        let diff = compare_front(&a, &b);
        assert!(
            diff.bit_equal,
            "tiled run diverged at {:?} (max ulp {}) for {:?}",
            diff.first_diff, diff.max_ulp, cfg
        );
        assert_eq!(stats.lups, b.interior_points() * cfg.steps as u64);
        assert_eq!(b.level(), cfg.steps);
        assert_eq!(stats.tiles_per_group.len(), cfg.groups());
        assert_eq!(
            stats.tiles_per_group.iter().sum::<u64>(),
            stats.tiles as u64,
            "every tile executed by exactly one group"
        );
        assert!(stats.queue_wait_seconds >= 0.0);
    }

    #[test]
    fn single_thread_matches_reference() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 18, 16, 12);
        cfg.steps = 7;
        cfg.diamond_width = 8;
        cfg.frontlines = 2;
        cfg.seed = 11;
        tiled_vs_naive(&cfg);
    }

    #[test]
    fn thread_groups_match_reference() {
        let mut cfg = MwdConfig::new(make_spec("7pt-var").unwrap(), 20, 24, 16);
        cfg.steps = 9;
        cfg.diamond_width = 8;
        cfg.threads = 4;
        cfg.group_size = 2;
        cfg.frontlines = 4;
        cfg.x_tile = 7; // uneven split of the 18-point interior
        cfg.seed = 5;
        tiled_vs_naive(&cfg);
    }

    #[test]
    fn wide_stencil_matches_reference() {
        let mut cfg = MwdConfig::new(make_spec("25pt-var").unwrap(), 14, 32, 20);
        cfg.steps = 6;
        cfg.diamond_width = 16;
        cfg.threads = 2;
        cfg.group_size = 1;
        cfg.frontlines = 3;
        cfg.x_tile = 3;
        cfg.seed = 23;
        tiled_vs_naive(&cfg);
    }

    #[test]
    fn window_geometry_covers_interior_once_per_level() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 10, 16, 30);
        cfg.frontlines = 4;
        let plan = WavefrontPlan::new(&cfg);
        let levels = 5;
        let mut seen = vec![vec![0usize; cfg.nz]; levels];
        for s in 0..plan.steps(levels) {
            for (l, counts) in seen.iter_mut().enumerate() {
                if let Some((lo, hi)) = plan.window(s, l) {
                    for z in lo..hi {
                        counts[z] += 1;
                    }
                }
            }
        }
        for counts in &seen {
            for (z, &c) in counts.iter().enumerate() {
                let want = usize::from(z >= 1 && z < cfg.nz - 1);
                assert_eq!(c, want, "z={}", z);
            }
        }
    }

    #[test]
    fn rank_chunks_partition_each_window() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 10, 16, 25);
        cfg.frontlines = 6;
        cfg.threads = 3;
        cfg.group_size = 3;
        let plan = WavefrontPlan::new(&cfg);
        for s in 0..plan.steps(4) {
            for l in 0..4 {
                let mut got = Vec::new();
                for rank in 0..3 {
                    if let Some((lo, hi)) = plan.rank_chunk(s, l, rank, 2) {
                        got.extend(lo..hi);
                    }
                }
                let want: Vec<usize> = plan.window(s, l).map_or(Vec::new(), |(lo, hi)| (lo..hi).collect());
                assert_eq!(got, want, "s={} l={}", s, l);
            }
        }
    }

    #[test]
    fn fifo_replay_is_hazard_free() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 8, 24, 12);
        cfg.steps = 10;
        cfg.diamond_width = 8;
        cfg.frontlines = 3;
        let dag = build_tile_dag(cfg.ny, cfg.diamond_width, 1, cfg.steps);
        let report = replay_schedule(&cfg, &dag, &dag.fifo_order()).unwrap();
        assert_eq!(report.tiles, dag.len());
        // Every interior row advances once per step.
        assert_eq!(report.rows_updated, (22 * 10 * 10) as u64);
    }

    #[test]
    fn dependence_violation_is_detected() {
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 8, 16, 12);
        cfg.steps = 8;
        cfg.diamond_width = 8;
        cfg.frontlines = 2;
        let dag = build_tile_dag(cfg.ny, cfg.diamond_width, 1, cfg.steps);
        let mut order = dag.fifo_order();
        // Run some tile before one of its predecessors.
        let victim = (0..dag.len()).position(|i| !dag.preds(order[i]).is_empty())
            .map(|i| order[i])
            .unwrap();
        let vpos = order.iter().position(|&x| x == victim).unwrap();
        let ppos = order
            .iter()
            .position(|&x| x == dag.preds(victim)[0])
            .unwrap();
        order.swap(vpos, ppos);
        match replay_schedule(&cfg, &dag, &order) {
            Err(Error::Hazard { .. }) => {}
            other => panic!("expected hazard, got {:?}", other.map(|r| r.tiles)),
        }
    }

    #[test]
    fn randomized_queue_orders_stay_legal() {
        use rand::{Rng, SeedableRng};
        let mut cfg = MwdConfig::new(make_spec("7pt-const").unwrap(), 6, 16, 8);
        cfg.steps = 9;
        cfg.diamond_width = 4;
        let dag = build_tile_dag(cfg.ny, cfg.diamond_width, 1, cfg.steps);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let queue = TileQueue::new(&dag);
            let mut order = Vec::with_capacity(dag.len());
            while let Some(id) = queue.pop_at(rng.gen()) {
                order.push(id);
                queue.complete(id);
            }
            assert_eq!(order.len(), dag.len());
            replay_schedule(&cfg, &dag, &order).unwrap();
        }
    }

    #[test]
    fn double_completion_panics() {
        let dag = build_tile_dag(8, 8, 1, 4);
        let queue = TileQueue::new(&dag);
        let id = queue.pop_blocking().unwrap();
        queue.complete(id);
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            queue.complete(id);
        }));
        assert!(result.is_err());
    }

    #[test]
    fn queue_tracks_completion() {
        let dag = build_tile_dag(8, 8, 1, 4);
        let queue = TileQueue::new(&dag);
        let mut n = 0;
        while let Some(id) = queue.pop_blocking() {
            assert!(!queue.all_complete());
            queue.complete(id);
            n += 1;
        }
        assert_eq!(n, dag.len());
        assert!(queue.all_complete());
    }

    #[test]
    fn zero_steps_is_the_identity() {
        let mut cfg = MwdConfig::new(make_spec("7pt-var").unwrap(), 10, 8, 8);
        cfg.steps = 0;
        let mut g = init_grid(&cfg.stencil, 10, 8, 8, 2);
        let before = g.clone();
        let stats = mwd_run(&cfg, &mut g).unwrap();
        assert_eq!(stats.lups, 0);
        assert_eq!(stats.tiles, 0);
        assert!(compare_front(&before, &g).bit_equal);
        assert_eq!(g.level(), 0);
    }
}
