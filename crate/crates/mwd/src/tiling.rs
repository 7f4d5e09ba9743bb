//! Diamond tiling of the y-t plane and the dependence DAG between tiles.
//!
//! The y axis is cut into diamonds of extent `diamond_width`; each diamond
//! spans `diamond_width / radius` time levels and is extruded along z by the
//! executing wavefront. Rows of the lattice alternate between two center
//! grids offset by half a width, so at every time level the active tiles
//! partition the y interior exactly: each interior row is updated once per
//! level, by exactly one tile.
//!
//! Invariants the tests pin down:
//! - tiles of one row are pairwise disjoint at every level and rows two
//!   apart never share a level, so only adjacent rows interact;
//! - a tile reads values written only by its one or two predecessors in the
//!   row below (centers offset by half a width), which is what the DAG
//!   encodes;
//! - executing tiles in any predecessor-respecting order, with each tile's
//!   levels in ascending time, yields the same result as a level-by-level
//!   sweep.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models;

/// Shape parameters of one extruded diamond.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WavefrontParams {
    pub diamond_width: usize,
    pub frontlines: usize,
    pub radius: usize,
    /// z extent of the wavefront while inside the bulk.
    pub wavefront_width: usize,
    /// Time levels one diamond spans.
    pub time_extent: usize,
}

pub fn wavefront_params(
    diamond_width: usize,
    frontlines: usize,
    radius: usize,
) -> Result<WavefrontParams> {
    if radius < 1 {
        return Err(Error::InvalidConfig("stencil radius must be >= 1".into()));
    }
    if diamond_width == 0 || diamond_width % (4 * radius) != 0 {
        return Err(Error::InvalidConfig(format!(
            "diamond width {} is not a positive multiple of 4*radius = {}",
            diamond_width,
            4 * radius
        )));
    }
    if frontlines == 0 {
        return Err(Error::InvalidConfig("frontlines must be >= 1".into()));
    }
    Ok(WavefrontParams {
        diamond_width,
        frontlines,
        radius,
        wavefront_width: models::wavefront_width(diamond_width, radius, frontlines),
        time_extent: diamond_width / radius,
    })
}

/// One diamond of the y-t lattice.
///
/// `row` counts half-diamond periods in time (mid_time = row * half
/// duration), `col` indexes the center grid of that row. Even rows center
/// on odd multiples of the half width, odd rows on multiples of the full
/// width; odd-row tiles at the y boundary are half diamonds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiamondTile {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub center_y: usize,
    pub mid_time: usize,
    /// Update window [t_lo, t_hi): time levels this tile advances.
    pub t_lo: usize,
    pub t_hi: usize,
    /// Boundary half diamond: an odd-row tile whose y extent is cut by the
    /// grid edge.
    pub clipped: bool,
    half_duration: usize,
    radius: usize,
    ny: usize,
}

impl DiamondTile {
    /// Rows [lo, hi) this tile updates at level `t`, clamped to the grid
    /// interior. None outside the tile's window or where the clamp leaves
    /// nothing (possible only for boundary half diamonds).
    pub fn y_extent(&self, t: usize) -> Option<(usize, usize)> {
        if t < self.t_lo || t >= self.t_hi {
            return None;
        }
        let h = self.radius * (self.half_duration - self.mid_time.abs_diff(t));
        let lo = self.center_y.saturating_sub(h).max(self.radius);
        let hi = (self.center_y + h).min(self.ny - self.radius);
        (lo < hi).then_some((lo, hi))
    }

    /// Updates this tile performs per x point, summed over its window.
    pub fn updates_per_x(&self) -> u64 {
        (self.t_lo..self.t_hi)
            .filter_map(|t| self.y_extent(t))
            .map(|(lo, hi)| (hi - lo) as u64)
            .sum()
    }
}

/// All tiles of a run plus their dependence edges.
pub struct TileDAG {
    pub tiles: Vec<DiamondTile>,
    pub diamond_width: usize,
    pub radius: usize,
    pub ny: usize,
    pub time_steps: usize,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

/// Builds the tile lattice covering `time_steps` updates of a grid with
/// `ny` rows. Requires `diamond_width` to be a positive multiple of
/// `4 * radius` and to divide `ny`; callers validate user input first, so
/// violations are programmer errors.
pub fn build_tile_dag(
    ny: usize,
    diamond_width: usize,
    radius: usize,
    time_steps: usize,
) -> TileDAG {
    assert!(radius >= 1 && diamond_width >= 4 * radius && diamond_width % (4 * radius) == 0);
    assert!(ny >= diamond_width && ny % diamond_width == 0);
    assert!(time_steps >= 1);

    let h = diamond_width / (2 * radius);
    let cols = ny / diamond_width;
    let last_row = (time_steps + h - 2) / h;

    let mut tiles = Vec::new();
    let mut preds: Vec<Vec<usize>> = Vec::new();
    let mut prev_row_start = 0;
    for row in 0..=last_row {
        let row_start = tiles.len();
        let mid_time = row * h;
        let t_lo = mid_time.saturating_sub(h - 1);
        let t_hi = (mid_time + h).min(time_steps);
        let even = row % 2 == 0;
        let ncols = if even { cols } else { cols + 1 };
        for col in 0..ncols {
            let center_y = if even {
                col * diamond_width + diamond_width / 2
            } else {
                col * diamond_width
            };
            let id = tiles.len();
            tiles.push(DiamondTile {
                id,
                row,
                col,
                center_y,
                mid_time,
                t_lo,
                t_hi,
                clipped: !even && (col == 0 || col == cols),
                half_duration: h,
                radius,
                ny,
            });
            let mut p = Vec::new();
            if row > 0 {
                if even {
                    // Below sits an odd row with cols..=cols entries.
                    p.push(prev_row_start + col);
                    p.push(prev_row_start + col + 1);
                } else {
                    if col > 0 {
                        p.push(prev_row_start + col - 1);
                    }
                    if col < cols {
                        p.push(prev_row_start + col);
                    }
                }
            }
            preds.push(p);
        }
        prev_row_start = row_start;
    }

    let mut succs = vec![Vec::new(); tiles.len()];
    for (id, p) in preds.iter().enumerate() {
        for &q in p {
            succs[q].push(id);
        }
    }
    TileDAG {
        tiles,
        diamond_width,
        radius,
        ny,
        time_steps,
        preds,
        succs,
    }
}

impl TileDAG {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn preds(&self, id: usize) -> &[usize] {
        &self.preds[id]
    }

    pub fn succs(&self, id: usize) -> &[usize] {
        &self.succs[id]
    }

    /// Full diamonds runnable simultaneously in steady state: one per
    /// column of the lattice.
    pub fn concurrency(&self) -> usize {
        self.ny / self.diamond_width
    }

    /// Canonical serial schedule: repeatedly run the oldest ready tile.
    /// Ties break by id, so the order is deterministic.
    pub fn fifo_order(&self) -> Vec<usize> {
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut queue: std::collections::VecDeque<usize> = (0..self.len())
            .filter(|&i| indeg[i] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &s in &self.succs[id] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        assert_eq!(order.len(), self.len(), "dependence cycle");
        order
    }

    /// Writes one line per tile: geometry and successor ids.
    pub fn dump_edges(&self, w: &mut impl Write) -> io::Result<()> {
        for t in &self.tiles {
            let succs: Vec<String> = self.succs[t.id].iter().map(|s| s.to_string()).collect();
            writeln!(
                w,
                "tile {} row {} col {} center_y {} t [{},{}) -> [{}]",
                t.id,
                t.row,
                t.col,
                t.center_y,
                t.t_lo,
                t.t_hi,
                succs.join(", ")
            )?;
        }
        Ok(())
    }
}

/// Splits an extent of `n` points into consecutive chunks of `tile` points;
/// the last chunk takes the remainder. Intervals are half-open offsets into
/// the extent.
pub fn x_tiles(n: usize, tile: usize) -> Vec<(usize, usize)> {
    assert!(n > 0 && tile > 0);
    let mut out = Vec::with_capacity(n.div_ceil(tile));
    let mut lo = 0;
    while lo < n {
        let hi = (lo + tile).min(n);
        out.push((lo, hi));
        lo = hi;
    }
    out
}
