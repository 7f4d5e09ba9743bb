//! A look at the tile geometry: wavefront shapes for a few parameter sets,
//! then the full diamond lattice of a small run -- every tile's extent in
//! the y-t plane, its dependences, and the exact-partition property that
//! makes the schedule race-free.
//!
//!     cargo run --release -p mwd --example tile_geometry

use mwd::{build_tile_dag, wavefront_params};

fn main() -> mwd::Result<()> {
    println!("wavefront shapes (width = dw - 2*radius + frontlines):");
    println!("{:>4} {:>3} {:>7} {:>16} {:>12}", "dw", "nf", "radius", "wavefront_width", "time_extent");
    for (dw, nf, r) in [(8, 4, 1), (8, 2, 1), (16, 10, 4), (32, 4, 1)] {
        let p = wavefront_params(dw, nf, r)?;
        println!(
            "{:>4} {:>3} {:>7} {:>16} {:>12}",
            p.diamond_width, p.frontlines, p.radius, p.wavefront_width, p.time_extent
        );
    }

    let (ny, dw, r, steps) = (16usize, 4usize, 1usize, 8usize);
    let dag = build_tile_dag(ny, dw, r, steps);
    println!("\ntile lattice for ny={}, dw={}, radius={}, {} steps:", ny, dw, r, steps);
    println!(
        "{:>3} {:>3} {:>3} {:>8} {:>9} {:>7} {:>7}  preds",
        "id", "row", "col", "center_y", "levels", "clip", "rows/x"
    );
    for tile in &dag.tiles {
        let preds: Vec<String> = dag.preds(tile.id).iter().map(|p| p.to_string()).collect();
        println!(
            "{:>3} {:>3} {:>3} {:>8} {:>4}..{:<4} {:>7} {:>7}  [{}]",
            tile.id,
            tile.row,
            tile.col,
            tile.center_y,
            tile.t_lo,
            tile.t_hi,
            if tile.clipped { "half" } else { "full" },
            tile.updates_per_x(),
            preds.join(" ")
        );
    }

    // At every time level the active tiles partition the interior rows
    // exactly: print it and check it.
    println!("\nrow coverage by level (each interior y owned by one tile):");
    for t in 0..steps {
        let mut cover = vec![None; ny];
        for tile in &dag.tiles {
            if let Some((lo, hi)) = tile.y_extent(t) {
                for y in lo..hi {
                    assert!(cover[y].is_none(), "t={} y={} claimed twice", t, y);
                    cover[y] = Some(tile.id);
                }
            }
        }
        let line: String = (0..ny)
            .map(|y| match cover[y] {
                Some(id) => char::from_digit((id % 36) as u32, 36).unwrap(),
                None => '.',
            })
            .collect();
        assert!(cover[r..ny - r].iter().all(|c| c.is_some()));
        println!("  t={:<2} {}", t, line);
    }

    println!(
        "\n{} tiles, peak concurrency {}, FIFO order head: {:?}",
        dag.len(),
        dag.concurrency(),
        &dag.fifo_order()[..8.min(dag.len())]
    );
    Ok(())
}
