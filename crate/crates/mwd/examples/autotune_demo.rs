//! The tuning loop end to end: enumerate every admissible blocking
//! configuration for a problem (the analytic constraints do the pruning),
//! time each one, and let measured throughput pick the winner.
//!
//!     cargo run --release -p mwd --example autotune_demo

use mwd::tuner::{autotune, enumerate, median_mlups, SearchSpace};
use mwd::{make_spec, Error};

fn main() -> mwd::Result<()> {
    let spec = make_spec("7pt-var")?;
    let extents = (66, 64, 32);
    let threads = 2;
    let cache = 8u64 << 20;

    let space = SearchSpace::default(); // widths, tiles, groups all derived
    let mut candidates = enumerate(&space, &spec, extents, threads, cache)?;
    for c in &mut candidates {
        c.config.steps = 4;
    }
    println!(
        "{} candidates for {} on {:?}, {} threads, {} MiB cache, ordered by predicted balance:",
        candidates.len(),
        spec.name,
        extents,
        threads,
        cache >> 20
    );
    println!(
        "{:>4} {:>3} {:>4} {:>6} {:>12} {:>10}",
        "dw", "nf", "nxb", "group", "block_bytes", "B/LUP"
    );
    for c in &candidates {
        println!(
            "{:>4} {:>3} {:>4} {:>6} {:>12} {:>10.3}",
            c.config.diamond_width,
            c.config.frontlines,
            c.config.x_tile,
            c.config.group_size,
            c.block.total_bytes,
            c.balance.bytes_per_lup
        );
    }

    let outcome = autotune(&candidates, &mut |cfg| median_mlups(cfg, 3))?;
    println!("\nmeasured, best first:");
    for (i, r) in outcome.table.iter().enumerate().take(5) {
        println!(
            "{:>2}. dw={:<3} nf={:<2} nxb={:<3} group={:<2} {:>9.1} MLUP/s",
            i + 1,
            r.candidate.config.diamond_width,
            r.candidate.config.frontlines,
            r.candidate.config.x_tile,
            r.candidate.config.group_size,
            r.mlups.unwrap_or(f64::NAN)
        );
    }
    let b = &outcome.best.config;
    println!(
        "\nbest: dw={} nf={} nxb={} group_size={} at {:.1} MLUP/s",
        b.diamond_width, b.frontlines, b.x_tile, b.group_size, outcome.best_mlups
    );

    // When nothing survives, the error names the constraints that killed
    // the space instead of shrugging.
    match enumerate(&space, &spec, extents, threads, 512) {
        Err(Error::NoValidConfig(msg)) => println!("\nwith a 512-byte cache: {}", msg),
        other => panic!("expected an empty space, got {:?}", other.map(|c| c.len())),
    }
    Ok(())
}
