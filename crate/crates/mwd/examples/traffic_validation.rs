//! Does the balance model predict real traffic? Replay tiled schedules
//! through the LRU cache simulator across diamond widths and compare
//! simulated bytes per update with the model. Inside the half-cache regime
//! the two agree; past it the measured traffic lifts off while the model
//! keeps falling -- that crossover is the whole tuning story.
//!
//!     cargo run --release -p mwd --example traffic_validation

use mwd::cachesim::{balance_sweep, SweepOptions};
use mwd::report::crossover_width;
use mwd::{make_spec, MwdConfig};

fn main() -> mwd::Result<()> {
    let spec = make_spec("7pt-const")?;
    let mut base = MwdConfig::new(spec, 258, 48, 32);
    base.frontlines = 2;
    base.cache_bytes = 1 << 20;

    let opts = SweepOptions {
        diamond_widths: vec![4, 8, 12, 16, 24],
        rows_per_run: 8,
        include_spatial: true,
        spatial_steps: 4,
        ..Default::default()
    };
    let reports = balance_sweep(&base, &opts)?;

    println!(
        "7pt-const on {}x{}x{}, {} KiB simulated cache:",
        base.nx,
        base.ny,
        base.nz,
        base.cache_bytes >> 10
    );
    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>8} {:>9}",
        "dw", "block_bytes", "model B/LUP", "sim B/LUP", "ratio", "in_regime"
    );
    for r in &reports {
        let label = if r.diamond_width == 0 {
            "spatial".to_string()
        } else {
            r.diamond_width.to_string()
        };
        println!(
            "{:>8} {:>12} {:>12.3} {:>12.3} {:>8.3} {:>9}",
            label,
            r.block_bytes,
            r.model_bytes_per_lup,
            r.measured_bytes_per_lup,
            r.measured_bytes_per_lup / r.model_bytes_per_lup,
            r.in_regime
        );
    }
    match crossover_width(&reports) {
        Some(dw) => println!(
            "\ncrossover at dw={}: first width whose blocks overflow half the cache",
            dw
        ),
        None => println!("\nno crossover: every width obeys the half-cache rule"),
    }

    // The regime boundary is where trust in the model should end: measured
    // traffic stays near the model inside it and only above it outside.
    for r in &reports {
        if r.in_regime {
            assert!(r.measured_bytes_per_lup / r.model_bytes_per_lup < 1.5);
        }
    }
    Ok(())
}
