//! Throughput and package power versus thread count, sampled by the power
//! meter around each run, then a least-squares fit of the affine power
//! model to the measured watts. With the synthetic provider the fit must
//! recover the model it was built from; on real hardware swap in the
//! system provider.
//!
//!     cargo run --release -p mwd --example thread_scaling

use mwd::models::{energy_per_lup_nj, fit_power};
use mwd::power::{PowerMeter, SyntheticPower};
use mwd::{init_grid, make_spec, mwd_run, MwdConfig, PowerModel};

fn main() -> mwd::Result<()> {
    let spec = make_spec("7pt-const")?;
    let truth = PowerModel {
        static_watts: 25.0,
        dynamic_watts_per_core: 3.2,
    };

    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>10}",
        "threads", "MLUP/s", "cpu_W", "dram_W", "nJ/LUP"
    );
    let mut samples: Vec<(usize, f64)> = Vec::new();
    for threads in 1..=4 {
        let mut cfg = MwdConfig::new(spec, 66, 64, 48);
        cfg.steps = 8;
        cfg.diamond_width = 16;
        cfg.threads = threads;
        cfg.group_size = if threads % 2 == 0 { 2 } else { 1 };
        cfg.frontlines = cfg.group_size;

        let mut grid = init_grid(&spec, cfg.nx, cfg.ny, cfg.nz, 7);
        mwd_run(&cfg, &mut grid)?; // warmup
        let meter = PowerMeter::start(Box::new(SyntheticPower::new(truth, threads)));
        let mut mlups = 0.0;
        for _ in 0..3 {
            mlups = mwd_run(&cfg, &mut grid)?.mlups;
        }
        let power = meter.stop()?;

        samples.push((threads, power.cpu_watts));
        println!(
            "{:>8} {:>10.1} {:>10.2} {:>10.2} {:>10.2}",
            threads,
            mlups,
            power.cpu_watts,
            power.dram_watts,
            energy_per_lup_nj(power.cpu_watts + power.dram_watts, mlups)
        );
    }

    let fit = fit_power(&samples)?;
    println!(
        "\nfitted power model: {:.2} W static + {:.2} W/core (truth: {} + {}; rms residual {:.4} W)",
        fit.model.static_watts,
        fit.model.dynamic_watts_per_core,
        truth.static_watts,
        truth.dynamic_watts_per_core,
        fit.rms_residual
    );
    assert!((fit.model.static_watts - truth.static_watts).abs() < 0.5);
    assert!((fit.model.dynamic_watts_per_core - truth.dynamic_watts_per_core).abs() < 0.5);
    Ok(())
}
