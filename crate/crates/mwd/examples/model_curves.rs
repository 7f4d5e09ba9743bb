//! The analytic side: cache-block footprint, memory code balance and the
//! roofline throughput bound as the diamond width grows, for each stencil.
//! Wider diamonds buy more in-cache time reuse, so bytes per update fall
//! like 1/width until the block no longer fits.
//!
//!     cargo run --release -p mwd --example model_curves

use mwd::models::{cache_block_bytes, code_balance, roofline_mlups, wavefront_width};
use mwd::make_spec;

const BANDWIDTH: f64 = 40e9; // bytes/s, a typical socket

fn main() -> mwd::Result<()> {
    for name in ["7pt-const", "7pt-var", "25pt-var"] {
        let spec = make_spec(name)?;
        let (r, nd) = (spec.radius, spec.streams);
        println!(
            "{} (radius {}, {} streams), nf = 2, x tile = 256 points:",
            name, r, nd
        );
        println!(
            "{:>5} {:>5} {:>12} {:>10} {:>14}",
            "dw", "ww", "block_bytes", "B/LUP", "roofline_MLUPs"
        );
        for k in 1..=8 {
            let dw = 4 * r * k;
            let balance = code_balance(dw, r, nd);
            println!(
                "{:>5} {:>5} {:>12} {:>10.3} {:>14.0}",
                dw,
                wavefront_width(dw, r, 2),
                cache_block_bytes(dw, 2, 256, r, nd),
                balance,
                roofline_mlups(BANDWIDTH, balance)
            );
        }
        println!();
    }

    // The balance has a closed form: 16 * radius * (streams + 2) / dw.
    let spec = make_spec("7pt-const")?;
    for dw in [8, 16, 32] {
        let direct = code_balance(dw, spec.radius, spec.streams);
        let closed = 16.0 * spec.radius as f64 * (spec.streams + 2) as f64 / dw as f64;
        assert!((direct - closed).abs() < 1e-12);
        println!("dw={:>2}: balance {} = 16*{}*({}+2)/{}", dw, direct, spec.radius, spec.streams, dw);
    }
    Ok(())
}
