//! Diamond-tiled stencil engine with multicore wavefront execution.
//!
//! `mwd` updates 3D scalar fields with constant- and variable-coefficient
//! stencils using diamond tiling in the y-t plane. Each diamond is extruded
//! along z and swept by a fixed group of threads running a wavefront, so one
//! cache block carries many time steps' worth of updates. Alongside the
//! runtime the crate ships the matching analytic machinery: a cache-block
//! size model, a memory code-balance model with a roofline throughput bound,
//! a linear CPU power model, a trace-driven LRU cache simulator that checks
//! the models against a concrete schedule, and an auto-tuner that searches
//! the blocking-parameter space.
//!
//! The crate is a library first. Start with the runnable examples:
//!
//! ```text
//! examples/
//!   verify_equivalence.rs   tiled runs vs. the naive sweep, bit for bit
//!   tile_geometry.rs        wavefront shapes, tile extents, dependency DAG
//!   model_curves.rs         block size / code balance / roofline tables
//!   traffic_validation.rs   simulated traffic vs. the code-balance model
//!   autotune_demo.rs        search-space enumeration and tuned pick
//!   thread_scaling.rs       throughput + power scaling, fitted power model
//! ```
//!
//! Run one with `cargo run --release -p mwd --example verify_equivalence`.
//! The same capabilities are reachable from the thin `mwd` binary
//! (`verify`, `bench`, `model`, `simulate`, `tune` subcommands); see the
//! README for the CLI and file formats.
//!
//! # Layout
//!
//! * [`grid`]: stencil descriptors, double-buffered grid storage, run config.
//! * [`kernels`]: point/row update kernels, naive and spatially blocked sweeps.
//! * [`tiling`]: diamond geometry, wavefront parameters, tile dependency DAG.
//! * [`runtime`]: tile queue, thread groups, the wavefront executor, replay.
//! * [`models`]: cache-block, code-balance, roofline and power models.
//! * [`cachesim`]: schedule tracer and LRU cache simulator.
//! * [`tuner`]: candidate enumeration and the measure-and-rank loop.
//! * [`power`]: power sample providers and the sampling meter.
//! * [`report`]: CSV/JSON report shapes shared by the CLI and examples.

pub mod cachesim;
pub mod cli;
mod error;
pub mod grid;
pub mod kernels;
pub mod models;
pub mod power;
pub mod report;
pub mod runtime;
pub mod tiling;
pub mod tuner;

pub use error::{Error, Result};
pub use grid::{init_grid, make_spec, CoefficientMode, Grid3D, MwdConfig, StencilSpec};
pub use models::{BalanceEstimate, BlockEstimate, PowerModel};
pub use runtime::{mwd_run, RunStats};
pub use tiling::{build_tile_dag, wavefront_params, DiamondTile, TileDAG, WavefrontParams};
