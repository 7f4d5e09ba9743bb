//! Energy-counter sampling: a provider abstraction, a synthetic
//! implementation for hardware-independent tests, a best-effort reader for
//! the kernel's powercap energy files, and a sampler that integrates
//! counters strictly between run start and stop.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::PowerModel;

/// One reading of the cumulative energy counters. Counters are joules since
/// provider creation and monotone non-decreasing; wrap-around of the
/// underlying hardware registers is resolved by the provider itself.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PowerSample {
    /// Seconds since provider creation.
    pub seconds: f64,
    pub cpu_joules: f64,
    pub dram_joules: f64,
}

pub trait PowerSampleProvider: Send {
    fn name(&self) -> &'static str;
    fn sample(&mut self) -> Result<PowerSample>;
}

/// Deterministic provider: affine package power plus a DRAM term
/// proportional to an assumed traffic rate. The tiny sine ripple on the CPU
/// counter stands in for sampling jitter without ever breaking
/// monotonicity (the amplitude is far below the watt level).
pub struct SyntheticPower {
    pub model: PowerModel,
    pub cores: usize,
    pub dram_base_watts: f64,
    pub dram_watts_per_gbs: f64,
    pub traffic_gbs: f64,
    started: Instant,
}

impl SyntheticPower {
    pub fn new(model: PowerModel, cores: usize) -> Self {
        SyntheticPower {
            model,
            cores,
            dram_base_watts: 5.0,
            dram_watts_per_gbs: 0.5,
            traffic_gbs: 0.0,
            started: Instant::now(),
        }
    }

    /// Sets the assumed memory traffic feeding the DRAM term.
    pub fn with_traffic(mut self, gbs: f64) -> Self {
        self.traffic_gbs = gbs;
        self
    }

    pub fn cpu_watts(&self) -> f64 {
        self.model.watts(self.cores)
    }

    pub fn dram_watts(&self) -> f64 {
        self.dram_base_watts + self.dram_watts_per_gbs * self.traffic_gbs
    }
}

impl PowerSampleProvider for SyntheticPower {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn sample(&mut self) -> Result<PowerSample> {
        let t = self.started.elapsed().as_secs_f64();
        Ok(PowerSample {
            seconds: t,
            cpu_joules: self.cpu_watts() * t + 0.01 * t.sin(),
            dram_joules: self.dram_watts() * t,
        })
    }
}

/// Advance of a wrapping hardware counter from `prev` to `now`, given the
/// register's range. A reading below the previous one means exactly one
/// wrap within the sampling interval -- intervals are far shorter than the
/// minutes-scale wrap period.
pub fn wrap_delta(prev: u64, now: u64, max_range: u64) -> u64 {
    if now >= prev {
        now - prev
    } else {
        now + (max_range - prev)
    }
}

struct EnergyCounter {
    energy_path: PathBuf,
    max_range_uj: u64,
    last_uj: u64,
    accum_uj: u64,
}

impl EnergyCounter {
    fn open(dir: &Path) -> Option<EnergyCounter> {
        let energy_path = dir.join("energy_uj");
        let last_uj = read_u64(&energy_path)?;
        let max_range_uj = read_u64(&dir.join("max_energy_range_uj")).unwrap_or(u64::MAX);
        Some(EnergyCounter {
            energy_path,
            max_range_uj,
            last_uj,
            accum_uj: 0,
        })
    }

    fn advance(&mut self) -> Result<u64> {
        let now = read_u64(&self.energy_path).ok_or_else(|| {
            Error::Provider(format!("cannot read {}", self.energy_path.display()))
        })?;
        self.accum_uj += wrap_delta(self.last_uj, now, self.max_range_uj);
        self.last_uj = now;
        Ok(self.accum_uj)
    }
}

fn read_u64(path: &Path) -> Option<u64> {
    fs::read_to_string(path).ok()?.trim().parse().ok()
}

fn read_name(dir: &Path) -> Option<String> {
    Some(fs::read_to_string(dir.join("name")).ok()?.trim().to_string())
}

/// Reader for the kernel's powercap energy files: package counters summed
/// into the CPU figure, dram subdomains into the DRAM figure. Availability
/// is probed at runtime; unreadable counters simply mean no provider.
pub struct SystemPower {
    packages: Vec<EnergyCounter>,
    drams: Vec<EnergyCounter>,
    started: Instant,
}

const POWERCAP_ROOT: &str = "/sys/class/powercap";

impl SystemPower {
    /// Probes the standard powercap tree; None when no readable package
    /// counter exists (no support, or no permission).
    pub fn detect() -> Option<SystemPower> {
        Self::from_root(Path::new(POWERCAP_ROOT))
    }

    /// Probes a powercap-shaped tree rooted at `root`: domain directories
    /// whose `name` file says `package-*` (CPU) or `dram`.
    pub fn from_root(root: &Path) -> Option<SystemPower> {
        let mut packages = Vec::new();
        let mut drams = Vec::new();
        for entry in fs::read_dir(root).ok()? {
            let dir = entry.ok()?.path();
            let Some(name) = read_name(&dir) else {
                continue;
            };
            let bucket = if name.starts_with("package") {
                &mut packages
            } else if name == "dram" {
                &mut drams
            } else {
                continue;
            };
            if let Some(c) = EnergyCounter::open(&dir) {
                bucket.push(c);
            }
        }
        if packages.is_empty() {
            return None;
        }
        Some(SystemPower {
            packages,
            drams,
            started: Instant::now(),
        })
    }
}

impl PowerSampleProvider for SystemPower {
    fn name(&self) -> &'static str {
        "system"
    }

    fn sample(&mut self) -> Result<PowerSample> {
        let mut cpu_uj = 0u64;
        for c in &mut self.packages {
            cpu_uj += c.advance()?;
        }
        let mut dram_uj = 0u64;
        for c in &mut self.drams {
            dram_uj += c.advance()?;
        }
        Ok(PowerSample {
            seconds: self.started.elapsed().as_secs_f64(),
            cpu_joules: cpu_uj as f64 / 1e6,
            dram_joules: dram_uj as f64 / 1e6,
        })
    }
}

/// Integrated counters over one sampling window.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PowerReading {
    pub seconds: f64,
    pub cpu_joules: f64,
    pub dram_joules: f64,
    pub cpu_watts: f64,
    pub dram_watts: f64,
    pub samples: usize,
}

/// Background sampler. `start` takes the first sample and begins polling;
/// `stop` takes the last one and integrates strictly between the two, so
/// the window aligns with the measured run, not with the poll grid.
pub struct PowerMeter {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Result<Vec<PowerSample>>>,
}

/// Poll period of the sampler.
pub const SAMPLE_INTERVAL: Duration = Duration::from_millis(100);

impl PowerMeter {
    pub fn start(provider: Box<dyn PowerSampleProvider>) -> PowerMeter {
        Self::start_with_interval(provider, SAMPLE_INTERVAL)
    }

    pub fn start_with_interval(
        mut provider: Box<dyn PowerSampleProvider>,
        interval: Duration,
    ) -> PowerMeter {
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let handle = std::thread::spawn(move || {
            let mut samples = vec![provider.sample()?];
            let slice = Duration::from_millis(2);
            let mut next = Instant::now() + interval;
            while !stop_flag.load(Ordering::Acquire) {
                std::thread::sleep(slice);
                if Instant::now() >= next {
                    samples.push(provider.sample()?);
                    next += interval;
                }
            }
            samples.push(provider.sample()?);
            Ok(samples)
        });
        PowerMeter { stop, handle }
    }

    /// Ends the window and integrates it. Errors surface any sample failure
    /// and a window too short to divide by.
    pub fn stop(self) -> Result<PowerReading> {
        self.stop.store(true, Ordering::Release);
        let samples = self
            .handle
            .join()
            .map_err(|_| Error::Provider("sampler thread panicked".into()))??;
        let first = samples.first().expect("sampler always takes a sample");
        let last = samples.last().unwrap();
        let seconds = last.seconds - first.seconds;
        if seconds <= 0.0 {
            return Err(Error::Provider("sampling window is empty".into()));
        }
        let cpu_joules = last.cpu_joules - first.cpu_joules;
        let dram_joules = last.dram_joules - first.dram_joules;
        Ok(PowerReading {
            seconds,
            cpu_joules,
            dram_joules,
            cpu_watts: cpu_joules / seconds,
            dram_watts: dram_joules / seconds,
            samples: samples.len(),
        })
    }
}
