use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{MinerError, Result};

const JOULES_PER_KWH: f64 = 3.6e6;
const DEFAULT_RAPL: &str = "/sys/class/powercap/intel-rapl:0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterConfig {
    /// Counter sampling period in seconds.
    #[serde(default = "default_interval")]
    pub interval_seconds: f64,
    /// Average device draw used when no counters can be read.
    pub watts: f64,
    /// kg CO2e per kWh. Region dependent, so it has no default.
    pub carbon_intensity: f64,
    /// Read RAPL energy counters when available.
    #[serde(default)]
    pub use_counters: bool,
    #[serde(default)]
    pub counter_path: Option<PathBuf>,
}

fn default_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySource {
    Counters,
    ConfiguredWatts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_co2e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EnergySource>,
}

impl ResourceReport {
    pub fn wall_only(wall_seconds: f64) -> Self {
        ResourceReport {
            wall_seconds,
            ..ResourceReport::default()
        }
    }

    pub fn from_joules(wall_seconds: f64, joules: f64, carbon_intensity: f64, source: EnergySource) -> Self {
        let kwh = joules / JOULES_PER_KWH;
        ResourceReport {
            wall_seconds,
            energy_kwh: Some(kwh),
            kg_co2e: Some(kwh * carbon_intensity),
            source: Some(source),
        }
    }

    /// Sum of two reports; energy stays present only if both carry it.
    pub fn combine(&self, other: &ResourceReport) -> ResourceReport {
        let both = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| x + y);
        ResourceReport {
            wall_seconds: self.wall_seconds + other.wall_seconds,
            energy_kwh: both(self.energy_kwh, other.energy_kwh),
            kg_co2e: both(self.kg_co2e, other.kg_co2e),
            source: if self.source == other.source { self.source } else { None },
        }
    }

    pub fn sum<'a>(reports: impl IntoIterator<Item = &'a ResourceReport>) -> ResourceReport {
        let mut it = reports.into_iter();
        match it.next() {
            Some(first) => it.fold(*first, |acc, r| acc.combine(r)),
            None => ResourceReport::default(),
        }
    }
}

struct Rapl {
    energy: PathBuf,
    max_range_uj: u64,
}

impl Rapl {
    fn open(dir: &std::path::Path) -> Option<Rapl> {
        let energy = dir.join("energy_uj");
        std::fs::read_to_string(&energy).ok()?.trim().parse::<u64>().ok()?;
        let max_range_uj = std::fs::read_to_string(dir.join("max_energy_range_uj"))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(u64::MAX);
        Some(Rapl { energy, max_range_uj })
    }

    fn read(&self) -> Option<u64> {
        std::fs::read_to_string(&self.energy).ok()?.trim().parse().ok()
    }

    fn delta(&self, before: u64, after: u64) -> u64 {
        if after >= before {
            after - before
        } else {
            self.max_range_uj - before + after
        }
    }
}

/// Wall-clock and energy accounting.
pub struct ResourceMeter {
    config: Option<MeterConfig>,
    rapl: Option<Arc<Rapl>>,
}

impl ResourceMeter {
    pub fn new(config: MeterConfig) -> Result<Self> {
        if !(config.interval_seconds > 0.0 && config.interval_seconds.is_finite()) {
            return Err(MinerError::Config("meter interval must be positive".into()));
        }
        if !(config.carbon_intensity > 0.0 && config.carbon_intensity.is_finite()) {
            return Err(MinerError::Config("carbon intensity must be positive".into()));
        }
        if !(config.watts >= 0.0 && config.watts.is_finite()) {
            return Err(MinerError::Config("configured watts must be non-negative".into()));
        }
        let rapl = if config.use_counters {
            let dir = config.counter_path.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_RAPL));
            let r = Rapl::open(&dir);
            if r.is_none() {
                log::warn!("energy counters unavailable at {}; using configured {} W", dir.display(), config.watts);
            }
            r.map(Arc::new)
        } else {
            None
        };
        Ok(ResourceMeter {
            config: Some(config),
            rapl,
        })
    }

    /// Times computations without estimating energy.
    pub fn wall_only() -> Self {
        ResourceMeter { config: None, rapl: None }
    }

    pub fn config(&self) -> Option<&MeterConfig> {
        self.config.as_ref()
    }

    /// Report for a computation of known duration, without running it.
    pub fn report_for(&self, wall_seconds: f64) -> ResourceReport {
        match &self.config {
            None => ResourceReport::wall_only(wall_seconds),
            Some(c) => ResourceReport::from_joules(wall_seconds, c.watts * wall_seconds, c.carbon_intensity, EnergySource::ConfiguredWatts),
        }
    }

    pub fn measure<T>(&self, thunk: impl FnOnce() -> T) -> (T, ResourceReport) {
        let Some(rapl) = &self.rapl else {
            let t0 = Instant::now();
            let out = thunk();
            return (out, self.report_for(t0.elapsed().as_secs_f64()));
        };
        let config = self.config.as_ref().expect("counters imply a config");
        // a sampler accumulates deltas so counter wrap-around is seen
        let total = Arc::new(Mutex::new(0u64));
        let stop = Arc::new(AtomicBool::new(false));
        let start_reading = rapl.read().unwrap_or(0);
        let sampler = {
            let (rapl, total, stop) = (Arc::clone(rapl), Arc::clone(&total), Arc::clone(&stop));
            let period = Duration::from_secs_f64(config.interval_seconds);
            thread::spawn(move || {
                let mut last = start_reading;
                loop {
                    let done = stop.load(Ordering::Acquire);
                    if let Some(now) = rapl.read() {
                        *total.lock().expect("sampler lock") += rapl.delta(last, now);
                        last = now;
                    }
                    if done {
                        break;
                    }
                    thread::park_timeout(period);
                }
            })
        };
        let t0 = Instant::now();
        let out = thunk();
        let wall = t0.elapsed().as_secs_f64();
        stop.store(true, Ordering::Release);
        sampler.thread().unpark();
        let _ = sampler.join();
        let uj = *total.lock().expect("sampler lock");
        (out, ResourceReport::from_joules(wall, uj as f64 / 1e6, config.carbon_intensity, EnergySource::Counters))
    }
}

/// Free-function form of [`ResourceMeter::measure`].
pub fn measure<T>(meter: &ResourceMeter, thunk: impl FnOnce() -> T) -> (T, ResourceReport) {
    meter.measure(thunk)
}
