//! Experiment configuration and built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use cellsleep_core::discretize::ExactLimits;
use cellsleep_core::energy::EnergyParams;
use cellsleep_core::linkmodel::{dbm_to_watts, default_noise_watts, LinkParams, PerLink};
use cellsleep_core::loadaware::{AlternatingConfig, Mode};
use cellsleep_core::optimizer::MMConfig;
use cellsleep_core::scenario::{AreaConfig, CellLayout, PropagationConfig, TrafficConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Smm,
    Exact,
    Greedy,
    Strongest,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Smm => "smm",
            Algorithm::Exact => "exact",
            Algorithm::Greedy => "greedy",
            Algorithm::Strongest => "strongest",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smm" => Ok(Algorithm::Smm),
            "exact" => Ok(Algorithm::Exact),
            "greedy" => Ok(Algorithm::Greedy),
            "strongest" => Ok(Algorithm::Strongest),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NTps,
    Beta,
    Cprime,
    MuD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub n_bs: usize,
    pub layout: CellLayout,
    /// Alternate cell types 1/2 across all cells (for sectored layouts).
    pub alternate_types: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_bs: 34,
            layout: CellLayout::Sectored { sectors: 3 },
            alternate_types: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub tx_power_dbm: f64,
    /// Noise per resource unit; `None` uses thermal noise over 180 kHz with a 9 dB figure.
    pub noise_dbm: Option<f64>,
    pub bandwidth_hz: f64,
    pub signaling_reserve_hz: f64,
    pub eff_bw: f64,
    pub eff_sinr: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 40.0,
            noise_dbm: None,
            bandwidth_hz: 20e6,
            signaling_reserve_hz: 0.0,
            eff_bw: 0.83,
            eff_sinr: 1.0,
        }
    }
}

impl LinkConfig {
    pub fn params(&self, n_cells: usize) -> Result<LinkParams> {
        let lp = LinkParams {
            tx_power: vec![dbm_to_watts(self.tx_power_dbm); n_cells],
            noise: self.noise_dbm.map_or_else(default_noise_watts, dbm_to_watts),
            bandwidth: vec![self.bandwidth_hz; n_cells],
            eff_bw: PerLink::Uniform(self.eff_bw),
            eff_sinr: PerLink::Uniform(self.eff_sinr),
        };
        let lp = lp.with_signaling_reserve(&vec![self.signaling_reserve_hz; n_cells])?;
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmConfig {
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub eps: f64,
    pub eps_star: f64,
    pub max_iters: usize,
    /// Load-aware refinements after the worst-case solve.
    pub alternating_iterations: usize,
    pub exact_time_budget_s: f64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Smm,
            mode: Mode::WorstCase,
            eps: 1e-3,
            eps_star: 1e-3,
            max_iters: 200,
            alternating_iterations: 10,
            exact_time_budget_s: 60.0,
        }
    }
}

impl AlgorithmConfig {
    pub fn mm(&self) -> MMConfig {
        MMConfig {
            eps: self.eps,
            eps_star: self.eps_star,
            max_iters: self.max_iters,
            ..Default::default()
        }
    }

    pub fn alternating(&self) -> AlternatingConfig {
        AlternatingConfig {
            iterations: self.alternating_iterations,
            mm: self.mm(),
            ..Default::default()
        }
    }

    pub fn exact_limits(&self) -> ExactLimits {
        ExactLimits {
            time_budget: Duration::from_secs_f64(self.exact_time_budget_s),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub repeats: usize,
    pub seed_base: u64,
    pub output: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: None,
            values: Vec::new(),
            repeats: 100,
            seed_base: 0,
            output: None,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub area: AreaConfig,
    pub topology: TopologyConfig,
    pub traffic: TrafficConfig,
    pub propagation: PropagationConfig,
    pub link: LinkConfig,
    pub energy: EnergyParams,
    pub algorithm: AlgorithmConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sweep values, or a single unlabeled point when no axis is set.
    pub fn points(&self) -> Vec<Option<f64>> {
        match self.sweep.axis {
            Some(_) => self.sweep.values.iter().map(|v| Some(*v)).collect(),
            None => vec![None],
        }
    }

    /// Copy of the configuration with the sweep axis set to `value`.
    pub fn at(&self, value: Option<f64>) -> Self {
        let mut cfg = self.clone();
        if let (Some(axis), Some(v)) = (self.sweep.axis, value) {
            match axis {
                SweepAxis::NTps => cfg.traffic.n_tps = v as usize,
                SweepAxis::Beta => cfg.energy.beta = v,
                SweepAxis::Cprime => cfg.energy.c_prime = v,
                SweepAxis::MuD => {
                    // The spread keeps its ratio to the mean.
                    let ratio = self.traffic.rate_spread / self.traffic.rate_mean;
                    cfg.traffic.rate_mean = v;
                    cfg.traffic.rate_spread = v * ratio;
                }
            }
        }
        cfg
    }

    pub fn n_cells(&self) -> usize {
        self.topology.n_bs * self.topology.layout.cells_per_site()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.topology.n_bs == 0 || self.topology.layout.cells_per_site() == 0 {
            return Err(Error::Config("topology needs at least one cell".into()));
        }
        if self.sweep.axis.is_some() && self.sweep.values.is_empty() {
            return Err(Error::Config("sweep axis set without values".into()));
        }
        if self.sweep.axis == Some(SweepAxis::NTps) && self.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::Config("n_tps sweep values must be positive integers".into()));
        }
        self.algorithm.mm().validate()?;
        if self.algorithm.algorithm != Algorithm::Smm && self.algorithm.mode != Mode::WorstCase {
            return Err(Error::Config(format!(
                "{} runs in worst_case mode only",
                self.algorithm.algorithm
            )));
        }
        if !(self.algorithm.exact_time_budget_s >= 0.0) {
            return Err(Error::Config("exact_time_budget_s must be non-negative".into()));
        }
        for value in self.points() {
            let cfg = self.at(value);
            cfg.area.validate()?;
            cfg.traffic.validate()?;
            cfg.propagation.validate()?;
            if cfg.algorithm.algorithm == Algorithm::Exact {
                let limits = cfg.algorithm.exact_limits();
                if cfg.n_cells() > limits.max_cells || cfg.traffic.n_tps > limits.max_tps {
                    return Err(Error::Config(format!(
                        "exact solver limited to {} cells and {} TPs, got {} and {}",
                        limits.max_cells,
                        limits.max_tps,
                        cfg.n_cells(),
                        cfg.traffic.n_tps
                    )));
                }
            }
        }
        Ok(())
    }
}

pub const PRESETS: &[&str] = &["standard", "tp_sweep", "beta_sweep", "cprime_sweep", "rate_sweep", "perf"];

/// Built-in configurations.
///
/// * `standard`: 34 sites with three sectors, 100 TPs.
/// * `tp_sweep`: 100 omnidirectional cells, static power only, TP count swept.
/// * `beta_sweep`: 20 sites with a type-1 and a type-2 cell each, 40 TPs, load-aware.
/// * `cprime_sweep`: 100 omnidirectional cells, dynamic-power weight swept.
/// * `rate_sweep`: standard layout with the mean TP rate swept, load-aware.
/// * `perf`: 200 omnidirectional cells, 10 000 low-rate TPs, one run.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let omni = |n_bs| TopologyConfig {
        n_bs,
        layout: CellLayout::Sectored { sectors: 1 },
        alternate_types: false,
    };
    match name {
        "standard" => {}
        "tp_sweep" => {
            cfg.topology = omni(100);
            cfg.energy.f_coeff = 0.0;
            cfg.sweep.axis = Some(SweepAxis::NTps);
            cfg.sweep.values = vec![100.0, 200.0, 400.0, 700.0, 1000.0];
            cfg.sweep.repeats = 30;
        }
        "beta_sweep" => {
            cfg.topology = TopologyConfig {
                n_bs: 20,
                layout: CellLayout::CoLocated { cells_per_site: 2 },
                alternate_types: false,
            };
            cfg.traffic.n_tps = 40;
            cfg.energy = EnergyParams {
                c: 0.0,
                e: 780.0,
                f_coeff: 0.0,
                ..Default::default()
            };
            cfg.algorithm.mode = Mode::LoadAware;
            cfg.sweep.axis = Some(SweepAxis::Beta);
            cfg.sweep.values = vec![0.5, 1.0, 2.0];
            cfg.sweep.repeats = 50;
        }
        "cprime_sweep" => {
            cfg.topology = omni(100);
            cfg.traffic.n_tps = 300;
            cfg.energy = EnergyParams {
                c: 0.0,
                e: 780.0,
                f_coeff: 564.0,
                ..Default::default()
            };
            cfg.sweep.axis = Some(SweepAxis::Cprime);
            cfg.sweep.values = vec![0.0, 1.0, 10.0];
            cfg.sweep.repeats = 50;
        }
        "rate_sweep" => {
            cfg.algorithm.mode = Mode::LoadAware;
            cfg.sweep.axis = Some(SweepAxis::MuD);
            cfg.sweep.values = vec![64e3, 128e3, 256e3];
            cfg.sweep.repeats = 50;
        }
        "perf" => {
            cfg.topology = omni(200);
            cfg.traffic.n_tps = 10_000;
            cfg.traffic.rate_mean = 12.8e3;
            cfg.traffic.rate_spread = 3.2e3;
            cfg.sweep.repeats = 1;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(cfg)
}
