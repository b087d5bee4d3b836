//! Run configuration read from TOML. Every field has a default, so an empty
//! file (or no file) describes the reference setup: μ = 0.2, Gamma(3, 1)
//! jumps and rates, c = 1 on [0, 100]² with Δ = 0.5 and pads of 40.

use std::path::{Path, PathBuf};

use mstou::estimate::{default_bounds, GmmConfig, GmmMode};
use mstou::optimize::{Bounds, DeConfig};
use mstou::simulate::{Grid, SimulationDomain};
use mstou::{CompoundPoissonSeed, GClassAmbit, JumpDistribution, MstouModel, RateDensity};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master RNG seed, overridden by `--seed`.
    pub seed: u64,
    pub model: ModelConfig,
    pub domain: DomainConfig,
    pub moments: MomentsConfig,
    pub estimate: EstimateConfig,
    pub car: CarConfig,
    pub mse: MseConfig,
    pub acf: AcfConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Poisson intensity μ of the jumps. 0 gives the empty field.
    pub intensity: f64,
    /// Number of spatial dimensions (1 to 3).
    pub dimension: usize,
    /// Slope of g(u) = c·u.
    pub c: f64,
    pub jumps: JumpConfig,
    pub rate: RateConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            intensity: 0.2,
            dimension: 1,
            c: 1.0,
            jumps: JumpConfig::Gamma { shape: 3.0, rate: 1.0 },
            rate: RateConfig::Gamma { alpha: 3.0, beta: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpConfig {
    Gamma { shape: f64, rate: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateConfig {
    Gamma { alpha: f64, beta: f64 },
    Dirac { lambda: f64 },
    /// (weight, rate) pairs.
    Discrete { atoms: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// Observation interval used on every spatial axis.
    pub space: [f64; 2],
    pub time: [f64; 2],
    /// Grid spacing Δ in space and time.
    pub spacing: f64,
    pub space_pad: f64,
    pub time_pad: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            space: [0.0, 100.0],
            time: [0.0, 100.0],
            spacing: 0.5,
            space_pad: 40.0,
            time_pad: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub max_dt: f64,
    pub max_dx: f64,
    /// Lags per axis, evenly spaced from 0 to the maximum.
    pub points: usize,
    /// Also evaluate the quadrature oracle.
    pub oracle: bool,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            max_dt: 5.0,
            max_dx: 5.0,
            points: 11,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    OneStep,
    TwoStep,
    Iterated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Field CSV files to fit, relative to the config file. When empty,
    /// `replicates` fields are simulated from the model.
    pub fields: Vec<PathBuf>,
    pub replicates: usize,
    /// Lag count m.
    pub lags: usize,
    pub mode: ModeConfig,
    pub max_iters: usize,
    pub tol: f64,
    pub population: usize,
    pub generations: usize,
    /// Search box for (α, β, c, E[L′], Var(L′)).
    pub lower: [f64; 5],
    pub upper: [f64; 5],
    pub region: Option<RegionConfig>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let bounds = default_bounds();
        let de = DeConfig::default();
        Self {
            fields: Vec::new(),
            replicates: 20,
            lags: 3,
            mode: ModeConfig::TwoStep,
            max_iters: 10,
            tol: 1e-6,
            population: de.population,
            generations: de.generations,
            lower: bounds.lower.try_into().expect("five bounds"),
            upper: bounds.upper.try_into().expect("five bounds"),
            region: None,
        }
    }
}

/// Sub-window that fits are restricted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub space: [f64; 2],
    pub time: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarConfig {
    /// (a₁, …, a_p) of the characteristic polynomial.
    pub coefficients: Vec<f64>,
    pub kernel_max: f64,
    pub kernel_points: usize,
}

impl Default for CarConfig {
    fn default() -> Self {
        Self {
            coefficients: vec![3.0, 2.0],
            kernel_max: 10.0,
            kernel_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseConfig {
    /// Pads (space and time alike) at which to evaluate the bound.
    pub pads: Vec<f64>,
}

impl Default for MseConfig {
    fn default() -> Self {
        Self {
            pads: vec![10.0, 20.0, 30.0, 40.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcfConfig {
    /// Field CSV to analyse, relative to the config file. When absent,
    /// `replicates` fields are simulated.
    pub field: Option<PathBuf>,
    pub replicates: usize,
    pub max_lag: usize,
}

impl Default for AcfConfig {
    fn default() -> Self {
        Self {
            field: None,
            replicates: 1,
            max_lag: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<(Self, PathBuf)> {
        match path {
            None => Ok((Self::default(), PathBuf::from("."))),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let config: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                Ok((config, base))
            }
        }
    }

    /// SHA-256 of the canonical re-serialisation of the config.
    pub fn hash(&self) -> CliResult<String> {
        let canonical = toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn is_empty_field(&self) -> bool {
        self.model.intensity == 0.0
    }

    pub fn build_model(&self) -> CliResult<MstouModel> {
        let m = &self.model;
        let jumps = match m.jumps {
            JumpConfig::Gamma { shape, rate } => JumpDistribution::gamma(shape, rate)?,
            JumpConfig::Normal { mean, sd } => JumpDistribution::normal(mean, sd)?,
        };
        let rate = match &m.rate {
            RateConfig::Gamma { alpha, beta } => RateDensity::gamma(*alpha, *beta)?,
            RateConfig::Dirac { lambda } => RateDensity::dirac(*lambda)?,
            RateConfig::Discrete { atoms } => RateDensity::discrete(atoms.iter().map(|a| (a[0], a[1])).collect())?,
        };
        let seed = CompoundPoissonSeed::new(m.intensity, jumps)?;
        Ok(MstouModel::new(seed, rate, GClassAmbit::linear(m.dimension, m.c)?)?)
    }

    pub fn build_domain(&self) -> CliResult<SimulationDomain> {
        let d = &self.domain;
        if !(1..=3).contains(&self.model.dimension) {
            return Err(CliError::Config("model.dimension must be 1, 2 or 3".into()));
        }
        Ok(SimulationDomain::new(
            vec![(d.space[0], d.space[1]); self.model.dimension],
            (d.time[0], d.time[1]),
            d.space_pad,
            d.time_pad,
        )?)
    }

    pub fn build_grid(&self, domain: &SimulationDomain) -> CliResult<Grid> {
        Ok(Grid::covering(domain, self.domain.spacing)?)
    }

    pub fn gmm_config(&self) -> CliResult<GmmConfig> {
        let e = &self.estimate;
        let mode = match e.mode {
            ModeConfig::OneStep => GmmMode::OneStep,
            ModeConfig::TwoStep => GmmMode::TwoStep,
            ModeConfig::Iterated => GmmMode::Iterated {
                max_iters: e.max_iters,
                tol: e.tol,
            },
        };
        let config = GmmConfig {
            lags: e.lags,
            bounds: Bounds::new(e.lower.to_vec(), e.upper.to_vec())?,
            optimizer: DeConfig {
                population: e.population,
                generations: e.generations,
                seed: self.seed,
                ..DeConfig::default()
            },
            mode,
        };
        config.validate()?;
        Ok(config)
    }
}
