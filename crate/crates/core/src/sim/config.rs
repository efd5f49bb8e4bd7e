//! Experiment configuration, read from TOML.
//!
//! Every section has defaults, and unknown keys are rejected so a misspelled
//! sweep axis fails loudly instead of silently running the default.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::field::{PrimeField, DEFAULT_MODULUS};
use crate::masking::SharingParams;
use crate::protocol::ProtocolParams;
use crate::quantize::{QuantParams, StalenessFn};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Quantized, masked uploads with one-shot mask recovery.
    #[default]
    Basecagg,
    /// Real-valued buffered aggregation with no privacy layer.
    FedbuffFloat,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Basecagg => "basecagg",
            Scheme::FedbuffFloat => "fedbuff-float",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "basecagg" => Ok(Scheme::Basecagg),
            "fedbuff-float" => Ok(Scheme::FedbuffFloat),
            other => Err(format!("unknown scheme `{other}` (expected basecagg or fedbuff-float)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// N
    pub users: usize,
    /// D
    pub dropouts: usize,
    /// T
    pub privacy: usize,
    /// U
    pub survivors: usize,
    /// K
    pub buffer_size: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    /// E
    pub local_steps: usize,
    pub c_l: u64,
    pub c_g: u64,
    pub tau_max: u64,
    pub modulus: u64,
    pub wrap_guard: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            users: 100,
            dropouts: 10,
            privacy: 10,
            survivors: 50,
            buffer_size: 10,
            eta_l: 0.01,
            eta_g: 1.0,
            local_steps: 5,
            c_l: 1 << 16,
            c_g: 1 << 6,
            tau_max: 10,
            modulus: DEFAULT_MODULUS,
            wrap_guard: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StalenessKind {
    Constant,
    Poly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StalenessSection {
    pub kind: StalenessKind,
    pub alpha: f64,
}

impl Default for StalenessSection {
    fn default() -> Self {
        Self {
            kind: StalenessKind::Poly,
            alpha: 1.0,
        }
    }
}

impl StalenessSection {
    pub fn function(&self) -> StalenessFn {
        match self.kind {
            StalenessKind::Constant => StalenessFn::Constant,
            StalenessKind::Poly => StalenessFn::Poly { alpha: self.alpha },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    /// C, users training at any moment.
    pub concurrency: usize,
    /// Training durations are uniform on `[train_time_min, train_time_max]`.
    pub train_time_min: f64,
    pub train_time_max: f64,
    /// Per flush, a uniform count in `[0, max_dropouts]` of in-flight users
    /// drop. Defaults to D when absent.
    pub max_dropouts: Option<usize>,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            concurrency: 20,
            train_time_min: 1.0,
            train_time_max: 2.0,
            max_dropouts: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    GaussianMixture,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub train_samples: usize,
    pub test_samples: usize,
    pub features: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::GaussianMixture,
            train_samples: 5000,
            test_samples: 2000,
            features: 20,
            separation: 2.0,
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Hidden width for the MLP; ignored by logistic regression.
    pub hidden: usize,
    /// L2 coefficient.
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logreg,
            hidden: 16,
            lambda: 5e-4,
            batch_size: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CL,
    CG,
    Alpha,
    EtaL,
    EtaG,
    Lambda,
    BufferSize,
    Concurrency,
    TauMax,
    Modulus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn integral(v: f64, what: &str) -> Result<u64, SimError> {
    if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63) {
        Ok(v as u64)
    } else {
        Err(SimError::Config(format!("{what} must be a nonnegative integer, got {v}")))
    }
}

impl SweepAxis {
    pub fn apply(&self, cfg: &mut SimConfig, v: f64) -> Result<(), SimError> {
        let p = &mut cfg.protocol;
        match self {
            SweepAxis::CL => p.c_l = integral(v, "c_l")?,
            SweepAxis::CG => p.c_g = integral(v, "c_g")?,
            SweepAxis::Alpha => {
                cfg.staleness.kind = StalenessKind::Poly;
                cfg.staleness.alpha = v;
            }
            SweepAxis::EtaL => p.eta_l = v,
            SweepAxis::EtaG => p.eta_g = v,
            SweepAxis::Lambda => cfg.model.lambda = v,
            SweepAxis::BufferSize => p.buffer_size = integral(v, "buffer_size")? as usize,
            SweepAxis::Concurrency => cfg.scheduler.concurrency = integral(v, "concurrency")? as usize,
            SweepAxis::TauMax => p.tau_max = integral(v, "tau_max")?,
            SweepAxis::Modulus => p.modulus = integral(v, "modulus")?,
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::CL => "c_l",
            SweepAxis::CG => "c_g",
            SweepAxis::Alpha => "alpha",
            SweepAxis::EtaL => "eta_l",
            SweepAxis::EtaG => "eta_g",
            SweepAxis::Lambda => "lambda",
            SweepAxis::BufferSize => "buffer_size",
            SweepAxis::Concurrency => "concurrency",
            SweepAxis::TauMax => "tau_max",
            SweepAxis::Modulus => "modulus",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepChild {
    pub index: usize,
    /// Directory-safe name, e.g. `002_c_l=65536`.
    pub label: String,
    pub value: f64,
    pub config: SimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// J, global rounds to run.
    pub rounds: usize,
    pub scheme: Scheme,
    pub protocol: ProtocolSection,
    pub staleness: StalenessSection,
    pub scheduler: SchedulerSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub sweep: Option<SweepSection>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 2022,
            rounds: 200,
            scheme: Scheme::Basecagg,
            protocol: ProtocolSection::default(),
            staleness: StalenessSection::default(),
            scheduler: SchedulerSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            sweep: None,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams, SimError> {
        let p = &self.protocol;
        let field = PrimeField::new(p.modulus).map_err(|e| SimError::Config(e.to_string()))?;
        let params = ProtocolParams {
            field,
            sharing: SharingParams {
                users: p.users,
                dropouts: p.dropouts,
                privacy: p.privacy,
                survivors: p.survivors,
            },
            buffer_size: p.buffer_size,
            eta_l: p.eta_l,
            eta_g: p.eta_g,
            local_steps: p.local_steps,
            quant: QuantParams { c_l: p.c_l, c_g: p.c_g },
            staleness: self.staleness.function(),
            tau_max: p.tau_max,
            wrap_guard: p.wrap_guard,
        };
        params.validate().map_err(|e| SimError::Config(e.to_string()))?;
        Ok(params)
    }

    /// Expands `[sweep]` into child configs. Child `i` gets the seed
    /// `hash(seed, i)` and no sweep section of its own.
    pub fn sweep_children(&self) -> Result<Vec<SweepChild>, SimError> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| SimError::Config("no [sweep] section".into()))?;
        if sweep.values.is_empty() {
            return Err(SimError::Config("sweep grid is empty".into()));
        }
        sweep
            .values
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                let mut config = self.clone();
                config.sweep = None;
                config.seed = rng::derive_seed(self.seed, &[Stream::SweepChild as u64, index as u64]);
                sweep.axis.apply(&mut config, value)?;
                Ok(SweepChild {
                    index,
                    label: format!("{:03}_{}={}", index, sweep.axis.name(), value),
                    value,
                    config,
                })
            })
            .collect()
    }

    pub fn max_dropouts(&self) -> usize {
        self.scheduler.max_dropouts.unwrap_or(self.protocol.dropouts)
    }

    pub fn validate(&self) -> Result<ProtocolParams, SimError> {
        let params = self.protocol_params()?;
        let bad = |m: String| Err(SimError::Config(m));
        let s = &self.scheduler;
        if s.concurrency == 0 || s.concurrency > self.protocol.users {
            return bad(format!("concurrency C={} must be in [1, N={}]", s.concurrency, self.protocol.users));
        }
        if !(s.train_time_min > 0.0 && s.train_time_min <= s.train_time_max && s.train_time_max.is_finite()) {
            return bad("training times need 0 < min <= max".into());
        }
        if self.max_dropouts() > self.protocol.dropouts {
            return bad(format!(
                "max_dropouts {} exceeds the dropout bound D={}",
                self.max_dropouts(),
                self.protocol.dropouts
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.model.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.model.lambda >= 0.0 && self.model.lambda.is_finite()) {
            return bad("lambda must be nonnegative".into());
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden == 0 {
            return bad("mlp hidden width must be positive".into());
        }
        match self.data.kind {
            DataKind::GaussianMixture => {
                if self.data.train_samples < self.protocol.users {
                    return bad("need at least one training sample per user".into());
                }
                if self.data.features == 0 || self.data.test_samples == 0 {
                    return bad("features and test_samples must be positive".into());
                }
            }
            DataKind::Csv => {
                if self.data.train_path.is_none() || self.data.test_path.is_none() {
                    return bad("csv data needs train_path and test_path".into());
                }
            }
        }
        Ok(params)
    }
}
