//! Run configuration, one TOML file per run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tailforge_core::weights::WeightModel;

use crate::error::CliError;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "TAILFORGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Workers {
    Count(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Workers {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Workers::Auto(AutoTag::Auto)),
            n => match n.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("workers must be a positive integer or \"auto\", got {n:?}")),
                Ok(k) => Ok(Workers::Count(k)),
            },
        }
    }

    /// Thread count for the pool builder; 0 lets rayon pick.
    pub fn threads(self) -> usize {
        match self {
            Workers::Count(n) => n,
            Workers::Auto(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Not echoed: output must not depend on the worker count.
    #[serde(default, skip_serializing)]
    pub workers: Option<Workers>,
    pub model: WeightModel,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldcheck: Option<LdcheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vncheck: Option<VncheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixpoint: Option<FixpointSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifySection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

fn default_log_ts() -> Vec<f64> {
    vec![10.0, 20.0, 30.0, 40.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// `log t` values at which `n0` is tabulated.
    #[serde(default = "default_log_ts")]
    pub log_t: Vec<f64>,
    /// Points of the `m(s)` curve on `[0, 1.25 alpha]`.
    #[serde(default = "AnalyzeSection::default_points")]
    pub s_points: usize,
}

impl AnalyzeSection {
    fn default_points() -> usize {
        101
    }
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { log_t: default_log_ts(), s_points: Self::default_points() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdcheckSection {
    #[serde(default = "LdcheckSection::default_n")]
    pub n: Vec<usize>,
    /// Offsets `d / sqrt(n)`.
    #[serde(default = "LdcheckSection::default_x")]
    pub d_over_sqrt_n: Vec<f64>,
    #[serde(default = "LdcheckSection::default_theta")]
    pub theta: f64,
    /// Allowed `|log P - log asymptote|` at the largest `n`.
    #[serde(default = "LdcheckSection::default_tolerance")]
    pub tolerance: f64,
    /// Importance-sampling budget per cell; 0 skips the sampler.
    #[serde(default)]
    pub is_samples: usize,
}

impl LdcheckSection {
    fn default_n() -> Vec<usize> {
        vec![100, 400, 1600]
    }
    fn default_x() -> Vec<f64> {
        vec![0.0, 0.5, 1.0]
    }
    fn default_theta() -> f64 {
        1.0
    }
    fn default_tolerance() -> f64 {
        0.05
    }
}

impl Default for LdcheckSection {
    fn default() -> Self {
        LdcheckSection {
            n: Self::default_n(),
            d_over_sqrt_n: Self::default_x(),
            theta: Self::default_theta(),
            tolerance: Self::default_tolerance(),
            is_samples: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VncheckSection {
    #[serde(default = "default_log_ts")]
    pub log_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Sampling budget per cell; required for nonlattice laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl Default for VncheckSection {
    fn default() -> Self {
        VncheckSection { log_t: default_log_ts(), log_c0: None, delta: None, samples: None }
    }
}

fn default_pool_size() -> usize {
    1_000_000
}
fn default_min_rounds() -> usize {
    tailforge_core::fixedpoint::MIN_ROUNDS
}
fn default_max_rounds() -> usize {
    400
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixpointSection {
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_min_rounds")]
    pub min_rounds: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Continue from `pool.bin` in the output directory when present.
    #[serde(default = "default_true")]
    pub resume: bool,
    #[serde(default = "FixpointSection::default_t_min")]
    pub t_min: f64,
    #[serde(default = "FixpointSection::default_t_max")]
    pub t_max: f64,
    #[serde(default = "FixpointSection::default_t_points")]
    pub t_points: usize,
    /// Word lengths for the unfolding check; empty skips it.
    #[serde(default)]
    pub unfold_depths: Vec<usize>,
    #[serde(default = "FixpointSection::default_unfold_samples")]
    pub unfold_samples: usize,
}

impl FixpointSection {
    fn default_t_min() -> f64 {
        1.0
    }
    fn default_t_max() -> f64 {
        1000.0
    }
    fn default_t_points() -> usize {
        61
    }
    fn default_unfold_samples() -> usize {
        100_000
    }
}

impl Default for FixpointSection {
    fn default() -> Self {
        FixpointSection {
            pool_size: default_pool_size(),
            min_rounds: default_min_rounds(),
            max_rounds: default_max_rounds(),
            resume: true,
            t_min: Self::default_t_min(),
            t_max: Self::default_t_max(),
            t_points: Self::default_t_points(),
            unfold_depths: Vec::new(),
            unfold_samples: Self::default_unfold_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "CertifySection::default_log_t")]
    pub log_t: Vec<f64>,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_min_rounds")]
    pub min_rounds: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_true")]
    pub resume: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_c0: Option<f64>,
    /// Sampling budget for barrier probabilities of nonlattice laws.
    #[serde(default = "CertifySection::default_samples")]
    pub samples: usize,
}

impl CertifySection {
    fn default_log_t() -> Vec<f64> {
        vec![20.0]
    }
    fn default_samples() -> usize {
        100_000
    }
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            log_t: Self::default_log_t(),
            pool_size: default_pool_size(),
            min_rounds: default_min_rounds(),
            max_rounds: default_max_rounds(),
            resume: true,
            c1: None,
            d: None,
            delta: None,
            delta0: None,
            eps: None,
            log_c0: None,
            samples: Self::default_samples(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.model.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Apply the seed override; returns where the effective seed came from.
    pub fn apply_seed_env(&mut self, env: Option<&str>) -> Result<&'static str, CliError> {
        match env {
            Some(v) => {
                let seed = v
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned 64-bit integer, got {v:?}")))?;
                self.seed = Some(seed);
                Ok("env")
            }
            None if self.seed.is_some() => Ok("config"),
            None => Ok("none"),
        }
    }

    pub fn require_seed(&self, what: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Usage(format!("{what} draws random numbers and needs a seed")))
    }
}
