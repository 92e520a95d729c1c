use thiserror::Error;

/// Errors raised by the analytic and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameter: {0}")]
    InvalidModel(String),

    #[error("moment order {s} outside the family domain")]
    Domain { s: f64 },

    #[error("tilt exponent {alpha} is not normalized: N*E|A|^alpha = {mass}")]
    NotNormalized { alpha: f64, mass: f64 },

    #[error("no Cramer root: min_s m(s) = {min_m} >= 1 (the weight law never contracts on average)")]
    NoCramerRoot { min_m: f64 },

    #[error("no beta with E|A|^beta = N^-(1+{gamma_margin}) on (gamma, alpha)")]
    NoBetaMargin { gamma_margin: f64 },

    #[error("query violates d/sqrt(n) <= theta (d = {d}, n = {n}, theta = {theta})")]
    ThetaViolated { d: f64, n: usize, theta: f64 },

    #[error("the expansion requires a nonlattice law of log|A|")]
    LatticeModel,

    #[error("operation not available for this weight family: {0}")]
    UnsupportedFamily(&'static str),

    #[error("no multiple of C1 = {c1} inside the level window ({lo}, {hi})")]
    EmptyWindow { c1: usize, lo: f64, hi: f64 },

    #[error("pool shows no mass beyond +/-{threshold}")]
    ZeroTailMass { threshold: f64 },

    #[error("constant D overflows (delta = {delta})")]
    DOverflow { delta: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pool file: {0}")]
    PoolFile(String),

    #[error("pool file was written for a different model (hash {found:#018x}, expected {expected:#018x})")]
    ModelMismatch { expected: u64, found: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
