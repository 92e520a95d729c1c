//! Tail of the log-weight walk `S_n = X_1 + ... + X_n`, `X_i = log|A_i|`.
//!
//! Exact oracles (binomial for the two-point law, normal for the log-normal
//! law), the Bahadur-Rao envelope and asymptote, a one-term Berry-Esseen
//! expansion, and an importance-sampling estimator under the tilted measure
//! `N e^{alpha x} mu(dx)`. Every probability stays in natural-log form.

use rand::Rng;
use serde::Serialize;

use crate::cramer::CramerProfile;
use crate::error::{Error, Result};
use crate::numeric::{ln_binomial, log_norm_sf, log_sum_exp, norm_cdf, norm_pdf, LN_SQRT_2PI};
use crate::rng::{chunked, stream, tag};
use crate::weights::{Family, TiltedSampler, WeightModel};

/// Smallest sample budget accepted by [`is_tail_estimate`].
pub const MIN_IS_SAMPLES: usize = 1000;

/// Query `P{|A_1 ... A_n| > e^d e^{rho n N}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LdpQuery {
    pub n: usize,
    pub d: f64,
    /// Bound on `d / sqrt(n)` under which the asymptote is trusted.
    pub theta: f64,
}

impl LdpQuery {
    pub fn new(n: usize, d: f64, theta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if !(d >= 0.0) || !(theta >= 0.0) {
            return Err(Error::InvalidArgument("d and theta must be nonnegative".into()));
        }
        Ok(LdpQuery { n, d, theta })
    }

    /// Threshold `c = d + rho n N` on the walk.
    pub fn threshold(&self, profile: &CramerProfile) -> f64 {
        self.d + profile.drift() * self.n as f64
    }
}

/// Natural log of a probability, with a standard error when it is a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogProb {
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_value: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64_opt")]
    pub stderr_log: Option<f64>,
    /// No sampled path reached the event.
    pub zero_hits: bool,
}

impl LogProb {
    pub fn exact(log_value: f64) -> Self {
        LogProb { log_value, stderr_log: None, zero_hits: false }
    }
}

/// Value of the two-point walk after `k` high steps out of `n`.
///
/// Every consumer evaluates lattice sums through this one expression so that
/// comparisons at lattice points agree bit for bit.
#[inline]
pub fn lattice_sum(log_hi: f64, log_lo: f64, n: usize, k: usize) -> f64 {
    k as f64 * log_hi + (n - k) as f64 * log_lo
}

fn binomial_tail_log(n: usize, p: f64, keep: impl Fn(usize) -> bool) -> f64 {
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (0..=n)
        .filter(|&k| keep(k))
        .map(|k| ln_binomial(n as u64, k as u64) + k as f64 * lp + (n - k) as f64 * lq)
        .collect();
    log_sum_exp(&terms)
}

fn tail_log(model: &WeightModel, n: usize, c: f64, inclusive: bool) -> LogProb {
    if c == f64::NEG_INFINITY {
        return LogProb::exact(0.0);
    }
    let above = |s: f64| if inclusive { s >= c } else { s > c };
    let v = match model.family {
        Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } => {
            let (lh, ll) = (magnitude_hi.ln(), magnitude_lo.ln());
            binomial_tail_log(n, p_hi, |k| above(lattice_sum(lh, ll, n, k)))
        }
        Family::GaussianLogSigned { mu0, sigma0, .. } => {
            log_norm_sf((c - n as f64 * mu0) / (sigma0 * (n as f64).sqrt()))
        }
        Family::PointMass { value } => {
            if above(n as f64 * value.abs().ln()) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    LogProb::exact(v.min(0.0))
}

/// Exact `log P{S_n > c}` under the original law.
pub fn exact_tail_log(model: &WeightModel, n: usize, c: f64) -> LogProb {
    tail_log(model, n, c, false)
}

/// Exact `log P{S_n >= c}`; differs from [`exact_tail_log`] only at atoms.
pub fn exact_tail_log_inclusive(model: &WeightModel, n: usize, c: f64) -> LogProb {
    tail_log(model, n, c, true)
}

/// Log of the envelope `e^{-alpha d} / (sqrt(2 pi) alpha lambda sqrt(n) N^n e^{rho alpha n N})`,
/// without its multiplicative constant.
pub fn br_upper_log(profile: &CramerProfile, q: &LdpQuery) -> f64 {
    let n = q.n as f64;
    let a = profile.alpha;
    -(LN_SQRT_2PI + (a * profile.lambda * n.sqrt()).ln())
        - profile.rho * a * n * profile.n()
        - n * profile.log_n()
        - a * q.d
}

/// Log of the Bahadur-Rao asymptote: the envelope times `e^{-d^2 / (2 lambda^2 n)}`.
pub fn br_asymptote_log(profile: &CramerProfile, q: &LdpQuery) -> Result<f64> {
    let n = q.n as f64;
    if q.d / n.sqrt() > q.theta {
        return Err(Error::ThetaViolated { d: q.d, n: q.n, theta: q.theta });
    }
    Ok(br_upper_log(profile, q) - q.d * q.d / (2.0 * profile.lambda * profile.lambda * n))
}

/// Largest `exact - envelope` over the given offsets `d` at one `n`.
///
/// For lattice laws the tail is a step function of `d`, so the left limits at
/// every lattice point between the smallest and largest offset are included;
/// for those the supremum over the whole `d` range is attained.
pub fn envelope_log_constant(model: &WeightModel, profile: &CramerProfile, n: usize, ds: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let base = profile.drift() * n as f64;
    let gap = |d: f64, log_p: f64| log_p - br_upper_log(profile, &LdpQuery { n, d, theta: f64::INFINITY });
    for &d in ds {
        best = best.max(gap(d, exact_tail_log(model, n, base + d).log_value));
    }
    if let Family::TwoPointSigned { magnitude_hi, magnitude_lo, .. } = model.family {
        let (lh, ll) = (magnitude_hi.ln(), magnitude_lo.ln());
        let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for k in 0..=n {
            let d = lattice_sum(lh, ll, n, k) - base;
            if d > lo && d <= hi {
                best = best.max(gap(d, exact_tail_log_inclusive(model, n, base + d).log_value));
            }
        }
    }
    best
}

/// One-term Edgeworth approximation of the CDF of `(S_n - rho n N)/(lambda sqrt(n))`
/// under the tilted law.
pub fn berry_esseen_cdf(profile: &CramerProfile, model: &WeightModel, x: f64, n: usize) -> Result<f64> {
    if model.is_lattice() {
        return Err(Error::LatticeModel);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let m3 = model.tilted_sampler(profile.alpha)?.third_standardized_moment();
    Ok(norm_cdf(x) + m3 / (6.0 * (n as f64).sqrt()) * (1.0 - x * x) * norm_pdf(x))
}

/// `log E~[N^{-n} e^{-alpha S_n}]` in closed form; zero up to rounding.
pub fn tilt_identity_log(sampler: &TiltedSampler, log_n: f64, n: usize) -> f64 {
    n as f64 * (sampler.log_reweight_mgf() - log_n)
}

/// Running sums of `e^w` and `e^{2w}` kept relative to a moving maximum.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogWeightSum {
    max: f64,
    s1: f64,
    s2: f64,
    pub hits: u64,
}

impl Default for LogWeightSum {
    fn default() -> Self {
        LogWeightSum { max: f64::NEG_INFINITY, s1: 0.0, s2: 0.0, hits: 0 }
    }
}

impl LogWeightSum {
    pub fn push(&mut self, w: f64) {
        self.hits += 1;
        if w > self.max {
            let r = (self.max - w).exp();
            self.s1 *= r;
            self.s2 *= r * r;
            self.max = w;
        }
        let e = (w - self.max).exp();
        self.s1 += e;
        self.s2 += e * e;
    }

    pub fn merge(&mut self, o: &LogWeightSum) {
        if o.hits == 0 {
            return;
        }
        if o.max > self.max {
            let r = (self.max - o.max).exp();
            self.s1 = self.s1 * r + o.s1;
            self.s2 = self.s2 * r * r + o.s2;
            self.max = o.max;
        } else {
            let r = (o.max - self.max).exp();
            self.s1 += o.s1 * r;
            self.s2 += o.s2 * r * r;
        }
        self.hits += o.hits;
    }

    /// Log of the sample mean over `trials` draws (non-hits count as zero) and
    /// its delta-method standard error.
    pub fn estimate(&self, trials: u64) -> LogProb {
        if self.hits == 0 {
            return LogProb { log_value: f64::NEG_INFINITY, stderr_log: None, zero_hits: true };
        }
        let m = trials as f64;
        let log_mean = self.max + self.s1.ln() - m.ln();
        let rel_var = (self.s2 / (self.s1 * self.s1) - 1.0 / m).max(0.0) * m / (m - 1.0);
        LogProb { log_value: log_mean, stderr_log: Some(rel_var.sqrt()), zero_hits: false }
    }
}

/// Draw `S_n` under the tilt; two-point walks go through [`lattice_sum`].
#[inline]
pub(crate) fn tilted_walk<R: Rng + ?Sized>(sampler: &TiltedSampler, n: usize, rng: &mut R) -> f64 {
    match *sampler {
        TiltedSampler::TwoPoint { p_tilde, log_hi, log_lo, .. } => {
            let k = (0..n).filter(|_| rng.random::<f64>() < p_tilde).count();
            lattice_sum(log_hi, log_lo, n, k)
        }
        TiltedSampler::Gaussian { .. } => (0..n).map(|_| sampler.sample_x(rng)).sum(),
    }
}

/// Importance-sampling estimate of `log P{S_n > c}` from `samples` tilted paths,
/// each weighted by `N^{-n} e^{-alpha S_n}`.
///
/// `c = -inf` is the sure event and returns exactly zero without sampling.
pub fn is_tail_estimate(
    model: &WeightModel,
    profile: &CramerProfile,
    n: usize,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<LogProb> {
    if samples < MIN_IS_SAMPLES {
        return Err(Error::InvalidArgument(format!("at least {MIN_IS_SAMPLES} samples required")));
    }
    if c == f64::NEG_INFINITY {
        return Ok(LogProb { log_value: 0.0, stderr_log: Some(0.0), zero_hits: false });
    }
    let acc = weight_average(model, profile, n, Some(c), samples, seed)?;
    Ok(acc.estimate(samples as u64))
}

/// Monte Carlo average of `N^{-n} e^{-alpha S_n}` with no indicator; its
/// expectation is one.
pub fn is_weight_average(
    model: &WeightModel,
    profile: &CramerProfile,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<LogProb> {
    let acc = weight_average(model, profile, n, None, samples, seed)?;
    Ok(acc.estimate(samples as u64))
}

fn weight_average(
    model: &WeightModel,
    profile: &CramerProfile,
    n: usize,
    c: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<LogWeightSum> {
    let sampler = model.tilted_sampler(profile.alpha)?;
    let (alpha, nlog) = (profile.alpha, n as f64 * profile.log_n());
    let c_bits = c.map_or(u64::MAX, f64::to_bits);
    let parts = chunked(samples, |chunk, range| {
        let mut rng = stream(seed, &[tag::TAIL_IS, n as u64, c_bits, chunk]);
        let mut acc = LogWeightSum::default();
        for _ in range {
            let s = tilted_walk(&sampler, n, &mut rng);
            if c.is_none_or(|c| s > c) {
                acc.push(-nlog - alpha * s);
            }
        }
        acc
    });
    let mut total = LogWeightSum::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}
