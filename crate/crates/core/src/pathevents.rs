//! Barrier events along one line of descent.
//!
//! `V_n = {S_n >= log t, S_s <= log(C0 t) - (n - s) delta for all s <= n-1}`,
//! `U_n = {S_n >= log t}`, and `W_{s,n}` is the barrier breach at step `s`.
//! The two-point family gets an exact dynamic program over `(step, high count)`;
//! any family gets a tilted importance-sampling estimator.

use serde::Serialize;

use crate::cramer::{n0, CramerProfile};
use crate::error::{Error, Result};
use crate::ldp::{
    br_upper_log, envelope_log_constant, exact_tail_log_inclusive, lattice_sum, LdpQuery, LogProb, LogWeightSum,
    MIN_IS_SAMPLES,
};
use crate::numeric::{log_add_exp, log_sum_exp};
use crate::rng::{chunked, stream, tag};
use crate::weights::{Family, TiltedSampler, WeightModel};

/// Explicit terms per breach step in [`union_bound_log`] before the geometric tail.
const UNION_SHELLS: usize = 64;

/// Barrier event parameters, thresholds in log form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventSpec {
    pub log_t: f64,
    pub log_c0: f64,
    pub delta: f64,
    pub n: usize,
}

impl EventSpec {
    pub fn new(log_t: f64, log_c0: f64, delta: f64, n: usize) -> Result<Self> {
        if !(log_t > 0.0) {
            return Err(Error::InvalidArgument("t must exceed 1".into()));
        }
        if !(log_c0 >= 0.0) {
            return Err(Error::InvalidArgument("C0 must be at least 1".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Ok(EventSpec { log_t, log_c0, delta, n })
    }

    /// Ceiling on `S_s`.
    #[inline]
    pub fn barrier(&self, s: usize) -> f64 {
        self.log_c0 + self.log_t - (self.n - s) as f64 * self.delta
    }
}

/// Exact `log P[V_n]` for the two-point family.
pub fn vn_exact_log(model: &WeightModel, spec: &EventSpec) -> Result<f64> {
    let Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } = model.family else {
        return Err(Error::UnsupportedFamily("exact barrier probabilities need the two-point law"));
    };
    let (lh, ll) = (magnitude_hi.ln(), magnitude_lo.ln());
    let (lp, lq) = (p_hi.ln(), (-p_hi).ln_1p());
    let n = spec.n;
    let mut dp = vec![f64::NEG_INFINITY; n + 1];
    if 0.0 <= spec.barrier(0) {
        dp[0] = 0.0;
    }
    let mut next = dp.clone();
    for s in 1..=n {
        next.fill(f64::NEG_INFINITY);
        for k in 0..s {
            if dp[k] == f64::NEG_INFINITY {
                continue;
            }
            next[k] = log_add_exp(next[k], dp[k] + lq);
            next[k + 1] = log_add_exp(next[k + 1], dp[k] + lp);
        }
        if s < n {
            let cap = spec.barrier(s);
            for (k, v) in next.iter_mut().enumerate().take(s + 1) {
                if lattice_sum(lh, ll, s, k) > cap {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        std::mem::swap(&mut dp, &mut next);
    }
    let finals: Vec<f64> = (0..=n)
        .filter(|&k| lattice_sum(lh, ll, n, k) >= spec.log_t)
        .map(|k| dp[k])
        .collect();
    Ok(log_sum_exp(&finals))
}

/// Which event the path sampler scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathEvent {
    /// `V_n`: endpoint and barrier.
    Barrier,
    /// `U_n`: endpoint only.
    EndpointOnly,
}

/// Importance-sampling estimate of `log P[event]` from tilted paths weighted by
/// `N^{-n} e^{-alpha S_n}`.
pub fn vn_is_estimate(
    model: &WeightModel,
    profile: &CramerProfile,
    spec: &EventSpec,
    event: PathEvent,
    samples: usize,
    seed: u64,
) -> Result<LogProb> {
    if samples < MIN_IS_SAMPLES {
        return Err(Error::InvalidArgument(format!("at least {MIN_IS_SAMPLES} samples required")));
    }
    let sampler = model.tilted_sampler(profile.alpha)?;
    let (alpha, nlog) = (profile.alpha, spec.n as f64 * profile.log_n());
    let barrier = event == PathEvent::Barrier;
    let key = [
        tag::PATH_IS,
        spec.n as u64,
        spec.log_t.to_bits(),
        spec.log_c0.to_bits(),
        spec.delta.to_bits(),
        barrier as u64,
    ];
    let parts = chunked(samples, |chunk, range| {
        let mut path = key.to_vec();
        path.push(chunk);
        let mut rng = stream(seed, &path);
        let mut acc = LogWeightSum::default();
        for _ in range {
            if let Some(s) = walk(&sampler, spec, barrier, &mut rng) {
                acc.push(-nlog - alpha * s);
            }
        }
        acc
    });
    let mut total = LogWeightSum::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total.estimate(samples as u64))
}

/// One tilted path; `Some(S_n)` if it lands in the event. All draws are
/// consumed even after a breach so that the stream layout is path independent.
fn walk<R: rand::Rng + ?Sized>(sampler: &TiltedSampler, spec: &EventSpec, barrier: bool, rng: &mut R) -> Option<f64> {
    let mut ok = !barrier || 0.0 <= spec.barrier(0);
    let s = match *sampler {
        TiltedSampler::TwoPoint { p_tilde, log_hi, log_lo, .. } => {
            let mut k = 0;
            for step in 1..=spec.n {
                k += (rng.random::<f64>() < p_tilde) as usize;
                if barrier && step < spec.n && lattice_sum(log_hi, log_lo, step, k) > spec.barrier(step) {
                    ok = false;
                }
            }
            lattice_sum(log_hi, log_lo, spec.n, k)
        }
        TiltedSampler::Gaussian { .. } => {
            let mut s = 0.0;
            for step in 1..=spec.n {
                s += sampler.sample_x(rng);
                if barrier && step < spec.n && s > spec.barrier(step) {
                    ok = false;
                }
            }
            s
        }
    };
    (ok && s >= spec.log_t).then_some(s)
}

/// Chebyshev bound `log P[|A_1 ... A_length| > x] <= -beta log x + length log E|A|^beta`.
pub fn chebyshev_crossing_log(profile: &CramerProfile, log_x: f64, length: usize) -> f64 {
    -profile.beta * log_x + length as f64 * profile.log_beta_moment()
}

/// Supremum over `d >= 0` and `1 <= s <= n_max` of `log P{S_s >= d + rho s N}`
/// minus the envelope, i.e. the log of the envelope constant on that range.
///
/// Lattice laws are scanned over every atom; for the log-normal law the
/// supremum is taken over a grid of offsets in `[0, 10]`.
pub fn envelope_log_sup(model: &WeightModel, profile: &CramerProfile, n_max: usize) -> f64 {
    let ds: Vec<f64> = match model.family {
        Family::TwoPointSigned { .. } => vec![0.0, 1e6],
        _ => (0..=40).map(|i| i as f64 * 0.25).collect(),
    };
    (1..=n_max.max(1))
        .map(|s| envelope_log_constant(model, profile, s, &ds))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Union bound on `log P[U_n \ V_n]`, summed over breach steps `s < n` and
/// unit shells `m` of the overshoot. Each shell is the product of a bound on
/// `P[S_s > b_s + m]` (the smaller of the `alpha`-Markov bound and the
/// envelope with constant `e^{log_c_env}`) and the Chebyshev crossing bound for
/// the remaining `n - s` steps.
pub fn union_bound_log(profile: &CramerProfile, spec: &EventSpec, log_c_env: f64) -> f64 {
    let (a, b) = (profile.alpha, profile.beta);
    let ln_n = profile.log_n();
    let mut terms = Vec::with_capacity(spec.n);
    if spec.barrier(0) < 0.0 {
        // The breach at s = 0 is sure; bound by U_n itself via the alpha-Markov bound.
        terms.push((-a * spec.log_t - spec.n as f64 * ln_n).min(0.0));
    }
    for s in 1..spec.n {
        let bs = spec.barrier(s);
        let first = |m: f64| {
            let x = bs + m;
            let markov = -a * x - s as f64 * ln_n;
            let d = x - profile.drift() * s as f64;
            let env = if d >= 0.0 {
                br_upper_log(profile, &LdpQuery { n: s, d, theta: f64::INFINITY }) + log_c_env
            } else {
                f64::INFINITY
            };
            markov.min(env).min(0.0)
        };
        let second = |m: f64| chebyshev_crossing_log(profile, spec.log_t - bs - m - 1.0, spec.n - s).min(0.0);
        let mut shell: Vec<f64> = (0..UNION_SHELLS).map(|m| first(m as f64) + second(m as f64)).collect();
        // Beyond the explicit shells both Markov factors are active or dominate,
        // and their product is geometric with ratio e^{-(alpha - beta)}.
        let m = UNION_SHELLS as f64;
        let tail = -a * (bs + m) - s as f64 * ln_n + chebyshev_crossing_log(profile, spec.log_t - bs - m - 1.0, spec.n - s)
            - (b - a).exp_m1().abs().ln();
        shell.push(tail);
        terms.push(log_sum_exp(&shell));
    }
    log_sum_exp(&terms)
}

/// Smallest integer `k` with `C e^{-k (alpha - beta)} < 1/2`, where
/// `C = max(1, C_env) e^beta / (1 - e^{-(alpha - beta)})`; the default `log C0`.
pub fn default_log_c0(profile: &CramerProfile, log_c_env: f64) -> f64 {
    let gap = profile.alpha - profile.beta;
    let log_c = log_c_env.max(0.0) + profile.beta - (-(-gap).exp_m1()).ln();
    ((log_c - 0.5f64.ln()) / gap).floor().max(-1.0) + 1.0
}

/// Levels `ceil(n0 - sqrt n0) ..= n0` (at least 1).
pub fn level_window(profile: &CramerProfile, log_t: f64) -> std::ops::RangeInclusive<usize> {
    let n0 = n0(profile, log_t);
    let lo = (n0 as f64 - (n0 as f64).sqrt()).ceil().max(1.0) as usize;
    lo..=n0.max(1)
}

/// One `(t, n)` cell of the sandwich report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichRow {
    pub log_t: f64,
    pub n: usize,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_p: f64,
    /// `log P[V_n] + log(n)/2 + alpha log t + n log N`.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub r: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64_opt")]
    pub stderr_log: Option<f64>,
}

/// Range of `r` at one `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub log_t: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub r_min: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub log_c0: f64,
    pub delta: f64,
    pub rows: Vec<SandwichRow>,
    pub bands: Vec<Band>,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub r_min: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub r_max: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub width: f64,
    /// Band width over all but the largest `t`.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub width_without_last: f64,
    /// `width <= 1.1 * width_without_last`.
    pub stable: bool,
    /// Per-`t` band midpoints strictly monotone in `t`.
    pub monotone_drift: bool,
}

/// Monte Carlo budget for families without an exact oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
}

/// Evaluate `r(t, n)` over `log_ts` and every `n` in the level window of each `t`.
pub fn vn_sandwich_report(
    model: &WeightModel,
    profile: &CramerProfile,
    log_ts: &[f64],
    log_c0: f64,
    delta: f64,
    mc: Option<McBudget>,
) -> Result<SandwichReport> {
    if log_ts.is_empty() {
        return Err(Error::InvalidArgument("empty t grid".into()));
    }
    if let Some(&lt) = log_ts.iter().find(|&&lt| n0(profile, lt) == 0) {
        return Err(Error::EmptyWindow { c1: 1, lo: 0.0, hi: lt / profile.drift() });
    }
    let cells: Vec<(f64, usize)> =
        log_ts.iter().flat_map(|&lt| level_window(profile, lt).map(move |n| (lt, n))).collect();
    let eval = |&(log_t, n): &(f64, usize)| -> Result<SandwichRow> {
        let spec = EventSpec::new(log_t, log_c0, delta, n)?;
        let lp = match (model.family, mc) {
            (Family::TwoPointSigned { .. }, _) => LogProb::exact(vn_exact_log(model, &spec)?),
            (_, Some(b)) => vn_is_estimate(model, profile, &spec, PathEvent::Barrier, b.samples, b.seed)?,
            (_, None) => return Err(Error::UnsupportedFamily("sandwich report needs a Monte Carlo budget")),
        };
        let r = lp.log_value + 0.5 * (n as f64).ln() + profile.alpha * log_t + n as f64 * profile.log_n();
        Ok(SandwichRow { log_t, n, log_p: lp.log_value, r, stderr_log: lp.stderr_log })
    };
    let rows = cells.iter().map(eval).collect::<Result<Vec<_>>>()?;
    let bands: Vec<Band> = log_ts
        .iter()
        .map(|&lt| {
            let rs = rows.iter().filter(|r| r.log_t == lt).map(|r| r.r);
            let (lo, hi) = rs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
            Band { log_t: lt, r_min: lo, r_max: hi }
        })
        .collect();
    let span = |bs: &[Band]| {
        let lo = bs.iter().map(|b| b.r_min).fold(f64::INFINITY, f64::min);
        let hi = bs.iter().map(|b| b.r_max).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (r_min, r_max) = span(&bands);
    let width = r_max - r_min;
    let width_without_last = if bands.len() > 1 {
        let (lo, hi) = span(&bands[..bands.len() - 1]);
        hi - lo
    } else {
        width
    };
    let mids: Vec<f64> = bands.iter().map(|b| 0.5 * (b.r_min + b.r_max)).collect();
    let monotone_drift = mids.len() > 2
        && (mids.windows(2).all(|w| w[1] > w[0]) || mids.windows(2).all(|w| w[1] < w[0]));
    Ok(SandwichReport {
        log_c0,
        delta,
        rows,
        bands,
        r_min,
        r_max,
        width,
        width_without_last,
        stable: width.is_finite() && width <= 1.1 * width_without_last,
        monotone_drift,
    })
}

/// `log P[S_n >= log t]`, the endpoint event that contains `V_n`.
pub fn un_exact_log(model: &WeightModel, spec: &EventSpec) -> f64 {
    exact_tail_log_inclusive(model, spec.n, spec.log_t).log_value
}
