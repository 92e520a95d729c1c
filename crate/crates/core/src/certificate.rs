//! Finite-`t` positivity certificate for the tail of `R`.
//!
//! A sparse set of tree vertices on levels `k C1` inside the window
//! `(n0 - sqrt n0, n0)` carries barrier events `V_gamma`. Bonferroni with a
//! pairwise Chebyshev bound gives `P[union V_gamma] >= S1 - S2`. On each
//! `V_gamma`, control of the off-path variables (event `W_gamma`) and a large
//! leaf value force `R > kappa D t`, which yields
//! `P[R > kappa D t] >= eta t^{-alpha}` with every constant reported.

use serde::Serialize;

use crate::cramer::{n0, CramerProfile};
use crate::error::{Error, Result};
use crate::fixedpoint::Pool;
use crate::ldp::LogProb;
use crate::numeric::{log_sub_exp, log_sum_exp, wilson_interval, Z95};
use crate::pathevents::{vn_exact_log, vn_is_estimate, EventSpec, McBudget, PathEvent};
use crate::weights::{Family, WeightModel};

/// Multiples of `max_X (E|X|^eps)^{1/eps}` tried for `d` when none is given.
pub const D_LADDER: [f64; 5] = [1.1, 1.25, 1.5, 2.0, 3.0];

/// Safety factor on the threshold `d0 = (3 max E|X|^eps)^{1/eps}`.
const D0_MARGIN: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateConfig {
    pub log_t: f64,
    /// Level spacing of the sparse tree.
    pub c1: usize,
    /// Threshold constant of the off-path control event.
    pub d: f64,
    pub delta: f64,
    /// Decay rate for the `R` and `A` thresholds; `B` uses `2 delta0`.
    pub delta0: f64,
    /// Moment order used by the Chebyshev bounds.
    pub eps: f64,
    pub log_c0: f64,
}

/// One level of the sparse tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelTerm {
    pub n: usize,
    /// `(n - C1) log N`.
    pub log_count: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_pv: f64,
    /// Upper value of `log P[V_n]` used inside `S2` (equal to `log_pv` for exact inputs).
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_pv_upper: f64,
}

/// Moment data behind the off-path control probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WBound {
    pub eps: f64,
    pub moment_r: f64,
    pub moment_a: f64,
    pub moment_b: f64,
    /// `(3 max moment)^{1/eps}`, slightly inflated.
    pub d0: f64,
    /// `exp(-1/(1 - e^{-delta0 eps}))`.
    pub p0: f64,
    /// `log P[W_gamma]` lower bound at the configured `d` from exact per-term Chebyshev products.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_p_control: f64,
    pub big_d: f64,
    pub hits_upper: u64,
    pub hits_lower: u64,
    /// Wilson lower bound of the leaf tail probability (the smaller side when both tails are needed).
    pub tail_lower: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_p_w: f64,
    pub p_w: f64,
    /// Only the upper tail is certified (all weights positive).
    pub upper_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub config: CertificateConfig,
    pub levels: Vec<LevelTerm>,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub s1_log: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub s2_log: f64,
    pub w: WBound,
    /// `2 - C0 e^{-delta/2}`: the leaf margin left after the off-path terms.
    pub kappa: f64,
    /// `log(kappa D t)`, the certified threshold.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub log_threshold: f64,
    /// `log p_w + log(S1 - S2) + alpha log t`.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub eta_log: f64,
    /// `log(p_w S1 - S2) + alpha log t` when positive: the bound obtained by
    /// applying Bonferroni to the controlled events directly.
    #[serde(serialize_with = "crate::report::ser_ext_f64_opt")]
    pub eta_direct_log: Option<f64>,
    pub passed: bool,
    pub failure: Option<String>,
}

/// Levels `k C1` strictly inside `(n0 - sqrt n0, n0)` with `log N^{k C1 - C1}`.
pub fn sparse_tree_levels(profile: &CramerProfile, log_t: f64, c1: usize) -> Result<Vec<(usize, f64)>> {
    if c1 < 2 {
        return Err(Error::InvalidArgument("C1 must be at least 2".into()));
    }
    let n0 = n0(profile, log_t) as f64;
    let (lo, hi) = (n0 - n0.sqrt(), n0);
    let levels: Vec<(usize, f64)> = (1..)
        .map(|k| k * c1)
        .take_while(|&n| (n as f64) < hi)
        .filter(|&n| (n as f64) > lo)
        .map(|n| (n, (n - c1) as f64 * profile.log_n()))
        .collect();
    if levels.is_empty() {
        return Err(Error::EmptyWindow { c1, lo, hi });
    }
    Ok(levels)
}

/// `log P[V_gamma cap V_gamma']` upper bound for `|gamma| = spec.n`,
/// `|gamma'| = n_prime`, meeting at level `s`:
/// `log P[V_gamma] + alpha log C0 - alpha delta (|gamma| - s) - (|gamma'| - s) log N`.
pub fn pairwise_bound_log(profile: &CramerProfile, spec: &EventSpec, log_pv: f64, n_prime: usize, s: usize) -> f64 {
    let a = profile.alpha;
    log_pv + a * spec.log_c0 - a * spec.delta * (spec.n - s) as f64 - (n_prime as f64 - s as f64) * profile.log_n()
}

/// `log S2`: the Bonferroni pair sum over `gamma` in the sparse tree and
/// `gamma'` on a level `n' <= |gamma|`, grouped by the meeting level `s`.
/// At most `N^{max(0, n' - C1 - s)}` vertices `gamma'` meet a given `gamma` at `s`.
pub fn pair_sum_log(profile: &CramerProfile, levels: &[LevelTerm], c1: usize, log_c0: f64, delta: f64) -> f64 {
    let ln_n = profile.log_n();
    let mut terms = Vec::new();
    for lv in levels {
        let spec = EventSpec { log_t: 1.0, log_c0, delta, n: lv.n };
        for other in levels.iter().filter(|o| o.n <= lv.n) {
            let np = other.n;
            for s in 0..=(lv.n - c1).min(np) {
                let free = np.saturating_sub(c1 + s) as f64;
                terms.push(lv.log_count + free * ln_n + pairwise_bound_log(profile, &spec, lv.log_pv_upper, np, s));
            }
        }
    }
    log_sum_exp(&terms)
}

/// `D = (N d^2 + d) / (1 - e^{-delta/2})`.
pub fn big_d(n_children: usize, d: f64, delta: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let denom = -(-delta / 2.0).exp_m1();
    let v = (n_children as f64 * d * d + d) / denom;
    if !(delta > 0.0) || !v.is_finite() {
        return Err(Error::DOverflow { delta });
    }
    Ok(v)
}

/// `p0 = exp(-1/(1 - e^{-delta0 eps}))`, the lower bound on `P[W]` valid once `d >= d0`.
pub fn control_p0(delta0: f64, eps: f64) -> f64 {
    (-1.0 / -(-delta0 * eps).exp_m1()).exp()
}

/// `log prod_{j >= 1} (1 - m / (d e^{j rate})^eps)`, the Chebyshev lower bound on
/// `P[|X_j| < d e^{j rate} for all j]` for i.i.d. `X_j` with `E|X|^eps = m`.
/// `-inf` when a factor is not positive.
pub fn control_product_log(moment: f64, d: f64, rate: f64, eps: f64) -> f64 {
    let mut acc = 0.0;
    let base = moment / d.powf(eps);
    for j in 1.. {
        let x = base * (-(j as f64) * rate * eps).exp();
        if x >= 1.0 {
            return f64::NEG_INFINITY;
        }
        if x < 1e-18 {
            break;
        }
        acc += (-x).ln_1p();
    }
    acc
}

/// `E|R|^eps` over the pool.
pub fn pool_abs_moment(pool: &Pool, eps: f64) -> f64 {
    let mut acc = crate::numeric::CompensatedSum::default();
    pool.values.iter().for_each(|v| acc.add(v.abs().powf(eps)));
    acc.value() / pool.len() as f64
}

/// Lower bound on `P[W_gamma cap {+-R_gamma > 2D}]` for every vertex `gamma`.
pub fn w_event_bound(model: &WeightModel, pool: &Pool, d: f64, delta: f64, delta0: f64, eps: f64) -> Result<WBound> {
    if !(eps > 0.0 && delta0 > 0.0) {
        return Err(Error::InvalidArgument("eps and delta0 must be positive".into()));
    }
    let moment_r = pool_abs_moment(pool, eps);
    let moment_a = model.abs_moment(eps)?;
    let moment_b = model.abs_moment_b(eps);
    let d0 = (3.0 * moment_r.max(moment_a).max(moment_b)).powf(1.0 / eps) * D0_MARGIN;
    let sides = (model.n_children - 1) as f64;
    let log_p_control = sides * control_product_log(moment_r, d, delta0, eps)
        + sides * control_product_log(moment_a, d, delta0, eps)
        + control_product_log(moment_b, d, 2.0 * delta0, eps);
    let big = big_d(model.n_children, d, delta)?;
    let hits_upper = pool.values.iter().filter(|&&v| v > 2.0 * big).count() as u64;
    let hits_lower = pool.values.iter().filter(|&&v| v < -2.0 * big).count() as u64;
    let upper_only = model.sign_prob() >= 1.0;
    let hits = if upper_only { hits_upper } else { hits_upper.min(hits_lower) };
    let m = pool.len() as u64;
    let tail_lower = if hits == 0 { 0.0 } else { wilson_interval(hits, m, Z95).0 };
    let log_p_w = log_p_control + tail_lower.ln();
    Ok(WBound {
        eps,
        moment_r,
        moment_a,
        moment_b,
        d0,
        p0: control_p0(delta0, eps),
        log_p_control,
        big_d: big,
        hits_upper,
        hits_lower,
        tail_lower,
        log_p_w,
        p_w: log_p_w.exp(),
        upper_only,
    })
}

/// Largest `delta` keeping `gamma_margin log N + (beta - alpha) delta > 0`.
pub fn delta_ceiling(profile: &CramerProfile) -> f64 {
    profile.gamma_margin * profile.log_n() / (profile.alpha - profile.beta)
}

/// Default barrier rate: `min(N rho / 2, 0.9 delta_ceiling)`.
pub fn default_delta(profile: &CramerProfile) -> f64 {
    (0.5 * profile.drift()).min(0.9 * delta_ceiling(profile))
}

/// Default `log C0 = ln 1.5 + delta/2`, which leaves the leaf margin `kappa = 1/2`.
/// `C0 > 1` keeps the barrier events nonempty on every level of a lattice walk.
pub fn default_log_c0(delta: f64) -> f64 {
    1.5f64.ln() + delta / 2.0
}

/// Default moment order `min(1, gamma/2)`.
pub fn default_eps(profile: &CramerProfile) -> f64 {
    (0.5 * profile.gamma).min(1.0)
}

fn level_probs(
    model: &WeightModel,
    profile: &CramerProfile,
    log_t: f64,
    log_c0: f64,
    delta: f64,
    n: usize,
    mc: Option<McBudget>,
) -> Result<(f64, f64)> {
    let spec = EventSpec::new(log_t, log_c0, delta, n)?;
    match (model.family, mc) {
        (Family::TwoPointSigned { .. }, _) => {
            let v = vn_exact_log(model, &spec)?;
            Ok((v, v))
        }
        (_, Some(b)) => {
            let LogProb { log_value, stderr_log, .. } =
                vn_is_estimate(model, profile, &spec, PathEvent::Barrier, b.samples, b.seed)?;
            let se = stderr_log.unwrap_or(f64::INFINITY);
            // Delta-method interval on the probability scale, mapped back to logs.
            let lo = if Z95 * se < 1.0 { log_value + (-Z95 * se).ln_1p() } else { f64::NEG_INFINITY };
            Ok((lo, log_value + (Z95 * se).ln_1p()))
        }
        (_, None) => Err(Error::UnsupportedFamily("non-lattice certificate needs a Monte Carlo budget")),
    }
}

/// Evaluate `S1` and `S2` for a level spacing.
pub fn level_sums(
    model: &WeightModel,
    profile: &CramerProfile,
    log_t: f64,
    c1: usize,
    log_c0: f64,
    delta: f64,
    mc: Option<McBudget>,
) -> Result<(Vec<LevelTerm>, f64, f64)> {
    let levels = sparse_tree_levels(profile, log_t, c1)?
        .into_iter()
        .map(|(n, log_count)| {
            let (log_pv, log_pv_upper) = level_probs(model, profile, log_t, log_c0, delta, n, mc)?;
            Ok(LevelTerm { n, log_count, log_pv, log_pv_upper })
        })
        .collect::<Result<Vec<_>>>()?;
    let s1 = log_sum_exp(&levels.iter().map(|l| l.log_count + l.log_pv).collect::<Vec<_>>());
    let s2 = pair_sum_log(profile, &levels, c1, log_c0, delta);
    Ok((levels, s1, s2))
}

/// Assemble the certificate for one configuration. A failed certificate is a
/// report with `passed = false`.
pub fn certify(
    model: &WeightModel,
    profile: &CramerProfile,
    pool: &Pool,
    config: &CertificateConfig,
    mc: Option<McBudget>,
) -> Result<CertificateReport> {
    let (levels, s1_log, s2_log) =
        level_sums(model, profile, config.log_t, config.c1, config.log_c0, config.delta, mc)?;
    let w = w_event_bound(model, pool, config.d, config.delta, config.delta0, config.eps)?;
    let kappa = 2.0 - (config.log_c0 - config.delta / 2.0).exp();
    let log_threshold = if kappa > 0.0 { kappa.ln() + w.big_d.ln() + config.log_t } else { f64::NAN };
    let at = profile.alpha * config.log_t;
    let eta_log = w.log_p_w + log_sub_exp(s1_log, s2_log) + at;
    let direct = log_sub_exp(w.log_p_w + s1_log, s2_log);
    let eta_direct_log = (direct > f64::NEG_INFINITY).then_some(direct + at);

    let half = s1_log - std::f64::consts::LN_2;
    let failure = if s1_log == f64::NEG_INFINITY {
        Some("every barrier event on the sparse levels is empty".to_string())
    } else if !(s2_log <= half) {
        Some(format!("pair sum too large: log S2 = {s2_log:.4} > log S1 - log 2 = {half:.4}"))
    } else if w.tail_lower <= 0.0 {
        Some(Error::ZeroTailMass { threshold: 2.0 * w.big_d }.to_string())
    } else if !(w.log_p_control > f64::NEG_INFINITY) {
        Some(format!("d = {} does not exceed the moment scale of the off-path variables", config.d))
    } else if !(kappa > 0.0) {
        Some(format!("C0 e^(-delta/2) = {} leaves no leaf margin", 2.0 - kappa))
    } else {
        None
    };
    let passed = failure.is_none() && eta_log.is_finite();
    Ok(CertificateReport {
        config: *config,
        levels,
        s1_log,
        s2_log,
        w,
        kappa,
        log_threshold,
        eta_log,
        eta_direct_log,
        passed,
        failure,
    })
}

/// Default spacing: the smallest `C1 >= 2` with a nonempty window and `S2 <= S1/2`.
pub fn default_c1(
    model: &WeightModel,
    profile: &CramerProfile,
    log_t: f64,
    log_c0: f64,
    delta: f64,
    mc: Option<McBudget>,
) -> Result<usize> {
    let n0 = n0(profile, log_t).max(2);
    let mut last = Error::EmptyWindow { c1: 2, lo: 0.0, hi: n0 as f64 };
    for c1 in 2..=n0 {
        match level_sums(model, profile, log_t, c1, log_c0, delta, mc) {
            Ok((_, s1, s2)) if s1 > f64::NEG_INFINITY && s2 <= s1 - std::f64::consts::LN_2 => return Ok(c1),
            Ok(_) => {}
            Err(e @ Error::EmptyWindow { .. }) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// The `d` on [`D_LADDER`] (in units of `max_X (E|X|^eps)^{1/eps}`) with the
/// largest `log p_w`.
pub fn default_d(model: &WeightModel, pool: &Pool, delta: f64, delta0: f64, eps: f64) -> Result<f64> {
    let scale = pool_abs_moment(pool, eps)
        .max(model.abs_moment(eps)?)
        .max(model.abs_moment_b(eps))
        .powf(1.0 / eps);
    let mut best: Option<(f64, f64)> = None;
    for mult in D_LADDER {
        let d = mult * scale;
        let score = match w_event_bound(model, pool, d, delta, delta0, eps) {
            Ok(w) => w.log_p_w,
            Err(Error::DOverflow { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, d));
        }
    }
    Ok(best.map_or(D_LADDER[0] * scale, |(_, d)| d))
}

/// Default configuration at `log_t`: [`default_log_c0`], [`default_delta`],
/// `delta0 = delta/4`, [`default_eps`], [`default_c1`] and [`default_d`].
pub fn default_config(
    model: &WeightModel,
    profile: &CramerProfile,
    pool: &Pool,
    log_t: f64,
    mc: Option<McBudget>,
) -> Result<CertificateConfig> {
    let delta = default_delta(profile);
    let log_c0 = default_log_c0(delta);
    let eps = default_eps(profile);
    let delta0 = delta / 4.0;
    let c1 = default_c1(model, profile, log_t, log_c0, delta, mc)?;
    let d = default_d(model, pool, delta, delta0, eps)?;
    Ok(CertificateConfig { log_t, c1, d, delta, delta0, eps, log_c0 })
}
