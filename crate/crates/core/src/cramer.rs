//! Cramer data of a weight model: `m(s) = N E|A|^s`, its two unit roots
//! `gamma < alpha`, the tilted drift `N rho`, the tilted spread `lambda`, and
//! the margins `beta` and `gamma1` used by the barrier-event bounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::weights::WeightModel;

/// Target accuracy `|m(root) - 1|` for both roots.
pub const ROOT_TOLERANCE: f64 = 1e-12;

/// Margins tried, in order, when none is given.
pub const GAMMA_MARGIN_LADDER: [f64; 4] = [0.5, 0.25, 0.1, 0.05];

/// Upper end of the search range for the minimizer of `log m`.
const SEARCH_LIMIT: f64 = 1e4;

/// Spectral data of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CramerProfile {
    pub n_children: usize,
    /// Smaller root of `m(s) = 1`.
    pub gamma: f64,
    /// Larger root of `m(s) = 1`; the tail index.
    pub alpha: f64,
    /// `E[|A|^alpha log|A|]`.
    pub rho: f64,
    /// `sqrt(Lambda''(alpha))`.
    pub lambda: f64,
    /// `m'(alpha) = N E[|A|^alpha log|A|]`, computed directly.
    pub mprime_alpha: f64,
    /// `sup{s : m(s) < inf}`; `+inf` for the shipped families.
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub s1: f64,
    /// Minimizer of `log m`.
    pub s_min: f64,
    /// Margin in `E|A|^beta = N^-(1 + gamma_margin)`.
    pub gamma_margin: f64,
    pub beta: f64,
    /// Barrier decay rate.
    pub delta: f64,
    /// `gamma_margin log N + (beta - alpha) delta`, kept positive.
    pub gamma1: f64,
}

impl CramerProfile {
    pub fn n(&self) -> f64 {
        self.n_children as f64
    }

    pub fn log_n(&self) -> f64 {
        self.n().ln()
    }

    /// Tilted drift `N rho` of `log|A|`.
    pub fn drift(&self) -> f64 {
        self.n() * self.rho
    }

    /// `log E|A|^beta = -(1 + gamma_margin) log N`.
    pub fn log_beta_moment(&self) -> f64 {
        -(1.0 + self.gamma_margin) * self.log_n()
    }

    /// Split `D` in `s < n - D log n` used by the union bound: `ceil(3/(2 gamma1))`.
    pub fn split_constant(&self) -> f64 {
        (1.5 / self.gamma1).ceil()
    }

    /// Default profile: first margin on [`GAMMA_MARGIN_LADDER`] that admits a beta,
    /// default delta.
    pub fn analyze(model: &WeightModel) -> Result<Self> {
        let mut last = None;
        for gm in GAMMA_MARGIN_LADDER {
            match compute_profile(model, gm, None) {
                Ok(p) => return Ok(p),
                Err(e @ Error::NoBetaMargin { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("ladder is nonempty"))
    }
}

/// `m(s) = N E|A|^s`.
pub fn m(model: &WeightModel, s: f64) -> f64 {
    model.n() * model.cumulant(s).exp()
}

fn log_m(model: &WeightModel, s: f64) -> f64 {
    model.log_n() + model.cumulant(s)
}

/// Minimizer of `log m` on `[0, inf)`; `None` if `log m` keeps decreasing.
fn minimizer(model: &WeightModel) -> Option<f64> {
    let d0 = model.cumulant_d1(0.0);
    if !(d0 < 0.0) {
        return Some(0.0);
    }
    let mut hi = 1.0;
    while model.cumulant_d1(hi) < 0.0 {
        hi *= 2.0;
        if hi > SEARCH_LIMIT {
            return None;
        }
    }
    Some(crate::numeric::golden_min(|s| log_m(model, s), 0.0, hi, 1e-12 * hi))
}

/// Refine a Brent root of `log m` to `|m - 1| <= ROOT_TOLERANCE` with Newton steps.
fn polish(model: &WeightModel, mut s: f64) -> f64 {
    for _ in 0..4 {
        let f = log_m(model, s);
        if (f.exp() - 1.0).abs() <= ROOT_TOLERANCE * 0.01 {
            break;
        }
        let d = model.cumulant_d1(s);
        if d == 0.0 {
            break;
        }
        s -= f / d;
    }
    s
}

/// The two roots `gamma < alpha` of `m(s) = 1`.
pub fn find_roots(model: &WeightModel) -> Result<(f64, f64)> {
    let Some(s_min) = minimizer(model) else {
        return Err(Error::NoCramerRoot { min_m: 0.0 });
    };
    let min_log = log_m(model, s_min);
    if !(min_log < 0.0) {
        return Err(Error::NoCramerRoot { min_m: min_log.exp() });
    }
    let f = |s: f64| log_m(model, s);
    // log m(0) = log N > 0, so [0, s_min] brackets gamma.
    let gamma = crate::numeric::brent(f, 0.0, s_min, 1e-15).ok_or(Error::NoCramerRoot { min_m: min_log.exp() })?;
    let mut hi = (2.0 * s_min).max(1.0);
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > SEARCH_LIMIT {
            return Err(Error::NoCramerRoot { min_m: min_log.exp() });
        }
    }
    let alpha = crate::numeric::brent(f, s_min, hi, 1e-15).ok_or(Error::NoCramerRoot { min_m: min_log.exp() })?;
    Ok((polish(model, gamma), polish(model, alpha)))
}

/// Full profile for a given margin; `delta = None` selects
/// `0.1 gamma_margin log N / (alpha - beta)`.
pub fn compute_profile(model: &WeightModel, gamma_margin: f64, delta: Option<f64>) -> Result<CramerProfile> {
    if !(gamma_margin > 0.0) {
        return Err(Error::InvalidArgument("gamma_margin must be positive".into()));
    }
    let (gamma, alpha) = find_roots(model)?;
    let s_min = minimizer(model).expect("roots imply a minimizer");
    let target = -(1.0 + gamma_margin) * model.log_n();
    if !(model.cumulant(s_min) < target) {
        return Err(Error::NoBetaMargin { gamma_margin });
    }
    let beta = crate::numeric::brent(|s| model.cumulant(s) - target, s_min, alpha, 1e-15)
        .ok_or(Error::NoBetaMargin { gamma_margin })?;
    let log_n = model.log_n();
    let mut delta = delta.unwrap_or(0.1 * gamma_margin * log_n / (alpha - beta));
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let gamma1_of = |delta: f64| gamma_margin * log_n + (beta - alpha) * delta;
    while gamma1_of(delta) <= 0.0 {
        delta *= 0.5;
    }
    let lambda = model.cumulant_d2(alpha).sqrt();
    Ok(CramerProfile {
        n_children: model.n_children,
        gamma,
        alpha,
        rho: model.cumulant_d1(alpha) / model.n(),
        lambda,
        mprime_alpha: model.n() * model.weighted_log_moment(alpha),
        s1: f64::INFINITY,
        s_min,
        gamma_margin,
        beta,
        delta,
        gamma1: gamma1_of(delta),
    })
}

/// `n0 = floor(log t / (N rho))`.
pub fn n0(profile: &CramerProfile, log_t: f64) -> usize {
    (log_t / profile.drift()).floor().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightModel;

    #[test]
    fn m_values() {
        let tp = WeightModel::canonical_lattice();
        assert_eq!(m(&tp, 0.0), 2.0);
        assert!((m(&tp, 2.0) - 0.875).abs() < 1e-15);
        let g = WeightModel::canonical_gaussian();
        assert!((m(&g, 1.0) - 2.0 * (-1.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_point_has_no_root() {
        let m = WeightModel::two_point(2.0, 0.5, 0.5, 2).unwrap();
        assert!(matches!(find_roots(&m), Err(Error::NoCramerRoot { .. })));
        assert!(matches!(CramerProfile::analyze(&m), Err(Error::NoCramerRoot { .. })));
    }

    #[test]
    fn explicit_delta_is_halved_until_gamma1_positive() {
        let tp = WeightModel::canonical_lattice();
        let p = compute_profile(&tp, 0.1, Some(10.0)).unwrap();
        assert!(p.gamma1 > 0.0);
        assert!(p.delta < 10.0);
        let k = (10.0 / p.delta).log2();
        assert!((k - k.round()).abs() < 1e-12);
    }

    #[test]
    fn beta_margin_ladder() {
        let tp = WeightModel::canonical_lattice();
        // min_s E|A|^s = 2 sqrt(0.0475) lies between N^-1.25 and N^-1.1.
        assert!(matches!(compute_profile(&tp, 0.25, None), Err(Error::NoBetaMargin { .. })));
        let p = CramerProfile::analyze(&tp).unwrap();
        assert_eq!(p.gamma_margin, 0.1);
        assert!(p.gamma < p.beta && p.beta < p.alpha);
        assert!((p.gamma1 - 0.9 * 0.1 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn n0_examples() {
        let g = CramerProfile::analyze(&WeightModel::canonical_gaussian()).unwrap();
        assert_eq!(n0(&g, 20.0), 12);
        assert_eq!(n0(&g, g.drift()), 1);
        let tp = CramerProfile::analyze(&WeightModel::canonical_lattice()).unwrap();
        assert_eq!(n0(&tp, 20.0), 58);
    }
}
