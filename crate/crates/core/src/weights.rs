//! Parametric laws for the weights `A` and the immigration term `B`.
//!
//! `A = sign * |A|` with the sign independent of the magnitude. Two magnitude
//! families ship: a two-point law (lattice, exact binomial oracles) and a
//! log-normal law (nonlattice, exact Gaussian oracles). A point mass is kept
//! for degenerate plumbing checks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_add_exp, richardson_derivative, LN_SQRT_2PI};

/// Tolerance on `N * E|A|^alpha = 1` accepted by [`WeightModel::tilted_sampler`].
pub const TILT_TOLERANCE: f64 = 1e-8;

/// Relative step of the finite-difference cross-check of first derivatives.
pub const FD_STEP_FIRST: f64 = 1e-6;
/// Relative step of the finite-difference cross-check of second derivatives.
pub const FD_STEP_SECOND: f64 = 1e-4;

fn half() -> f64 {
    0.5
}

/// Law of `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `|A| = magnitude_hi` with probability `p_hi`, else `magnitude_lo`.
    TwoPointSigned {
        magnitude_hi: f64,
        magnitude_lo: f64,
        p_hi: f64,
        #[serde(default = "half")]
        sign_prob: f64,
    },
    /// `log|A| ~ Normal(mu0, sigma0^2)`.
    GaussianLogSigned {
        mu0: f64,
        sigma0: f64,
        #[serde(default = "half")]
        sign_prob: f64,
    },
    /// `A = value` almost surely.
    PointMass { value: f64 },
}

/// Law of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BLaw {
    Constant { value: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl Default for BLaw {
    fn default() -> Self {
        BLaw::Constant { value: 1.0 }
    }
}

/// Joint law of `(A_1, ..., A_N, B)` with i.i.d. `A_i` independent of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub b_law: BLaw,
    pub n_children: usize,
}

/// Closed-form tilted law of `X = log|A|` under `N e^{alpha x} mu(dx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TiltedSampler {
    TwoPoint {
        alpha: f64,
        /// Tilted probability of the high magnitude, `N p_hi u^alpha`.
        p_tilde: f64,
        log_hi: f64,
        log_lo: f64,
    },
    Gaussian {
        alpha: f64,
        mean: f64,
        sigma: f64,
    },
}

impl TiltedSampler {
    pub fn alpha(&self) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { alpha, .. } | TiltedSampler::Gaussian { alpha, .. } => alpha,
        }
    }

    /// Draw `X = log|A|` under the tilted law.
    #[inline]
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { p_tilde, log_hi, log_lo, .. } => {
                if rng.random::<f64>() < p_tilde {
                    log_hi
                } else {
                    log_lo
                }
            }
            TiltedSampler::Gaussian { mean, sigma, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sigma * z
            }
        }
    }

    /// Tilted mean of `X`.
    pub fn mean(&self) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { p_tilde, log_hi, log_lo, .. } => {
                p_tilde * log_hi + (1.0 - p_tilde) * log_lo
            }
            TiltedSampler::Gaussian { mean, .. } => mean,
        }
    }

    /// Tilted variance of `X`.
    pub fn variance(&self) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { p_tilde, log_hi, log_lo, .. } => {
                p_tilde * (1.0 - p_tilde) * (log_hi - log_lo).powi(2)
            }
            TiltedSampler::Gaussian { sigma, .. } => sigma * sigma,
        }
    }

    /// Third standardized moment `E[Y^3]`, `Y = (X - mean)/sd`, under the tilt.
    pub fn third_standardized_moment(&self) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { p_tilde, .. } => {
                (1.0 - 2.0 * p_tilde) / (p_tilde * (1.0 - p_tilde)).sqrt()
            }
            TiltedSampler::Gaussian { .. } => 0.0,
        }
    }

    /// `log E_tilde[e^{-alpha X}]`. The tilt identity says this equals `log N`.
    pub fn log_reweight_mgf(&self) -> f64 {
        match *self {
            TiltedSampler::TwoPoint { alpha, p_tilde, log_hi, log_lo } => log_add_exp(
                p_tilde.ln() - alpha * log_hi,
                (1.0 - p_tilde).ln() - alpha * log_lo,
            ),
            TiltedSampler::Gaussian { alpha, mean, sigma } => {
                -alpha * mean + 0.5 * alpha * alpha * sigma * sigma
            }
        }
    }
}

impl WeightModel {
    pub fn new(family: Family, b_law: BLaw, n_children: usize) -> Result<Self> {
        let m = WeightModel { family, b_law, n_children };
        m.validate()?;
        Ok(m)
    }

    /// Two-point magnitudes `u`, `v` with `P[|A| = u] = p_hi`, symmetric sign, `B = 1`.
    pub fn two_point(u: f64, v: f64, p_hi: f64, n_children: usize) -> Result<Self> {
        Self::new(
            Family::TwoPointSigned { magnitude_hi: u, magnitude_lo: v, p_hi, sign_prob: 0.5 },
            BLaw::default(),
            n_children,
        )
    }

    /// Log-normal magnitudes, symmetric sign, `B = 1`.
    pub fn gaussian_log(mu0: f64, sigma0: f64, n_children: usize) -> Result<Self> {
        Self::new(
            Family::GaussianLogSigned { mu0, sigma0, sign_prob: 0.5 },
            BLaw::default(),
            n_children,
        )
    }

    /// `TwoPointSigned(u=2, v=1/2, p_hi=0.05)`, `N = 2`, `B = 1`.
    pub fn canonical_lattice() -> Self {
        Self::two_point(2.0, 0.5, 0.05, 2).expect("valid canonical model")
    }

    /// `GaussianLogSigned(mu0=-2, sigma0=1)`, `N = 2`, `B = 1`.
    pub fn canonical_gaussian() -> Self {
        Self::gaussian_log(-2.0, 1.0, 2).expect("valid canonical model")
    }

    pub fn with_sign_prob(mut self, q: f64) -> Result<Self> {
        match &mut self.family {
            Family::TwoPointSigned { sign_prob, .. } | Family::GaussianLogSigned { sign_prob, .. } => {
                *sign_prob = q
            }
            Family::PointMass { .. } => {
                return Err(Error::InvalidModel("point mass has no sign law".into()))
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_b_law(mut self, b_law: BLaw) -> Result<Self> {
        self.b_law = b_law;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidModel(msg.to_string()));
        let prob = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if self.n_children < 2 {
            return bad("n_children must be at least 2");
        }
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, sign_prob } => {
                if !(magnitude_hi.is_finite() && magnitude_hi > 1.0) {
                    return bad("magnitude_hi must exceed 1");
                }
                if !(magnitude_lo > 0.0 && magnitude_lo < 1.0) {
                    return bad("magnitude_lo must lie in (0, 1)");
                }
                if !(p_hi > 0.0 && p_hi < 1.0) {
                    return bad("p_hi must lie in (0, 1)");
                }
                if !prob(sign_prob) {
                    return bad("sign_prob must lie in [0, 1]");
                }
            }
            Family::GaussianLogSigned { mu0, sigma0, sign_prob } => {
                if !mu0.is_finite() || !(sigma0.is_finite() && sigma0 > 0.0) {
                    return bad("mu0 must be finite and sigma0 positive");
                }
                if !prob(sign_prob) {
                    return bad("sign_prob must lie in [0, 1]");
                }
            }
            Family::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite");
                }
            }
        }
        match self.b_law {
            BLaw::Constant { value } if !value.is_finite() => bad("B constant must be finite"),
            BLaw::Gaussian { mean, std } if !(mean.is_finite() && std.is_finite() && std > 0.0) => {
                bad("B gaussian needs finite mean and positive std")
            }
            _ => Ok(()),
        }
    }

    pub fn n(&self) -> f64 {
        self.n_children as f64
    }

    pub fn log_n(&self) -> f64 {
        self.n().ln()
    }

    /// `P[A > 0]`.
    pub fn sign_prob(&self) -> f64 {
        match self.family {
            Family::TwoPointSigned { sign_prob, .. } | Family::GaussianLogSigned { sign_prob, .. } => sign_prob,
            Family::PointMass { value } => {
                if value > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether `log|A|` is supported on an arithmetic progression.
    pub fn is_lattice(&self) -> bool {
        !matches!(self.family, Family::GaussianLogSigned { .. })
    }

    /// Lattice span of `log|A|` for the two-point family.
    pub fn lattice_span(&self) -> Option<f64> {
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, .. } => {
                Some((magnitude_hi.ln() - magnitude_lo.ln()).abs())
            }
            _ => None,
        }
    }

    /// `Lambda(s) = log E|A|^s`, evaluated stably in log space.
    pub fn cumulant(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } => log_add_exp(
                p_hi.ln() + s * magnitude_hi.ln(),
                (1.0 - p_hi).ln() + s * magnitude_lo.ln(),
            ),
            Family::GaussianLogSigned { mu0, sigma0, .. } => s * mu0 + 0.5 * s * s * sigma0 * sigma0,
            Family::PointMass { value } => {
                if s == 0.0 {
                    0.0
                } else {
                    s * value.abs().ln()
                }
            }
        }
    }

    pub fn cumulant_d1(&self, s: f64) -> f64 {
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, .. } => {
                let w = self.tilted_hi_weight(s);
                w * magnitude_hi.ln() + (1.0 - w) * magnitude_lo.ln()
            }
            Family::GaussianLogSigned { mu0, sigma0, .. } => mu0 + s * sigma0 * sigma0,
            Family::PointMass { value } => value.abs().ln(),
        }
    }

    pub fn cumulant_d2(&self, s: f64) -> f64 {
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, .. } => {
                let w = self.tilted_hi_weight(s);
                w * (1.0 - w) * (magnitude_hi.ln() - magnitude_lo.ln()).powi(2)
            }
            Family::GaussianLogSigned { sigma0, .. } => sigma0 * sigma0,
            Family::PointMass { .. } => 0.0,
        }
    }

    /// `p_hi u^s / E|A|^s` for the two-point family.
    fn tilted_hi_weight(&self, s: f64) -> f64 {
        match self.family {
            Family::TwoPointSigned { magnitude_hi, p_hi, .. } => {
                (p_hi.ln() + s * magnitude_hi.ln() - self.cumulant(s)).exp()
            }
            _ => f64::NAN,
        }
    }

    /// `E|A|^s`. All shipped families have `s_1 = +inf`; non-finite `s` is a domain error.
    pub fn abs_moment(&self, s: f64) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::Domain { s });
        }
        Ok(self.cumulant(s).exp())
    }

    /// `Lambda(s)`, `Lambda'(s)` or `Lambda''(s)` for `order` 0, 1 or 2.
    pub fn log_mgf(&self, s: f64, order: u8) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::Domain { s });
        }
        match order {
            0 => Ok(self.cumulant(s)),
            1 => Ok(self.cumulant_d1(s)),
            2 => Ok(self.cumulant_d2(s)),
            _ => Err(Error::InvalidArgument(format!("derivative order {order} not in 0..=2"))),
        }
    }

    /// Finite-difference version of [`log_mgf`](Self::log_mgf) for cross-checks only.
    pub fn log_mgf_numeric(&self, s: f64, order: u8) -> Result<f64> {
        if !s.is_finite() {
            return Err(Error::Domain { s });
        }
        let scale = s.abs().max(1.0);
        match order {
            0 => Ok(self.cumulant(s)),
            1 => Ok(richardson_derivative(|x| self.cumulant(x), s, FD_STEP_FIRST * scale)),
            2 => {
                let h = FD_STEP_SECOND * scale;
                let second = |h: f64| {
                    (self.cumulant(s + h) - 2.0 * self.cumulant(s) + self.cumulant(s - h)) / (h * h)
                };
                Ok((4.0 * second(0.5 * h) - second(h)) / 3.0)
            }
            _ => Err(Error::InvalidArgument(format!("derivative order {order} not in 0..=2"))),
        }
    }

    /// `E[|A|^s log|A|]` in closed form.
    pub fn weighted_log_moment(&self, s: f64) -> f64 {
        match self.family {
            Family::TwoPointSigned { magnitude_hi: u, magnitude_lo: v, p_hi: p, .. } => {
                p * u.powf(s) * u.ln() + (1.0 - p) * v.powf(s) * v.ln()
            }
            Family::GaussianLogSigned { mu0, sigma0, .. } => {
                (mu0 + s * sigma0 * sigma0) * self.cumulant(s).exp()
            }
            Family::PointMass { value } => value.abs().powf(s) * value.abs().ln(),
        }
    }

    /// `E log|A|` under the original law.
    pub fn mean_log_abs(&self) -> f64 {
        self.cumulant_d1(0.0)
    }

    /// `E A`.
    pub fn mean_a(&self) -> f64 {
        match self.family {
            Family::PointMass { value } => value,
            _ => (2.0 * self.sign_prob() - 1.0) * self.cumulant(1.0).exp(),
        }
    }

    /// `E A^2 = E|A|^2`.
    pub fn second_moment_a(&self) -> f64 {
        self.cumulant(2.0).exp()
    }

    pub fn mean_b(&self) -> f64 {
        match self.b_law {
            BLaw::Constant { value } => value,
            BLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn second_moment_b(&self) -> f64 {
        match self.b_law {
            BLaw::Constant { value } => value * value,
            BLaw::Gaussian { mean, std } => mean * mean + std * std,
        }
    }

    /// `E|B|^s` for `s > 0`; Simpson quadrature over `mean +/- 14 std` for Gaussian `B`.
    pub fn abs_moment_b(&self, s: f64) -> f64 {
        match self.b_law {
            BLaw::Constant { value } => value.abs().powf(s),
            BLaw::Gaussian { mean, std } => {
                let steps = 20_000;
                let (lo, hi) = (-14.0, 14.0);
                let h = (hi - lo) / steps as f64;
                let f = |z: f64| (mean + std * z).abs().powf(s) * (-0.5 * z * z - LN_SQRT_2PI).exp();
                let mut acc = f(lo) + f(hi);
                for i in 1..steps {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    acc += w * f(lo + i as f64 * h);
                }
                acc * h / 3.0
            }
        }
    }

    /// `|A|` under the original law.
    #[inline]
    pub fn sample_abs_a<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } => {
                if rng.random::<f64>() < p_hi {
                    magnitude_hi
                } else {
                    magnitude_lo
                }
            }
            Family::GaussianLogSigned { mu0, sigma0, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu0 + sigma0 * z).exp()
            }
            Family::PointMass { value } => value.abs(),
        }
    }

    #[inline]
    pub fn sample_a<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if let Family::PointMass { value } = self.family {
            return value;
        }
        let q = self.sign_prob();
        let positive = rng.random::<f64>() < q;
        let m = self.sample_abs_a(rng);
        if positive {
            m
        } else {
            -m
        }
    }

    #[inline]
    pub fn sample_b<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.b_law {
            BLaw::Constant { value } => value,
            BLaw::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }

    /// Fill `a` (length `N`) with i.i.d. weights and return a draw of `B`.
    #[inline]
    pub fn sample_children<R: Rng + ?Sized>(&self, rng: &mut R, a: &mut [f64]) -> f64 {
        debug_assert_eq!(a.len(), self.n_children);
        for x in a.iter_mut() {
            *x = self.sample_a(rng);
        }
        self.sample_b(rng)
    }

    /// Exponentially tilted law of `log|A|` at the Cramer root `alpha`.
    pub fn tilted_sampler(&self, alpha: f64) -> Result<TiltedSampler> {
        let mass = self.n() * self.abs_moment(alpha)?;
        if !((mass - 1.0).abs() <= TILT_TOLERANCE) {
            return Err(Error::NotNormalized { alpha, mass });
        }
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } => Ok(TiltedSampler::TwoPoint {
                alpha,
                p_tilde: self.n() * p_hi * magnitude_hi.powf(alpha),
                log_hi: magnitude_hi.ln(),
                log_lo: magnitude_lo.ln(),
            }),
            Family::GaussianLogSigned { mu0, sigma0, .. } => Ok(TiltedSampler::Gaussian {
                alpha,
                mean: mu0 + alpha * sigma0 * sigma0,
                sigma: sigma0,
            }),
            Family::PointMass { .. } => Err(Error::UnsupportedFamily("tilting a point mass")),
        }
    }

    /// Stable 64-bit fingerprint of the model parameters (FNV-1a over the bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut words: Vec<u64> = vec![self.n_children as u64];
        match self.family {
            Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, sign_prob } => {
                words.extend([1, magnitude_hi.to_bits(), magnitude_lo.to_bits(), p_hi.to_bits(), sign_prob.to_bits()])
            }
            Family::GaussianLogSigned { mu0, sigma0, sign_prob } => {
                words.extend([2, mu0.to_bits(), sigma0.to_bits(), sign_prob.to_bits()])
            }
            Family::PointMass { value } => words.extend([3, value.to_bits()]),
        }
        match self.b_law {
            BLaw::Constant { value } => words.extend([1, value.to_bits()]),
            BLaw::Gaussian { mean, std } => words.extend([2, mean.to_bits(), std.to_bits()]),
        }
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in words {
            for byte in w.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
