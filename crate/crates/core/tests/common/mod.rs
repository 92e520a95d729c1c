#![allow(dead_code)]

pub mod tree;

use tailforge_core::ldp::lattice_sum;
use tailforge_core::pathevents::EventSpec;
use tailforge_core::weights::{Family, WeightModel};

/// `log P[V_n]` by visiting all `2^n` high/low words; counts feasible words by
/// number of high steps, then weights them.
pub fn vn_enumerate(model: &WeightModel, spec: &EventSpec) -> f64 {
    let Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } = model.family else {
        panic!("two-point law only");
    };
    let (lh, ll) = (magnitude_hi.ln(), magnitude_lo.ln());
    let n = spec.n;
    assert!(n <= 24);
    let mut counts = vec![0u64; n + 1];
    for word in 0u64..(1 << n) {
        let mut ok = 0.0 <= spec.barrier(0);
        let mut k = 0;
        for s in 1..=n {
            k += ((word >> (s - 1)) & 1) as usize;
            if s < n && lattice_sum(lh, ll, s, k) > spec.barrier(s) {
                ok = false;
            }
        }
        if ok && lattice_sum(lh, ll, n, k) >= spec.log_t {
            counts[k] += 1;
        }
    }
    let terms: Vec<f64> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (c as f64).ln() + k as f64 * p_hi.ln() + (n - k) as f64 * (-p_hi).ln_1p())
        .collect();
    tailforge_core::numeric::log_sum_exp(&terms)
}

/// `a <= b` for log-probabilities, up to a relative rounding slack.
pub fn log_le(a: f64, b: f64) -> bool {
    a == f64::NEG_INFINITY || a <= b + 1e-12 * b.abs()
}
