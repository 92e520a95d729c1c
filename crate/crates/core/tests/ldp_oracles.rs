use proptest::prelude::*;
use tailforge_core::cramer::CramerProfile;
use tailforge_core::ldp::*;
use tailforge_core::weights::WeightModel;

fn setup(m: WeightModel) -> (WeightModel, CramerProfile) {
    (m, CramerProfile::analyze(&m).unwrap())
}

fn within(est: &LogProb, exact: f64, k: f64) -> bool {
    let se = est.stderr_log.unwrap();
    (est.log_value - exact).abs() <= k * se
}

#[test]
fn importance_sampling_matches_binomial() {
    let (m, p) = setup(WeightModel::canonical_lattice());
    let est = is_tail_estimate(&m, &p, 30, 0.0, 100_000, 2024).unwrap();
    let exact = exact_tail_log(&m, 30, 0.0).log_value;
    println!("lattice n=30 c=0: est {} +- {} exact {exact}", est.log_value, est.stderr_log.unwrap());
    assert!(within(&est, exact, 3.0));
}

#[test]
fn importance_sampling_matches_normal_tail() {
    let (m, p) = setup(WeightModel::canonical_gaussian());
    let c = p.drift() * 100.0;
    let est = is_tail_estimate(&m, &p, 100, c, 100_000, 2024).unwrap();
    let exact = exact_tail_log(&m, 100, c).log_value;
    println!("gauss n=100: est {} +- {} exact {exact}", est.log_value, est.stderr_log.unwrap());
    assert!(within(&est, exact, 3.0));
}

#[test]
fn importance_sampling_is_worker_invariant() {
    let (m, p) = setup(WeightModel::canonical_lattice());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
            .install(|| is_tail_estimate(&m, &p, 40, 5.0, 20_000, 9).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn weight_average_is_one_in_expectation() {
    // E~[w^2] = (E|A|^-alpha / N)^n, so only short lattice walks have a usable variance.
    let (m, p) = setup(WeightModel::canonical_lattice());
    for n in 1..=3 {
        let w = is_weight_average(&m, &p, n, 100_000, 77).unwrap();
        assert!(w.log_value.abs() <= 4.0 * w.stderr_log.unwrap(), "{w:?}");
    }
    for (m, p) in [setup(WeightModel::canonical_lattice()), setup(WeightModel::canonical_gaussian())] {
        let s = m.tilted_sampler(p.alpha).unwrap();
        assert!(tilt_identity_log(&s, p.log_n(), 1000).abs() <= 1e-10);
    }
}

#[test]
fn p2_error_shrinks_and_is_small_at_1600() {
    let (m, p) = setup(WeightModel::canonical_gaussian());
    for ratio in [0.0, 0.5, 1.0] {
        let errs: Vec<f64> = [100usize, 400, 1600]
            .iter()
            .map(|&n| {
                let q = LdpQuery::new(n, ratio * (n as f64).sqrt(), 1.0).unwrap();
                let exact = exact_tail_log(&m, n, q.threshold(&p)).log_value;
                (exact - br_asymptote_log(&p, &q).unwrap()).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] <= 0.05, "{errs:?}");
    }
}

#[test]
fn envelope_constant_does_not_grow() {
    let (m, p) = setup(WeightModel::canonical_gaussian());
    let ds: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
    let cs: Vec<f64> = [100, 200, 400, 800, 1600]
        .iter()
        .map(|&n| envelope_log_constant(&m, &p, n, &ds))
        .collect();
    // The supremum sits at d = 0 and approaches 0 from below; C = 1 serves every n.
    assert!(cs.iter().all(|&c| c <= 0.0), "{cs:?}");
    let steps: Vec<f64> = cs.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(steps.windows(2).all(|s| s[1] < s[0]), "{cs:?}");
}

#[test]
fn lattice_envelope_is_finite_and_bounded() {
    let (m, p) = setup(WeightModel::canonical_lattice());
    let ds: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
    for n in [50, 100, 200, 400] {
        let c = envelope_log_constant(&m, &p, n, &ds);
        assert!(c.is_finite() && c < 2.0, "n={n}: {c}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_is_monotone_in_c(n in 1usize..200, c in -300.0f64..100.0, dc in 0.0f64..20.0) {
        for m in [WeightModel::canonical_lattice(), WeightModel::canonical_gaussian()] {
            let a = exact_tail_log(&m, n, c).log_value;
            let b = exact_tail_log(&m, n, c + dc).log_value;
            prop_assert!(b <= a + 1e-12);
            prop_assert!(a <= 0.0);
            prop_assert!(exact_tail_log_inclusive(&m, n, c).log_value >= a);
        }
    }

    #[test]
    fn tail_is_monotone_in_n_at_fixed_offset(n in 1usize..300, d in 0.0f64..10.0) {
        // Lattice tails jump as the threshold crosses atoms, so only the nonlattice law is monotone here.
        {
            let m = WeightModel::canonical_gaussian();
            let p = CramerProfile::analyze(&m).unwrap();
            let a = exact_tail_log(&m, n, d + p.drift() * n as f64).log_value;
            let b = exact_tail_log(&m, n + 1, d + p.drift() * (n + 1) as f64).log_value;
            prop_assert!(b <= a + 1e-12, "n={} a={} b={}", n, a, b);
        }
    }

    #[test]
    fn berry_esseen_bound(x in -6.0f64..6.0, n in 1usize..10_000) {
        let (m, p) = setup(WeightModel::canonical_gaussian());
        let f = berry_esseen_cdf(&p, &m, x, n).unwrap();
        prop_assert!((f - tailforge_core::numeric::norm_cdf(x)).abs() <= 1e-15);
    }
}
