//! Acceptance suite: ten end-to-end criteria, one status line each.
//!
//! Runs without the libtest harness so the status lines are always printed.
//! Every criterion also has a wall-clock budget, measured on this process.
//! A failed criterion is reported but only fails the process when
//! `TAILFORGE_ACCEPTANCE_STRICT=1`; a panic always does.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::tree::Tree;
use rand::{Rng, SeedableRng};
use tailforge_core::certificate::{
    certify, default_config, default_delta, default_log_c0, pair_sum_log, sparse_tree_levels, CertificateConfig,
};
use tailforge_core::cramer::{find_roots, m, CramerProfile};
use tailforge_core::fixedpoint::{
    converge, ks_distance, ks_threshold_95, log_grid, moment_check, pool_draws, tail_report, unfold_totals, Pool,
    MIN_ROUNDS,
};
use tailforge_core::ldp::{br_asymptote_log, exact_tail_log, is_tail_estimate, tilt_identity_log, LdpQuery};
use tailforge_core::numeric::log_sum_exp;
use tailforge_core::pathevents::{
    default_log_c0 as vn_default_log_c0, envelope_log_sup, level_window, un_exact_log, vn_exact_log,
    vn_sandwich_report, EventSpec,
};
use tailforge_core::rng::stream;
use tailforge_core::weights::WeightModel;

const MAX_ROUNDS: usize = 400;

type Outcome = Result<String, String>;

/// Name, time budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn lattice() -> (WeightModel, CramerProfile) {
    let m = WeightModel::canonical_lattice();
    (m, CramerProfile::analyze(&m).unwrap())
}

fn gaussian() -> (WeightModel, CramerProfile) {
    let m = WeightModel::canonical_gaussian();
    (m, CramerProfile::analyze(&m).unwrap())
}

/// Converged canonical lattice pools, grown on first use.
fn pool(size: usize) -> &'static Pool {
    static SMALL: OnceLock<Pool> = OnceLock::new();
    static LARGE: OnceLock<Pool> = OnceLock::new();
    let cell = match size {
        1_000_000 => &SMALL,
        10_000_000 => &LARGE,
        _ => unreachable!(),
    };
    cell.get_or_init(|| {
        let model = WeightModel::canonical_lattice();
        let start = Instant::now();
        let (p, conv) = converge(&model, Pool::initial(&model, size, 17).unwrap(), MIN_ROUNDS, MAX_ROUNDS).unwrap();
        println!(
            "  pool {size}: {} rounds, converged = {}, {:.1} s",
            conv.rounds,
            conv.converged,
            start.elapsed().as_secs_f64()
        );
        assert!(conv.converged, "pool of {size} did not meet the convergence rule");
        p
    })
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Closed-form roots of `N E|A|^s = 1` for both canonical models.
fn quadratic_roots() -> [(f64, f64); 2] {
    let disc = (0.25f64 - 4.0 * 0.05 * 0.95).sqrt();
    let lattice = (((0.5 - disc) / 0.1).log2(), ((0.5 + disc) / 0.1).log2());
    let g = (4.0 - 2.0 * 2f64.ln()).sqrt();
    [lattice, (2.0 - g, 2.0 + g)]
}

fn c1_roots() -> Outcome {
    let mut worst_root = 0f64;
    let mut worst_m = 0f64;
    for ((model, _), (g0, a0)) in [lattice(), gaussian()].into_iter().zip(quadratic_roots()) {
        let (g, a) = find_roots(&model).map_err(|e| e.to_string())?;
        worst_root = worst_root.max((g - g0).abs()).max((a - a0).abs());
        worst_m = worst_m.max((m(&model, g) - 1.0).abs()).max((m(&model, a) - 1.0).abs());
    }
    let [(lg, la), (gg, ga)] = quadratic_roots();
    check(
        worst_root <= 1e-8 && worst_m <= 1e-10,
        format!(
            "roots ({lg:.6}, {la:.6}) and ({gg:.6}, {ga:.6}); max root error {worst_root:.1e}, max |m - 1| {worst_m:.1e}"
        ),
    )
}

fn c2_tilt() -> Outcome {
    const DRAWS: usize = 1_000_000;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, (model, profile)) in [lattice(), gaussian()].into_iter().enumerate() {
        let norm = (m(&model, profile.alpha) - 1.0).abs();
        let sampler = model.tilted_sampler(profile.alpha).map_err(|e| e.to_string())?;
        let mut rng = stream(2, &[i as u64]);
        let xs: Vec<f64> = (0..DRAWS).map(|_| sampler.sample_x(&mut rng)).collect();
        let n = DRAWS as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let c2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let c4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = c2 * n / (n - 1.0);
        let z_mean = (mean - profile.drift()) / (c2 / n).sqrt();
        let z_var = (var - profile.lambda * profile.lambda) / ((c4 - c2 * c2) / n).sqrt();
        ok &= norm <= 1e-10 && z_mean.abs() <= 4.0 && z_var.abs() <= 4.0;
        parts.push(format!("|m(alpha)-1| {norm:.1e}, z(mean) {z_mean:+.2}, z(var) {z_var:+.2}"));
    }
    check(ok, format!("lattice: {}; gaussian: {}", parts[0], parts[1]))
}

fn c3_bahadur_rao() -> Outcome {
    let (model, profile) = gaussian();
    let mut ok = true;
    let mut worst = 0f64;
    for ratio in [0.0, 0.5, 1.0] {
        let gaps: Vec<f64> = [100usize, 400, 1600]
            .iter()
            .map(|&n| {
                let q = LdpQuery::new(n, ratio * (n as f64).sqrt(), 1.0).unwrap();
                let exact = exact_tail_log(&model, n, q.threshold(&profile)).log_value;
                (exact - br_asymptote_log(&profile, &q).unwrap()).abs()
            })
            .collect();
        ok &= gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] <= 0.05;
        worst = worst.max(gaps[2]);
    }
    check(ok, format!("gap decreasing in n on all 3 columns; largest gap at n = 1600: {worst:.4}"))
}

fn c4_importance_sampling() -> Outcome {
    const SAMPLES: usize = 100_000;
    let mut parts = Vec::new();
    let mut ok = true;
    for (fam, (model, profile)) in [("lattice", lattice()), ("gaussian", gaussian())] {
        let mut hits = 0;
        let mut cells = 0;
        for n in (10..=100).step_by(10) {
            for k in [0.0, 0.5, 1.0, 1.5, 2.0] {
                let c = profile.drift() * n as f64 + k * profile.lambda * (n as f64).sqrt();
                let est = is_tail_estimate(&model, &profile, n, c, SAMPLES, 1000 + cells as u64)
                    .map_err(|e| e.to_string())?;
                let exact = exact_tail_log(&model, n, c).log_value;
                let se = est.stderr_log.unwrap_or(f64::INFINITY);
                hits += ((est.log_value - exact).abs() <= 3.0 * se) as usize;
                cells += 1;
            }
        }
        let sampler = model.tilted_sampler(profile.alpha).map_err(|e| e.to_string())?;
        let identity = (1..=100).map(|n| tilt_identity_log(&sampler, profile.log_n(), n).abs()).fold(0.0, f64::max);
        ok &= cells == 50 && hits >= 48 && identity <= 1e-10;
        parts.push(format!("{fam} {hits}/{cells} within 3 SE, weight identity {identity:.1e}"));
    }
    check(ok, parts.join("; "))
}

fn random_spec<R: Rng>(rng: &mut R, n_max: usize) -> EventSpec {
    let n = rng.random_range(1..=n_max);
    let log_t = rng.random_range(0.05..(n as f64 * 0.7).max(0.1));
    let log_c0 = rng.random_range(0.0..3.0);
    let delta = rng.random_range(0.01..0.5);
    EventSpec::new(log_t, log_c0, delta, n).unwrap()
}

fn c5_vn_oracles() -> Outcome {
    let models = [WeightModel::canonical_lattice(), WeightModel::two_point(3.0, 0.4, 0.2, 3).unwrap()];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
    let (mut worst, mut mismatches, mut violations, mut nonempty) = (0f64, 0, 0, 0);
    for i in 0..1000 {
        let model = &models[i % 2];
        let spec = random_spec(&mut rng, 20);
        let dp = vn_exact_log(model, &spec).map_err(|e| e.to_string())?;
        let en = common::vn_enumerate(model, &spec);
        if dp != en {
            let d = (dp - en).abs();
            worst = worst.max(d);
            mismatches += (d > 1e-10) as usize;
        }
        nonempty += dp.is_finite() as usize;
        violations += !common::log_le(dp, un_exact_log(model, &spec)) as usize;
    }
    check(
        mismatches == 0 && violations == 0,
        format!("1000 specs ({nonempty} nonempty): max |DP - enumeration| {worst:.1e}, {violations} V_n > U_n violations"),
    )
}

fn c6_sandwich() -> Outcome {
    let (model, profile) = lattice();
    let log_ts = [10.0, 20.0, 30.0, 40.0];
    let n_max = *level_window(&profile, 40.0).end();
    let log_c0 = vn_default_log_c0(&profile, envelope_log_sup(&model, &profile, n_max));
    let r = vn_sandwich_report(&model, &profile, &log_ts, log_c0, profile.delta, None).map_err(|e| e.to_string())?;
    let mut violations = 0;
    for row in &r.rows {
        let spec = EventSpec::new(row.log_t, log_c0, profile.delta, row.n).unwrap();
        violations += !common::log_le(row.log_p, un_exact_log(&model, &spec)) as usize;
    }
    let growth = r.width / r.width_without_last - 1.0;
    check(
        r.width.is_finite() && growth.abs() <= 0.10 && violations == 0,
        format!(
            "{} cells, band width {:.4} at 4 points vs {:.4} at 3 ({:+.1}%), monotone drift {}, V_n <= U_n on all cells",
            r.rows.len(),
            r.width,
            r.width_without_last,
            100.0 * growth,
            r.monotone_drift
        ),
    )
}

fn c7_moments() -> Outcome {
    let model = WeightModel::canonical_lattice();
    let p = pool(1_000_000);
    let mc = moment_check(&model, p);
    let z1 = (mc.mean - 1.0) / mc.mean_se;
    let z2 = (mc.second - 8.0) / mc.second_se_pool;
    check(
        z1.abs() <= 4.0 && z2.abs() <= 4.0,
        format!(
            "generation {}: mean {:.4} (z {z1:+.2}), second moment {:.3} (z {z2:+.2}, SE {:.3})",
            p.generation, mc.mean, mc.second, mc.second_se_pool
        ),
    )
}

fn c8_tail() -> Outcome {
    let (_, profile) = lattice();
    let p = pool(10_000_000);
    let tr = tail_report(&p.values, profile.alpha, &log_grid(1.0, 1000.0, 61)).map_err(|e| e.to_string())?;
    let (hu, hl) = (tr.hill_upper.main.alpha, tr.hill_lower.main.alpha);
    let rel = |h: f64| (h - profile.alpha).abs() / profile.alpha;
    let span = |pl: &Option<tailforge_core::fixedpoint::Plateau>| {
        pl.map_or("none".to_string(), |x| format!("[{:.1}, {:.1}] level {:.3}", x.t_lo, x.t_hi, x.level))
    };
    check(
        rel(hu) <= 0.15
            && rel(hl) <= 0.15
            && tr.plateau_upper.is_some()
            && tr.plateau_lower.is_some()
            && tr.plateaus_overlap,
        format!(
            "Hill {hu:.3} / {hl:.3} vs alpha {:.3}; plateaus upper {} lower {}; overlap {}",
            profile.alpha,
            span(&tr.plateau_upper),
            span(&tr.plateau_lower),
            tr.plateaus_overlap
        ),
    )
}

fn c9_unfold() -> Outcome {
    const SAMPLES: usize = 100_000;
    let model = WeightModel::canonical_lattice();
    let p = pool(1_000_000);
    let mut parts = Vec::new();
    let mut ok = true;
    for depth in [1usize, 5, 10] {
        let word: Vec<usize> = (0..depth).map(|i| i % model.n_children).collect();
        let totals = unfold_totals(&model, p, &word, SAMPLES, 90 + depth as u64).map_err(|e| e.to_string())?;
        let draws = pool_draws(p, SAMPLES, 190 + depth as u64);
        let ks = ks_distance(&totals, &draws);
        let threshold = ks_threshold_95(totals.len(), draws.len());
        ok &= ks < threshold;
        parts.push(format!("|w| = {depth}: KS {ks:.5}"));
    }
    check(ok, format!("{} (95% threshold {:.5})", parts.join(", "), ks_threshold_95(SAMPLES, SAMPLES)))
}

fn c10_certificate() -> Outcome {
    let (model, profile) = lattice();
    let p = pool(10_000_000);
    let cfg = default_config(&model, &profile, p, 20.0, None).map_err(|e| e.to_string())?;
    let r = certify(&model, &profile, p, &cfg, None).map_err(|e| e.to_string())?;
    let spacing = r.s2_log <= r.s1_log - 2f64.ln();
    let degraded = certify(&model, &profile, p, &CertificateConfig { c1: 2, ..cfg }, None).map_err(|e| e.to_string())?;

    // Miniature trees: the exact union lies in [S1 - S2, S1].
    let (mut trees, mut inside) = (0, 0);
    for tree_model in [model, WeightModel::two_point(3.0, 0.25, 0.05, 2).unwrap()] {
        let tp = CramerProfile::analyze(&tree_model).unwrap();
        let delta = default_delta(&tp);
        for log_t in [2.0, 2.5, 3.0, 3.5, 4.0] {
            for c1 in 2..=4 {
                let Ok(levels) = sparse_tree_levels(&tp, log_t, c1) else { continue };
                let levels: Vec<usize> = levels.into_iter().map(|l| l.0).collect();
                if *levels.last().unwrap() > 12 {
                    continue;
                }
                for log_c0 in [0.0, default_log_c0(delta)] {
                    let tree = Tree::new(&tree_model, log_t, log_c0, delta, c1, levels.clone());
                    let terms = tree.level_terms(&tree_model);
                    let s1 = log_sum_exp(&terms.iter().map(|l| l.log_count + l.log_pv).collect::<Vec<_>>()).exp();
                    let s2 = pair_sum_log(&tp, &terms, c1, log_c0, delta).exp();
                    let union = tree.union_prob();
                    let slack = 1e-12 + 1e-9 * s1;
                    inside += (s1 - s2 <= union + slack && union <= s1 + slack) as usize;
                    trees += 1;
                }
            }
        }
    }
    check(
        r.passed && spacing && r.eta_log.is_finite() && !degraded.passed && trees > 0 && inside == trees,
        format!(
            "C1 = {}, d = {:.3}: passed {}, eta_log {:.2}, log S2 - log S1 {:.3}; C1 = 2 passed {}; {inside}/{trees} miniature trees bracketed",
            cfg.c1,
            cfg.d,
            r.passed,
            r.eta_log,
            r.s2_log - r.s1_log,
            degraded.passed
        ),
    )
}

fn main() {
    // Respect a name filter from `cargo test <filter>`; flags are ignored.
    if let Some(filter) = std::env::args().skip(1).find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    let criteria: [Criterion; 10] = [
        ("Cramer roots", 1, c1_roots),
        ("tilt identities", 10, c2_tilt),
        ("Bahadur-Rao asymptote", 1, c3_bahadur_rao),
        ("importance sampling", 300, c4_importance_sampling),
        ("barrier event oracles", 120, c5_vn_oracles),
        ("barrier sandwich", 600, c6_sandwich),
        ("fixed-point moments", 600, c7_moments),
        ("tail positivity and index", 900, c8_tail),
        ("tree unfolding", 120, c9_unfold),
        ("positivity certificate", 600, c10_certificate),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let in_budget = took <= Duration::from_secs(*budget);
        let (status, detail) = match (&outcome, in_budget) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the time budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        println!("criterion {:>2} {status} {name}: {detail} [{:.2} s of {budget} s]", i + 1, took.as_secs_f64());
        if status == "FAIL" {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        return;
    }
    println!("acceptance: failed criteria {failed:?}");
    if std::env::var("TAILFORGE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
