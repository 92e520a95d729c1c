//! One function per subcommand. Each returns everything it will write, so
//! nothing touches the output directory until the run has succeeded.

use std::path::Path;

use serde::Serialize;
use tailforge_core::certificate::{self, CertificateConfig, CertificateReport};
use tailforge_core::cramer::{compute_profile, m, n0, CramerProfile};
use tailforge_core::fixedpoint::{
    converge, ks_distance, ks_threshold_95, log_grid, moment_check, pool_draws, tail_report, unfold_totals, Convergence,
    MomentCheck, Pool, TailReport,
};
use tailforge_core::ldp::{br_asymptote_log, br_upper_log, exact_tail_log, is_tail_estimate, LdpQuery};
use tailforge_core::pathevents::{self, envelope_log_sup, level_window, vn_sandwich_report, McBudget, SandwichReport};
use tailforge_core::weights::WeightModel;

use crate::config::{RunConfig, SEED_ENV};
use crate::error::CliError;
use crate::output::{fmt_f64, to_json, Table};

pub const POOL_FILE: &str = "pool.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Analyze,
    Ldcheck,
    Vncheck,
    Fixpoint,
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Ldcheck => "ldcheck",
            Command::Vncheck => "vncheck",
            Command::Fixpoint => "fixpoint",
            Command::Certify => "certify",
        }
    }
}

/// Files produced by a successful run.
pub struct Outputs {
    pub json: Vec<u8>,
    pub csv: Vec<u8>,
    pub pool: Option<Pool>,
    /// One-line summary for the terminal.
    pub summary: String,
}

#[derive(Serialize)]
struct RunJson<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed_source: &'static str,
    config: &'a RunConfig,
    profile: &'a CramerProfile,
    result: T,
}

#[allow(clippy::too_many_arguments)]
fn package<T: Serialize>(
    cmd: Command,
    cfg: &RunConfig,
    seed_source: &'static str,
    profile: &CramerProfile,
    result: T,
    table: &Table,
    pool: Option<Pool>,
    summary: String,
) -> Outputs {
    let doc = RunJson {
        tool: "tailforge",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        seed_source,
        config: cfg,
        profile,
        result,
    };
    Outputs { json: to_json(&doc), csv: table.to_csv(), pool, summary }
}

/// Profile with the configured overrides.
pub fn resolve_profile(cfg: &RunConfig) -> Result<CramerProfile, CliError> {
    let p = &cfg.profile;
    let profile = match (p.gamma_margin, p.delta) {
        (None, None) => CramerProfile::analyze(&cfg.model)?,
        (Some(g), d) => compute_profile(&cfg.model, g, d)?,
        (None, Some(d)) => {
            let base = CramerProfile::analyze(&cfg.model)?;
            compute_profile(&cfg.model, base.gamma_margin, Some(d))?
        }
    };
    Ok(profile)
}

/// Run `cmd`; `cfg` is completed with every default that was applied.
pub fn run(cmd: Command, cfg: &mut RunConfig, out: &Path, seed_source: &'static str) -> Result<Outputs, CliError> {
    match cmd {
        Command::Analyze => analyze(cfg, seed_source),
        Command::Ldcheck => ldcheck(cfg, seed_source),
        Command::Vncheck => vncheck(cfg, seed_source),
        Command::Fixpoint => fixpoint(cfg, out, seed_source),
        Command::Certify => certify(cfg, out, seed_source),
    }
}

#[derive(Serialize)]
struct LevelRow {
    log_t: f64,
    n0: usize,
    window_lo: usize,
    window_hi: usize,
}

#[derive(Serialize)]
struct AnalyzeResult {
    /// `N E|A|^alpha - 1`.
    normalization_error: f64,
    /// `N E|A|^gamma - 1`.
    gamma_error: f64,
    tilted_mean: f64,
    tilted_std: f64,
    levels: Vec<LevelRow>,
}

fn analyze(cfg: &mut RunConfig, seed_source: &'static str) -> Result<Outputs, CliError> {
    let sec = cfg.analyze.get_or_insert_with(Default::default).clone();
    let profile = resolve_profile(cfg)?;
    let model = &cfg.model;
    let levels = sec
        .log_t
        .iter()
        .map(|&lt| {
            let w = level_window(&profile, lt);
            LevelRow { log_t: lt, n0: n0(&profile, lt), window_lo: *w.start(), window_hi: *w.end() }
        })
        .collect();
    let result = AnalyzeResult {
        normalization_error: m(model, profile.alpha) - 1.0,
        gamma_error: m(model, profile.gamma) - 1.0,
        tilted_mean: profile.drift(),
        tilted_std: profile.lambda,
        levels,
    };
    let mut table = Table::new(&["s", "m", "log_m"]);
    let pts = sec.s_points.max(2);
    for i in 0..pts {
        let s = 1.25 * profile.alpha * i as f64 / (pts - 1) as f64;
        let v = m(model, s);
        table.push(vec![fmt_f64(s), fmt_f64(v), fmt_f64(v.ln())]);
    }
    let summary = format!("gamma = {:.6}, alpha = {:.6}", profile.gamma, profile.alpha);
    Ok(package(Command::Analyze, cfg, seed_source, &profile, result, &table, None, summary))
}

#[derive(Serialize)]
struct LdCell {
    n: usize,
    d_over_sqrt_n: f64,
    d: f64,
    threshold: f64,
    exact_log: f64,
    upper_log: f64,
    asymptote_log: Option<f64>,
    gap: Option<f64>,
    is_log: Option<f64>,
    is_stderr_log: Option<f64>,
}

#[derive(Serialize)]
struct LdResult {
    mode: &'static str,
    note: String,
    cells: Vec<LdCell>,
    /// `|gap|` strictly decreasing in `n` along every `d / sqrt(n)` column.
    columns_decreasing: Option<bool>,
    max_gap_at_largest_n: Option<f64>,
    /// `max(exact - envelope)` over the grid; bounded for every law.
    order_constant_log: f64,
    envelope_log_sup: f64,
    is_within_3se: Option<usize>,
    is_cells: Option<usize>,
    passed: bool,
}

fn ldcheck(cfg: &mut RunConfig, seed_source: &'static str) -> Result<Outputs, CliError> {
    let sec = cfg.ldcheck.get_or_insert_with(Default::default).clone();
    if sec.n.is_empty() || sec.d_over_sqrt_n.is_empty() {
        return Err(CliError::Usage("ldcheck grid is empty".into()));
    }
    let seed = if sec.is_samples > 0 { Some(cfg.require_seed("ldcheck with is_samples > 0")?) } else { None };
    let profile = resolve_profile(cfg)?;
    let model = &cfg.model;
    let lattice = model.is_lattice();
    let mut ns = sec.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut cells = Vec::new();
    for &n in &ns {
        for &x in &sec.d_over_sqrt_n {
            let q = LdpQuery::new(n, x * (n as f64).sqrt(), sec.theta)?;
            let c = q.threshold(&profile);
            let exact = exact_tail_log(model, n, c).log_value;
            let upper = br_upper_log(&profile, &q);
            let asym = if lattice { None } else { Some(br_asymptote_log(&profile, &q)?) };
            let is = match seed {
                Some(s) => Some(is_tail_estimate(model, &profile, n, c, sec.is_samples, s)?),
                None => None,
            };
            cells.push(LdCell {
                n,
                d_over_sqrt_n: x,
                d: q.d,
                threshold: c,
                exact_log: exact,
                upper_log: upper,
                asymptote_log: asym,
                gap: asym.map(|a| (exact - a).abs()),
                is_log: is.map(|e| e.log_value),
                is_stderr_log: is.and_then(|e| e.stderr_log),
            });
        }
    }
    let order_constant_log = cells.iter().map(|c| c.exact_log - c.upper_log).fold(f64::NEG_INFINITY, f64::max);
    let env = envelope_log_sup(model, &profile, *ns.last().expect("nonempty"));
    let order_ok = order_constant_log.is_finite() && order_constant_log <= env + 1e-9;
    let (mode, note, columns_decreasing, max_gap, passed) = if lattice {
        (
            "order_only",
            "lattice law: the Bahadur-Rao asymptote needs a nonlattice law, so only the order bound P <= C * envelope is checked".to_string(),
            None,
            None,
            order_ok,
        )
    } else {
        let dec = sec.d_over_sqrt_n.iter().all(|&x| {
            let col: Vec<f64> = cells.iter().filter(|c| c.d_over_sqrt_n == x).filter_map(|c| c.gap).collect();
            col.windows(2).all(|w| w[1] < w[0])
        });
        let last = *ns.last().expect("nonempty");
        let mg = cells.iter().filter(|c| c.n == last).filter_map(|c| c.gap).fold(0.0, f64::max);
        let ok = dec && mg <= sec.tolerance && order_ok;
        ("bahadur_rao", format!("gap decreasing in n and <= {} at n = {last}", sec.tolerance), Some(dec), Some(mg), ok)
    };
    let is_cells = seed.map(|_| cells.len());
    let is_within_3se = seed.map(|_| {
        cells
            .iter()
            .filter(|c| match (c.is_log, c.is_stderr_log) {
                (Some(v), Some(se)) => ((v - c.exact_log).abs() / se) <= 3.0,
                (Some(v), None) => v == c.exact_log,
                _ => false,
            })
            .count()
    });
    let mut table = Table::new(&[
        "n",
        "d_over_sqrt_n",
        "d",
        "exact_log",
        "upper_log",
        "asymptote_log",
        "gap",
        "is_log",
        "is_stderr_log",
    ]);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for c in &cells {
        table.push(vec![
            c.n.to_string(),
            fmt_f64(c.d_over_sqrt_n),
            fmt_f64(c.d),
            fmt_f64(c.exact_log),
            fmt_f64(c.upper_log),
            opt(c.asymptote_log),
            opt(c.gap),
            opt(c.is_log),
            opt(c.is_stderr_log),
        ]);
    }
    let summary = format!("ldcheck {mode}: {}", if passed { "passed" } else { "FAILED" });
    let result = LdResult {
        mode,
        note,
        cells,
        columns_decreasing,
        max_gap_at_largest_n: max_gap,
        order_constant_log,
        envelope_log_sup: env,
        is_within_3se,
        is_cells,
        passed,
    };
    Ok(package(Command::Ldcheck, cfg, seed_source, &profile, result, &table, None, summary))
}

fn vncheck(cfg: &mut RunConfig, seed_source: &'static str) -> Result<Outputs, CliError> {
    let profile = resolve_profile(cfg)?;
    let model = cfg.model;
    let lattice = model.is_lattice();
    let seed = cfg.seed;
    let sec = cfg.vncheck.get_or_insert_with(Default::default);
    if sec.log_t.is_empty() {
        return Err(CliError::Usage("vncheck t grid is empty".into()));
    }
    let delta = *sec.delta.get_or_insert(profile.delta);
    if sec.log_c0.is_none() {
        let n_max = sec.log_t.iter().map(|&lt| *level_window(&profile, lt).end()).max().unwrap_or(1);
        sec.log_c0 = Some(pathevents::default_log_c0(&profile, envelope_log_sup(&model, &profile, n_max)));
    }
    let log_c0 = sec.log_c0.expect("set above");
    let mc = match (lattice, sec.samples) {
        (true, _) => None,
        (false, Some(samples)) => Some(McBudget {
            samples,
            seed: seed.ok_or_else(|| CliError::Usage("vncheck on a nonlattice law samples and needs a seed".into()))?,
        }),
        (false, None) => return Err(CliError::Usage("vncheck on a nonlattice law needs vncheck.samples".into())),
    };
    let log_ts = sec.log_t.clone();
    let report: SandwichReport = vn_sandwich_report(&model, &profile, &log_ts, log_c0, delta, mc)?;
    let mut table = Table::new(&["log_t", "n", "log_p", "r", "stderr_log"]);
    for r in &report.rows {
        table.push(vec![
            fmt_f64(r.log_t),
            r.n.to_string(),
            fmt_f64(r.log_p),
            fmt_f64(r.r),
            r.stderr_log.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    let summary = format!(
        "band width {:.4} ({:.4} without the largest t): {}",
        report.width,
        report.width_without_last,
        if report.stable { "stable" } else { "NOT stable" }
    );
    Ok(package(Command::Vncheck, cfg, seed_source, &profile, report, &table, None, summary))
}

/// Load the pool snapshot from `out` when resuming, else start afresh.
fn obtain_pool(model: &WeightModel, out: &Path, size: usize, seed: u64, resume: bool) -> Result<(Pool, Option<u64>), CliError> {
    if size == 0 {
        return Err(CliError::Usage("pool_size must be positive".into()));
    }
    let path = out.join(POOL_FILE);
    if resume && path.exists() {
        let pool = Pool::load(&path, model)?;
        if pool.seed != seed {
            return Err(CliError::State(format!(
                "{} was grown with seed {}, this run uses seed {seed}",
                path.display(),
                pool.seed
            )));
        }
        if pool.len() != size {
            return Err(CliError::State(format!(
                "{} holds {} values, this run asks for {size}",
                path.display(),
                pool.len()
            )));
        }
        let g = pool.generation;
        return Ok((pool, Some(g)));
    }
    Ok((Pool::initial(model, size, seed)?, None))
}

#[derive(Serialize)]
struct UnfoldCheck {
    depth: usize,
    samples: usize,
    ks: f64,
    threshold: f64,
    passed: bool,
}

#[derive(Serialize)]
struct MomentZ {
    mean_z: f64,
    second_z: f64,
}

#[derive(Serialize)]
struct FixpointResult {
    resumed_from_generation: Option<u64>,
    generation: u64,
    convergence: Convergence,
    moments: MomentCheck,
    moment_z: MomentZ,
    tail: TailReport,
    unfold: Vec<UnfoldCheck>,
}

fn fixpoint(cfg: &mut RunConfig, out: &Path, seed_source: &'static str) -> Result<Outputs, CliError> {
    let seed = cfg.require_seed("fixpoint")?;
    let sec = cfg.fixpoint.get_or_insert_with(Default::default).clone();
    if !(sec.t_min > 0.0 && sec.t_max > sec.t_min) || sec.t_points == 0 {
        return Err(CliError::Usage("fixpoint needs 0 < t_min < t_max and t_points > 0".into()));
    }
    let profile = resolve_profile(cfg)?;
    let model = cfg.model;
    let (pool, resumed) = obtain_pool(&model, out, sec.pool_size, seed, sec.resume)?;
    let (pool, conv) = converge(&model, pool, sec.min_rounds, sec.max_rounds.max(sec.min_rounds))?;
    let moments = moment_check(&model, &pool);
    let tail = tail_report(&pool.values, profile.alpha, &log_grid(sec.t_min, sec.t_max, sec.t_points))?;
    let mut unfold = Vec::new();
    for &depth in &sec.unfold_depths {
        let word: Vec<usize> = (0..depth).map(|i| i % model.n_children).collect();
        let totals = unfold_totals(&model, &pool, &word, sec.unfold_samples, seed)?;
        let draws = pool_draws(&pool, sec.unfold_samples, seed);
        let ks = ks_distance(&totals, &draws);
        let threshold = ks_threshold_95(totals.len(), draws.len());
        unfold.push(UnfoldCheck { depth, samples: sec.unfold_samples, ks, threshold, passed: ks < threshold });
    }
    let mut table = Table::new(&[
        "t",
        "upper_exceedances",
        "upper_scaled",
        "upper_ci_lo",
        "upper_ci_hi",
        "lower_exceedances",
        "lower_scaled",
        "lower_ci_lo",
        "lower_ci_hi",
    ]);
    for (u, l) in tail.upper.iter().zip(&tail.lower) {
        table.push(vec![
            fmt_f64(u.t),
            u.exceedances.to_string(),
            fmt_f64(u.scaled),
            fmt_f64(u.ci_lo),
            fmt_f64(u.ci_hi),
            l.exceedances.to_string(),
            fmt_f64(l.scaled),
            fmt_f64(l.ci_lo),
            fmt_f64(l.ci_hi),
        ]);
    }
    let summary = format!(
        "generation {} ({}), Hill {:.3} / {:.3} vs alpha {:.5}",
        pool.generation,
        if conv.converged { "converged" } else { "NOT converged" },
        tail.hill_upper.main.alpha,
        tail.hill_lower.main.alpha,
        profile.alpha
    );
    let result = FixpointResult {
        resumed_from_generation: resumed,
        generation: pool.generation,
        convergence: conv,
        moment_z: MomentZ {
            mean_z: (moments.mean - moments.mean_ref) / moments.mean_se,
            second_z: (moments.second - moments.second_ref) / moments.second_se_pool,
        },
        moments,
        tail,
        unfold,
    };
    Ok(package(Command::Fixpoint, cfg, seed_source, &profile, result, &table, Some(pool), summary))
}

#[derive(Serialize)]
struct CertifyEntry {
    report: CertificateReport,
    claim: String,
}

#[derive(Serialize)]
struct CertifyResult {
    resumed_from_generation: Option<u64>,
    generation: u64,
    convergence: Convergence,
    certificates: Vec<CertifyEntry>,
}

fn certify(cfg: &mut RunConfig, out: &Path, seed_source: &'static str) -> Result<Outputs, CliError> {
    let seed = cfg.require_seed("certify")?;
    let sec = cfg.certify.get_or_insert_with(Default::default).clone();
    if sec.log_t.is_empty() {
        return Err(CliError::Usage("certify t grid is empty".into()));
    }
    let profile = resolve_profile(cfg)?;
    let model = cfg.model;
    let mc = (!model.is_lattice()).then_some(McBudget { samples: sec.samples, seed });
    let (pool, resumed) = obtain_pool(&model, out, sec.pool_size, seed, sec.resume)?;
    let (pool, conv) = converge(&model, pool, sec.min_rounds, sec.max_rounds.max(sec.min_rounds))?;

    let delta = sec.delta.unwrap_or_else(|| certificate::default_delta(&profile));
    let log_c0 = sec.log_c0.unwrap_or_else(|| certificate::default_log_c0(delta));
    let eps = sec.eps.unwrap_or_else(|| certificate::default_eps(&profile));
    let delta0 = sec.delta0.unwrap_or(delta / 4.0);
    let d = match sec.d {
        Some(d) => d,
        None => certificate::default_d(&model, &pool, delta, delta0, eps)?,
    };
    let mut certificates = Vec::new();
    let mut table = Table::new(&["log_t", "c1", "n", "log_count", "log_pv", "log_pv_upper"]);
    for &log_t in &sec.log_t {
        let c1 = match sec.c1 {
            Some(c) => c,
            None => certificate::default_c1(&model, &profile, log_t, log_c0, delta, mc)?,
        };
        let cc = CertificateConfig { log_t, c1, d, delta, delta0, eps, log_c0 };
        let report = certificate::certify(&model, &profile, &pool, &cc, mc)?;
        for l in &report.levels {
            table.push(vec![
                fmt_f64(log_t),
                c1.to_string(),
                l.n.to_string(),
                fmt_f64(l.log_count),
                fmt_f64(l.log_pv),
                fmt_f64(l.log_pv_upper),
            ]);
        }
        let claim = if report.passed {
            format!(
                "P[R > e^{}] >= e^{} * t^-{} at t = e^{}",
                fmt_f64(report.log_threshold),
                fmt_f64(report.eta_log),
                fmt_f64(profile.alpha),
                fmt_f64(log_t)
            )
        } else {
            format!("no claim: {}", report.failure.clone().unwrap_or_default())
        };
        certificates.push(CertifyEntry { report, claim });
    }
    let passed = certificates.iter().filter(|c| c.report.passed).count();
    let summary = format!("{passed} of {} certificates passed", certificates.len());
    let result = CertifyResult { resumed_from_generation: resumed, generation: pool.generation, convergence: conv, certificates };
    Ok(package(Command::Certify, cfg, seed_source, &profile, result, &table, Some(pool), summary))
}

/// Read the seed override from the environment.
pub fn seed_env() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}
