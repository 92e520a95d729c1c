//! Population dynamics for the fixed point `R = sum_i A_i R_i + B`.
//!
//! A pool of `M` values approximates the law of `R`. One round replaces it by
//! `M` fresh values `sum_i A_i R_{sigma(i)} + B`, the `R_{sigma(i)}` drawn
//! uniformly with replacement from the previous round. Tree unfolding along a
//! word cross-checks the pool, and tail reports measure the power-law tails.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{wilson_interval, Z95};
use crate::rng::{chunked, stream, tag};
use crate::weights::WeightModel;

/// Rounds always run before the convergence rule may stop.
pub const MIN_ROUNDS: usize = 50;
/// Consecutive rounds below the KS threshold required to stop.
pub const KS_STREAK: usize = 3;
/// Exceedances below which a tail point is flagged unstable.
pub const MIN_EXCEEDANCES: u64 = 50;

const POOL_MAGIC: &[u8; 8] = b"TFPOOL01";

/// Empirical sample of `R` at some generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub values: Vec<f64>,
    pub generation: u64,
    pub seed: u64,
    pub model_hash: u64,
}

impl Pool {
    /// Constant pool at `E B / (1 - N E A)` when `N E|A| < 1`, else at zero.
    pub fn initial(model: &WeightModel, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("pool size must be positive".into()));
        }
        let contracting = model.n() * model.abs_moment(1.0)? < 1.0;
        let start = if contracting { model.mean_b() / (1.0 - model.n() * model.mean_a()) } else { 0.0 };
        Ok(Pool { values: vec![start; size], generation: 0, seed, model_hash: model.fingerprint() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_model(&self, model: &WeightModel) -> Result<()> {
        let expected = model.fingerprint();
        if self.model_hash != expected {
            return Err(Error::ModelMismatch { expected, found: self.model_hash });
        }
        Ok(())
    }

    /// Uniform draw from the pool.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[rng.random_range(0..self.values.len())]
    }

    /// Write the little-endian snapshot: magic, model hash, seed, generation,
    /// count (all `u64`), then the values as `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::PoolFile(format!("{}: {e}", path.display()));
        let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
        w.write_all(POOL_MAGIC).map_err(io)?;
        for x in [self.model_hash, self.seed, self.generation, self.values.len() as u64] {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Read a snapshot written by [`Pool::save`], rejecting it if it belongs to another model.
    pub fn load(path: &Path, model: &WeightModel) -> Result<Self> {
        let io = |e: std::io::Error| Error::PoolFile(format!("{}: {e}", path.display()));
        let mut r = BufReader::new(std::fs::File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != POOL_MAGIC {
            return Err(Error::PoolFile(format!("{}: not a pool snapshot", path.display())));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<std::fs::File>| -> Result<u64> {
            r.read_exact(&mut word).map_err(io)?;
            Ok(u64::from_le_bytes(word))
        };
        let (model_hash, seed, generation, count) = (next(&mut r)?, next(&mut r)?, next(&mut r)?, next(&mut r)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() as u64 != count * 8 {
            return Err(Error::PoolFile(format!("{}: expected {count} values, found {} bytes", path.display(), bytes.len())));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoolFile(format!("{}: non-finite value", path.display())));
        }
        let pool = Pool { values, generation, seed, model_hash };
        pool.check_model(model)?;
        Ok(pool)
    }
}

/// Apply `rounds` population-dynamics steps.
pub fn iterate(model: &WeightModel, pool: &Pool, rounds: usize) -> Result<Pool> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    pool.check_model(model)?;
    let mut cur = step(model, pool);
    for _ in 1..rounds {
        cur = step(model, &cur);
    }
    Ok(cur)
}

fn step(model: &WeightModel, pool: &Pool) -> Pool {
    let n = model.n_children;
    let parts = chunked(pool.len(), |chunk, range| {
        let mut rng = stream(pool.seed, &[tag::POOL, pool.generation, chunk]);
        let mut a = vec![0.0; n];
        range
            .map(|_| {
                let b = model.sample_children(&mut rng, &mut a);
                a.iter().map(|&ai| ai * pool.draw(&mut rng)).sum::<f64>() + b
            })
            .collect::<Vec<f64>>()
    });
    Pool {
        values: parts.concat(),
        generation: pool.generation + 1,
        seed: pool.seed,
        model_hash: pool.model_hash,
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    ks_sorted(&a, &b)
}

/// KS statistic of two sorted samples; ties are stepped over together.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs nonempty samples");
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample KS critical value at level 5%, `1.358 sqrt((m + n)/(m n))`.
pub fn ks_threshold_95(m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    1.358 * ((m + n) / (m * n)).sqrt()
}

/// Outcome of [`converge`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub rounds: usize,
    pub converged: bool,
    /// `(generation, KS to the previous generation)` for every round where it was evaluated.
    pub ks_history: Vec<(u64, f64)>,
    pub threshold: f64,
}

/// Iterate until the KS distance between successive generations has stayed
/// below the 95% two-sample threshold for [`KS_STREAK`] rounds, running at
/// least `min_rounds` and at most `max_rounds` rounds.
pub fn converge(model: &WeightModel, pool: Pool, min_rounds: usize, max_rounds: usize) -> Result<(Pool, Convergence)> {
    pool.check_model(model)?;
    let threshold = ks_threshold_95(pool.len(), pool.len());
    let mut cur = pool;
    let mut prev_sorted: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    let mut streak = 0;
    for round in 1..=max_rounds.max(1) {
        let next = step(model, &cur);
        // KS is only needed once the streak can still complete by min_rounds.
        if round + KS_STREAK > min_rounds {
            let prev = prev_sorted.take().unwrap_or_else(|| sorted(&cur.values));
            let now = sorted(&next.values);
            let ks = ks_sorted(&prev, &now);
            history.push((next.generation, ks));
            streak = if ks < threshold { streak + 1 } else { 0 };
            prev_sorted = Some(now);
        }
        cur = next;
        if round >= min_rounds && streak >= KS_STREAK {
            return Ok((cur, Convergence { rounds: round, converged: true, ks_history: history, threshold }));
        }
    }
    let rounds = max_rounds.max(1);
    Ok((cur, Convergence { rounds, converged: false, ks_history: history, threshold }))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Terms of `R = Pi_gamma R_gamma + side + immigration` along one word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Unfolded {
    /// `Pi_gamma R_gamma`.
    pub spine: f64,
    /// `sum_{k<n} sum_{i != i_{k+1}} Pi_{gamma|k} A_{gamma|k i} R_{gamma|k i}`.
    pub side: f64,
    /// `sum_{k<n} Pi_{gamma|k} B_{gamma|k}`.
    pub immigration: f64,
    pub total: f64,
}

/// Unfold the recursion `|word|` times along `word` (0-based child indices),
/// closing every open branch with a pool draw.
pub fn unfold_path_sample<R: Rng + ?Sized>(model: &WeightModel, pool: &Pool, word: &[usize], rng: &mut R) -> Result<Unfolded> {
    let n = model.n_children;
    if let Some(&bad) = word.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("child index {bad} out of range for N = {n}")));
    }
    let mut a = vec![0.0; n];
    let (mut prod, mut side, mut immigration) = (1.0, 0.0, 0.0);
    for &next in word {
        let b = model.sample_children(rng, &mut a);
        immigration += prod * b;
        for (i, &ai) in a.iter().enumerate() {
            if i != next {
                side += prod * ai * pool.draw(rng);
            }
        }
        prod *= a[next];
    }
    let spine = prod * pool.draw(rng);
    Ok(Unfolded { spine, side, immigration, total: spine + side + immigration })
}

/// `samples` unfolded totals along `word`, on deterministic chunked streams.
pub fn unfold_totals(model: &WeightModel, pool: &Pool, word: &[usize], samples: usize, seed: u64) -> Result<Vec<f64>> {
    pool.check_model(model)?;
    let parts = chunked(samples, |chunk, range| -> Result<Vec<f64>> {
        let mut rng = stream(seed, &[tag::UNFOLD, word.len() as u64, chunk]);
        range.map(|_| unfold_path_sample(model, pool, word, &mut rng).map(|u| u.total)).collect()
    });
    Ok(parts.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// `samples` uniform draws with replacement from the pool.
pub fn pool_draws(pool: &Pool, samples: usize, seed: u64) -> Vec<f64> {
    chunked(samples, |chunk, range| {
        let mut rng = stream(seed, &[tag::DRAW, chunk]);
        range.map(|_| pool.draw(&mut rng)).collect::<Vec<f64>>()
    })
    .concat()
}

/// Sample mean and second moment with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub mean: f64,
    pub mean_se: f64,
    pub second: f64,
    /// Standard error of the second moment as if the pool were i.i.d.
    pub second_se: f64,
    /// Memory `phi = N E A^2` of the second-moment recursion across generations.
    pub second_memory: f64,
    /// Stationary standard error of the pool second moment, `second_se / sqrt(1 - phi^2)`.
    pub second_se_pool: f64,
    /// `m1 = E B/(1 - N E A)` and
    /// `m2 = (E B^2 + 2 N E A E B m1 + N(N-1) (E A)^2 m1^2) / (1 - N E A^2)`.
    pub mean_ref: f64,
    pub second_ref: f64,
}

pub fn moment_check(model: &WeightModel, pool: &Pool) -> MomentCheck {
    let (mean, mean_se) = crate::numeric::mean_and_stderr(&pool.values);
    let sq: Vec<f64> = pool.values.iter().map(|v| v * v).collect();
    let (second, second_se) = crate::numeric::mean_and_stderr(&sq);
    let n = model.n();
    // Given the previous pool, a fresh value has E[R'^2] = N E A^2 m2 + const when
    // E A = 0, so m2 moves as an AR(1) sequence and its noise accumulates across rounds.
    let phi = n * model.second_moment_a();
    let ea = model.mean_a();
    let m1 = model.mean_b() / (1.0 - n * ea);
    let second_se_pool = if phi < 1.0 { second_se / (1.0 - phi * phi).sqrt() } else { f64::NAN };
    MomentCheck {
        mean,
        mean_se,
        second,
        second_se,
        second_memory: phi,
        second_se_pool,
        mean_ref: m1,
        second_ref: (model.second_moment_b() + 2.0 * n * ea * model.mean_b() * m1 + n * (n - 1.0) * ea * ea * m1 * m1)
            / (1.0 - n * model.second_moment_a()),
    }
}

/// Scaled exceedance `t^alpha P[+-R > t]` with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub t: f64,
    pub exceedances: u64,
    pub scaled: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// At least [`MIN_EXCEEDANCES`] exceedances.
    pub stable: bool,
    /// `t` is at or above the median of `|R|`.
    pub in_regime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillEstimate {
    pub k: usize,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub alpha: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub ci_lo: f64,
    #[serde(serialize_with = "crate::report::ser_ext_f64")]
    pub ci_hi: f64,
}

/// Hill estimates at the default `k` and at `k/2`, `2k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HillSweep {
    pub main: HillEstimate,
    pub half: HillEstimate,
    pub double: HillEstimate,
}

/// A run of consecutive grid points spanning at least a decade on which the
/// scaled tail is resolved and bounded away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau {
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    /// Smallest Wilson lower bound over the run.
    pub min_ci_lo: f64,
    /// Level at the largest `t` of the run, where the finite-`t` bias is smallest.
    pub level: f64,
    pub level_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub alpha_ref: f64,
    pub pool_size: usize,
    pub median_abs: f64,
    pub upper: Vec<TailPoint>,
    pub lower: Vec<TailPoint>,
    pub hill_upper: HillSweep,
    pub hill_lower: HillSweep,
    pub plateau_upper: Option<Plateau>,
    pub plateau_lower: Option<Plateau>,
    /// Both plateaus exist and their level intervals intersect.
    pub plateaus_overlap: bool,
}

/// Hill estimator of the tail index from the `k` largest of `desc` (sorted descending, positive).
pub fn hill(desc: &[f64], k: usize) -> HillEstimate {
    let nan = HillEstimate { k, alpha: f64::NAN, ci_lo: f64::NAN, ci_hi: f64::NAN };
    if k == 0 || desc.len() <= k || !(desc[k] > 0.0) {
        return nan;
    }
    let anchor = desc[k].ln();
    let h = desc[..k].iter().map(|x| x.ln() - anchor).sum::<f64>() / k as f64;
    let alpha = 1.0 / h;
    let half = Z95 * alpha / (k as f64).sqrt();
    HillEstimate { k, alpha, ci_lo: alpha - half, ci_hi: alpha + half }
}

fn hill_sweep(desc: &[f64], k: usize) -> HillSweep {
    HillSweep { main: hill(desc, k), half: hill(desc, (k / 2).max(1)), double: hill(desc, 2 * k) }
}

/// Default Hill order `floor(2 sqrt(M))`.
pub fn default_hill_k(pool_size: usize) -> usize {
    (2.0 * (pool_size as f64).sqrt()).floor() as usize
}

/// `count` log-spaced thresholds from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Tail report of `values` against the reference index `alpha`.
pub fn tail_report(values: &[f64], alpha: f64, t_grid: &[f64]) -> Result<TailReport> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    let m = values.len();
    let mut pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let mut neg: Vec<f64> = values.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    pos.sort_unstable_by(|a, b| b.total_cmp(a));
    neg.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let mid = m / 2;
    abs.select_nth_unstable_by(mid, f64::total_cmp);
    let median_abs = abs[mid];

    let side = |desc: &[f64]| -> Vec<TailPoint> {
        t_grid
            .iter()
            .map(|&t| {
                let hits = desc.partition_point(|&x| x > t) as u64;
                let (lo, hi) = wilson_interval(hits, m as u64, Z95);
                let scale = t.powf(alpha);
                TailPoint {
                    t,
                    exceedances: hits,
                    scaled: scale * hits as f64 / m as f64,
                    ci_lo: scale * lo,
                    ci_hi: scale * hi,
                    stable: hits >= MIN_EXCEEDANCES,
                    in_regime: t >= median_abs,
                }
            })
            .collect()
    };
    let upper = side(&pos);
    let lower = side(&neg);
    let k = default_hill_k(m);
    let plateau_upper = plateau(&upper);
    let plateau_lower = plateau(&lower);
    let plateaus_overlap = match (&plateau_upper, &plateau_lower) {
        (Some(a), Some(b)) => a.level_ci.0 <= b.level_ci.1 && b.level_ci.0 <= a.level_ci.1,
        _ => false,
    };
    Ok(TailReport {
        alpha_ref: alpha,
        pool_size: m,
        median_abs,
        upper,
        lower,
        hill_upper: hill_sweep(&pos, k),
        hill_lower: hill_sweep(&neg, k),
        plateau_upper,
        plateau_lower,
        plateaus_overlap,
    })
}

/// Widest run of consecutive usable points (in regime, stable, positive lower
/// bound) spanning at least a factor of ten in `t`.
fn plateau(points: &[TailPoint]) -> Option<Plateau> {
    let usable = |p: &TailPoint| p.in_regime && p.stable && p.ci_lo > 0.0;
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < points.len() {
        if !usable(&points[i]) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < points.len() && usable(&points[j + 1]) {
            j += 1;
        }
        let span = points[j].t / points[i].t;
        if span >= 10.0 * (1.0 - 1e-12) && best.is_none_or(|(a, b)| span > points[b].t / points[a].t) {
            best = Some((i, j));
        }
        i = j + 1;
    }
    best.map(|(i, j)| {
        let run = &points[i..=j];
        let last = run[run.len() - 1];
        Plateau {
            t_lo: run[0].t,
            t_hi: last.t,
            points: run.len(),
            min_ci_lo: run.iter().map(|p| p.ci_lo).fold(f64::INFINITY, f64::min),
            level: last.scaled,
            level_ci: (last.ci_lo, last.ci_hi),
        }
    })
}
