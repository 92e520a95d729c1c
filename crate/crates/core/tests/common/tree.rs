//! Exhaustive oracle for the sparse-tree union and its Bonferroni pair sum
//! on two-point laws.

use std::collections::HashMap;

use tailforge_core::certificate::LevelTerm;
use tailforge_core::ldp::lattice_sum;
use tailforge_core::pathevents::{vn_exact_log, EventSpec};
use tailforge_core::weights::{Family, WeightModel};

pub struct Tree {
    pub lh: f64,
    pub ll: f64,
    pub p: f64,
    pub n_children: usize,
    pub log_t: f64,
    pub log_c0: f64,
    pub delta: f64,
    pub c1: usize,
    pub levels: Vec<usize>,
}

impl Tree {
    pub fn new(model: &WeightModel, log_t: f64, log_c0: f64, delta: f64, c1: usize, levels: Vec<usize>) -> Self {
        let Family::TwoPointSigned { magnitude_hi, magnitude_lo, p_hi, .. } = model.family else {
            panic!("two-point law only");
        };
        assert!(levels.iter().all(|n| n % c1 == 0));
        Tree {
            lh: magnitude_hi.ln(),
            ll: magnitude_lo.ln(),
            p: p_hi,
            n_children: model.n_children,
            log_t,
            log_c0,
            delta,
            c1,
            levels,
        }
    }

    pub fn spec(&self, n: usize) -> EventSpec {
        EventSpec { log_t: self.log_t, log_c0: self.log_c0, delta: self.delta, n }
    }

    fn below(&self, target: usize, s: usize, k: usize) -> bool {
        lattice_sum(self.lh, self.ll, s, k) <= self.spec(target).barrier(s)
    }

    fn reached(&self, n: usize, k: usize) -> bool {
        lattice_sum(self.lh, self.ll, n, k) >= self.log_t
    }

    /// `P[union of V_gamma over the sparse tree]` by recursion over
    /// (depth, high steps, live targets, suffix still matching).
    pub fn union_prob(&self) -> f64 {
        let mut memo = HashMap::new();
        let all = (1u32 << self.levels.len()) - 1;
        self.union_from(0, 0, all, true, &mut memo)
    }

    fn union_from(&self, s: usize, k: usize, mask: u32, matched: bool, memo: &mut HashMap<(usize, usize, u32, bool), f64>) -> f64 {
        if let Some(&v) = memo.get(&(s, k, mask, matched)) {
            return v;
        }
        let mut live = mask;
        for (i, &n) in self.levels.iter().enumerate() {
            if n > s && live & (1 << i) != 0 && !self.below(n, s, k) {
                live &= !(1 << i);
            }
        }
        let key = (s, k, mask, matched);
        let mut matched = matched;
        let value = 'v: {
            if let Some(i) = self.levels.iter().position(|&n| n == s) {
                if matched && live & (1 << i) != 0 && self.reached(s, k) {
                    break 'v 1.0;
                }
                live &= !(1 << i);
            }
            if s.is_multiple_of(self.c1) {
                matched = true;
            }
            if live == 0 {
                break 'v 0.0;
            }
            let child = |m: bool, memo: &mut HashMap<_, _>| {
                self.p * self.union_from(s + 1, k + 1, live, m, memo)
                    + (1.0 - self.p) * self.union_from(s + 1, k, live, m, memo)
            };
            let on = child(matched, memo);
            let off = child(false, memo);
            let miss = (-on).ln_1p() + (self.n_children - 1) as f64 * (-off).ln_1p();
            -miss.exp_m1()
        };
        memo.insert(key, value);
        value
    }

    /// All sparse-tree words of length `n`: any prefix followed by `C1` zeros.
    pub fn words(&self, n: usize) -> Vec<Vec<u8>> {
        let free = n - self.c1;
        let total = self.n_children.pow(free as u32);
        (0..total)
            .map(|mut code| {
                let mut w = vec![0u8; n];
                for x in w.iter_mut().take(free) {
                    *x = (code % self.n_children) as u8;
                    code /= self.n_children;
                }
                w
            })
            .collect()
    }

    /// Probability over the shared prefix that both barriers hold, by end
    /// state, then independent continuations.
    fn joint(&self, n: usize, np: usize, s: usize) -> f64 {
        let mut prefix = vec![0.0; s + 1];
        prefix[0] = 1.0;
        for step in 0..s {
            let mut next = vec![0.0; s + 1];
            for k in 0..=step {
                if prefix[k] == 0.0 || !self.below(n, step, k) || !self.below(np, step, k) {
                    continue;
                }
                next[k + 1] += self.p * prefix[k];
                next[k] += (1.0 - self.p) * prefix[k];
            }
            prefix = next;
        }
        (0..=s).map(|k| prefix[k] * self.finish(n, s, k) * self.finish(np, s, k)).sum()
    }

    /// `P[barriers for target n hold on steps s..n-1 and S_n >= log t | S_s]`.
    fn finish(&self, n: usize, s: usize, k0: usize) -> f64 {
        let mut dist = vec![0.0; n + 1];
        dist[k0] = 1.0;
        for step in s..n {
            let mut next = vec![0.0; n + 1];
            for k in 0..=step {
                if dist[k] == 0.0 || !self.below(n, step, k) {
                    continue;
                }
                next[k + 1] += self.p * dist[k];
                next[k] += (1.0 - self.p) * dist[k];
            }
            dist = next;
        }
        (0..=n).filter(|&k| self.reached(n, k)).map(|k| dist[k]).sum()
    }

    /// Exact Bonferroni pair sum over ordered pairs with `|gamma'| <= |gamma|`.
    pub fn pair_sum_exact(&self) -> f64 {
        let mut counts: HashMap<(usize, usize, usize), u64> = HashMap::new();
        for &n in &self.levels {
            let wn = self.words(n);
            for &np in self.levels.iter().filter(|&&np| np <= n) {
                for g in &wn {
                    for h in &self.words(np) {
                        if np == n && g == h {
                            continue;
                        }
                        let s = g.iter().zip(h).take_while(|(a, b)| a == b).count();
                        *counts.entry((n, np, s)).or_default() += 1;
                    }
                }
            }
        }
        counts.iter().map(|(&(n, np, s), &c)| c as f64 * self.joint(n, np, s)).sum()
    }

    pub fn level_terms(&self, model: &WeightModel) -> Vec<LevelTerm> {
        let ln_n = (self.n_children as f64).ln();
        self.levels
            .iter()
            .map(|&n| {
                let v = vn_exact_log(model, &self.spec(n)).unwrap();
                LevelTerm { n, log_count: (n - self.c1) as f64 * ln_n, log_pv: v, log_pv_upper: v }
            })
            .collect()
    }
}
