//! Exact reference computations: optimal winning sets, binomial tie and
//! pivotal probabilities, a brute-force rate-function minimizer, and the exact
//! expected gain of a one-agent deviation at tiny `n`.

use crate::binom::{ln_lower_tail, ln_pmf_table, ln_sum_exp, ln_upper_tail};
use crate::error::{Error, Result};
use crate::model::{Environment, QualityVector, SignalProfile, UtilityKind, WinningSet};
use crate::par::{self, Execution};
use crate::rules::{tally_av, TieBreak};
use crate::strategic::{rate_function_g, ConstraintSpec};
use crate::COST_EPSILON;

/// Plain enumeration up to this many alternatives, meet-in-the-middle above.
pub const ENUMERATION_LIMIT: usize = 20;
pub const OPTIMAL_SET_LIMIT: usize = 24;
pub const TIE_EXACT_LIMIT: u64 = 100_000;
pub const DEVIATION_MAX_AGENTS: usize = 8;
pub const DEVIATION_MAX_ALTERNATIVES: usize = 4;

pub const GRID_POINTS: usize = 1_000_000;
pub const GRID_LO: f64 = 1e-6;
pub const GRID_HI: f64 = 1.0 - 1e-6;

const VALUE_TOL: f64 = 1e-9;

fn item_values(env: &Environment, quality: &QualityVector) -> Vec<f64> {
    quality
        .0
        .iter()
        .zip(env.costs())
        .map(|(&l, &c)| match env.utility_kind() {
            UtilityKind::Normal => l as f64,
            UtilityKind::CostProportional => c * l as f64,
        })
        .collect()
}

struct LexSearch<'a> {
    costs: &'a [f64],
    values: &'a [f64],
    budget: f64,
    /// `suffix_gain[j]` is the total positive value among `j..m`.
    suffix_gain: Vec<f64>,
    target: Option<f64>,
    best: Option<(Vec<usize>, f64)>,
}

impl LexSearch<'_> {
    /// Preorder walk in lexicographic order of member lists. Without a
    /// target this records the first set of maximum value; with one it stops
    /// at the first set reaching it.
    fn visit(&mut self, from: usize, members: &mut Vec<usize>, cost: f64, value: f64) -> bool {
        match self.target {
            Some(t) if value >= t - VALUE_TOL => {
                self.best = Some((members.clone(), value));
                return true;
            }
            Some(t) if value + self.suffix_gain[from] < t - VALUE_TOL => return false,
            Some(_) => {}
            None => {
                if self.best.as_ref().is_none_or(|(_, b)| value > b + VALUE_TOL) {
                    self.best = Some((members.clone(), value));
                }
            }
        }
        for j in from..self.costs.len() {
            if cost + self.costs[j] <= self.budget + COST_EPSILON {
                members.push(j);
                let done = self.visit(j + 1, members, cost + self.costs[j], value + self.values[j]);
                members.pop();
                if done {
                    return true;
                }
            }
        }
        false
    }
}

/// Best value over subsets of `items`, by sorting one half by cost.
fn meet_in_the_middle(costs: &[f64], values: &[f64], budget: f64) -> f64 {
    let m = costs.len();
    let half = m / 2;
    let subsets = |lo: usize, hi: usize| -> Vec<(f64, f64)> {
        let k = hi - lo;
        (0u32..1 << k)
            .map(|mask| {
                (0..k).filter(|b| mask >> b & 1 == 1).fold((0.0, 0.0), |(c, v), b| {
                    (c + costs[lo + b], v + values[lo + b])
                })
            })
            .collect()
    };
    let left = subsets(0, half);
    let mut right = subsets(half, m);
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prefix_best = Vec::with_capacity(right.len());
    let mut running = f64::NEG_INFINITY;
    for &(_, v) in &right {
        running = running.max(v);
        prefix_best.push(running);
    }
    let mut best = 0.0f64;
    for (c, v) in left {
        let room = budget + COST_EPSILON - c;
        if room < 0.0 {
            continue;
        }
        let idx = right.partition_point(|&(rc, _)| rc <= room);
        if idx > 0 {
            best = best.max(v + prefix_best[idx - 1]);
        }
    }
    best
}

/// Utility-maximizing feasible set and its value. Ties go to the
/// lexicographically smallest member list, so an all-zero quality vector
/// yields the empty set.
pub fn optimal_set(env: &Environment, quality: &QualityVector) -> Result<(WinningSet, f64)> {
    let m = env.m();
    if m > OPTIMAL_SET_LIMIT {
        return Err(Error::InstanceTooLarge { what: "optimal_set", size: m, limit: OPTIMAL_SET_LIMIT });
    }
    quality.validate(m, env.lmax())?;
    let values = item_values(env, quality);
    let mut suffix_gain = vec![0.0; m + 1];
    for j in (0..m).rev() {
        suffix_gain[j] = suffix_gain[j + 1] + values[j].max(0.0);
    }
    let target = (m > ENUMERATION_LIMIT).then(|| meet_in_the_middle(env.costs(), &values, env.budget()));
    let mut search = LexSearch {
        costs: env.costs(),
        values: &values,
        budget: env.budget(),
        suffix_gain,
        target,
        best: None,
    };
    search.visit(0, &mut Vec::new(), 0.0, 0.0);
    let (members, value) = search.best.expect("the empty set is feasible");
    Ok((WinningSet::from_members(env.costs(), members), value))
}

/// `Pr[X1 = X2]` for independent `X1 ~ Bin(n, p1)`, `X2 ~ Bin(n, p2)`.
pub fn tie_probability_exact(n: u64, p1: f64, p2: f64) -> Result<f64> {
    Ok(ln_tie_probability_exact(n, p1, p2)?.exp())
}

pub fn ln_tie_probability_exact(n: u64, p1: f64, p2: f64) -> Result<f64> {
    if n > TIE_EXACT_LIMIT {
        return Err(Error::InstanceTooLarge { what: "tie_probability_exact", size: n as usize, limit: TIE_EXACT_LIMIT as usize });
    }
    check_prob(p1)?;
    check_prob(p2)?;
    let a = ln_pmf_table(n, p1);
    let b = ln_pmf_table(n, p2);
    let terms: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    Ok(ln_sum_exp(&terms))
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("probability {p} outside (0, 1)")))
    }
}

/// `ln sum_x prod_eq Pr[X_i = x] prod_gt Pr[X_i > x] prod_lt Pr[X_i < x]`
/// with every `X_i ~ Bin(n, p_i)` independent.
pub fn ln_pivotal_probability_exact(n: u64, spec: &ConstraintSpec) -> f64 {
    let len = n as usize + 1;
    let mut acc = vec![0.0f64; len];
    for &p in spec.eq_probs() {
        for (a, v) in acc.iter_mut().zip(ln_pmf_table(n, p)) {
            *a += v;
        }
    }
    for &p in spec.gt_probs() {
        for (a, v) in acc.iter_mut().zip(ln_upper_tail(&ln_pmf_table(n, p))) {
            *a += v;
        }
    }
    for &p in spec.lt_probs() {
        for (a, v) in acc.iter_mut().zip(ln_lower_tail(&ln_pmf_table(n, p))) {
            *a += v;
        }
    }
    ln_sum_exp(&acc)
}

/// Linear-scale wrapper; underflows to 0 for large `n`.
pub fn pivotal_probability_exact(n: u64, spec: &ConstraintSpec) -> f64 {
    ln_pivotal_probability_exact(n, spec).exp()
}

/// Brute-force minimizer of `G`: a uniform grid followed by golden-section
/// refinement around the best grid point. Deterministic in `exec`.
pub fn minimize_g_grid(spec: &ConstraintSpec, exec: Execution) -> (f64, f64) {
    let step = (GRID_HI - GRID_LO) / (GRID_POINTS - 1) as f64;
    let at = |i: usize| GRID_LO + i as f64 * step;
    const CHUNK: usize = 4096;
    let chunks = GRID_POINTS.div_ceil(CHUNK);
    let best_per_chunk = par::map_range(exec, chunks, |c| {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in c * CHUNK..((c + 1) * CHUNK).min(GRID_POINTS) {
            let g = rate_function_g(at(i), spec);
            if g < best.1 {
                best = (i, g);
            }
        }
        best
    });
    let (i, _) = best_per_chunk
        .into_iter()
        .fold((usize::MAX, f64::INFINITY), |acc, b| if b.1 < acc.1 { b } else { acc });

    let mut lo = at(i.saturating_sub(1));
    let mut hi = at((i + 1).min(GRID_POINTS - 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut g1 = rate_function_g(x1, spec);
    let mut g2 = rate_function_g(x2, spec);
    while hi - lo > 1e-10 {
        if g1 <= g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - inv_phi * (hi - lo);
            g1 = rate_function_g(x1, spec);
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + inv_phi * (hi - lo);
            g2 = rate_function_g(x2, spec);
        }
    }
    let t = 0.5 * (lo + hi);
    let g = rate_function_g(t, spec);
    let grid_g = rate_function_g(at(i), spec);
    if grid_g < g {
        (at(i), grid_g)
    } else {
        (t, g)
    }
}

/// Posterior over one alternative's quality given one signal bit.
fn posterior(env: &Environment, j: usize, bit: u8) -> Vec<f64> {
    let weights: Vec<f64> = env.priors()[j]
        .iter()
        .enumerate()
        .map(|(l, &prior)| {
            let q = env.info().get(j, l);
            prior * if bit == 1 { q } else { 1.0 - q }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Mixed-radix odometer over `radices`; `f` sees each digit vector once.
fn for_each_digits(radices: &[usize], mut f: impl FnMut(&[usize])) {
    let mut digits = vec![0usize; radices.len()];
    if radices.contains(&0) {
        return;
    }
    loop {
        f(&digits);
        let mut k = 0;
        loop {
            if k == digits.len() {
                return;
            }
            digits[k] += 1;
            if digits[k] < radices[k] {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Exact `E[u | signal, truthful report] - E[u | signal, deviation]` for one
/// agent among `n`, everyone else voting informatively, outcome by AV.
///
/// AV reads only per-alternative approval counts, and given the qualities the
/// other agents' counts are independent binomials, so the expectation is a
/// finite sum over qualities and count vectors.
pub fn deviation_gain_exact(
    env: &Environment,
    n: usize,
    signal: &[u8],
    deviation: &[u8],
    tb: &TieBreak,
) -> Result<f64> {
    let m = env.m();
    if m > DEVIATION_MAX_ALTERNATIVES {
        return Err(Error::InstanceTooLarge { what: "deviation_gain_exact (m)", size: m, limit: DEVIATION_MAX_ALTERNATIVES });
    }
    if n > DEVIATION_MAX_AGENTS {
        return Err(Error::InstanceTooLarge { what: "deviation_gain_exact (n)", size: n, limit: DEVIATION_MAX_AGENTS });
    }
    if n == 0 {
        return Err(Error::param("deviation needs at least one agent"));
    }
    if !env.is_unit_cost() {
        return Err(Error::param("deviation gain is defined for unit costs only"));
    }
    if signal.len() != m || deviation.len() != m || signal.iter().chain(deviation).any(|&b| b > 1) {
        return Err(Error::param("signal and deviation must be binary vectors of length m"));
    }
    let others = n - 1;
    let post: Vec<Vec<f64>> = (0..m).map(|j| posterior(env, j, signal[j])).collect();
    let levels = env.lmax() + 1;

    let outcome_utility = |counts: &[usize], quality: &[usize]| -> f64 {
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| counts.iter().map(|&c| u8::from(i < c)).collect())
            .collect();
        let profile = SignalProfile::from_rows(m, &rows).expect("rectangular");
        tally_av(env, &profile, tb).members.iter().map(|&j| quality[j] as f64).sum()
    };

    let mut gain = 0.0;
    for_each_digits(&vec![levels; m], |quality| {
        let weight: f64 = quality.iter().enumerate().map(|(j, &l)| post[j][l]).product();
        if weight == 0.0 {
            return;
        }
        let pmfs: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                ln_pmf_table(others as u64, env.info().get(j, quality[j]))
                    .into_iter()
                    .map(f64::exp)
                    .collect()
            })
            .collect();
        let mut expected = 0.0;
        for_each_digits(&vec![others + 1; m], |x| {
            let px: f64 = x.iter().enumerate().map(|(j, &k)| pmfs[j][k]).product();
            let truthful: Vec<usize> = x.iter().zip(signal).map(|(&k, &b)| k + b as usize).collect();
            let deviated: Vec<usize> = x.iter().zip(deviation).map(|(&k, &b)| k + b as usize).collect();
            if truthful != deviated {
                expected += px * (outcome_utility(&truthful, quality) - outcome_utility(&deviated, quality));
            }
        });
        gain += weight * expected;
    });
    Ok(gain)
}
