//! Budgeted approval rules over an approval profile.
//!
//! All rules share one deterministic tie-break: a priority permutation of the
//! alternatives. Monetary quantities are `f64` compared with
//! [`COST_EPSILON`](crate::COST_EPSILON) slack.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Environment, SignalProfile, WinningSet};
use crate::COST_EPSILON;

/// Largest `m` accepted by the exhaustive PAV solver.
pub const PAV_EXHAUSTIVE_LIMIT: usize = 20;

/// Relative tolerance for treating two rule scores (loads, caps, PAV scores)
/// as tied.
const SCORE_TOL: f64 = 1e-12;

/// Priority order over alternatives, highest priority first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TieBreak {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl TieBreak {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let m = order.len();
        let mut rank = vec![usize::MAX; m];
        for (pos, &j) in order.iter().enumerate() {
            if j >= m || rank[j] != usize::MAX {
                return Err(Error::param(format!("tie-break order {order:?} is not a permutation")));
            }
            rank[j] = pos;
        }
        Ok(Self { order, rank })
    }

    /// Lower index wins.
    pub fn identity(m: usize) -> Self {
        Self { order: (0..m).collect(), rank: (0..m).collect() }
    }

    /// Index order with `last` moved to the lowest priority.
    pub fn disfavoring(m: usize, last: usize) -> Self {
        let order: Vec<usize> = (0..m).filter(|&j| j != last).chain(std::iter::once(last)).collect();
        Self::from_order(order).expect("valid permutation")
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position in the priority order; smaller is preferred.
    pub fn rank(&self, j: usize) -> usize {
        self.rank[j]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleId {
    Av,
    AvPerCost,
    Pav,
    GreedyCover,
    Phragmen,
    Mes,
    MesPlusAv,
    MesPlusPhragmen,
}

impl RuleId {
    /// Canonical order, also used to expand `all`.
    pub const ALL: [RuleId; 8] = [
        RuleId::Av,
        RuleId::AvPerCost,
        RuleId::Pav,
        RuleId::GreedyCover,
        RuleId::Phragmen,
        RuleId::Mes,
        RuleId::MesPlusAv,
        RuleId::MesPlusPhragmen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::Av => "av",
            RuleId::AvPerCost => "av_cost",
            RuleId::Pav => "pav",
            RuleId::GreedyCover => "greedy_cover",
            RuleId::Phragmen => "phragmen",
            RuleId::Mes => "mes",
            RuleId::MesPlusAv => "mes_av",
            RuleId::MesPlusPhragmen => "mes_phragmen",
        }
    }

    /// Parses a comma-separated list; `all` expands to [`RuleId::ALL`].
    pub fn parse_list(s: &str) -> Result<Vec<RuleId>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleId::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::param(format!("unknown rule `{s}`")))
    }
}

/// The part of an instance a rule sees: costs, a spending cap, and which
/// alternatives are still up for selection.
struct Ballot<'a> {
    costs: &'a [f64],
    budget: f64,
    available: Vec<bool>,
    profile: &'a SignalProfile,
    tb: &'a TieBreak,
}

impl<'a> Ballot<'a> {
    fn new(env: &'a Environment, profile: &'a SignalProfile, tb: &'a TieBreak) -> Self {
        assert_eq!(profile.m(), env.m(), "profile width must match the number of alternatives");
        assert_eq!(tb.len(), env.m(), "tie-break must rank every alternative");
        Ballot {
            costs: env.costs(),
            budget: env.budget(),
            available: vec![true; env.m()],
            profile,
            tb,
        }
    }

    fn m(&self) -> usize {
        self.costs.len()
    }

    fn fits(&self, spent: f64, j: usize) -> bool {
        spent + self.costs[j] <= self.budget + COST_EPSILON
    }

    /// Adds alternatives in `order`, skipping those that no longer fit.
    fn greedy_fill(&self, order: &[usize]) -> Vec<usize> {
        let mut spent = 0.0;
        let mut chosen = Vec::new();
        for &j in order {
            if self.available[j] && self.fits(spent, j) {
                spent += self.costs[j];
                chosen.push(j);
            }
        }
        chosen
    }

    fn by_count_order(&self, counts: &[usize]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.m()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(self.tb.rank(a).cmp(&self.tb.rank(b))));
        order
    }

    fn av(&self) -> Vec<usize> {
        self.greedy_fill(&self.by_count_order(&self.profile.approval_counts()))
    }

    fn av_per_cost(&self) -> Vec<usize> {
        let counts = self.profile.approval_counts();
        let mut order: Vec<usize> = (0..self.m()).collect();
        // exact comparison of count_a / c_a against count_b / c_b
        order.sort_by(|&a, &b| {
            let lhs = counts[a] as f64 * self.costs[b];
            let rhs = counts[b] as f64 * self.costs[a];
            rhs.partial_cmp(&lhs)
                .unwrap_or(Ordering::Equal)
                .then(self.tb.rank(a).cmp(&self.tb.rank(b)))
        });
        self.greedy_fill(&order)
    }

    fn pav(&self) -> Result<Vec<usize>> {
        let m = self.m();
        if m > PAV_EXHAUSTIVE_LIMIT {
            return Err(Error::InstanceTooLarge { what: "PAV", size: m, limit: PAV_EXHAUSTIVE_LIMIT });
        }
        let mut ballots: BTreeMap<u32, usize> = BTreeMap::new();
        for row in self.profile.rows() {
            let mask = row.iter().enumerate().fold(0u32, |acc, (j, &b)| acc | ((b as u32) << j));
            *ballots.entry(mask).or_default() += 1;
        }
        let ballots: Vec<(u32, f64)> = ballots.into_iter().map(|(k, v)| (k, v as f64)).collect();
        let harmonic: Vec<f64> = std::iter::once(0.0)
            .chain((1..=m).scan(0.0, |h, t| {
                *h += 1.0 / t as f64;
                Some(*h)
            }))
            .collect();

        let candidates: Vec<usize> = (0..m).filter(|&j| self.available[j]).collect();
        let mut search = PavSearch {
            ballot: self,
            ballots: &ballots,
            harmonic: &harmonic,
            candidates: &candidates,
            best: None,
        };
        search.visit(0, 0, 0.0);
        let (mask, _) = search.best.expect("the empty set is always feasible");
        Ok((0..m).filter(|&j| mask >> j & 1 == 1).collect())
    }

    fn greedy_cover(&self) -> Vec<usize> {
        let n = self.profile.n();
        let counts = self.profile.approval_counts();
        let mut satisfied = vec![false; n];
        let mut selected = vec![false; self.m()];
        let mut spent = 0.0;
        let mut chosen = Vec::new();
        loop {
            let mut best: Option<(usize, usize)> = None;
            for j in 0..self.m() {
                if !self.available[j] || selected[j] || !self.fits(spent, j) {
                    continue;
                }
                let gain = (0..n).filter(|&i| !satisfied[i] && self.profile.approves(i, j)).count();
                let better = match best {
                    None => true,
                    Some((b, bg)) => {
                        gain > bg || (gain == bg && self.tb.rank(j) < self.tb.rank(b))
                    }
                };
                if better {
                    best = Some((j, gain));
                }
            }
            let Some((j, gain)) = best else { break };
            if gain == 0 {
                // nothing left to cover: spend the rest by raw approvals
                let order = self.by_count_order(&counts);
                for j in order {
                    if self.available[j] && !selected[j] && self.fits(spent, j) {
                        spent += self.costs[j];
                        selected[j] = true;
                        chosen.push(j);
                    }
                }
                break;
            }
            spent += self.costs[j];
            selected[j] = true;
            chosen.push(j);
            for (i, s) in satisfied.iter_mut().enumerate() {
                if self.profile.approves(i, j) {
                    *s = true;
                }
            }
        }
        chosen
    }

    fn phragmen(&self, mut on_round: impl FnMut(&[f64])) -> Vec<usize> {
        let n = self.profile.n();
        let approvers: Vec<Vec<usize>> = (0..self.m()).map(|j| self.profile.approvers(j)).collect();
        let mut loads = vec![0.0f64; n];
        let mut selected = vec![false; self.m()];
        let mut spent = 0.0;
        let mut chosen = Vec::new();
        loop {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.m() {
                if !self.available[j] || selected[j] || approvers[j].is_empty() || !self.fits(spent, j) {
                    continue;
                }
                let x = phragmen_time(&approvers[j], &loads, self.costs[j]);
                if best.is_none_or(|(b, bx)| prefer_lower(x, bx, self.tb.rank(j), self.tb.rank(b))) {
                    best = Some((j, x));
                }
            }
            let Some((j, x)) = best else { break };
            for &i in &approvers[j] {
                loads[i] = loads[i].max(x);
            }
            spent += self.costs[j];
            selected[j] = true;
            chosen.push(j);
            on_round(&loads);
        }
        chosen
    }

    fn mes(&self, mut on_payment: impl FnMut(usize, &[(usize, f64)])) -> Vec<usize> {
        let n = self.profile.n();
        if n == 0 {
            return Vec::new();
        }
        let approvers: Vec<Vec<usize>> = (0..self.m()).map(|j| self.profile.approvers(j)).collect();
        let mut shares = vec![self.budget / n as f64; n];
        let mut selected = vec![false; self.m()];
        let mut spent = 0.0;
        let mut chosen = Vec::new();
        loop {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.m() {
                if !self.available[j] || selected[j] || approvers[j].is_empty() || !self.fits(spent, j) {
                    continue;
                }
                let Some(p) = mes_cap(&approvers[j], &shares, self.costs[j]) else { continue };
                if best.is_none_or(|(b, bp)| prefer_lower(p, bp, self.tb.rank(j), self.tb.rank(b))) {
                    best = Some((j, p));
                }
            }
            let Some((j, cap)) = best else { break };
            let payments: Vec<(usize, f64)> = approvers[j]
                .iter()
                .map(|&i| {
                    let pay = shares[i].min(cap);
                    shares[i] -= pay;
                    (i, pay)
                })
                .collect();
            on_payment(j, &payments);
            spent += self.costs[j];
            selected[j] = true;
            chosen.push(j);
        }
        chosen
    }

    /// Runs MES, then `completion` on the unselected alternatives with the
    /// leftover budget.
    fn mes_plus(mut self, completion: RuleId) -> Vec<usize> {
        let mut chosen = self.mes(|_, _| {});
        let spent: f64 = chosen.iter().map(|&j| self.costs[j]).sum();
        for &j in &chosen {
            self.available[j] = false;
        }
        self.budget = (self.budget - spent).max(0.0);
        let extra = match completion {
            RuleId::Av => self.av(),
            RuleId::Phragmen => self.phragmen(|_| {}),
            other => panic!("unsupported MES completion rule {other}"),
        };
        chosen.extend(extra);
        chosen
    }
}

fn prefer_lower(x: f64, best: f64, rank_x: usize, rank_best: usize) -> bool {
    let tol = SCORE_TOL * best.abs().max(1.0);
    x < best - tol || ((x - best).abs() <= tol && rank_x < rank_best)
}

/// Smallest `x` with `sum_i max(0, x - load_i) = cost` over the approvers.
fn phragmen_time(approvers: &[usize], loads: &[f64], cost: f64) -> f64 {
    let mut sorted: Vec<f64> = approvers.iter().map(|&i| loads[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    for r in 1..=sorted.len() {
        prefix += sorted[r - 1];
        let x = (cost + prefix) / r as f64;
        if r == sorted.len() || x <= sorted[r] {
            return x;
        }
    }
    unreachable!("approver list is non-empty")
}

/// Smallest cap `p` with `sum_i min(share_i, p) = cost`, or `None` when the
/// approvers cannot jointly afford the alternative.
fn mes_cap(approvers: &[usize], shares: &[f64], cost: f64) -> Option<f64> {
    let mut sorted: Vec<f64> = approvers.iter().map(|&i| shares[i]).collect();
    let total: f64 = sorted.iter().sum();
    if total < cost - COST_EPSILON {
        return None;
    }
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let mut paid_in_full = 0.0;
    for (r, &s) in sorted.iter().enumerate() {
        let p = (cost - paid_in_full) / (k - r) as f64;
        if p <= s {
            return Some(p);
        }
        paid_in_full += s;
    }
    // affordable only within the slack: everyone pays their whole share
    sorted.last().copied()
}

struct PavSearch<'b, 'a> {
    ballot: &'b Ballot<'a>,
    ballots: &'b [(u32, f64)],
    harmonic: &'b [f64],
    candidates: &'b [usize],
    best: Option<(u32, f64)>,
}

impl PavSearch<'_, '_> {
    fn score(&self, mask: u32) -> f64 {
        self.ballots
            .iter()
            .map(|&(b, mult)| mult * self.harmonic[(b & mask).count_ones() as usize])
            .sum()
    }

    /// Tie preference: larger set, then the rank sequence that is
    /// lexicographically smaller.
    fn beats_on_tie(&self, a: u32, b: u32) -> bool {
        match a.count_ones().cmp(&b.count_ones()) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                let ranks = |mask: u32| {
                    let mut r: Vec<usize> = (0..self.ballot.m())
                        .filter(|&j| mask >> j & 1 == 1)
                        .map(|j| self.ballot.tb.rank(j))
                        .collect();
                    r.sort_unstable();
                    r
                };
                ranks(a) < ranks(b)
            }
        }
    }

    fn offer(&mut self, mask: u32) {
        let score = self.score(mask);
        let take = match self.best {
            None => true,
            Some((bm, bs)) => {
                let tol = 1e-9 * bs.abs().max(1.0);
                score > bs + tol || ((score - bs).abs() <= tol && self.beats_on_tie(mask, bm))
            }
        };
        if take {
            self.best = Some((mask, score));
        }
    }

    fn visit(&mut self, from: usize, mask: u32, spent: f64) {
        self.offer(mask);
        for idx in from..self.candidates.len() {
            let j = self.candidates[idx];
            if self.ballot.fits(spent, j) {
                self.visit(idx + 1, mask | 1 << j, spent + self.ballot.costs[j]);
            }
        }
    }
}

fn finish(env: &Environment, members: Vec<usize>) -> WinningSet {
    WinningSet::from_members(env.costs(), members)
}

/// Greedy approval voting: by approval count, skipping what does not fit.
pub fn tally_av(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> WinningSet {
    finish(env, Ballot::new(env, profile, tb).av())
}

/// Greedy approval voting ordered by approvals per unit cost.
pub fn tally_av_per_cost(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> WinningSet {
    finish(env, Ballot::new(env, profile, tb).av_per_cost())
}

/// Proportional approval voting, solved exactly by subset enumeration.
pub fn tally_pav(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> Result<WinningSet> {
    Ok(finish(env, Ballot::new(env, profile, tb).pav()?))
}

pub fn tally_greedy_cover(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> WinningSet {
    finish(env, Ballot::new(env, profile, tb).greedy_cover())
}

/// Sequential Phragmén (discrete load formulation).
pub fn tally_phragmen(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> WinningSet {
    finish(env, Ballot::new(env, profile, tb).phragmen(|_| {}))
}

/// Phragmén together with the agent loads after every round.
pub fn tally_phragmen_with_loads(
    env: &Environment,
    profile: &SignalProfile,
    tb: &TieBreak,
) -> (WinningSet, Vec<Vec<f64>>) {
    let mut history = Vec::new();
    let chosen = Ballot::new(env, profile, tb).phragmen(|loads| history.push(loads.to_vec()));
    (finish(env, chosen), history)
}

/// Method of Equal Shares without completion; may leave budget unspent.
pub fn tally_mes(env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> WinningSet {
    finish(env, Ballot::new(env, profile, tb).mes(|_, _| {}))
}

/// One MES round: the funded alternative and each approver's payment.
#[derive(Debug, Clone, PartialEq)]
pub struct MesRound {
    pub alternative: usize,
    pub payments: Vec<(usize, f64)>,
}

pub fn tally_mes_with_payments(
    env: &Environment,
    profile: &SignalProfile,
    tb: &TieBreak,
) -> (WinningSet, Vec<MesRound>) {
    let mut rounds = Vec::new();
    let chosen = Ballot::new(env, profile, tb).mes(|j, pays| {
        rounds.push(MesRound { alternative: j, payments: pays.to_vec() })
    });
    (finish(env, chosen), rounds)
}

/// MES followed by `completion` (AV or Phragmén) on the leftover budget.
pub fn tally_mes_plus(
    env: &Environment,
    profile: &SignalProfile,
    tb: &TieBreak,
    completion: RuleId,
) -> Result<WinningSet> {
    if !matches!(completion, RuleId::Av | RuleId::Phragmen) {
        return Err(Error::param(format!("MES completion must be av or phragmen, got {completion}")));
    }
    Ok(finish(env, Ballot::new(env, profile, tb).mes_plus(completion)))
}

pub fn tally(rule: RuleId, env: &Environment, profile: &SignalProfile, tb: &TieBreak) -> Result<WinningSet> {
    Ok(match rule {
        RuleId::Av => tally_av(env, profile, tb),
        RuleId::AvPerCost => tally_av_per_cost(env, profile, tb),
        RuleId::Pav => tally_pav(env, profile, tb)?,
        RuleId::GreedyCover => tally_greedy_cover(env, profile, tb),
        RuleId::Phragmen => tally_phragmen(env, profile, tb),
        RuleId::Mes => tally_mes(env, profile, tb),
        RuleId::MesPlusAv => tally_mes_plus(env, profile, tb, RuleId::Av)?,
        RuleId::MesPlusPhragmen => tally_mes_plus(env, profile, tb, RuleId::Phragmen)?,
    })
}
