//! The epistemic PB instance: alternatives with costs and latent integer
//! qualities, a common prior, and a binary-signal information structure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::COST_EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// `v(W) = sum of L_j` over winners.
    Normal,
    /// `v(W) = sum of c_j * L_j` over winners.
    CostProportional,
}

impl UtilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UtilityKind::Normal => "normal",
            UtilityKind::CostProportional => "cost_proportional",
        }
    }
}

impl std::str::FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(UtilityKind::Normal),
            "cost_proportional" => Ok(UtilityKind::CostProportional),
            other => Err(Error::param(format!("unknown utility kind `{other}`"))),
        }
    }
}

/// `q[j][l] = Pr[S = 1 | L_j = l]`, every entry strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationStructure {
    q: Vec<Vec<f64>>,
}

impl InformationStructure {
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self> {
        let width = q.first().map_or(0, Vec::len);
        if width < 2 {
            return Err(Error::env("information structure needs at least two quality levels"));
        }
        for (j, row) in q.iter().enumerate() {
            if row.len() != width {
                return Err(Error::env(format!("q row {j} has {} levels, expected {width}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::env(format!("q[{j}] entry {v} outside (0, 1)")));
            }
        }
        Ok(Self { q })
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn lmax(&self) -> usize {
        self.q[0].len() - 1
    }

    pub fn get(&self, j: usize, level: usize) -> f64 {
        self.q[j][level]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Signal probabilities `(Q_j^{L_j})_j` induced by a quality vector.
    pub fn signal_probs(&self, quality: &QualityVector) -> Vec<f64> {
        quality.0.iter().enumerate().map(|(j, &l)| self.q[j][l]).collect()
    }
}

/// Strict quality dominance across and within alternatives: every level-`l`
/// probability exceeds every probability at any lower level.
pub fn is_quality_dominant(info: &InformationStructure) -> bool {
    let mut below_max = f64::NEG_INFINITY;
    for level in 0..=info.lmax() {
        let (lo, hi) = info
            .q
            .iter()
            .map(|row| row[level])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if level > 0 && lo <= below_max {
            return false;
        }
        below_max = below_max.max(hi);
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QualityVector(pub Vec<usize>);

impl QualityVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that every entry lies in `0..=lmax` and the length is `m`.
    pub fn validate(&self, m: usize, lmax: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::param(format!("quality vector has length {}, expected {m}", self.0.len())));
        }
        if let Some(l) = self.0.iter().find(|&&l| l > lmax) {
            return Err(Error::param(format!("quality {l} above maximum {lmax}")));
        }
        Ok(())
    }
}

/// Row-major `n x m` binary matrix; row `i` is agent `i`'s signal vector,
/// which is also their ballot under informative voting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalProfile {
    n: usize,
    m: usize,
    bits: Vec<u8>,
}

impl SignalProfile {
    pub fn new(n: usize, m: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n * m {
            return Err(Error::param(format!("profile has {} bits, expected {n} x {m}", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("profile entries must be 0 or 1"));
        }
        Ok(Self { n, m, bits })
    }

    pub fn from_rows(m: usize, rows: &[Vec<u8>]) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::param(format!("ragged profile row of length {}", r.len())));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    pub fn empty(m: usize) -> Self {
        Self { n: 0, m, bits: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        // chunks_exact panics on a zero chunk size
        self.bits.chunks_exact(self.m.max(1)).take(self.n)
    }

    pub fn approves(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.m + j] == 1
    }

    pub fn approval_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.m];
        for row in self.rows() {
            for (c, &b) in counts.iter_mut().zip(row) {
                *c += b as usize;
            }
        }
        counts
    }

    /// Agents approving alternative `j`.
    pub fn approvers(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.approves(i, j)).collect()
    }

    /// Rows reordered by `perm` (`new row k = old row perm[k]`).
    pub fn permute_agents(&self, perm: &[usize]) -> Self {
        let bits = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n: self.n, m: self.m, bits }
    }
}

/// A selected set of alternatives with its cost. Members are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct WinningSet {
    pub members: Vec<usize>,
    pub total_cost: f64,
}

impl WinningSet {
    pub fn empty() -> Self {
        Self { members: Vec::new(), total_cost: 0.0 }
    }

    pub fn from_members(costs: &[f64], mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        let total_cost = members.iter().map(|&j| costs[j]).sum();
        Self { members, total_cost }
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.binary_search(&j).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A complete epistemic PB instance (agent count is supplied per experiment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentDoc", into = "EnvironmentDoc")]
pub struct Environment {
    costs: Vec<f64>,
    budget: f64,
    priors: Vec<Vec<f64>>,
    info: InformationStructure,
    utility_kind: UtilityKind,
}

impl Environment {
    pub fn new(
        costs: Vec<f64>,
        budget: f64,
        priors: Vec<Vec<f64>>,
        info: InformationStructure,
        utility_kind: UtilityKind,
    ) -> Result<Self> {
        let m = costs.len();
        if m == 0 {
            return Err(Error::env("no alternatives"));
        }
        if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::env(format!("cost {c} is not positive")));
        }
        let max_cost = costs.iter().copied().fold(0.0, f64::max);
        if !(budget.is_finite() && budget + COST_EPSILON >= max_cost) {
            return Err(Error::env(format!("budget {budget} below the largest cost {max_cost}")));
        }
        if info.m() != m {
            return Err(Error::env(format!("information structure covers {} alternatives, expected {m}", info.m())));
        }
        let levels = info.lmax() + 1;
        if priors.len() != m {
            return Err(Error::env(format!("{} prior vectors for {m} alternatives", priors.len())));
        }
        for (j, p) in priors.iter().enumerate() {
            if p.len() != levels {
                return Err(Error::env(format!("prior {j} has {} levels, expected {levels}", p.len())));
            }
            if p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::env(format!("prior {j} has a negative entry")));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::env(format!("prior {j} sums to {total}")));
            }
        }
        Ok(Self { costs, budget, priors, info, utility_kind })
    }

    /// Uniform prior over `0..=lmax` for every alternative.
    pub fn uniform_priors(m: usize, lmax: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / (lmax + 1) as f64; lmax + 1]; m]
    }

    pub fn m(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn lmax(&self) -> usize {
        self.info.lmax()
    }

    pub fn priors(&self) -> &[Vec<f64>] {
        &self.priors
    }

    pub fn info(&self) -> &InformationStructure {
        &self.info
    }

    pub fn utility_kind(&self) -> UtilityKind {
        self.utility_kind
    }

    pub fn with_utility_kind(mut self, kind: UtilityKind) -> Self {
        self.utility_kind = kind;
        self
    }

    /// Same environment with a different information structure.
    pub fn with_info(&self, info: InformationStructure) -> Result<Self> {
        Self::new(self.costs.clone(), self.budget, self.priors.clone(), info, self.utility_kind)
    }

    /// Ratio of the largest to the smallest cost.
    pub fn cost_ratio(&self) -> f64 {
        let (lo, hi) = self
            .costs
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        hi / lo
    }

    pub fn is_unit_cost(&self) -> bool {
        self.costs.iter().all(|&c| c == 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentDoc {
    m: usize,
    costs: Vec<f64>,
    budget: f64,
    lmax: usize,
    priors: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    utility: UtilityKind,
}

impl TryFrom<EnvironmentDoc> for Environment {
    type Error = Error;

    fn try_from(doc: EnvironmentDoc) -> Result<Self> {
        if doc.costs.len() != doc.m {
            return Err(Error::env(format!("m = {} but {} costs", doc.m, doc.costs.len())));
        }
        let info = InformationStructure::new(doc.q)?;
        if info.lmax() != doc.lmax {
            return Err(Error::env(format!("lmax = {} but q has {} levels", doc.lmax, info.lmax() + 1)));
        }
        Environment::new(doc.costs, doc.budget, doc.priors, info, doc.utility)
    }
}

impl From<Environment> for EnvironmentDoc {
    fn from(env: Environment) -> Self {
        EnvironmentDoc {
            m: env.m(),
            lmax: env.lmax(),
            costs: env.costs,
            budget: env.budget,
            priors: env.priors,
            q: env.info.q,
            utility: env.utility_kind,
        }
    }
}

/// Draws each `L_j` independently from its prior.
pub fn sample_quality_vector<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> QualityVector {
    let levels = env
        .priors
        .iter()
        .map(|prior| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (level, &p) in prior.iter().enumerate() {
                acc += p;
                if u < acc {
                    return level;
                }
            }
            // rounding slack: fall back to the highest level with mass
            prior.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect();
    QualityVector(levels)
}

/// `n` i.i.d. agents, `S_ij ~ Bernoulli(Q_j^{L_j})`.
pub fn sample_signal_profile<R: Rng + ?Sized>(
    env: &Environment,
    quality: &QualityVector,
    n: usize,
    rng: &mut R,
) -> SignalProfile {
    let probs = env.info.signal_probs(quality);
    let m = probs.len();
    let mut bits = Vec::with_capacity(n * m);
    for _ in 0..n {
        for &p in &probs {
            bits.push(u8::from(rng.gen::<f64>() < p));
        }
    }
    SignalProfile { n, m, bits }
}

/// Utility of a set of alternatives; feasibility is not checked.
pub fn utility(env: &Environment, members: &[usize], quality: &QualityVector) -> f64 {
    match env.utility_kind {
        UtilityKind::Normal => members.iter().map(|&j| quality.0[j] as f64).sum(),
        UtilityKind::CostProportional => members.iter().map(|&j| env.costs[j] * quality.0[j] as f64).sum(),
    }
}

pub fn is_feasible(env: &Environment, members: &[usize]) -> bool {
    members.iter().map(|&j| env.costs[j]).sum::<f64>() <= env.budget + COST_EPSILON
}

/// Half-open probability band `[lo, hi)` used for quality level `level`
/// (the top band is closed at 0.9).
pub fn signal_band(level: usize, lmax: usize) -> (f64, f64) {
    let width = 0.8 / (lmax + 1) as f64;
    let lo = 0.1 + level as f64 * width;
    let hi = if level == lmax { 0.9 } else { 0.1 + (level + 1) as f64 * width };
    (lo, hi)
}

/// Random environment following the experimental protocol: uniform priors,
/// costs uniform on `[1, alpha]` with one alternative pinned to 1 and a
/// different one pinned to `alpha`, and `Q_j^l` uniform inside band `l` of
/// an equal partition of `[0.1, 0.9]`.
pub fn generate_environment<R: Rng + ?Sized>(
    m: usize,
    alpha: f64,
    budget: f64,
    lmax: usize,
    rng: &mut R,
) -> Result<Environment> {
    if m < 2 {
        return Err(Error::param("m must be at least 2"));
    }
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha = {alpha} must be >= 1")));
    }
    if lmax < 1 {
        return Err(Error::param("lmax must be at least 1"));
    }
    if !(budget >= alpha) {
        return Err(Error::param(format!("budget {budget} is below the maximum cost {alpha}")));
    }

    let mut costs = vec![1.0; m];
    if alpha > 1.0 {
        let low = rng.gen_range(0..m);
        let mut high = rng.gen_range(0..m - 1);
        if high >= low {
            high += 1;
        }
        for (j, c) in costs.iter_mut().enumerate() {
            *c = if j == low {
                1.0
            } else if j == high {
                alpha
            } else {
                rng.gen_range(1.0..alpha)
            };
        }
    }

    let q = (0..m)
        .map(|_| {
            (0..=lmax)
                .map(|level| {
                    let (lo, hi) = signal_band(level, lmax);
                    if level == lmax {
                        rng.gen_range(lo..=hi)
                    } else {
                        rng.gen_range(lo..hi)
                    }
                })
                .collect()
        })
        .collect();
    let info = InformationStructure::new(q)?;
    Environment::new(costs, budget, Environment::uniform_priors(m, lmax), info, UtilityKind::Normal)
}


#[cfg(test)]
mod tests {
    use super::fixtures::running_example;
    use super::*;
    use crate::rng::stream;

    #[test]
    fn degenerate_prior_gives_top_quality() {
        let base = running_example();
        let env = Environment::new(
            base.costs().to_vec(),
            7.0,
            vec![vec![0.0, 1.0]; 3],
            base.info().clone(),
            UtilityKind::Normal,
        )
        .unwrap();
        let mut rng = stream(1, &[]);
        for _ in 0..1000 {
            assert_eq!(sample_quality_vector(&env, &mut rng).0, vec![1, 1, 1]);
        }
    }

    #[test]
    fn running_example_prior_frequency() {
        let env = running_example();
        let mut rng = stream(2, &[]);
        let draws = 1_000_000;
        let hits = (0..draws).filter(|_| sample_quality_vector(&env, &mut rng).0[0] == 1).count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.8).abs() < 0.005, "{freq}");
    }

    #[test]
    fn uniform_three_level_prior_passes_chi_square() {
        let info = InformationStructure::new(vec![vec![0.2, 0.5, 0.8]]).unwrap();
        let env = Environment::new(vec![1.0], 1.0, Environment::uniform_priors(1, 2), info, UtilityKind::Normal)
            .unwrap();
        let mut rng = stream(3, &[]);
        let draws = 1_000_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[sample_quality_vector(&env, &mut rng).0[0]] += 1;
        }
        let expected = draws as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.82, "chi2 = {chi2}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.005);
        }
    }

    #[test]
    fn near_degenerate_signals_are_all_ones() {
        let info = InformationStructure::new(vec![vec![0.999999, 0.999999]; 3]).unwrap();
        let env = running_example().with_info(info).unwrap();
        let profile = sample_signal_profile(&env, &QualityVector(vec![1, 0, 1]), 100_000, &mut stream(4, &[]));
        let ones = profile.approval_counts().iter().sum::<usize>() as f64;
        assert!(ones / (3.0 * 100_000.0) >= 0.999);
    }

    #[test]
    fn running_example_signal_column_means() {
        let env = running_example();
        let n = 100_000;
        let profile = sample_signal_profile(&env, &QualityVector(vec![1, 1, 0]), n, &mut stream(5, &[]));
        let means: Vec<f64> = profile.approval_counts().iter().map(|&c| c as f64 / n as f64).collect();
        for (got, want) in means.iter().zip([0.7, 0.65, 0.4]) {
            assert!((got - want).abs() < 0.01, "{means:?}");
            // six-sigma Hoeffding-style band
            assert!((got - want).abs() < 6.0 * (want * (1.0 - want) / n as f64).sqrt());
        }
    }

    #[test]
    fn zero_agents_gives_empty_profile() {
        let env = running_example();
        let profile = sample_signal_profile(&env, &QualityVector(vec![1, 1, 0]), 0, &mut stream(6, &[]));
        assert_eq!(profile.n(), 0);
        assert_eq!(profile.approval_counts(), vec![0, 0, 0]);
        assert_eq!(profile.rows().count(), 0);
    }

    #[test]
    fn running_example_utilities() {
        let env = running_example();
        let quality = QualityVector(vec![1, 1, 0]);
        assert_eq!(utility(&env, &[0, 1], &quality), 2.0);
        assert_eq!(utility(&env, &[], &quality), 0.0);
        let cp = env.with_utility_kind(UtilityKind::CostProportional);
        assert_eq!(utility(&cp, &[0, 1], &quality), 7.0);
    }

    #[test]
    fn running_example_feasibility() {
        let env = running_example();
        assert!(is_feasible(&env, &[0, 1]));
        assert!(is_feasible(&env, &[]));
        assert!(!is_feasible(&env, &[0, 1, 2]));
    }

    #[test]
    fn dominance_checks() {
        assert!(is_quality_dominant(running_example().info()));
        let tied = InformationStructure::new(vec![vec![0.3, 0.6], vec![0.6, 0.8]]).unwrap();
        assert!(!is_quality_dominant(&tied));
        let construction = InformationStructure::new(vec![vec![0.3, 0.6], vec![0.2, 0.4]]).unwrap();
        assert!(is_quality_dominant(&construction));
        let within = InformationStructure::new(vec![vec![0.5, 0.4]]).unwrap();
        assert!(!is_quality_dominant(&within));
    }

    #[test]
    fn generator_bands_and_dominance() {
        let (lo, hi) = signal_band(1, 2);
        assert!((lo - 0.366_666_666_7).abs() < 1e-9 && (hi - 0.633_333_333_3).abs() < 1e-9);
        assert_eq!(signal_band(2, 2).1, 0.9);
        for seed in 0..200 {
            let env = generate_environment(8, 5.0, 8.0, 2, &mut stream(seed, &[])).unwrap();
            assert!(is_quality_dominant(env.info()));
            for row in env.info().rows() {
                for (level, &q) in row.iter().enumerate() {
                    let (lo, hi) = signal_band(level, 2);
                    assert!(q >= lo && q <= hi);
                }
            }
        }
    }

    #[test]
    fn generator_costs() {
        let env = generate_environment(5, 1.0, 3.0, 1, &mut stream(9, &[])).unwrap();
        assert!(env.costs().iter().all(|&c| c == 1.0));
        for seed in 0..100 {
            let env = generate_environment(8, 5.0, 8.0, 2, &mut stream(seed, &[1])).unwrap();
            let costs = env.costs();
            assert_eq!(costs.iter().filter(|&&c| c == 1.0).count(), 1);
            assert_eq!(costs.iter().filter(|&&c| c == 5.0).count(), 1);
            assert!(costs.iter().all(|&c| (1.0..=5.0).contains(&c)));
        }
    }

    #[test]
    fn generator_rejects_bad_parameters() {
        let mut rng = stream(0, &[]);
        assert!(generate_environment(8, 0.5, 8.0, 2, &mut rng).is_err());
        assert!(generate_environment(8, 5.0, 4.0, 2, &mut rng).is_err());
        assert!(generate_environment(1, 1.0, 4.0, 2, &mut rng).is_err());
        assert!(generate_environment(4, 1.0, 4.0, 0, &mut rng).is_err());
    }

    #[test]
    fn environment_validation() {
        let info = InformationStructure::new(vec![vec![0.3, 0.7]; 2]).unwrap();
        let priors = Environment::uniform_priors(2, 1);
        assert!(Environment::new(vec![1.0, 3.0], 2.0, priors.clone(), info.clone(), UtilityKind::Normal).is_err());
        assert!(Environment::new(vec![1.0, 0.0], 2.0, priors.clone(), info.clone(), UtilityKind::Normal).is_err());
        let bad_prior = vec![vec![0.5, 0.6], vec![0.5, 0.5]];
        assert!(Environment::new(vec![1.0, 1.0], 2.0, bad_prior, info.clone(), UtilityKind::Normal).is_err());
        assert!(InformationStructure::new(vec![vec![0.0, 0.7]]).is_err());
        assert!(InformationStructure::new(vec![vec![0.3, 1.0]]).is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let env = running_example().with_utility_kind(UtilityKind::CostProportional);
        let json = env.to_json().unwrap();
        assert!(json.contains("\"utility\": \"cost_proportional\""));
        assert_eq!(Environment::from_json(&json).unwrap(), env);

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["extra"] = serde_json::json!(1);
        assert!(Environment::from_json(&value.to_string()).is_err());

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value["m"] = serde_json::json!(4);
        assert!(Environment::from_json(&value.to_string()).is_err());
    }
}
