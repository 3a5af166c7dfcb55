//! Monte Carlo performance of rules: the ratio between the utility of the
//! rule's outcome and the optimal utility, averaged over trials (an
//! environment and quality vector) and samples (a signal profile per trial).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{
    generate_environment, sample_quality_vector, sample_signal_profile, utility, Environment,
    InformationStructure, QualityVector, SignalProfile, UtilityKind, WinningSet,
};
use crate::oracles::optimal_set;
use crate::par::{self, Execution};
use crate::rng;
use crate::rules::{tally, RuleId, TieBreak};
use crate::strategic::all_quality_vectors;

/// Bit-exact performance CSV header.
pub const CSV_HEADER: &str = "rule,n,m,alpha,budget,utility,lmax,trials,samples,mean_ratio,std_dev,ci95,seed";
/// Ratio reported when the optimum is 0 and every outcome is optimal.
pub const ZERO_OPTIMUM_RATIO: f64 = 1.0;
pub const WORST_CASE_LIMIT: usize = 100_000;
/// Cost of the cheap alternative in the cost-proportional construction.
pub const CONSTRUCTION_ETA: f64 = 0.01;

/// Two-sided 95% critical values of Student's t for 1..=30 degrees of freedom.
const T_CRITICAL_95: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131,
    2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

pub fn t_critical_95(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T_CRITICAL_95[df - 1],
        _ => 1.96,
    }
}

/// Where each trial's environment comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSource {
    /// The same instance every trial; only qualities and signals vary.
    Fixed(Environment),
    /// A fresh instance per trial from the experimental generator.
    Generated { m: usize, alpha: f64, budget: f64, lmax: usize, utility_kind: UtilityKind },
}

impl EnvSource {
    fn instance(&self, rng: &mut rng::StreamRng) -> Result<Environment> {
        match self {
            EnvSource::Fixed(env) => Ok(env.clone()),
            &EnvSource::Generated { m, alpha, budget, lmax, utility_kind } => {
                Ok(generate_environment(m, alpha, budget, lmax, rng)?.with_utility_kind(utility_kind))
            }
        }
    }

    pub fn m(&self) -> usize {
        match self {
            EnvSource::Fixed(env) => env.m(),
            EnvSource::Generated { m, .. } => *m,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            EnvSource::Fixed(env) => env.cost_ratio(),
            EnvSource::Generated { alpha, .. } => *alpha,
        }
    }

    pub fn budget(&self) -> f64 {
        match self {
            EnvSource::Fixed(env) => env.budget(),
            EnvSource::Generated { budget, .. } => *budget,
        }
    }

    pub fn lmax(&self) -> usize {
        match self {
            EnvSource::Fixed(env) => env.lmax(),
            EnvSource::Generated { lmax, .. } => *lmax,
        }
    }

    pub fn utility_kind(&self) -> UtilityKind {
        match self {
            EnvSource::Fixed(env) => env.utility_kind(),
            EnvSource::Generated { utility_kind, .. } => *utility_kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draws {
    pub n: usize,
    pub trials: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRecord {
    pub rule: RuleId,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub budget: f64,
    pub utility_kind: UtilityKind,
    pub lmax: usize,
    pub trials: usize,
    pub samples_per_trial: usize,
    pub mean_ratio: f64,
    pub std_dev: f64,
    pub ci95_half_width: f64,
    pub seed: u64,
}

impl PerformanceRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{},{},{},{},{:.6},{:.6},{:.6},{}",
            self.rule,
            self.n,
            self.m,
            self.alpha,
            self.budget,
            self.utility_kind.as_str(),
            self.lmax,
            self.trials,
            self.samples_per_trial,
            self.mean_ratio,
            self.std_dev,
            self.ci95_half_width,
            self.seed
        )
    }
}

pub fn records_to_csv(records: &[PerformanceRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{}", r.csv_row()).expect("writing to a String");
    }
    out
}

/// Per-sample ratios, indexed `[rule][trial][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub ratios: Vec<Vec<Vec<f64>>>,
}

impl RatioTable {
    /// All ratios of one rule in (trial, sample) order.
    pub fn flat(&self, rule: usize) -> Vec<f64> {
        self.ratios[rule].iter().flatten().copied().collect()
    }
}

/// Outcome for rule slot `k` on a sampled profile. The true qualities are
/// passed only so that test oracles can use them.
pub trait OutcomeFn: Sync {
    fn outcome(&self, k: usize, env: &Environment, profile: &SignalProfile, quality: &QualityVector) -> Result<WinningSet>;
}

impl<F> OutcomeFn for F
where
    F: Fn(usize, &Environment, &SignalProfile, &QualityVector) -> Result<WinningSet> + Sync,
{
    fn outcome(&self, k: usize, env: &Environment, profile: &SignalProfile, quality: &QualityVector) -> Result<WinningSet> {
        self(k, env, profile, quality)
    }
}

fn ratio(achieved: f64, optimum: f64) -> f64 {
    if optimum == 0.0 {
        ZERO_OPTIMUM_RATIO
    } else {
        achieved / optimum
    }
}

/// Ratios for `slots` outcome functions that all see the same draws.
pub fn ratios_with(
    source: &EnvSource,
    slots: usize,
    draws: Draws,
    exec: Execution,
    outcome: &dyn OutcomeFn,
) -> Result<RatioTable> {
    if draws.trials == 0 || draws.samples == 0 {
        return Err(Error::param("trials and samples must both be positive"));
    }
    let per_trial = par::map_range(exec, draws.trials, |t| -> Result<Vec<Vec<f64>>> {
        let mut trial_rng = rng::stream(draws.seed, &[t as u64]);
        let env = source.instance(&mut trial_rng)?;
        let quality = sample_quality_vector(&env, &mut trial_rng);
        let (_, optimum) = optimal_set(&env, &quality)?;
        let mut out = vec![Vec::with_capacity(draws.samples); slots];
        for s in 0..draws.samples {
            let mut sample_rng = rng::stream(draws.seed, &[t as u64, s as u64]);
            let profile = sample_signal_profile(&env, &quality, draws.n, &mut sample_rng);
            for (k, row) in out.iter_mut().enumerate() {
                let w = outcome.outcome(k, &env, &profile, &quality)?;
                row.push(ratio(utility(&env, &w.members, &quality), optimum));
            }
        }
        Ok(out)
    });
    let mut ratios = vec![Vec::with_capacity(draws.trials); slots];
    for trial in per_trial {
        for (k, row) in trial?.into_iter().enumerate() {
            ratios[k].push(row);
        }
    }
    Ok(RatioTable { ratios })
}

pub fn empirical_ratios(source: &EnvSource, rules: &[RuleId], draws: Draws, exec: Execution) -> Result<RatioTable> {
    let run = |k: usize, env: &Environment, profile: &SignalProfile, _: &QualityVector| {
        tally(rules[k], env, profile, &TieBreak::identity(env.m()))
    };
    ratios_with(source, rules.len(), draws, exec, &run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_dev: f64,
    pub ci95_half_width: f64,
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and spread over all samples; the confidence interval treats trial
/// means as the independent units, or uses the samples of a single trial.
pub fn summarize(per_trial: &[Vec<f64>]) -> Summary {
    let all: Vec<f64> = per_trial.iter().flatten().copied().collect();
    let (mean, std_dev) = mean_and_sd(&all);
    let ci95_half_width = if per_trial.len() >= 2 {
        let means: Vec<f64> = per_trial.iter().map(|t| mean_and_sd(t).0).collect();
        let (_, sd) = mean_and_sd(&means);
        t_critical_95(means.len() - 1) * sd / (means.len() as f64).sqrt()
    } else {
        1.96 * std_dev / (all.len() as f64).sqrt()
    };
    Summary { mean, std_dev, ci95_half_width }
}

fn record(rule: RuleId, source: &EnvSource, draws: Draws, per_trial: &[Vec<f64>]) -> PerformanceRecord {
    let s = summarize(per_trial);
    PerformanceRecord {
        rule,
        n: draws.n,
        m: source.m(),
        alpha: source.alpha(),
        budget: source.budget(),
        utility_kind: source.utility_kind(),
        lmax: source.lmax(),
        trials: draws.trials,
        samples_per_trial: draws.samples,
        mean_ratio: s.mean,
        std_dev: s.std_dev,
        ci95_half_width: s.ci95_half_width,
        seed: draws.seed,
    }
}

pub fn empirical_performance(source: &EnvSource, rule: RuleId, draws: Draws, exec: Execution) -> Result<PerformanceRecord> {
    let table = empirical_ratios(source, &[rule], draws, exec)?;
    Ok(record(rule, source, draws, &table.ratios[0]))
}

/// One record per rule, all computed from the same draws.
pub fn empirical_performance_multi(
    source: &EnvSource,
    rules: &[RuleId],
    draws: Draws,
    exec: Execution,
) -> Result<Vec<PerformanceRecord>> {
    let table = empirical_ratios(source, rules, draws, exec)?;
    Ok(rules.iter().zip(&table.ratios).map(|(&r, t)| record(r, source, draws, t)).collect())
}

/// Monte Carlo estimate of `E[v(r(profile))] / max v` at a fixed quality
/// vector; 1 when the optimum is 0.
pub fn performance_at(
    env: &Environment,
    quality: &QualityVector,
    rule: RuleId,
    n: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::param("samples must be positive"));
    }
    let (_, optimum) = optimal_set(env, quality)?;
    if optimum == 0.0 {
        return Ok(ZERO_OPTIMUM_RATIO);
    }
    let tb = TieBreak::identity(env.m());
    let values = par::map_range(exec, samples, |s| -> Result<f64> {
        let profile = sample_signal_profile(env, quality, n, &mut rng::stream(seed, &[s as u64]));
        Ok(utility(env, &tally(rule, env, &profile, &tb)?.members, quality))
    });
    let total = values.into_iter().sum::<Result<f64>>()?;
    Ok(total / samples as f64 / optimum)
}

/// Minimum over all quality vectors with a positive optimum of the
/// estimated performance, with the minimizing vector.
pub fn worst_case_performance(
    env: &Environment,
    rule: RuleId,
    n: usize,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<(QualityVector, f64)> {
    let count = (env.lmax() + 1).checked_pow(env.m() as u32).filter(|&c| c <= WORST_CASE_LIMIT);
    let Some(count) = count else {
        return Err(Error::InstanceTooLarge { what: "quality vectors", size: usize::MAX, limit: WORST_CASE_LIMIT });
    };
    let qualities = all_quality_vectors(env.m(), env.lmax());
    debug_assert_eq!(qualities.len(), count);
    let mut worst = (QualityVector(vec![0; env.m()]), ZERO_OPTIMUM_RATIO);
    for (i, quality) in qualities.into_iter().enumerate() {
        if optimal_set(env, &quality)?.1 == 0.0 {
            continue;
        }
        let p = performance_at(env, &quality, rule, n, samples, rng::derive(seed, &[i as u64]), exec)?;
        if p < worst.1 {
            worst = (quality, p);
        }
    }
    Ok(worst)
}

/// The two indistinguishable scenarios behind the impossibility result: same
/// costs and budget, different information structures and qualities, but
/// identical signal distributions.
pub fn impossibility_construction(m: usize, kind: UtilityKind) -> Result<[(Environment, QualityVector); 2]> {
    let (costs, budget) = match kind {
        UtilityKind::Normal if m >= 3 => {
            let mut c = vec![1.0; m];
            c[0] = m as f64;
            (c, m as f64)
        }
        UtilityKind::CostProportional if m == 2 => (vec![CONSTRUCTION_ETA, 1.0], 1.0),
        UtilityKind::Normal => return Err(Error::param("the normal-utility construction needs m >= 3")),
        UtilityKind::CostProportional => return Err(Error::param("the cost-proportional construction has m = 2")),
    };
    let priors = Environment::uniform_priors(m, 1);
    let first = InformationStructure::new(vec![vec![0.4, 0.6]; m])?;
    let second = InformationStructure::new(
        std::iter::once(vec![0.3, 0.6]).chain(std::iter::repeat_n(vec![0.2, 0.4], m - 1)).collect(),
    )?;
    let l1 = QualityVector(std::iter::once(1).chain(std::iter::repeat_n(0, m - 1)).collect());
    let l2 = QualityVector(vec![1; m]);
    Ok([
        (Environment::new(costs.clone(), budget, priors.clone(), first, kind)?, l1),
        (Environment::new(costs, budget, priors, second, kind)?, l2),
    ])
}

/// Result of a paired t-test on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t_statistic: f64,
    pub mean_difference: f64,
    pub significant_95: bool,
    /// All differences were equal; the statistic is then 0 or infinite and
    /// significance means the constant difference is nonzero.
    pub zero_variance: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::param("paired samples must have equal length"));
    }
    if a.len() < 2 {
        return Err(Error::param("a paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_and_sd(&d);
    let first = d[0];
    if d.iter().all(|&x| x == first) {
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(TTest { t_statistic: t, mean_difference: mean, significant_95: mean != 0.0, zero_variance: true });
    }
    let t = mean / (sd / (d.len() as f64).sqrt());
    Ok(TTest {
        t_statistic: t,
        mean_difference: mean,
        significant_95: t.abs() > t_critical_95(d.len() - 1),
        zero_variance: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub alphas: Vec<f64>,
    pub budgets: Vec<f64>,
    pub rules: Vec<RuleId>,
    pub m: usize,
    pub lmax: usize,
    pub utility_kind: UtilityKind,
    pub trials: usize,
    pub samples: usize,
    pub seed: u64,
    /// Run every cell on this instance instead of generated ones; `alphas`
    /// and `budgets` are then ignored.
    pub env: Option<Environment>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.rules.is_empty() {
            return Err(Error::param("sweep needs at least one n and one rule"));
        }
        if self.env.is_none() && (self.alphas.is_empty() || self.budgets.is_empty()) {
            return Err(Error::param("sweep needs at least one alpha and one budget"));
        }
        if self.trials == 0 || self.samples == 0 {
            return Err(Error::param("trials and samples must both be positive"));
        }
        Ok(())
    }

    /// Environment sources in (alpha, budget) order.
    fn sources(&self) -> Vec<EnvSource> {
        match &self.env {
            Some(env) => vec![EnvSource::Fixed(env.clone())],
            None => {
                let mut out = Vec::new();
                for &alpha in &self.alphas {
                    for &budget in &self.budgets {
                        out.push(EnvSource::Generated { m: self.m, alpha, budget, lmax: self.lmax, utility_kind: self.utility_kind });
                    }
                }
                out
            }
        }
    }
}

/// Seed of one sweep cell, derived from the master seed and its parameters.
pub fn cell_seed(master: u64, alpha: f64, budget: f64, n: usize) -> u64 {
    rng::derive(master, &[alpha.to_bits(), budget.to_bits(), n as u64])
}

/// Every (alpha, budget, n) cell for every rule. Records are ordered by rule
/// (canonical order), then alpha, budget and n.
pub fn run_sweep(cfg: &SweepConfig, exec: Execution) -> Result<Vec<PerformanceRecord>> {
    cfg.validate()?;
    let mut rules = cfg.rules.clone();
    rules.sort();
    rules.dedup();
    let mut per_rule: Vec<Vec<PerformanceRecord>> = vec![Vec::new(); rules.len()];
    for source in cfg.sources() {
        for &n in &cfg.n_values {
            let draws = Draws {
                n,
                trials: cfg.trials,
                samples: cfg.samples,
                seed: cell_seed(cfg.seed, source.alpha(), source.budget(), n),
            };
            for (k, rec) in empirical_performance_multi(&source, &rules, draws, exec)?.into_iter().enumerate() {
                per_rule[k].push(rec);
            }
        }
    }
    Ok(per_rule.into_iter().flatten().collect())
}
