//! Strategic analysis under unit costs and AV: tie probabilities, pivotal
//! partitions, the large-deviation rate function `G` and its minimizer, and
//! the comparison of the fastest-vanishing helpful and harmful pivotal events.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{InformationStructure, QualityVector};
use crate::par::{self, Execution};
use crate::rng;

/// Sign-test slack for one-sided derivatives at singular points.
pub const DERIVATIVE_TOL: f64 = 1e-12;
/// Interior candidates closer than this to a singular point are attributed
/// to the singular point.
const EDGE_TOL: f64 = 1e-12;
pub const RARITY_CLAMP: f64 = 1e-6;
/// Bound on `3^(m-1) * (lmax+1)^m` for pivotal enumeration.
pub const PIVOTAL_ENUMERATION_LIMIT: usize = 50_000_000;

/// Reference pivotal counts per side reported in the literature for the two
/// desk-scale settings `(m, B, lmax) = (5, 2, 2)` and `(6, 3, 2)`.
pub const REFERENCE_COUNTS: [((usize, usize, usize), usize); 2] = [((5, 2, 2), 3159), ((6, 3, 2), 24543)];

/// Probabilities of the independent binomials constrained to equal, exceed,
/// or fall below a common count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    eq: Vec<f64>,
    gt: Vec<f64>,
    lt: Vec<f64>,
}

impl ConstraintSpec {
    pub fn new(eq_probs: Vec<f64>, gt_probs: Vec<f64>, lt_probs: Vec<f64>) -> Result<Self> {
        if eq_probs.is_empty() {
            return Err(Error::param("a constraint spec needs at least one equality"));
        }
        if let Some(p) = eq_probs.iter().chain(&gt_probs).chain(&lt_probs).find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::param(format!("constraint probability {p} outside (0, 1)")));
        }
        Ok(Self { eq: eq_probs, gt: gt_probs, lt: lt_probs })
    }

    pub fn eq_probs(&self) -> &[f64] {
        &self.eq
    }

    pub fn gt_probs(&self) -> &[f64] {
        &self.gt
    }

    pub fn lt_probs(&self) -> &[f64] {
        &self.lt
    }

    pub fn len(&self) -> usize {
        self.eq.len() + self.gt.len() + self.lt.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Probabilities in `E(t)`.
    pub fn active_at(&self, t: f64) -> Vec<f64> {
        self.eq
            .iter()
            .copied()
            .chain(self.gt.iter().copied().filter(|&p| p < t))
            .chain(self.lt.iter().copied().filter(|&p| p > t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunctionResult {
    pub t_tilde: f64,
    pub g_value: f64,
    /// `|E(t_tilde)|`.
    pub active_set_size: usize,
    /// The minimizer is one of the tail probabilities.
    pub singular: bool,
}

/// `KL(t || p)` between Bernoulli distributions.
pub fn kl(t: f64, p: f64) -> f64 {
    let a = if t > 0.0 { t * (t / p).ln() } else { 0.0 };
    let b = if t < 1.0 { (1.0 - t) * ((1.0 - t) / (1.0 - p)).ln() } else { 0.0 };
    (a + b).max(0.0)
}

pub fn rate_function_g(t: f64, spec: &ConstraintSpec) -> f64 {
    let tails = spec.gt.iter().filter(|&&p| p < t).chain(spec.lt.iter().filter(|&&p| p > t));
    spec.eq.iter().chain(tails).map(|&p| kl(t, p)).sum()
}

fn dkl(t: f64, p: f64) -> f64 {
    (t * (1.0 - p) / (p * (1.0 - t))).ln()
}

/// `(G'(q-), G'(q+))`, summing over the active sets just left and right of `q`.
pub fn one_sided_derivatives(q: f64, spec: &ConstraintSpec) -> (f64, f64) {
    let eq: f64 = spec.eq.iter().map(|&p| dkl(q, p)).sum();
    let left = eq
        + spec.gt.iter().filter(|&&p| p < q).map(|&p| dkl(q, p)).sum::<f64>()
        + spec.lt.iter().filter(|&&p| p >= q).map(|&p| dkl(q, p)).sum::<f64>();
    let right = eq
        + spec.gt.iter().filter(|&&p| p <= q).map(|&p| dkl(q, p)).sum::<f64>()
        + spec.lt.iter().filter(|&&p| p > q).map(|&p| dkl(q, p)).sum::<f64>();
    (left, right)
}

/// Exact minimizer of `G` over `(0, 1)`.
///
/// Between consecutive tail probabilities the active set is fixed and `G` is
/// strictly convex, with stationary point `alpha / (alpha + beta)` built from
/// geometric means of the active `p` and `1 - p`. The remaining candidates
/// are tail probabilities passing the one-sided derivative test.
pub fn compute_t_tilde(spec: &ConstraintSpec) -> RateFunctionResult {
    let mut points: Vec<f64> = spec.gt.iter().chain(&spec.lt).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut candidates: Vec<(f64, bool)> = Vec::with_capacity(2 * points.len() + 1);
    let bounds: Vec<f64> = std::iter::once(0.0).chain(points.iter().copied()).chain(std::iter::once(1.0)).collect();
    for w in bounds.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let active: Vec<f64> = spec
            .eq
            .iter()
            .copied()
            .chain(spec.gt.iter().copied().filter(|&p| p <= lo))
            .chain(spec.lt.iter().copied().filter(|&p| p >= hi))
            .collect();
        let s = active.len() as f64;
        let ln_alpha = active.iter().map(|p| p.ln()).sum::<f64>() / s;
        let ln_beta = active.iter().map(|p| (-p).ln_1p()).sum::<f64>() / s;
        // alpha / (alpha + beta) = 1 / (1 + e^(ln beta - ln alpha))
        let t = 1.0 / (1.0 + (ln_beta - ln_alpha).exp());
        let lo_ok = lo == 0.0 || t > lo + EDGE_TOL;
        let hi_ok = hi == 1.0 || t < hi - EDGE_TOL;
        if t > lo && t < hi && lo_ok && hi_ok {
            candidates.push((t, false));
        }
    }
    for &q in &points {
        let (left, right) = one_sided_derivatives(q, spec);
        if left <= DERIVATIVE_TOL && right >= -DERIVATIVE_TOL {
            candidates.push((q, true));
        }
    }

    let mut best: Option<(f64, f64, bool)> = None;
    for (t, singular) in candidates {
        let g = rate_function_g(t, spec);
        let better = match best {
            None => true,
            Some((bt, bg, _)) => {
                let tol = 1e-15 * bg.abs().max(1.0);
                g < bg - tol || ((g - bg).abs() <= tol && t < bt)
            }
        };
        if better {
            best = Some((t, g, singular));
        }
    }
    let (t_tilde, g_value, singular) = best.expect("a strictly convex piece always has an interior or boundary minimum");
    RateFunctionResult { t_tilde, g_value, active_set_size: spec.active_at(t_tilde).len(), singular }
}

/// `Q(p1, p2) = sqrt(p1 p2) + sqrt((1 - p1)(1 - p2))`.
pub fn bhattacharyya(p1: f64, p2: f64) -> f64 {
    (p1 * p2).sqrt() + ((1.0 - p1) * (1.0 - p2)).sqrt()
}

/// Two-alternative, binary-quality comparison: the posterior-weighted pivotal
/// rates for helping and hurting the agent coincide iff `lhs == rhs`.
pub fn binary_bne_lhs_rhs(info: &InformationStructure) -> Result<(f64, f64)> {
    if info.m() != 2 || info.lmax() != 1 {
        return Err(Error::param("the binary comparison needs two alternatives with binary quality"));
    }
    let (a0, a1) = (info.get(0, 0), info.get(0, 1));
    let (b0, b1) = (info.get(1, 0), info.get(1, 1));
    Ok((bhattacharyya(a1, b0), bhattacharyya(a0, b1)))
}

pub fn ln_tie_probability_saddlepoint(n: u64, p1: f64, p2: f64) -> f64 {
    let nf = n as f64;
    let quartic = (p1 * p2 * (1.0 - p1) * (1.0 - p2)).ln() / 4.0;
    (2.0 * nf + 1.0) * bhattacharyya(p1, p2).ln()
        - std::f64::consts::LN_2
        - 0.5 * (std::f64::consts::PI * nf).ln()
        - quartic
}

/// Saddlepoint approximation of `Pr[X1 = X2]` for `Bin(n, p1)`, `Bin(n, p2)`.
pub fn tie_probability_saddlepoint(n: u64, p1: f64, p2: f64) -> f64 {
    ln_tie_probability_saddlepoint(n, p1, p2).exp()
}

/// Classification of the non-pivot alternatives relative to the pivot
/// (alternative 0) by approval count among the other agents.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PivotalPartition {
    pub eq: Vec<usize>,
    pub gt: Vec<usize>,
    pub lt: Vec<usize>,
}

impl PivotalPartition {
    /// One extra approval for the pivot changes the AV outcome.
    pub fn is_pivotal(&self, budget: usize) -> bool {
        self.gt.len() < budget && self.gt.len() + self.eq.len() >= budget
    }

    /// The alternative the pivot displaces: with the pivot last in priority,
    /// tied alternatives win in index order and the pivot takes the place of
    /// the last tied winner.
    pub fn displaced(&self, budget: usize) -> usize {
        let mut eq = self.eq.clone();
        eq.sort_unstable();
        eq[budget - self.gt.len() - 1]
    }

    pub fn size(&self) -> usize {
        1 + self.eq.len() + self.gt.len() + self.lt.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotSide {
    /// The extra approval swaps in a better alternative.
    Plus,
    Minus,
}

impl PivotSide {
    pub fn as_str(self) -> &'static str {
        match self {
            PivotSide::Plus => "plus",
            PivotSide::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotalPair {
    pub partition: PivotalPartition,
    pub quality: QualityVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotalPairs {
    pub m: usize,
    pub budget: usize,
    pub lmax: usize,
    pub partitions: usize,
    pub plus: Vec<PivotalPair>,
    pub minus: Vec<PivotalPair>,
}

impl PivotalPairs {
    /// Literature count for this setting, when one exists.
    pub fn reference_count(&self) -> Option<usize> {
        REFERENCE_COUNTS
            .iter()
            .find(|(key, _)| *key == (self.m, self.budget, self.lmax))
            .map(|&(_, c)| c)
    }
}

fn check_pivotal_args(m: usize, budget: usize, lmax: usize) -> Result<()> {
    if budget < 1 || budget >= m {
        return Err(Error::param(format!("budget {budget} must lie in 1..{m}")));
    }
    if lmax < 1 {
        return Err(Error::param("lmax must be at least 1"));
    }
    let work = 3usize
        .checked_pow((m - 1) as u32)
        .and_then(|a| (lmax + 1).checked_pow(m as u32).and_then(|b| a.checked_mul(b)));
    match work {
        Some(w) if w <= PIVOTAL_ENUMERATION_LIMIT => Ok(()),
        _ => Err(Error::InstanceTooLarge {
            what: "pivotal enumeration",
            size: work.unwrap_or(usize::MAX),
            limit: PIVOTAL_ENUMERATION_LIMIT,
        }),
    }
}

/// All labelings of alternatives `1..m` into (eq, gt, lt) that are pivotal.
pub fn enumerate_pivotal_partitions(m: usize, budget: usize) -> Result<Vec<PivotalPartition>> {
    check_pivotal_args(m, budget, 1)?;
    let k = m - 1;
    let mut out = Vec::new();
    for code in 0..3usize.pow(k as u32) {
        let mut part = PivotalPartition { eq: Vec::new(), gt: Vec::new(), lt: Vec::new() };
        let mut c = code;
        for j in 1..m {
            match c % 3 {
                0 => part.eq.push(j),
                1 => part.gt.push(j),
                _ => part.lt.push(j),
            }
            c /= 3;
        }
        if part.is_pivotal(budget) {
            out.push(part);
        }
    }
    Ok(out)
}

/// Every quality vector over `0..=lmax`, first alternative varying slowest.
pub fn all_quality_vectors(m: usize, lmax: usize) -> Vec<QualityVector> {
    let levels = lmax + 1;
    let total = levels.pow(m as u32);
    (0..total)
        .map(|mut code| {
            let mut v = vec![0usize; m];
            for slot in v.iter_mut().rev() {
                *slot = code % levels;
                code /= levels;
            }
            QualityVector(v)
        })
        .collect()
}

/// Pivotal (partition, quality) pairs split by whether the displaced
/// alternative is worse (plus) or better (minus) than the pivot.
pub fn enumerate_pivotal_pairs(m: usize, budget: usize, lmax: usize) -> Result<PivotalPairs> {
    check_pivotal_args(m, budget, lmax)?;
    let partitions = enumerate_pivotal_partitions(m, budget)?;
    let qualities = all_quality_vectors(m, lmax);
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for part in &partitions {
        let j = part.displaced(budget);
        for quality in &qualities {
            let pair = || PivotalPair { partition: part.clone(), quality: quality.clone() };
            match quality.0[0].cmp(&quality.0[j]) {
                std::cmp::Ordering::Greater => plus.push(pair()),
                std::cmp::Ordering::Less => minus.push(pair()),
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    Ok(PivotalPairs { m, budget, lmax, partitions: partitions.len(), plus, minus })
}

/// The pivot and its tied alternatives become equalities, the rest tails.
pub fn partition_to_spec(
    part: &PivotalPartition,
    quality: &QualityVector,
    info: &InformationStructure,
) -> Result<ConstraintSpec> {
    if part.size() != info.m() || quality.len() != info.m() {
        return Err(Error::param("partition, quality vector and information structure disagree on m"));
    }
    let prob = |j: usize| info.get(j, quality.0[j]);
    let eq = std::iter::once(0).chain(part.eq.iter().copied()).map(prob).collect();
    ConstraintSpec::new(eq, part.gt.iter().map(|&j| prob(j)).collect(), part.lt.iter().map(|&j| prob(j)).collect())
}

/// Smallest rate over a set of pivotal pairs.
pub fn g_min_over(pairs: &[PivotalPair], info: &InformationStructure) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPivotalSet);
    }
    let mut best = f64::INFINITY;
    for pair in pairs {
        let spec = partition_to_spec(&pair.partition, &pair.quality, info)?;
        best = best.min(compute_t_tilde(&spec).g_value);
    }
    Ok(best)
}

/// Pivotal-pair CSV with the rate of every pair under `info`.
pub fn pivotal_csv(pairs: &PivotalPairs, info: &InformationStructure) -> Result<String> {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    let mut out = String::from("partition_gt,partition_eq,partition_lt,quality_vector,side,g_value\n");
    for (side, list) in [(PivotSide::Plus, &pairs.plus), (PivotSide::Minus, &pairs.minus)] {
        for pair in list {
            let spec = partition_to_spec(&pair.partition, &pair.quality, info)?;
            let g = compute_t_tilde(&spec).g_value;
            let p = &pair.partition;
            writeln!(
                out,
                "{},{},{},{},{},{:.12}",
                join(&p.gt),
                join(&p.eq),
                join(&p.lt),
                join(&pair.quality.0),
                side.as_str(),
                g
            )
            .expect("writing to a String");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RarityConfig {
    pub m: usize,
    pub budget: usize,
    pub lmax: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Restrict samples to quality-dominant structures.
    pub dominance_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaritySample {
    pub g_plus: f64,
    pub g_minus: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RarityReport {
    pub hold_count: usize,
    pub total: usize,
    pub samples: Vec<RaritySample>,
}

/// A random information structure: u.a.r. on the open cube, or u.a.r. among
/// quality-dominant structures (sorted uniforms dealt level by level).
pub fn sample_information_structure<R: Rng + ?Sized>(
    m: usize,
    lmax: usize,
    dominance_only: bool,
    rng: &mut R,
) -> InformationStructure {
    let clamp = |x: f64| x.clamp(RARITY_CLAMP, 1.0 - RARITY_CLAMP);
    let levels = lmax + 1;
    let mut q = vec![vec![0.0; levels]; m];
    if dominance_only {
        let mut draws: Vec<f64> = (0..m * levels).map(|_| rng.gen::<f64>()).collect();
        draws.sort_by(f64::total_cmp);
        for level in 0..levels {
            let mut block = draws[level * m..(level + 1) * m].to_vec();
            // random assignment of the level's values to alternatives
            for i in (1..m).rev() {
                block.swap(i, rng.gen_range(0..=i));
            }
            for (j, v) in block.into_iter().enumerate() {
                q[j][level] = clamp(v);
            }
        }
    } else {
        for row in q.iter_mut() {
            for v in row.iter_mut() {
                *v = clamp(rng.gen());
            }
        }
    }
    InformationStructure::new(q).expect("clamped entries are interior")
}

/// Counts sampled structures whose helpful and harmful minimum rates agree
/// within `tolerance`.
pub fn rarity_simulation(cfg: &RarityConfig, exec: Execution) -> Result<RarityReport> {
    let pairs = enumerate_pivotal_pairs(cfg.m, cfg.budget, cfg.lmax)?;
    let results = par::map_range(exec, cfg.samples, |s| -> Result<RaritySample> {
        let mut rng = rng::stream(cfg.seed, &[s as u64]);
        let info = sample_information_structure(cfg.m, cfg.lmax, cfg.dominance_only, &mut rng);
        let g_plus = g_min_over(&pairs.plus, &info)?;
        let g_minus = g_min_over(&pairs.minus, &info)?;
        Ok(RaritySample { g_plus, g_minus, holds: (g_plus - g_minus).abs() < cfg.tolerance })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RarityReport { hold_count: samples.iter().filter(|s| s.holds).count(), total: samples.len(), samples })
}

/// Log of the explicit non-singular pivotal-probability asymptotic:
/// `e^{-nG} / ((2 pi n t(1-t))^{(s-1)/2} sqrt(s))` times a geometric-series
/// factor for every active tail.
pub fn ln_refined_pivotal_estimate(n: u64, spec: &ConstraintSpec) -> Result<f64> {
    let r = compute_t_tilde(spec);
    if r.singular {
        return Err(Error::SingularCase);
    }
    let t = r.t_tilde;
    let nf = n as f64;
    let s = r.active_set_size as f64;
    let mut ln_p = -nf * r.g_value
        - 0.5 * (s - 1.0) * (2.0 * std::f64::consts::PI * nf * t * (1.0 - t)).ln()
        - 0.5 * s.ln();
    let geometric = |rate: f64| -rate - (-(-rate).exp_m1()).ln();
    for &p in spec.gt.iter().filter(|&&p| p < t) {
        ln_p += geometric(dkl(t, p));
    }
    for &p in spec.lt.iter().filter(|&&p| p > t) {
        ln_p += geometric(-dkl(t, p));
    }
    let on_boundary = spec.gt.iter().chain(&spec.lt).filter(|&&p| p == t).count();
    ln_p -= on_boundary as f64 * std::f64::consts::LN_2;
    Ok(ln_p)
}

pub fn refined_pivotal_estimate(n: u64, spec: &ConstraintSpec) -> Result<f64> {
    Ok(ln_refined_pivotal_estimate(n, spec)?.exp())
}
