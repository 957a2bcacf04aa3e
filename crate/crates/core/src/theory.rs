//! Two-tier mean estimation: closed-form errors of local, federated and
//! tier-restricted estimators, checked by Monte Carlo.
//!
//! Clients `0..m1` form tier 1 and `m1..m1+m2` tier 2. Conditional on the
//! target client's mean `μ_i`, another client's mean is `μ_i + N(0, 2τ²)`,
//! shifted by `β2 - β1` across tiers. Each client observes `n_j` draws of
//! `N(μ_j, σ²)` and reports the sample mean.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::stats::Moments;

/// Below this many replications a Monte-Carlo result is flagged.
pub const MIN_REPLICATIONS: usize = 1000;
const BLOCK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryScenario {
    pub m1: usize,
    pub m2: usize,
    /// Common sample size, used for any client without an entry in
    /// `sample_sizes`.
    pub n0: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_sizes: Vec<usize>,
    pub sigma2: f64,
    pub tau2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub replications: usize,
    pub seed: u64,
}

impl TheoryScenario {
    pub fn equal(m1: usize, m2: usize, n0: usize, sigma2: f64, tau2: f64, beta_gap: f64) -> Self {
        Self {
            m1,
            m2,
            n0,
            sample_sizes: Vec::new(),
            sigma2,
            tau2,
            beta1: 0.0,
            beta2: beta_gap,
            replications: 100_000,
            seed: 0,
        }
    }

    pub fn clients(&self) -> usize {
        self.m1 + self.m2
    }

    pub fn n(&self, j: usize) -> usize {
        self.sample_sizes.get(j).copied().unwrap_or(self.n0)
    }

    fn total(&self, range: std::ops::Range<usize>) -> f64 {
        range.map(|j| self.n(j) as f64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 == 0 {
            return Err(Error::invalid("theory.m1", "tier 1 needs at least one client"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("theory.replications", "must be at least 1"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid("theory.sigma2", "must be positive"));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(Error::invalid("theory.tau2", "must be nonnegative"));
        }
        if (0..self.clients()).any(|j| self.n(j) == 0) {
            return Err(Error::invalid("theory.n0", "every client needs at least one sample"));
        }
        Ok(())
    }

    fn equal_sizes(&self) -> bool {
        (0..self.clients()).all(|j| self.n(j) == self.n0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorErrors {
    pub local: f64,
    pub fl: f64,
    pub tier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub errors: EstimatorErrors,
    /// Squared bias of the federated estimator.
    pub fl_bias_sq: f64,
}

pub fn closed_form_errors(s: &TheoryScenario, i: usize) -> Result<ClosedForm> {
    s.validate()?;
    if i >= s.m1 {
        return Err(Error::invalid("client index", format!("{i} is not in tier 1 (size {})", s.m1)));
    }
    let sigma2 = s.sigma2;
    let n = s.total(0..s.clients());
    let n_t1 = s.total(0..s.m1);
    let ni = s.n(i) as f64;

    let bias: f64 = (s.m1..s.clients()).map(|j| s.n(j) as f64 / n * (s.beta2 - s.beta1)).sum();
    let spread = |j: usize, total: f64| {
        let nj = s.n(j) as f64;
        (nj / total).powi(2) * (sigma2 / nj + 2.0 * s.tau2)
    };
    let fl_var: f64 =
        (0..s.clients()).filter(|&j| j != i).map(|j| spread(j, n)).sum::<f64>() + (ni / n).powi(2) * sigma2 / ni;
    let tier: f64 =
        (0..s.m1).filter(|&j| j != i).map(|j| spread(j, n_t1)).sum::<f64>() + (ni / n_t1).powi(2) * sigma2 / ni;
    Ok(ClosedForm {
        errors: EstimatorErrors {
            local: sigma2 / ni,
            fl: bias * bias + fl_var,
            tier,
        },
        fl_bias_sq: bias * bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainThreshold {
    pub tau2_critical: f64,
    /// With one tier member the tier estimator is the local one.
    pub vacuous: bool,
}

/// `τ²_c = m1 σ² / (2 n0)`: tier training beats local training iff
/// `τ² < τ²_c`. Only defined for equal sample sizes.
pub fn gain_threshold(s: &TheoryScenario) -> Result<GainThreshold> {
    s.validate()?;
    if !s.equal_sizes() {
        return Err(Error::Unsupported(
            "the gain threshold assumes equal sample sizes across clients".into(),
        ));
    }
    Ok(GainThreshold {
        tau2_critical: s.m1 as f64 * s.sigma2 / (2.0 * s.n0 as f64),
        vacuous: s.m1 == 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean: EstimatorErrors,
    /// NaN with a single replication.
    pub se: EstimatorErrors,
    /// Mean and SE of the per-replication `tier - local` difference.
    pub tier_minus_local: f64,
    pub tier_minus_local_se: f64,
    pub replications: usize,
    pub underpowered: bool,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    local: Moments,
    fl: Moments,
    tier: Moments,
    diff: Moments,
}

impl Acc {
    fn merge(&mut self, o: &Acc) {
        self.local.merge(&o.local);
        self.fl.merge(&o.fl);
        self.tier.merge(&o.tier);
        self.diff.merge(&o.diff);
    }
}

fn simulate_block(s: &TheoryScenario, i: usize, block: usize, reps: usize) -> Acc {
    let mut rng = seeds::stream_rng(s.seed, seeds::THEORY, &[block as u64]);
    let sigma = s.sigma2.sqrt();
    let spread = (2.0 * s.tau2).sqrt();
    let m = s.clients();
    let n = s.total(0..m);
    let n_t1 = s.total(0..s.m1);
    let mut acc = Acc::default();
    for _ in 0..reps {
        let mu_i = s.beta1 + s.tau2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let mut fl = 0.0;
        let mut tier = 0.0;
        let mut local = 0.0;
        for j in 0..m {
            let mu_j = if j == i {
                mu_i
            } else {
                let shift = if j >= s.m1 { s.beta2 - s.beta1 } else { 0.0 };
                mu_i + shift + spread * rng.sample::<f64, _>(StandardNormal)
            };
            let nj = s.n(j);
            let mut sum = 0.0;
            for _ in 0..nj {
                sum += mu_j + sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let est = sum / nj as f64;
            fl += nj as f64 / n * est;
            if j < s.m1 {
                tier += nj as f64 / n_t1 * est;
            }
            if j == i {
                local = est;
            }
        }
        let (el, ef, et) = ((local - mu_i).powi(2), (fl - mu_i).powi(2), (tier - mu_i).powi(2));
        acc.local.push(el);
        acc.fl.push(ef);
        acc.tier.push(et);
        acc.diff.push(et - el);
    }
    acc
}

/// Replications run in blocks of 1000 with per-block seeds, in parallel,
/// and are reduced in block order so results do not depend on threads.
pub fn monte_carlo_errors(s: &TheoryScenario, i: usize) -> Result<MonteCarlo> {
    s.validate()?;
    if i >= s.m1 {
        return Err(Error::invalid("client index", format!("{i} is not in tier 1 (size {})", s.m1)));
    }
    let blocks = s.replications.div_ceil(BLOCK);
    let parts: Vec<Acc> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let reps = BLOCK.min(s.replications - b * BLOCK);
            simulate_block(s, i, b, reps)
        })
        .collect();
    let mut acc = Acc::default();
    for p in &parts {
        acc.merge(p);
    }
    Ok(MonteCarlo {
        mean: EstimatorErrors {
            local: acc.local.mean,
            fl: acc.fl.mean,
            tier: acc.tier.mean,
        },
        se: EstimatorErrors {
            local: acc.local.standard_error(),
            fl: acc.fl.standard_error(),
            tier: acc.tier.standard_error(),
        },
        tier_minus_local: acc.diff.mean,
        tier_minus_local_se: acc.diff.standard_error(),
        replications: s.replications,
        underpowered: s.replications < MIN_REPLICATIONS,
    })
}

/// Acceptance grid and crossover scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryCheckConfig {
    pub tier_sizes: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub sigma2: f64,
    pub tau2_values: Vec<f64>,
    pub beta_gaps: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    /// SE multiple allowed between empirical and closed-form errors.
    pub tolerance_se: f64,
    pub crossover: CrossoverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossoverConfig {
    pub m1: usize,
    pub n0: usize,
    pub sigma2: f64,
    pub beta_gap: f64,
    /// Scan range as `[lo, hi]` multiples of the critical value.
    pub range: [f64; 2],
    pub points: usize,
}

impl Default for CrossoverConfig {
    fn default() -> Self {
        Self {
            m1: 10,
            n0: 5,
            sigma2: 1.0,
            beta_gap: 5.0,
            range: [0.0, 2.0],
            points: 10,
        }
    }
}

impl Default for TheoryCheckConfig {
    fn default() -> Self {
        Self {
            tier_sizes: vec![5, 10],
            sample_sizes: vec![5, 20],
            sigma2: 1.0,
            tau2_values: vec![0.0, 0.1, 0.5, 1.5],
            beta_gaps: vec![0.0, 5.0],
            replications: 100_000,
            seed: 0,
            tolerance_se: 3.0,
            crossover: CrossoverConfig::default(),
        }
    }
}

impl TheoryCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tier_sizes.is_empty() || self.sample_sizes.is_empty() || self.tau2_values.is_empty() {
            return Err(Error::invalid("theory grid", "tier_sizes, sample_sizes and tau2_values must be nonempty"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("theory.replications", "must be at least 1"));
        }
        if self.crossover.points < 2 {
            return Err(Error::invalid("theory.crossover.points", "need at least two grid points"));
        }
        if self.crossover.range[0].partial_cmp(&self.crossover.range[1]) != Some(std::cmp::Ordering::Less) {
            return Err(Error::invalid("theory.crossover.range", "lower end must be below upper end"));
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Vec<TheoryScenario> {
        let mut out = Vec::new();
        let mut idx = 0u64;
        for &m in &self.tier_sizes {
            for &n0 in &self.sample_sizes {
                for &tau2 in &self.tau2_values {
                    let gaps = if self.beta_gaps.is_empty() { vec![0.0] } else { self.beta_gaps.clone() };
                    for gap in gaps {
                        let mut s = TheoryScenario::equal(m, m, n0, self.sigma2, tau2, gap);
                        s.replications = self.replications;
                        s.seed = seeds::derive(self.seed, seeds::THEORY, &[idx]);
                        idx += 1;
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: TheoryScenario,
    pub closed_form: ClosedForm,
    pub empirical: MonteCarlo,
    /// `|ê - e| / SE` per estimator.
    pub z: EstimatorErrors,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverResult {
    pub tau2_critical: f64,
    pub grid: Vec<f64>,
    pub closed_diff: Vec<f64>,
    pub mc_diff: Vec<f64>,
    pub mc_se: Vec<f64>,
    /// Index `c` such that the critical value lies in `(grid[c-1], grid[c]]`.
    pub critical_cell: Option<usize>,
    pub closed_flip: Option<usize>,
    pub mc_flip: Option<usize>,
    pub bracketed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: TheoryCheckConfig,
    pub scenarios: Vec<ScenarioResult>,
    pub crossover: CrossoverResult,
    pub checks: usize,
    pub failures: usize,
    pub underpowered: bool,
    pub pass: bool,
}

/// Index of the first grid point where the difference is positive, given
/// all earlier points are nonpositive and all later ones positive.
fn sign_flip(diff: &[f64]) -> Option<usize> {
    let first = diff.iter().position(|&d| d > 0.0)?;
    if diff[first..].iter().all(|&d| d > 0.0) && first > 0 {
        Some(first)
    } else {
        None
    }
}

pub fn crossover_scan(config: &TheoryCheckConfig) -> Result<CrossoverResult> {
    let c = &config.crossover;
    let base = TheoryScenario::equal(c.m1, c.m1, c.n0, c.sigma2, 0.0, c.beta_gap);
    let critical = gain_threshold(&base)?.tau2_critical;
    let (lo, hi) = (c.range[0] * critical, c.range[1] * critical);
    let grid: Vec<f64> = (0..c.points).map(|k| lo + (hi - lo) * k as f64 / (c.points - 1) as f64).collect();
    let mut closed_diff = Vec::with_capacity(grid.len());
    let mut mc_diff = Vec::with_capacity(grid.len());
    let mut mc_se = Vec::with_capacity(grid.len());
    for (k, &tau2) in grid.iter().enumerate() {
        let mut s = base.clone();
        s.tau2 = tau2;
        s.replications = config.replications;
        s.seed = seeds::derive(config.seed, seeds::THEORY, &[u64::MAX, k as u64]);
        let cf = closed_form_errors(&s, 0)?;
        closed_diff.push(cf.errors.tier - cf.errors.local);
        let mc = monte_carlo_errors(&s, 0)?;
        mc_diff.push(mc.tier_minus_local);
        mc_se.push(mc.tier_minus_local_se);
    }
    let critical_cell = (1..grid.len()).find(|&k| grid[k - 1] < critical && critical <= grid[k]);
    let closed_flip = sign_flip(&closed_diff);
    let mc_flip = sign_flip(&mc_diff);
    let bracketed = critical_cell.is_some() && closed_flip == critical_cell && mc_flip == critical_cell;
    Ok(CrossoverResult {
        tau2_critical: critical,
        grid,
        closed_diff,
        mc_diff,
        mc_se,
        critical_cell,
        closed_flip,
        mc_flip,
        bracketed,
    })
}

pub fn run_theory_check(config: &TheoryCheckConfig) -> Result<TheoryReport> {
    config.validate()?;
    let mut scenarios = Vec::new();
    let mut failures = 0;
    for s in config.scenarios() {
        let closed_form = closed_form_errors(&s, 0)?;
        let empirical = monte_carlo_errors(&s, 0)?;
        let z_of = |hat: f64, e: f64, se: f64| (hat - e).abs() / se;
        let z = EstimatorErrors {
            local: z_of(empirical.mean.local, closed_form.errors.local, empirical.se.local),
            fl: z_of(empirical.mean.fl, closed_form.errors.fl, empirical.se.fl),
            tier: z_of(empirical.mean.tier, closed_form.errors.tier, empirical.se.tier),
        };
        let ok = |v: f64| v <= config.tolerance_se;
        let fails = [z.local, z.fl, z.tier].iter().filter(|&&v| !ok(v)).count();
        failures += fails;
        scenarios.push(ScenarioResult {
            scenario: s,
            closed_form,
            empirical,
            z,
            pass: fails == 0,
        });
    }
    let crossover = crossover_scan(config)?;
    let underpowered = config.replications < MIN_REPLICATIONS;
    Ok(TheoryReport {
        config: config.clone(),
        checks: scenarios.len() * 3,
        failures,
        pass: failures == 0 && crossover.bracketed && !underpowered,
        underpowered,
        scenarios,
        crossover,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_error_example() {
        let s = TheoryScenario::equal(3, 3, 5, 1.0, 0.3, 2.0);
        assert!((closed_form_errors(&s, 0).unwrap().errors.local - 0.2).abs() < 1e-15);
    }

    #[test]
    fn tier_error_without_spread() {
        let s = TheoryScenario::equal(10, 10, 5, 1.0, 0.0, 0.0);
        assert!((closed_form_errors(&s, 0).unwrap().errors.tier - 0.02).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_fl_beats_local() {
        let s = TheoryScenario::equal(4, 6, 5, 1.0, 0.0, 0.0);
        let cf = closed_form_errors(&s, 0).unwrap();
        assert!((cf.errors.fl - 1.0 / 50.0).abs() < 1e-15);
        assert!(cf.errors.fl < cf.errors.local);
    }

    #[test]
    fn threshold_examples() {
        let s = TheoryScenario::equal(10, 10, 5, 1.0, 0.0, 0.0);
        assert_eq!(gain_threshold(&s).unwrap().tau2_critical, 1.0);
        let doubled = TheoryScenario::equal(10, 10, 10, 1.0, 0.0, 0.0);
        assert_eq!(gain_threshold(&doubled).unwrap().tau2_critical, 0.5);
        let single = gain_threshold(&TheoryScenario::equal(1, 3, 5, 1.0, 0.0, 0.0)).unwrap();
        assert!(single.vacuous);
        assert_eq!(single.tau2_critical, 0.1);
        let mut uneven = TheoryScenario::equal(2, 2, 5, 1.0, 0.0, 0.0);
        uneven.sample_sizes = vec![5, 6, 5, 5];
        assert!(gain_threshold(&uneven).is_err());
    }

    #[test]
    fn tier_minus_local_matches_threshold_identity() {
        for (m1, n0, tau2) in [(10, 5, 0.3), (5, 20, 1.5), (7, 3, 0.0)] {
            let s = TheoryScenario::equal(m1, m1, n0, 1.0, tau2, 5.0);
            let cf = closed_form_errors(&s, 0).unwrap().errors;
            let tc = gain_threshold(&s).unwrap().tau2_critical;
            let m = m1 as f64;
            let expected = (m - 1.0) / (m * m) * 2.0 * (tau2 - tc);
            assert!((cf.tier - cf.local - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn fl_error_dominates_bias() {
        let s = TheoryScenario::equal(5, 5, 20, 1.0, 0.5, 10.0);
        let cf = closed_form_errors(&s, 0).unwrap();
        assert!((cf.fl_bias_sq - 25.0).abs() < 1e-12);
        assert!(cf.errors.fl >= cf.fl_bias_sq);
    }

    #[test]
    fn rejects_tier_two_client() {
        let s = TheoryScenario::equal(2, 2, 5, 1.0, 0.0, 0.0);
        assert!(closed_form_errors(&s, 2).is_err());
    }

    #[test]
    fn single_replication_flags_se() {
        let mut s = TheoryScenario::equal(2, 2, 5, 1.0, 0.1, 1.0);
        s.replications = 1;
        let mc = monte_carlo_errors(&s, 0).unwrap();
        assert!(mc.underpowered);
        assert!(mc.se.local.is_nan());
        assert!(mc.mean.local >= 0.0);
    }

    #[test]
    fn monte_carlo_close_without_spread() {
        let mut s = TheoryScenario::equal(5, 5, 5, 1.0, 0.0, 0.0);
        s.replications = 20_000;
        let cf = closed_form_errors(&s, 0).unwrap().errors;
        let mc = monte_carlo_errors(&s, 0).unwrap();
        for (hat, e, se) in [
            (mc.mean.local, cf.local, mc.se.local),
            (mc.mean.fl, cf.fl, mc.se.fl),
            (mc.mean.tier, cf.tier, mc.se.tier),
        ] {
            assert!((hat - e).abs() <= 4.0 * se, "{hat} vs {e} (se {se})");
        }
    }

    #[test]
    fn monte_carlo_independent_of_thread_count() {
        let mut s = TheoryScenario::equal(3, 3, 4, 1.0, 0.2, 1.0);
        s.replications = 3500;
        let a = monte_carlo_errors(&s, 0).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo_errors(&s, 0).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn sign_flip_detection() {
        assert_eq!(sign_flip(&[-1.0, -0.5, 0.2, 1.0]), Some(2));
        assert_eq!(sign_flip(&[-1.0, 0.5, -0.2, 1.0]), None);
        assert_eq!(sign_flip(&[1.0, 2.0]), None);
        assert_eq!(sign_flip(&[-1.0, -2.0]), None);
    }
}
