//! Estimated versus exact Shapley values on random small instances.
//!
//! Each instance draws a pre-round model, a handful of clients with their
//! own data, trains each client one local epoch and aggregates. The
//! normalized estimate is compared with exact enumeration by Kendall's tau;
//! the unnormalized estimate is checked against the pairwise first-order
//! value computed directly from the aggregate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LabeledDataset, ModelSpec, ParamVector, TrainingParams};
use crate::profiler::{
    aggregate, estimate_shapley, exact_shapley, pairwise_first_order_value, ClientUpdate, ShapleyInput,
    ShapleyVariant, MAX_EXACT_CLIENTS,
};
use crate::seeds;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapleyCheckConfig {
    pub instances: usize,
    pub min_clients: usize,
    pub max_clients: usize,
    pub seed: u64,
    pub kendall_threshold: f64,
    pub identity_tolerance: f64,
    /// Perturbation scales for the first-order check, largest first.
    pub perturbation_scales: Vec<f64>,
    pub first_order_instances: usize,
    /// Accepted range for the gap ratio between the first and last scale.
    pub gap_ratio_range: [f64; 2],
}

impl Default for ShapleyCheckConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            min_clients: 2,
            max_clients: 6,
            seed: 0,
            kendall_threshold: 0.8,
            identity_tolerance: 1e-9,
            perturbation_scales: vec![1e-2, 1e-3],
            first_order_instances: 50,
            gap_ratio_range: [3.0, 30.0],
        }
    }
}

impl ShapleyCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_clients > MAX_EXACT_CLIENTS {
            return Err(Error::TooManyClients {
                clients: self.max_clients,
                limit: MAX_EXACT_CLIENTS,
            });
        }
        if self.min_clients == 0 || self.min_clients > self.max_clients {
            return Err(Error::invalid("shapley.min_clients", "must lie in 1..=max_clients"));
        }
        if self.instances == 0 {
            return Err(Error::invalid("shapley.instances", "must be positive"));
        }
        if self.perturbation_scales.len() < 2 || self.perturbation_scales.iter().any(|&h| h.is_nan() || h <= 0.0) {
            return Err(Error::invalid("shapley.perturbation_scales", "need at least two positive scales"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceModel {
    ScalarMean,
    Softmax,
}

/// One randomly drawn round.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: ModelSpec,
    pub pre_round: ParamVector,
    pub updates: Vec<ClientUpdate>,
    pub eval: LabeledDataset,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn softmax_data(centers: &[Vec<f64>], weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
    let dim = centers[0].len();
    let total: f64 = weights.iter().sum();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut class = weights.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            if u < w {
                class = c;
                break;
            }
            u -= w;
        }
        labels.push(class);
        features.extend(centers[class].iter().map(|m| m + normal(rng)));
    }
    LabeledDataset::classification(dim, features, labels)
}

/// Draws a trained instance with `m` clients.
pub fn random_instance(kind: InstanceModel, m: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let training = TrainingParams {
        epochs: 1,
        learning_rate: 0.1,
        batch_size: 8,
    };
    let (spec, pre_round, datasets, eval) = match kind {
        InstanceModel::ScalarMean => {
            let spec = ModelSpec::scalar_mean();
            let pre = ParamVector::new(vec![normal(rng)]);
            let datasets: Vec<LabeledDataset> = (0..m)
                .map(|_| {
                    let mu = 1.5 * normal(rng);
                    let n = rng.random_range(10..=40);
                    LabeledDataset::scalar((0..n).map(|_| mu + normal(rng)).collect())
                })
                .collect();
            let mu_e = normal(rng);
            let eval = LabeledDataset::scalar((0..50).map(|_| mu_e + normal(rng)).collect());
            (spec, pre, datasets, eval)
        }
        InstanceModel::Softmax => {
            let (dim, classes) = (3, 3);
            let spec = ModelSpec::softmax(dim, classes);
            let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| 2.0 * normal(rng)).collect()).collect();
            let pre = ParamVector::new((0..spec.param_dim()).map(|_| 0.1 * normal(rng)).collect());
            let datasets = (0..m)
                .map(|_| {
                    let w: Vec<f64> = (0..classes).map(|_| rng.random::<f64>().powi(2) + 0.05).collect();
                    let n = rng.random_range(20..=60);
                    softmax_data(&centers, &w, n, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let eval = softmax_data(&centers, &vec![1.0; classes], 100, rng)?;
            (spec, pre, datasets, eval)
        }
    };
    let total: f64 = datasets.iter().map(|d| d.len() as f64).sum();
    let updates = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let params = model::train_local(&spec, &pre_round, d, &training, rng.random())?;
            Ok(ClientUpdate {
                client_id: i,
                params,
                weight: d.len() as f64 / total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Instance {
        spec,
        pre_round,
        updates,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub model: InstanceModel,
    pub clients: usize,
    pub estimate: Vec<f64>,
    pub exact: Vec<f64>,
    /// NaN when the exact values are all tied.
    pub kendall_tau: f64,
    pub concordant_minus_discordant: i64,
    pub pairs: usize,
    pub identity_max_error: f64,
    pub mean_abs_gap: f64,
}

fn input<'a>(inst: &'a Instance) -> ShapleyInput<'a> {
    ShapleyInput {
        round: 0,
        tier: 0,
        eval_set_id: 0,
        spec: &inst.spec,
        eval: &inst.eval,
    }
}

pub fn evaluate_instance(index: usize, model_kind: InstanceModel, inst: &Instance) -> Result<InstanceResult> {
    let normalized = aggregate(&inst.updates, ShapleyVariant::Normalized)?;
    let estimate = estimate_shapley(&normalized, &inst.updates, &input(inst), ShapleyVariant::Normalized)?.values();
    let exact = exact_shapley(&inst.pre_round, &inst.updates, &inst.eval, &inst.spec, ShapleyVariant::Normalized)?;

    let unnormalized = aggregate(&inst.updates, ShapleyVariant::Unnormalized)?;
    let psi = estimate_shapley(&unnormalized, &inst.updates, &input(inst), ShapleyVariant::Unnormalized)?.values();
    let m = inst.updates.len();
    let mut identity_max_error: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let pair = pairwise_first_order_value(&unnormalized, &inst.updates, i, j, &inst.eval, &inst.spec)?;
            identity_max_error = identity_max_error.max((psi[i] + psi[j] - pair).abs());
        }
    }

    let mut cd = 0i64;
    for i in 0..m {
        for j in (i + 1)..m {
            let a = estimate[i].total_cmp(&estimate[j]) as i64;
            let b = exact[i].total_cmp(&exact[j]) as i64;
            cd += a * b;
        }
    }
    let gaps: Vec<f64> = estimate.iter().zip(&exact).map(|(e, x)| (e - x).abs()).collect();
    Ok(InstanceResult {
        index,
        model: model_kind,
        clients: m,
        kendall_tau: stats::kendall_tau_b(&estimate, &exact),
        concordant_minus_discordant: cd,
        pairs: m * (m - 1) / 2,
        estimate,
        exact,
        identity_max_error,
        mean_abs_gap: stats::mean(&gaps),
    })
}

/// Rescales an instance's updates to `W_i = W_base + h d_i` around a base
/// model, with the pre-round model at `W_base + h d_0`.
pub fn perturbed_instance(kind: InstanceModel, m: usize, h: f64, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let base = random_instance(kind, m, rng)?;
    let dim = base.pre_round.dim();
    let direction = |rng: &mut ChaCha8Rng| ParamVector::new((0..dim).map(|_| normal(rng)).collect());
    let anchor = base.pre_round.clone();
    let mut pre_round = anchor.clone();
    pre_round.axpy(h, &direction(rng));
    let updates = base
        .updates
        .into_iter()
        .map(|u| {
            let mut params = anchor.clone();
            params.axpy(h, &direction(rng));
            ClientUpdate { params, ..u }
        })
        .collect();
    Ok(Instance {
        pre_round,
        updates,
        ..base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderResult {
    pub scales: Vec<f64>,
    pub mean_abs_gap: Vec<f64>,
    /// `gap[k] / gap[k+1]` for consecutive scales.
    pub ratios: Vec<f64>,
    /// Gap at the largest scale over the gap at the smallest.
    pub overall_ratio: f64,
    pub pass: bool,
}

/// Mean |estimate - exact| at each perturbation scale. The same random
/// directions are reused across scales so only `h` changes.
pub fn first_order_check(config: &ShapleyCheckConfig) -> Result<FirstOrderResult> {
    let mut mean_abs_gap = Vec::new();
    for &h in &config.perturbation_scales {
        let gaps: Vec<f64> = (0..config.first_order_instances)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds::stream_rng(config.seed, seeds::SHAPLEY_CHECK, &[1, i as u64]);
                let kind = if i % 2 == 0 { InstanceModel::ScalarMean } else { InstanceModel::Softmax };
                let m = config.min_clients + i % (config.max_clients - config.min_clients + 1);
                let inst = perturbed_instance(kind, m, h, &mut rng)?;
                Ok(evaluate_instance(i, kind, &inst)?.mean_abs_gap)
            })
            .collect::<Result<_>>()?;
        mean_abs_gap.push(stats::mean(&gaps));
    }
    let ratios: Vec<f64> = mean_abs_gap.windows(2).map(|w| w[0] / w[1]).collect();
    let overall_ratio = mean_abs_gap[0] / mean_abs_gap[mean_abs_gap.len() - 1];
    let [lo, hi] = config.gap_ratio_range;
    Ok(FirstOrderResult {
        scales: config.perturbation_scales.clone(),
        pass: (lo..=hi).contains(&overall_ratio),
        mean_abs_gap,
        ratios,
        overall_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyCheckReport {
    pub config: ShapleyCheckConfig,
    pub instances: Vec<InstanceResult>,
    /// Pooled over all within-instance pairs.
    pub aggregate_kendall_tau: f64,
    pub mean_instance_kendall_tau: f64,
    pub identity_max_error: f64,
    pub first_order: FirstOrderResult,
    pub kendall_pass: bool,
    pub identity_pass: bool,
    pub pass: bool,
}

pub fn run_shapley_check(config: &ShapleyCheckConfig) -> Result<ShapleyCheckReport> {
    config.validate()?;
    let span = config.max_clients - config.min_clients + 1;
    let instances: Vec<InstanceResult> = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::stream_rng(config.seed, seeds::SHAPLEY_CHECK, &[0, i as u64]);
            let kind = if i % 2 == 0 { InstanceModel::ScalarMean } else { InstanceModel::Softmax };
            let m = config.min_clients + (i / 2) % span;
            evaluate_instance(i, kind, &random_instance(kind, m, &mut rng)?)
        })
        .collect::<Result<_>>()?;
    let (cd, pairs) = instances
        .iter()
        .fold((0i64, 0usize), |(a, b), r| (a + r.concordant_minus_discordant, b + r.pairs));
    let aggregate_kendall_tau = if pairs == 0 { f64::NAN } else { cd as f64 / pairs as f64 };
    let taus: Vec<f64> = instances.iter().map(|r| r.kendall_tau).filter(|t| t.is_finite()).collect();
    let identity_max_error = instances.iter().map(|r| r.identity_max_error).fold(0.0, f64::max);
    let first_order = first_order_check(config)?;
    let kendall_pass = aggregate_kendall_tau >= config.kendall_threshold;
    let identity_pass = identity_max_error <= config.identity_tolerance;
    Ok(ShapleyCheckReport {
        config: config.clone(),
        pass: kendall_pass && identity_pass && first_order.pass,
        aggregate_kendall_tau,
        mean_instance_kendall_tau: stats::mean(&taus),
        identity_max_error,
        first_order,
        kendall_pass,
        identity_pass,
        instances,
    })
}
