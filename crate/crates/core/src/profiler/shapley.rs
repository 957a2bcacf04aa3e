//! Gradient-based Shapley estimates and the exact enumeration oracle.
//!
//! For an aggregate `W_M` and test-loss gradient `γ = ∇L(W_M)`, client `i`
//! with weight `λ_i` and model `W_i` receives
//!
//! * unnormalized aggregation: `ψ_i = -γᵀ(λ_i W_i)`
//! * normalized aggregation:   `ψ_i = -γᵀ(λ_i (W_i - W_M))`
//!
//! Both cost one gradient evaluation plus one dot product per client.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LabeledDataset, ModelSpec, ParamVector};

/// Enumeration guard for [`exact_shapley`].
pub const MAX_EXACT_CLIENTS: usize = 12;

/// Tolerance used when checking that `W_M` aggregates the given updates.
const AGGREGATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapleyVariant {
    Unnormalized,
    #[default]
    Normalized,
}

impl std::fmt::Display for ShapleyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapleyVariant::Unnormalized => "unnormalized",
            ShapleyVariant::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub weight: f64,
}

/// Work done by one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateCost {
    pub gradient_evaluations: usize,
    pub dot_products: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEntry {
    pub client_id: usize,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub round: usize,
    pub tier: usize,
    pub variant: ShapleyVariant,
    pub eval_set_id: u64,
    /// Ascending by client id.
    pub entries: Vec<ShapleyEntry>,
    pub cost: EstimateCost,
}

impl ShapleyReport {
    pub fn psi(&self, client_id: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.client_id == client_id).map(|e| e.psi)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.psi).collect()
    }
}

/// Aggregate of the updates under `variant`.
pub fn aggregate(updates: &[ClientUpdate], variant: ShapleyVariant) -> Result<ParamVector> {
    let pairs = updates.iter().map(|u| (&u.params, u.weight));
    match variant {
        ShapleyVariant::Unnormalized => model::weighted_sum(pairs),
        ShapleyVariant::Normalized => model::fedavg(pairs),
    }
}

pub struct ShapleyInput<'a> {
    pub round: usize,
    pub tier: usize,
    pub eval_set_id: u64,
    pub spec: &'a ModelSpec,
    pub eval: &'a LabeledDataset,
}

pub fn estimate_shapley(
    tier_model: &ParamVector,
    updates: &[ClientUpdate],
    input: &ShapleyInput<'_>,
    variant: ShapleyVariant,
) -> Result<ShapleyReport> {
    if updates.is_empty() {
        return Err(Error::Empty("shapley updates"));
    }
    for u in updates {
        if u.params.dim() != tier_model.dim() {
            return Err(Error::DimensionMismatch {
                context: "shapley update",
                expected: tier_model.dim(),
                actual: u.params.dim(),
            });
        }
    }
    let expected = aggregate(updates, variant)?;
    let deviation = expected.max_abs_diff(tier_model);
    let scale = tier_model.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if deviation > AGGREGATE_TOL * scale {
        return Err(Error::AggregateMismatch { deviation });
    }

    let gamma = model::gradient(input.spec, tier_model, input.eval)?;
    let mut cost = EstimateCost {
        gradient_evaluations: 1,
        dot_products: 0,
    };
    let mut entries: Vec<ShapleyEntry> = updates
        .iter()
        .map(|u| {
            cost.dot_products += 1;
            let psi = match variant {
                ShapleyVariant::Unnormalized => -u.weight * gamma.dot(&u.params),
                ShapleyVariant::Normalized => -u.weight * gamma.dot(&u.params.sub(tier_model)),
            };
            ShapleyEntry {
                client_id: u.client_id,
                psi,
            }
        })
        .collect();
    entries.sort_by_key(|e| e.client_id);
    Ok(ShapleyReport {
        round: input.round,
        tier: input.tier,
        variant,
        eval_set_id: input.eval_set_id,
        entries,
        cost,
    })
}

/// Exact Shapley values of the round game `v(C) = L(W_{t-1}) - L(W_C)`.
///
/// `W_C` aggregates the members of `C` under `variant`. The empty coalition
/// is the unnormalized zero model, or the unchanged pre-round model when
/// aggregation is normalized.
pub fn exact_shapley(
    pre_round: &ParamVector,
    updates: &[ClientUpdate],
    eval: &LabeledDataset,
    spec: &ModelSpec,
    variant: ShapleyVariant,
) -> Result<Vec<f64>> {
    let m = updates.len();
    if m == 0 {
        return Err(Error::Empty("shapley updates"));
    }
    if m > MAX_EXACT_CLIENTS {
        return Err(Error::TooManyClients {
            clients: m,
            limit: MAX_EXACT_CLIENTS,
        });
    }
    let base_loss = model::loss(spec, pre_round, eval)?;
    let mut value = vec![0.0; 1 << m];
    for (mask, slot) in value.iter_mut().enumerate() {
        let members: Vec<&ClientUpdate> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| &updates[i]).collect();
        let coalition_model = if members.is_empty() {
            match variant {
                ShapleyVariant::Unnormalized => ParamVector::zeros(pre_round.dim()),
                ShapleyVariant::Normalized => pre_round.clone(),
            }
        } else if variant == ShapleyVariant::Normalized && members.iter().all(|u| u.weight == 0.0) {
            pre_round.clone()
        } else {
            let pairs = members.iter().map(|u| (&u.params, u.weight));
            match variant {
                ShapleyVariant::Unnormalized => model::weighted_sum(pairs)?,
                ShapleyVariant::Normalized => model::fedavg(pairs)?,
            }
        };
        *slot = base_loss - model::loss(spec, &coalition_model, eval)?;
    }

    // |S|! (M-1-|S|)! / M!
    let mut fact = vec![1.0f64; m + 1];
    for k in 1..=m {
        fact[k] = fact[k - 1] * k as f64;
    }
    let coeff: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - 1 - s] / fact[m]).collect();

    Ok((0..m)
        .map(|i| {
            let bit = 1usize << i;
            (0..(1usize << m))
                .filter(|mask| mask & bit == 0)
                .map(|mask| coeff[mask.count_ones() as usize] * (value[mask | bit] - value[mask]))
                .sum()
        })
        .collect())
}

/// First-order value of adding the pair `{i, j}` on top of the baseline
/// `[M] - {i, j}`: `γᵀ(W_{[M]-{i,j}} - W_M)` with the baseline built from
/// the remaining updates (unnormalized sum). Independent of the per-client
/// estimates, so it checks the pairwise-sum identity.
pub fn pairwise_first_order_value(
    tier_model: &ParamVector,
    updates: &[ClientUpdate],
    i: usize,
    j: usize,
    eval: &LabeledDataset,
    spec: &ModelSpec,
) -> Result<f64> {
    let gamma = model::gradient(spec, tier_model, eval)?;
    let mut baseline = ParamVector::zeros(tier_model.dim());
    for (k, u) in updates.iter().enumerate() {
        if k != i && k != j {
            baseline.axpy(u.weight, &u.params);
        }
    }
    Ok(gamma.dot(&baseline.sub(tier_model)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn scalar_updates(values: &[f64], weights: &[f64]) -> Vec<ClientUpdate> {
        values
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&v, &w))| ClientUpdate {
                client_id: i,
                params: ParamVector::new(vec![v]),
                weight: w,
            })
            .collect()
    }

    fn input<'a>(spec: &'a ModelSpec, eval: &'a LabeledDataset) -> ShapleyInput<'a> {
        ShapleyInput {
            round: 0,
            tier: 0,
            eval_set_id: 0,
            spec,
            eval,
        }
    }

    #[test]
    fn normalized_identical_updates_give_zero() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![0.0, 3.0]);
        let ups = scalar_updates(&[1.5, 1.5, 1.5], &[0.2, 0.3, 0.5]);
        let wm = aggregate(&ups, ShapleyVariant::Normalized).unwrap();
        let r = estimate_shapley(&wm, &ups, &input(&spec, &eval), ShapleyVariant::Normalized).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_client_normalized() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![0.0, 3.0]);
        let ups = scalar_updates(&[2.0], &[1.0]);
        let wm = aggregate(&ups, ShapleyVariant::Normalized).unwrap();
        assert_eq!(wm, ups[0].params);
        let r = estimate_shapley(&wm, &ups, &input(&spec, &eval), ShapleyVariant::Normalized).unwrap();
        assert_eq!(r.values(), vec![0.0]);
    }

    #[test]
    fn rejects_mismatched_aggregate_and_empty_updates() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![0.0]);
        let ups = scalar_updates(&[1.0, 2.0], &[0.5, 0.5]);
        let wrong = ParamVector::new(vec![9.0]);
        assert!(matches!(
            estimate_shapley(&wrong, &ups, &input(&spec, &eval), ShapleyVariant::Normalized),
            Err(Error::AggregateMismatch { .. })
        ));
        assert!(matches!(
            estimate_shapley(&wrong, &[], &input(&spec, &eval), ShapleyVariant::Normalized),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn pairwise_sum_identity_on_three_scalar_clients() {
        let spec = ModelSpec::scalar_mean();
        let mut rng = seeds::rng(19);
        let eval = LabeledDataset::scalar((0..30).map(|_| rng.random_range(-2.0..4.0)).collect());
        let ups = scalar_updates(
            &[rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0), rng.random_range(-1.0..3.0)],
            &[0.2, 0.5, 0.3],
        );
        let wm = aggregate(&ups, ShapleyVariant::Unnormalized).unwrap();
        let r = estimate_shapley(&wm, &ups, &input(&spec, &eval), ShapleyVariant::Unnormalized).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let pair = pairwise_first_order_value(&wm, &ups, i, j, &eval, &spec).unwrap();
            assert!((r.entries[i].psi + r.entries[j].psi - pair).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_single_player_game() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![1.0, 2.0]);
        let pre = ParamVector::new(vec![0.0]);
        let ups = scalar_updates(&[1.2], &[1.0]);
        let exact = exact_shapley(&pre, &ups, &eval, &spec, ShapleyVariant::Normalized).unwrap();
        let v1 = model::loss(&spec, &pre, &eval).unwrap() - model::loss(&spec, &ups[0].params, &eval).unwrap();
        assert!((exact[0] - v1).abs() < 1e-12);
    }

    #[test]
    fn exact_symmetry_and_efficiency() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![1.0, 2.0, 0.5]);
        let pre = ParamVector::new(vec![-1.0]);
        let sym = scalar_updates(&[0.7, 0.7, 0.7], &[1.0, 1.0, 1.0]);
        let v = exact_shapley(&pre, &sym, &eval, &spec, ShapleyVariant::Normalized).unwrap();
        assert!((v[0] - v[1]).abs() < 1e-12 && (v[1] - v[2]).abs() < 1e-12);

        let ups = scalar_updates(&[0.2, 1.4, 2.9], &[0.5, 0.3, 0.2]);
        for variant in [ShapleyVariant::Normalized, ShapleyVariant::Unnormalized] {
            let v = exact_shapley(&pre, &ups, &eval, &spec, variant).unwrap();
            let full = aggregate(&ups, variant).unwrap();
            let empty = match variant {
                ShapleyVariant::Normalized => pre.clone(),
                ShapleyVariant::Unnormalized => ParamVector::zeros(1),
            };
            let grand = model::loss(&spec, &empty, &eval).unwrap() - model::loss(&spec, &full, &eval).unwrap();
            assert!((v.iter().sum::<f64>() - grand).abs() < 1e-9, "{variant}");
        }
    }

    #[test]
    fn exact_refuses_large_coalitions() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![1.0]);
        let ups = scalar_updates(&[0.0; 13], &[1.0; 13]);
        let err = exact_shapley(&ParamVector::zeros(1), &ups, &eval, &spec, ShapleyVariant::Normalized).unwrap_err();
        assert!(matches!(err, Error::TooManyClients { clients: 13, limit: 12 }));
    }

    #[test]
    fn estimate_costs_one_gradient_and_m_dots() {
        let spec = ModelSpec::scalar_mean();
        let eval = LabeledDataset::scalar(vec![1.0]);
        let ups = scalar_updates(&[0.1, 0.2, 0.3, 0.4, 0.5], &[1.0; 5]);
        let wm = aggregate(&ups, ShapleyVariant::Normalized).unwrap();
        let r = estimate_shapley(&wm, &ups, &input(&spec, &eval), ShapleyVariant::Normalized).unwrap();
        assert_eq!(
            r.cost,
            EstimateCost {
                gradient_evaluations: 1,
                dot_products: 5
            }
        );
    }
}
