//! Client-side behaviour: importance weights, one-shot personalization and
//! preference bids.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LabeledDataset, ModelSpec, ParamVector};

/// Per-tier importance weights `υ_k = n_ck / n_c`: the fraction of the
/// client's evaluation points that tier model `k` predicts correctly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub weights: Vec<f64>,
    pub correct: Vec<usize>,
    pub total: usize,
}

impl ImportanceWeights {
    pub fn from_weights(weights: Vec<f64>) -> Self {
        ImportanceWeights {
            correct: Vec::new(),
            total: 0,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = k;
            }
        }
        best
    }
}

pub fn compute_importance_weights(
    data: &LabeledDataset,
    tier_models: &[ParamVector],
    spec: &ModelSpec,
) -> Result<ImportanceWeights> {
    if tier_models.is_empty() {
        return Err(Error::Empty("tier models"));
    }
    let correct = tier_models
        .iter()
        .map(|m| model::correct_count(spec, m, data))
        .collect::<Result<Vec<_>>>()?;
    let total = data.len();
    Ok(ImportanceWeights {
        weights: correct.iter().map(|&c| c as f64 / total as f64).collect(),
        correct,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BidMode {
    Incentive,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BidPolicy {
    pub mode: BidMode,
    /// `T_h`; `None` means `1/K`.
    pub threshold: Option<f64>,
    /// Blend factor for realized rewards in the preference score.
    pub reward_blend: f64,
}

impl Default for BidPolicy {
    fn default() -> Self {
        BidPolicy {
            mode: BidMode::Incentive,
            threshold: None,
            reward_blend: 0.5,
        }
    }
}

impl BidPolicy {
    pub fn threshold_for(&self, tiers: usize) -> f64 {
        self.threshold.unwrap_or(1.0 / tiers.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("bids.threshold", "must lie in [0, 1]"));
            }
        }
        if !(self.reward_blend.is_finite() && self.reward_blend >= 0.0) {
            return Err(Error::invalid("bids.reward_blend", "must be a nonnegative real"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceBids {
    pub client_id: usize,
    /// Tiers in preference order; the first entry is the top bid.
    pub tiers: Vec<usize>,
    pub bid_amount: f64,
}

impl PreferenceBids {
    pub fn top(&self) -> Option<usize> {
        self.tiers.first().copied()
    }
}

/// Realized net rewards (reward + reimbursement - payment) per tier, in tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardHistory {
    per_tier: BTreeMap<usize, (f64, usize)>,
}

impl RewardHistory {
    pub fn record(&mut self, tier: usize, net: f64) {
        let e = self.per_tier.entry(tier).or_insert((0.0, 0));
        e.0 += net;
        e.1 += 1;
    }

    pub fn mean(&self, tier: usize) -> Option<f64> {
        self.per_tier.get(&tier).map(|&(s, n)| s / n as f64)
    }

    /// Mean net reward mapped to `[0, 1]`: `-bid` maps to 0, `+bid` to 1.
    /// Tiers without history sit at the neutral 0.5.
    pub fn scaled(&self, tier: usize, bid_amount: f64) -> f64 {
        match self.mean(tier) {
            Some(m) if bid_amount > 0.0 => ((m / bid_amount + 1.0) / 2.0).clamp(0.0, 1.0),
            _ => 0.5,
        }
    }
}

pub fn build_preference_bids(
    client_id: usize,
    weights: &ImportanceWeights,
    policy: &BidPolicy,
    history: &RewardHistory,
    bid_amount: f64,
    rng: &mut ChaCha8Rng,
) -> PreferenceBids {
    let k = weights.len();
    let tiers = match policy.mode {
        BidMode::Random => vec![rng.random_range(0..k)],
        BidMode::Incentive => {
            let threshold = policy.threshold_for(k);
            let mut passing: Vec<(usize, f64)> = weights
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > threshold)
                .map(|(t, &w)| (t, w * (1.0 + policy.reward_blend * history.scaled(t, bid_amount))))
                .collect();
            if passing.is_empty() {
                vec![weights.argmax()]
            } else {
                passing.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                passing.into_iter().map(|(t, _)| t).collect()
            }
        }
    };
    PreferenceBids {
        client_id,
        tiers,
        bid_amount,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedModel {
    pub params: ParamVector,
    /// Normalized mixing weights actually applied to the tier models.
    pub mixing: Vec<f64>,
}

/// Convex mixture of tier models weighted by importance. Tiers at or below
/// the threshold are masked out unless none pass.
pub fn build_personalized_model(
    weights: &ImportanceWeights,
    tier_models: &[ParamVector],
    threshold: f64,
) -> Result<PersonalizedModel> {
    if weights.len() != tier_models.len() {
        return Err(Error::DimensionMismatch {
            context: "importance weights vs tier models",
            expected: tier_models.len(),
            actual: weights.len(),
        });
    }
    if weights.weights.iter().all(|&w| w <= 0.0) {
        return Err(Error::NoInformativeTier);
    }
    let any_pass = weights.weights.iter().any(|&w| w > threshold);
    let masked: Vec<f64> = weights
        .weights
        .iter()
        .map(|&w| if !any_pass || w > threshold { w.max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = masked.iter().sum();
    let mixing: Vec<f64> = masked.iter().map(|w| w / total).collect();
    let params = model::weighted_sum(tier_models.iter().zip(mixing.iter().copied()))?;
    Ok(PersonalizedModel { params, mixing })
}
