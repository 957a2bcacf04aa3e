//! Server-side analytics: contribution estimates, tier accuracy tracking
//! and pre-training tiering.

pub mod kmeans;
pub mod shapley;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, LabeledDataset, ModelSpec, ParamVector};
use crate::seeds;

pub use shapley::{
    aggregate, estimate_shapley, exact_shapley, pairwise_first_order_value, ClientUpdate, EstimateCost, ShapleyEntry,
    ShapleyInput, ShapleyReport, ShapleyVariant, MAX_EXACT_CLIENTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierAccuracyRecord {
    pub tier: usize,
    pub round: usize,
    pub acc: f64,
    /// Best accuracy in earlier rounds; the improvement baseline.
    pub acc_prev_max: f64,
    /// Running max including this round.
    pub acc_max: f64,
}

/// Per-tier history of member-evaluated accuracy.
#[derive(Debug, Clone, Default)]
pub struct AccuracyTracker {
    max: Vec<Option<f64>>,
}

impl AccuracyTracker {
    pub fn new(tiers: usize) -> Self {
        Self { max: vec![None; tiers] }
    }

    /// Records the mean of `member_accuracies`. Returns `None` for an empty
    /// tier, leaving the history untouched.
    pub fn record(&mut self, tier: usize, round: usize, member_accuracies: &[f64]) -> Option<TierAccuracyRecord> {
        if member_accuracies.is_empty() {
            return None;
        }
        let acc = member_accuracies.iter().sum::<f64>() / member_accuracies.len() as f64;
        let prev = self.max[tier];
        let acc_max = prev.map_or(acc, |m| m.max(acc));
        self.max[tier] = Some(acc_max);
        Some(TierAccuracyRecord {
            tier,
            round,
            acc,
            acc_prev_max: prev.unwrap_or(0.0),
            acc_max,
        })
    }

    pub fn running_max(&self, tier: usize) -> Option<f64> {
        self.max[tier]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Profile {
    pub client_id: usize,
    pub f1: Vec<f64>,
    pub responded: bool,
}

/// One-vs-rest F1 per class. Classes never predicted nor present score 0.
pub fn per_class_f1(predicted: &[usize], actual: &[usize], num_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p == a {
            tp[a] += 1;
        } else {
            fp[p] += 1;
            fn_[a] += 1;
        }
    }
    (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

pub fn f1_profile(
    client_id: usize,
    spec: &ModelSpec,
    params: &ParamVector,
    eval: &LabeledDataset,
    responded: bool,
) -> Result<F1Profile> {
    let classes = spec.num_classes().ok_or(Error::TargetKind("f1 profile needs a classifier"))?;
    let labels = eval.labels().ok_or(Error::TargetKind("f1 profile needs class labels"))?;
    let predicted = model::predictions(spec, params, eval)?;
    Ok(F1Profile {
        client_id,
        f1: per_class_f1(&predicted, labels, classes),
        responded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieringOutcome {
    /// Indexed like the input profiles.
    pub assignment: Vec<usize>,
    pub selected_classes: Vec<usize>,
    pub random_fallback: bool,
}

/// Clusters responders on their most client-varying F1 coordinates (the top
/// half of classes by variance); everyone else lands in a random tier.
pub fn pretraining_tiering(profiles: &[F1Profile], k: usize, seed: u64) -> Result<TieringOutcome> {
    if k == 0 {
        return Err(Error::invalid("tiers", "must be at least 1"));
    }
    let mut rng = seeds::stream_rng(seed, seeds::KMEANS, &[]);
    let responders: Vec<usize> = (0..profiles.len()).filter(|&i| profiles[i].responded).collect();
    let mut assignment = vec![0usize; profiles.len()];
    if responders.len() < k {
        for a in assignment.iter_mut() {
            *a = rng.random_range(0..k);
        }
        return Ok(TieringOutcome {
            assignment,
            selected_classes: Vec::new(),
            random_fallback: true,
        });
    }
    let classes = profiles[responders[0]].f1.len();
    let n = responders.len() as f64;
    let mut variance: Vec<(usize, f64)> = (0..classes)
        .map(|c| {
            let mean = responders.iter().map(|&i| profiles[i].f1[c]).sum::<f64>() / n;
            let var = responders.iter().map(|&i| (profiles[i].f1[c] - mean).powi(2)).sum::<f64>() / n;
            (c, var)
        })
        .collect();
    variance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut selected: Vec<usize> = variance.iter().take(classes.div_ceil(2)).map(|&(c, _)| c).collect();
    selected.sort_unstable();

    let points: Vec<Vec<f64>> = responders
        .iter()
        .map(|&i| selected.iter().map(|&c| profiles[i].f1[c]).collect())
        .collect();
    let clusters = kmeans::kmeans(&points, k, &mut rng);
    for (&i, &a) in responders.iter().zip(&clusters.assignment) {
        assignment[i] = a;
    }
    for (i, p) in profiles.iter().enumerate() {
        if !p.responded {
            assignment[i] = rng.random_range(0..k);
        }
    }
    Ok(TieringOutcome {
        assignment,
        selected_classes: selected,
        random_fallback: false,
    })
}
