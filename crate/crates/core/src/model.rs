//! Small differentiable models and the FedAvg aggregator.
//!
//! Two model families are supported: a scalar mean estimated by least
//! squares, and a multinomial softmax classifier with a bias per class.
//! Softmax parameters are laid out class-major: for class `c` the weights
//! occupy `c * (d + 1) .. c * (d + 1) + d` and the bias sits at
//! `c * (d + 1) + d`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Lower clamp applied to predicted probabilities inside cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a * alpha).collect())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major features plus targets. Scalar-mean data has `dim == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    targets: Targets,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    features: Vec<Vec<f64>>,
    #[serde(flatten)]
    targets: Targets,
}

impl From<LabeledDataset> for DatasetRepr {
    fn from(d: LabeledDataset) -> Self {
        let features = (0..d.len()).map(|i| d.features(i).to_vec()).collect();
        DatasetRepr {
            features,
            targets: d.targets,
        }
    }
}

impl TryFrom<DatasetRepr> for LabeledDataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        let dim = r.features.first().map_or(0, Vec::len);
        if r.features.len() != r.targets.len() && !(dim == 0 && r.features.is_empty()) {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: r.targets.len(),
                actual: r.features.len(),
            });
        }
        let mut features = Vec::with_capacity(r.features.len() * dim);
        for row in &r.features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "feature row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        LabeledDataset::new(dim, features, r.targets)
    }
}

impl LabeledDataset {
    pub fn new(dim: usize, features: Vec<f64>, targets: Targets) -> Result<Self> {
        let n = targets.len();
        if features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                context: "feature buffer",
                expected: n * dim,
                actual: features.len(),
            });
        }
        Ok(LabeledDataset {
            dim,
            features,
            targets,
        })
    }

    pub fn classification(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        Self::new(dim, features, Targets::Classes(labels))
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        LabeledDataset {
            dim: 0,
            features: Vec::new(),
            targets: Targets::Values(values),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Classes(_) => None,
        }
    }

    /// Concatenates datasets of identical shape and target kind.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or(Error::Empty("dataset concat"))?.clone();
        let mut out = first;
        for part in iter {
            if part.dim != out.dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset concat",
                    expected: out.dim,
                    actual: part.dim,
                });
            }
            out.features.extend_from_slice(&part.features);
            match (&mut out.targets, &part.targets) {
                (Targets::Classes(a), Targets::Classes(b)) => a.extend_from_slice(b),
                (Targets::Values(a), Targets::Values(b)) => a.extend_from_slice(b),
                _ => return Err(Error::TargetKind("cannot concat classes with values")),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Least-squares estimate of a scalar mean. A prediction counts as
    /// correct when it lies within `hit_radius` of the observation.
    ScalarMean {
        #[serde(default = "default_hit_radius")]
        hit_radius: f64,
    },
    Softmax {
        feature_dim: usize,
        num_classes: usize,
    },
}

fn default_hit_radius() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn scalar_mean() -> Self {
        ModelSpec::ScalarMean {
            hit_radius: default_hit_radius(),
        }
    }

    pub fn softmax(feature_dim: usize, num_classes: usize) -> Self {
        ModelSpec::Softmax {
            feature_dim,
            num_classes,
        }
    }

    pub fn param_dim(&self) -> usize {
        match *self {
            ModelSpec::ScalarMean { .. } => 1,
            ModelSpec::Softmax {
                feature_dim,
                num_classes,
            } => (feature_dim + 1) * num_classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            ModelSpec::ScalarMean { .. } => 0,
            ModelSpec::Softmax { feature_dim, .. } => feature_dim,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match *self {
            ModelSpec::ScalarMean { .. } => None,
            ModelSpec::Softmax { num_classes, .. } => Some(num_classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::ScalarMean { hit_radius } => {
                if !(hit_radius.is_finite() && hit_radius > 0.0) {
                    return Err(Error::invalid("model.hit_radius", "must be positive and finite"));
                }
            }
            ModelSpec::Softmax {
                feature_dim,
                num_classes,
            } => {
                if feature_dim == 0 {
                    return Err(Error::invalid("model.feature_dim", "must be positive"));
                }
                if num_classes < 2 {
                    return Err(Error::invalid("model.num_classes", "must be at least 2"));
                }
            }
        }
        Ok(())
    }

    pub fn init_params(&self) -> ParamVector {
        ParamVector::zeros(self.param_dim())
    }

    fn check(&self, params: &ParamVector, data: &LabeledDataset) -> Result<()> {
        if params.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.param_dim(),
                actual: params.dim(),
            });
        }
        if data.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if data.dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                context: "feature dimension",
                expected: self.feature_dim(),
                actual: data.dim(),
            });
        }
        match (self, data.targets()) {
            (ModelSpec::ScalarMean { .. }, Targets::Values(_)) => Ok(()),
            (ModelSpec::Softmax { num_classes, .. }, Targets::Classes(labels)) => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(Error::invalid(
                        "label",
                        format!("class {bad} outside [0, {num_classes})"),
                    ));
                }
                Ok(())
            }
            (ModelSpec::ScalarMean { .. }, _) => Err(Error::TargetKind("scalar-mean needs real targets")),
            (ModelSpec::Softmax { .. }, _) => Err(Error::TargetKind("softmax needs class labels")),
        }
    }
}

/// Numerically stable softmax of the logits for one point, written into `out`.
fn softmax_probs(params: &[f64], x: &[f64], num_classes: usize, out: &mut [f64]) {
    let stride = x.len() + 1;
    for c in 0..num_classes {
        let row = &params[c * stride..(c + 1) * stride];
        let mut z = row[x.len()];
        for (w, xi) in row[..x.len()].iter().zip(x) {
            z += w * xi;
        }
        out[c] = z;
    }
    let max = out[..num_classes].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for p in out[..num_classes].iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in out[..num_classes].iter_mut() {
        *p /= sum;
    }
}

fn loss_over(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset, idx: &[usize]) -> f64 {
    let w = params.as_slice();
    let n = idx.len() as f64;
    match (*spec, data.targets()) {
        (ModelSpec::ScalarMean { .. }, Targets::Values(z)) => {
            idx.iter().map(|&i| (w[0] - z[i]).powi(2)).sum::<f64>() / n
        }
        (ModelSpec::Softmax { num_classes, .. }, Targets::Classes(y)) => {
            let mut probs = vec![0.0; num_classes];
            idx.iter()
                .map(|&i| {
                    softmax_probs(w, data.features(i), num_classes, &mut probs);
                    -probs[y[i]].max(PROB_FLOOR).ln()
                })
                .sum::<f64>()
                / n
        }
        _ => unreachable!("checked by ModelSpec::check"),
    }
}

fn gradient_over(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &LabeledDataset,
    idx: &[usize],
) -> ParamVector {
    let w = params.as_slice();
    let n = idx.len() as f64;
    let mut grad = vec![0.0; w.len()];
    match (*spec, data.targets()) {
        (ModelSpec::ScalarMean { .. }, Targets::Values(z)) => {
            grad[0] = idx.iter().map(|&i| 2.0 * (w[0] - z[i])).sum::<f64>() / n;
        }
        (ModelSpec::Softmax { num_classes, feature_dim }, Targets::Classes(y)) => {
            let stride = feature_dim + 1;
            let mut probs = vec![0.0; num_classes];
            for &i in idx {
                let x = data.features(i);
                softmax_probs(w, x, num_classes, &mut probs);
                for c in 0..num_classes {
                    let residual = probs[c] - if c == y[i] { 1.0 } else { 0.0 };
                    let row = &mut grad[c * stride..(c + 1) * stride];
                    for (g, xi) in row[..feature_dim].iter_mut().zip(x) {
                        *g += residual * xi;
                    }
                    row[feature_dim] += residual;
                }
            }
            for g in grad.iter_mut() {
                *g /= n;
            }
        }
        _ => unreachable!("checked by ModelSpec::check"),
    }
    ParamVector(grad)
}

/// Mean per-point loss: squared error for scalar-mean, cross-entropy for softmax.
pub fn loss(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    spec.check(params, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(loss_over(spec, params, data, &idx))
}

/// Mean gradient of [`loss`] with respect to the parameters.
pub fn gradient(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<ParamVector> {
    spec.check(params, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(gradient_over(spec, params, data, &idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 32,
        }
    }
}

impl TrainingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("model.learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("model.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Plain mini-batch SGD. Each epoch reshuffles with a Fisher-Yates shuffle
/// seeded from `(seed, epoch)`; a batch size above `n` means full batch.
pub fn train_local(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &LabeledDataset,
    training: &TrainingParams,
    seed: u64,
) -> Result<ParamVector> {
    spec.check(params, data)?;
    training.validate()?;
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = training.batch_size.min(data.len());
    for epoch in 0..training.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeds::rng(seeds::derive(seed, seeds::TRAIN, &[epoch as u64])));
        for chunk in order.chunks(batch) {
            let g = gradient_over(spec, &current, data, chunk);
            current.axpy(-training.learning_rate, &g);
        }
        if !current.is_finite() {
            return Err(Error::NonFinite("train_local"));
        }
    }
    Ok(current)
}

fn check_updates<'a>(updates: impl IntoIterator<Item = (&'a ParamVector, f64)>) -> Result<(usize, f64)> {
    let mut dim = None;
    let mut total = 0.0;
    let mut count = 0;
    for (p, w) in updates {
        count += 1;
        match dim {
            None => dim = Some(p.dim()),
            Some(d) if d != p.dim() => {
                return Err(Error::DimensionMismatch {
                    context: "aggregation",
                    expected: d,
                    actual: p.dim(),
                })
            }
            _ => {}
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid("aggregation weight", format!("{w} is not a nonnegative real")));
        }
        total += w;
    }
    if count == 0 {
        return Err(Error::Empty("aggregation updates"));
    }
    Ok((dim.unwrap_or(0), total))
}

/// Weighted average `Σ λ_m W_m / Σ λ_m`.
pub fn fedavg<'a, I>(updates: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (&'a ParamVector, f64)> + Clone,
{
    let (dim, total) = check_updates(updates.clone())?;
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let mut out = ParamVector::zeros(dim);
    for (p, w) in updates {
        out.axpy(w / total, p);
    }
    Ok(out)
}

/// Unnormalized weighted sum `Σ λ_m W_m`.
pub fn weighted_sum<'a, I>(updates: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = (&'a ParamVector, f64)> + Clone,
{
    let (dim, _) = check_updates(updates.clone())?;
    let mut out = ParamVector::zeros(dim);
    for (p, w) in updates {
        out.axpy(w, p);
    }
    Ok(out)
}

/// Predicted class of a softmax model for one feature vector (ties go to
/// the lowest class index).
pub fn predict_class(num_classes: usize, params: &ParamVector, x: &[f64]) -> usize {
    let w = params.as_slice();
    let stride = x.len() + 1;
    let mut best = 0;
    let mut best_z = f64::NEG_INFINITY;
    for c in 0..num_classes {
        let row = &w[c * stride..(c + 1) * stride];
        let z = row[x.len()] + row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        if z > best_z {
            best_z = z;
            best = c;
        }
    }
    best
}

/// Number of points the model predicts correctly.
pub fn correct_count(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<usize> {
    spec.check(params, data)?;
    Ok(match (*spec, data.targets()) {
        (ModelSpec::ScalarMean { hit_radius }, Targets::Values(z)) => {
            let mu = params.as_slice()[0];
            z.iter().filter(|&&zi| (mu - zi).abs() <= hit_radius).count()
        }
        (ModelSpec::Softmax { num_classes, .. }, Targets::Classes(y)) => (0..data.len())
            .filter(|&i| predict_class(num_classes, params, data.features(i)) == y[i])
            .count(),
        _ => unreachable!("checked by ModelSpec::check"),
    })
}

pub fn accuracy(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    Ok(correct_count(spec, params, data)? as f64 / data.len() as f64)
}

/// Predictions for every point of a classification dataset.
pub fn predictions(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> Result<Vec<usize>> {
    spec.check(params, data)?;
    match *spec {
        ModelSpec::Softmax { num_classes, .. } => Ok((0..data.len())
            .map(|i| predict_class(num_classes, params, data.features(i)))
            .collect()),
        ModelSpec::ScalarMean { .. } => Err(Error::TargetKind("predictions need a classifier")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn scalar_mean_loss_examples() {
        let spec = ModelSpec::scalar_mean();
        let zero = loss(&spec, &ParamVector::new(vec![0.0]), &LabeledDataset::scalar(vec![0.0])).unwrap();
        assert_eq!(zero, 0.0);
        let one = loss(&spec, &ParamVector::new(vec![1.0]), &LabeledDataset::scalar(vec![0.0, 2.0])).unwrap();
        assert_eq!(one, 1.0);
    }

    #[test]
    fn uniform_softmax_loss_is_ln2() {
        let spec = ModelSpec::softmax(3, 2);
        let data = LabeledDataset::classification(3, vec![0.3, -1.0, 2.0], vec![1]).unwrap();
        let l = loss(&spec, &spec.init_params(), &data).unwrap();
        assert!(approx(l, std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn scalar_gradient_examples() {
        let spec = ModelSpec::scalar_mean();
        let g = gradient(&spec, &ParamVector::new(vec![1.0]), &LabeledDataset::scalar(vec![0.0])).unwrap();
        assert_eq!(g.as_slice(), &[2.0]);
        let data = LabeledDataset::scalar(vec![1.0, 2.0, 6.0]);
        let g = gradient(&spec, &ParamVector::new(vec![3.0]), &data).unwrap();
        assert!(g.as_slice()[0].abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let spec = ModelSpec::softmax(2, 3);
        let data = LabeledDataset::classification(2, vec![0.0, 0.0], vec![0]).unwrap();
        let err = loss(&spec, &ParamVector::zeros(5), &data).unwrap_err();
        match err {
            Error::DimensionMismatch { expected, actual, .. } => {
                assert_eq!((expected, actual), (9, 5));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn train_local_converges_to_sample_mean() {
        let spec = ModelSpec::scalar_mean();
        let data = LabeledDataset::scalar(vec![0.0, 2.0]);
        let training = TrainingParams {
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 2,
        };
        let out = train_local(&spec, &ParamVector::new(vec![0.0]), &data, &training, 1).unwrap();
        assert!(approx(out.as_slice()[0], 1.0, 1e-3));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let spec = ModelSpec::scalar_mean();
        let p = ParamVector::new(vec![4.2]);
        let training = TrainingParams {
            epochs: 0,
            ..TrainingParams::default()
        };
        let out = train_local(&spec, &p, &LabeledDataset::scalar(vec![0.0]), &training, 3).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn softmax_training_loss_decreases_on_separable_data() {
        let spec = ModelSpec::softmax(2, 2);
        let mut rng = seeds::rng(11);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            feats.push(sign * 2.0 + rng.random_range(-0.5..0.5));
            feats.push(rng.random_range(-1.0..1.0));
            labels.push(c);
        }
        let data = LabeledDataset::classification(2, feats, labels).unwrap();
        let training = TrainingParams {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 8,
        };
        let mut params = spec.init_params();
        let mut prev = loss(&spec, &params, &data).unwrap();
        for epoch in 0..5 {
            params = train_local(&spec, &params, &data, &training, epoch).unwrap();
            let now = loss(&spec, &params, &data).unwrap();
            assert!(now < prev, "epoch {epoch}: {now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn fedavg_examples() {
        let a = ParamVector::new(vec![0.0]);
        let b = ParamVector::new(vec![2.0]);
        assert_eq!(fedavg([(&a, 1.0), (&b, 1.0)]).unwrap().as_slice(), &[1.0]);
        assert_eq!(fedavg([(&b, 0.3)]).unwrap(), b);
        let c = ParamVector::new(vec![4.0]);
        assert_eq!(fedavg([(&a, 1.0), (&c, 3.0)]).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn fedavg_errors() {
        let empty: Vec<(&ParamVector, f64)> = Vec::new();
        assert!(matches!(fedavg(empty), Err(Error::Empty(_))));
        let a = ParamVector::new(vec![0.0]);
        let b = ParamVector::new(vec![0.0, 1.0]);
        assert!(matches!(fedavg([(&a, 1.0), (&b, 1.0)]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(fedavg([(&a, 0.0), (&a, 0.0)]), Err(Error::ZeroWeights)));
    }

    fn random_softmax_instance(seed: u64) -> (ModelSpec, ParamVector, LabeledDataset) {
        let mut rng = seeds::rng(seed);
        let d = rng.random_range(1..5);
        let c = rng.random_range(2..5);
        let n = rng.random_range(1..6);
        let spec = ModelSpec::softmax(d, c);
        let params = ParamVector::new((0..spec.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let feats = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        (spec, params, LabeledDataset::classification(d, feats, labels).unwrap())
    }

    /// Central differences with h = 1e-5; relative error measured against
    /// the larger of the gradient norm and 1.
    fn finite_difference_gap(spec: &ModelSpec, params: &ParamVector, data: &LabeledDataset) -> f64 {
        let h = 1e-5;
        let analytic = gradient(spec, params, data).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..params.dim() {
            let mut plus = params.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[k] -= h;
            let fd = (loss(spec, &plus, data).unwrap() - loss(spec, &minus, data).unwrap()) / (2.0 * h);
            let scale = analytic.as_slice()[k].abs().max(1.0);
            worst = worst.max((fd - analytic.as_slice()[k]).abs() / scale);
        }
        worst
    }

    #[test]
    fn softmax_gradient_matches_finite_differences_on_three_points() {
        let spec = ModelSpec::softmax(2, 3);
        let mut rng = seeds::rng(5);
        let params = ParamVector::new((0..spec.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let feats = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data = LabeledDataset::classification(2, feats, vec![0, 2, 1]).unwrap();
        assert!(finite_difference_gap(&spec, &params, &data) < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences_on_100_instances() {
        for seed in 0..100u64 {
            if seed % 4 == 0 {
                let mut rng = seeds::rng(seed);
                let spec = ModelSpec::scalar_mean();
                let params = ParamVector::new(vec![rng.random_range(-3.0..3.0)]);
                let data = LabeledDataset::scalar((0..5).map(|_| rng.random_range(-3.0..3.0)).collect());
                assert!(finite_difference_gap(&spec, &params, &data) < 1e-6, "seed {seed}");
            } else {
                let (spec, params, data) = random_softmax_instance(seed);
                assert!(finite_difference_gap(&spec, &params, &data) < 1e-6, "seed {seed}");
            }
        }
    }

    #[test]
    fn train_local_is_bit_reproducible() {
        let (spec, params, data) = random_softmax_instance(77);
        let training = TrainingParams {
            epochs: 3,
            learning_rate: 0.2,
            batch_size: 2,
        };
        let a = train_local(&spec, &params, &data, &training, 9).unwrap();
        let b = train_local(&spec, &params, &data, &training, 9).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    proptest! {
        #[test]
        fn fedavg_is_permutation_invariant(
            rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), 0.1f64..5.0), 1..6),
            rot in 0usize..6,
        ) {
            let params: Vec<ParamVector> = rows.iter().map(|(v, _)| ParamVector::new(v.clone())).collect();
            let forward = fedavg(params.iter().zip(rows.iter().map(|r| r.1))).unwrap();
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.rotate_left(rot % rows.len());
            order.reverse();
            let shuffled = fedavg(order.iter().map(|&i| (&params[i], rows[i].1))).unwrap();
            prop_assert!(forward.max_abs_diff(&shuffled) < 1e-9);
        }

        #[test]
        fn fedavg_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 4), n in 1usize..6, w in 0.1f64..3.0) {
            let p = ParamVector::new(v);
            let out = fedavg(std::iter::repeat_n((&p, w), n)).unwrap();
            prop_assert!(out.max_abs_diff(&p) < 1e-12);
        }

        #[test]
        fn scalar_loss_is_mse_about_mu(mu in -5.0f64..5.0, z in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let spec = ModelSpec::scalar_mean();
            let l = loss(&spec, &ParamVector::new(vec![mu]), &LabeledDataset::scalar(z.clone())).unwrap();
            let mse = z.iter().map(|zi| (mu - zi).powi(2)).sum::<f64>() / z.len() as f64;
            prop_assert!(l >= 0.0);
            prop_assert!((l - mse).abs() <= 1e-12 * mse.max(1.0));
        }

        #[test]
        fn softmax_loss_nonnegative(seed in 0u64..1000) {
            let (spec, params, data) = random_softmax_instance(seed);
            prop_assert!(loss(&spec, &params, &data).unwrap() >= 0.0);
        }
    }
}
