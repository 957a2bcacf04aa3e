//! Synthetic client populations.
//!
//! Mixture populations: `S` distributions, each owning a disjoint block of
//! `classes_per_distribution` labels. All distributions share one set of
//! class-slot prototypes (slot `j` of every distribution is drawn around the
//! same center) and each distribution adds its own offset vector, so
//! distributions disagree on labels over largely overlapping inputs, much
//! like upper- and lower-case letters. A classifier can only serve one
//! distribution well in the overlap, which is what makes tiering matter.
//!
//! Gaussian populations reproduce the two-tier mean-estimation model: each
//! client draws its mean from its tier's root mean and observes noisy
//! samples around it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledDataset, ModelSpec};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// `a:b` with `a + b = 100`: the first half of the clients draw `b`%
    /// from distribution 0, the rest `a`%.
    Ratio { a: u32, b: u32 },
    /// Client `k` draws `(0.5 + 99k/(N-1))`% from distribution 0.
    Linear,
    /// Mixture from `S - 1` uniform cut points of `[0, 1]`.
    Random,
    /// Every client draws uniformly from all distributions.
    Iid,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Ratio { a, b } => write!(f, "{a}:{b}"),
            Partition::Linear => f.write_str("linear"),
            Partition::Random => f.write_str("random"),
            Partition::Iid => f.write_str("iid"),
        }
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Partition::Linear),
            "random" => Ok(Partition::Random),
            "iid" => Ok(Partition::Iid),
            other => {
                let (a, b) = other
                    .split_once(':')
                    .ok_or_else(|| Error::invalid("population.partition", format!("unknown partition {other:?}")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::invalid("population.partition", format!("bad ratio part {v:?}")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a + b != 100 {
                    return Err(Error::invalid("population.partition", format!("ratio {a}:{b} must sum to 100")));
                }
                Ok(Partition::Ratio { a, b })
            }
        }
    }
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub num_distributions: usize,
    pub partition: Partition,
    pub num_clients: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Size of each client's private goal split, drawn from its test mixture.
    pub personal_samples: usize,
    pub feature_dim: usize,
    pub classes_per_distribution: usize,
    pub inverse_test: bool,
    /// Standard deviation of the shared class-slot prototypes.
    pub center_spread: f64,
    /// Norm of each distribution's offset from the shared prototypes.
    pub distribution_offset: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            num_distributions: 2,
            partition: Partition::Ratio { a: 10, b: 90 },
            num_clients: 50,
            train_samples: 200,
            test_samples: 100,
            personal_samples: 50,
            feature_dim: 5,
            classes_per_distribution: 4,
            inverse_test: false,
            center_spread: 4.0,
            distribution_offset: 1.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn num_classes(&self) -> usize {
        self.num_distributions * self.classes_per_distribution
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::softmax(self.feature_dim, self.num_classes())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("population.num_distributions", self.num_distributions),
            ("population.num_clients", self.num_clients),
            ("population.train_samples", self.train_samples),
            ("population.test_samples", self.test_samples),
            ("population.personal_samples", self.personal_samples),
            ("population.feature_dim", self.feature_dim),
            ("population.classes_per_distribution", self.classes_per_distribution),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        match self.partition {
            Partition::Ratio { .. } if self.num_distributions != 2 => {
                return Err(Error::invalid(
                    "population.partition",
                    "ratio partitions need exactly 2 distributions",
                ))
            }
            Partition::Linear if self.num_distributions != 2 => {
                return Err(Error::invalid(
                    "population.partition",
                    "linear partition needs exactly 2 distributions",
                ))
            }
            Partition::Random if self.num_distributions < 2 => {
                return Err(Error::invalid("population.partition", "random partition needs at least 2 distributions"))
            }
            _ => {}
        }
        if self.inverse_test && self.num_distributions < 2 {
            return Err(Error::invalid("population.inverse_test", "needs at least 2 distributions"));
        }
        for (field, v) in [
            ("population.center_spread", self.center_spread),
            ("population.distribution_offset", self.distribution_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, "must be a nonnegative real"));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::invalid("population.noise_std", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianPopulationSpec {
    pub m1: usize,
    pub m2: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub tau2: f64,
    pub sigma2: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub personal_samples: usize,
    pub seed: u64,
}

impl Default for GaussianPopulationSpec {
    fn default() -> Self {
        GaussianPopulationSpec {
            m1: 10,
            m2: 10,
            beta1: 0.0,
            beta2: 5.0,
            tau2: 0.1,
            sigma2: 1.0,
            train_samples: 20,
            test_samples: 20,
            personal_samples: 10,
            seed: 0,
        }
    }
}

impl GaussianPopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m1 + self.m2 == 0 {
            return Err(Error::invalid("population.m1", "m1 + m2 must be positive"));
        }
        if !(self.tau2.is_finite() && self.tau2 >= 0.0) {
            return Err(Error::invalid("population.tau2", "must be a nonnegative real"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::invalid("population.sigma2", "must be positive"));
        }
        if !(self.beta1.is_finite() && self.beta2.is_finite()) {
            return Err(Error::invalid("population.beta1", "root means must be finite"));
        }
        for (field, v) in [
            ("population.train_samples", self.train_samples),
            ("population.test_samples", self.test_samples),
            ("population.personal_samples", self.personal_samples),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Private split drawn from the test mixture; only the client sees it.
    pub personal: LabeledDataset,
    pub true_mixture: Vec<f64>,
    pub test_mixture: Vec<f64>,
    pub ground_truth_tier: usize,
    /// Underlying mean for Gaussian populations.
    pub true_mean: Option<f64>,
}

/// Client datasets plus the generator state needed to draw further samples
/// (server evaluation sets, per-distribution holdouts).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Population {
    pub kind: PopulationKind,
    pub clients: Vec<ClientDataset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PopulationKind {
    Mixture(MixtureGenerator),
    Gaussian(GaussianGenerator),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureGenerator {
    pub spec: MixtureSpec,
    /// One prototype center per class slot, shared across distributions.
    pub slot_centers: Vec<Vec<f64>>,
    /// One offset per distribution.
    pub offsets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianGenerator {
    pub spec: GaussianPopulationSpec,
    pub client_means: Vec<f64>,
}

impl Population {
    pub fn num_distributions(&self) -> usize {
        match &self.kind {
            PopulationKind::Mixture(g) => g.spec.num_distributions,
            PopulationKind::Gaussian(_) => 2,
        }
    }

    /// Draws `n` points whose source distribution follows `mixture`
    /// (exact counts by largest remainder).
    pub fn sample(&self, mixture: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
        match &self.kind {
            PopulationKind::Mixture(g) => g.sample(mixture, n, rng),
            PopulationKind::Gaussian(g) => Ok(g.sample_tiers(mixture, n, rng)),
        }
    }

    pub fn sample_distribution(&self, s: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
        let mut mixture = vec![0.0; self.num_distributions()];
        mixture[s] = 1.0;
        self.sample(&mixture, n, rng)
    }

    pub fn ground_truth(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.ground_truth_tier).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Splits `n` into integer counts proportional to `weights` using the
/// largest-remainder rule (ties to the lower index).
pub fn apportion(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Normalized complement `(1 - m_s) / (S - 1)`; a swap when `S = 2`.
pub fn complement_mixture(mixture: &[f64]) -> Vec<f64> {
    let s = mixture.len();
    if s < 2 {
        return mixture.to_vec();
    }
    mixture.iter().map(|m| (1.0 - m) / (s - 1) as f64).collect()
}

impl MixtureGenerator {
    fn sample(&self, mixture: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
        let spec = &self.spec;
        if mixture.len() != spec.num_distributions {
            return Err(Error::DimensionMismatch {
                context: "mixture vector",
                expected: spec.num_distributions,
                actual: mixture.len(),
            });
        }
        let counts = apportion(mixture, n);
        let d = spec.feature_dim;
        let c = spec.classes_per_distribution;
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for (s, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                let slot = rng.random_range(0..c);
                let center = &self.slot_centers[slot];
                let offset = &self.offsets[s];
                for k in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push(center[k] + offset[k] + spec.noise_std * noise);
                }
                labels.push(s * c + slot);
            }
        }
        LabeledDataset::classification(d, features, labels)
    }

    /// Source distribution of a label.
    pub fn source_of(&self, label: usize) -> usize {
        label / self.spec.classes_per_distribution
    }
}

impl GaussianGenerator {
    /// Scalar observations from a tier-level mixture: each point picks a
    /// client of the chosen tier uniformly and observes around its mean.
    fn sample_tiers(&self, mixture: &[f64], n: usize, rng: &mut ChaCha8Rng) -> LabeledDataset {
        let counts = apportion(mixture, n);
        let sigma = self.spec.sigma2.sqrt();
        let tiers = [0..self.spec.m1, self.spec.m1..self.spec.m1 + self.spec.m2];
        let mut values = Vec::with_capacity(n);
        for (t, &count) in counts.iter().enumerate().take(2) {
            let members = tiers[t].clone();
            for _ in 0..count {
                let mu = if members.is_empty() {
                    if t == 0 { self.spec.beta1 } else { self.spec.beta2 }
                } else {
                    self.client_means[rng.random_range(members.clone())]
                };
                let noise: f64 = rng.sample(StandardNormal);
                values.push(mu + sigma * noise);
            }
        }
        LabeledDataset::scalar(values)
    }
}

fn mixture_for(spec: &MixtureSpec, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = spec.num_distributions;
    match spec.partition {
        Partition::Ratio { a, b } => {
            let first_half = k < spec.num_clients.div_ceil(2);
            let major = b.max(a) as f64 / 100.0;
            let minor = b.min(a) as f64 / 100.0;
            if first_half {
                vec![major, minor]
            } else {
                vec![minor, major]
            }
        }
        Partition::Linear => {
            let step = if spec.num_clients > 1 {
                99.0 * k as f64 / (spec.num_clients - 1) as f64
            } else {
                0.0
            };
            let share = (0.5 + step) / 100.0;
            vec![share, 1.0 - share]
        }
        Partition::Random => {
            let mut cuts: Vec<f64> = (0..s - 1).map(|_| rng.random::<f64>()).collect();
            cuts.sort_by(f64::total_cmp);
            let mut out = Vec::with_capacity(s);
            let mut prev = 0.0;
            for c in cuts {
                out.push(c - prev);
                prev = c;
            }
            out.push(1.0 - prev);
            out
        }
        Partition::Iid => vec![1.0 / s as f64; s],
    }
}

pub fn generate_mixture_population(spec: &MixtureSpec) -> Result<Population> {
    spec.validate()?;
    let mut geo = seeds::stream_rng(spec.seed, seeds::POPULATION, &[]);
    let d = spec.feature_dim;
    let slot_centers: Vec<Vec<f64>> = (0..spec.classes_per_distribution)
        .map(|_| (0..d).map(|_| spec.center_spread * geo.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let offsets: Vec<Vec<f64>> = (0..spec.num_distributions)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| geo.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter().map(|v| v / norm * spec.distribution_offset).collect()
        })
        .collect();
    let generator = MixtureGenerator {
        spec: spec.clone(),
        slot_centers,
        offsets,
    };

    let mut mixture_rng = seeds::stream_rng(spec.seed, seeds::POPULATION, &[u64::MAX]);
    let mut clients = Vec::with_capacity(spec.num_clients);
    for k in 0..spec.num_clients {
        let true_mixture = mixture_for(spec, k, &mut mixture_rng);
        let test_mixture = if spec.inverse_test {
            complement_mixture(&true_mixture)
        } else {
            true_mixture.clone()
        };
        let split = |i: u64| seeds::stream_rng(spec.seed, seeds::POPULATION, &[k as u64, i]);
        let train = generator.sample(&true_mixture, spec.train_samples, &mut split(0))?;
        let test = generator.sample(&test_mixture, spec.test_samples, &mut split(1))?;
        let personal = generator.sample(&test_mixture, spec.personal_samples, &mut split(2))?;
        clients.push(ClientDataset {
            client_id: k,
            train,
            test,
            personal,
            ground_truth_tier: argmax(&true_mixture),
            true_mixture,
            test_mixture,
            true_mean: None,
        });
    }
    Ok(Population {
        kind: PopulationKind::Mixture(generator),
        clients,
    })
}

pub fn generate_gaussian_population(spec: &GaussianPopulationSpec) -> Result<Population> {
    spec.validate()?;
    let tau = spec.tau2.sqrt();
    let sigma = spec.sigma2.sqrt();
    let mut mean_rng = seeds::stream_rng(spec.seed, seeds::POPULATION, &[]);
    let m = spec.m1 + spec.m2;
    let client_means: Vec<f64> = (0..m)
        .map(|i| {
            let beta = if i < spec.m1 { spec.beta1 } else { spec.beta2 };
            beta + tau * mean_rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let mut clients = Vec::with_capacity(m);
    for (i, &mu) in client_means.iter().enumerate() {
        let tier = usize::from(i >= spec.m1);
        let obs = Normal::new(mu, sigma).map_err(|e| Error::invalid("population.sigma2", e.to_string()))?;
        let draw = |split: u64, n: usize| {
            let mut rng = seeds::stream_rng(spec.seed, seeds::POPULATION, &[i as u64, split]);
            LabeledDataset::scalar((0..n).map(|_| obs.sample(&mut rng)).collect())
        };
        let mut mixture = vec![0.0; 2];
        mixture[tier] = 1.0;
        clients.push(ClientDataset {
            client_id: i,
            train: draw(0, spec.train_samples),
            test: draw(1, spec.test_samples),
            personal: draw(2, spec.personal_samples),
            test_mixture: mixture.clone(),
            true_mixture: mixture,
            ground_truth_tier: tier,
            true_mean: Some(mu),
        });
    }
    Ok(Population {
        kind: PopulationKind::Gaussian(GaussianGenerator {
            spec: spec.clone(),
            client_means,
        }),
        clients,
    })
}
