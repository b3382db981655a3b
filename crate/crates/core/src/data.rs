//! Seeded synthetic federated datasets.
//!
//! Each class is a mixture of Gaussian modes; each domain shifts every
//! feature vector by a fixed random offset; each client belongs to one domain
//! and draws labels from its own Dirichlet class distribution, which makes
//! clients non-IID. Per-domain evaluation sets are drawn from a uniform class
//! distribution and are never part of any client's data.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Purpose, Stream};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub domain: usize,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub domain: usize,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GeneratorConfig {
    pub num_domains: usize,
    pub num_clients: usize,
    pub examples_per_client: usize,
    pub eval_examples_per_domain: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Gaussian modes per class.
    pub modes_per_class: usize,
    /// Standard deviation of mode centres around the origin; unit noise
    /// around each centre.
    pub class_separation: f64,
    /// Dirichlet concentration of per-client class distributions.
    pub class_skew: f64,
    /// Norm of each domain's mean offset.
    pub domain_shift: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_domains", self.num_domains),
            ("num_clients", self.num_clients),
            ("examples_per_client", self.examples_per_client),
            ("eval_examples_per_domain", self.eval_examples_per_domain),
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
            ("modes_per_class", self.modes_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                bail!(Config, "{name} must be at least 1");
            }
        }
        if self.num_clients < self.num_domains {
            bail!(Config, "{} clients cannot cover {} domains", self.num_clients, self.num_domains);
        }
        if !self.class_skew.is_finite() || self.class_skew <= 0.0 {
            bail!(Config, "class_skew must be positive and finite");
        }
        if !self.domain_shift.is_finite() || self.domain_shift < 0.0 {
            bail!(Config, "domain_shift must be non-negative and finite");
        }
        if !self.class_separation.is_finite() || self.class_separation < 0.0 {
            bail!(Config, "class_separation must be non-negative and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub config: GeneratorConfig,
    pub clients: Vec<ClientData>,
    /// One evaluation set per domain, ordered by domain.
    pub eval: Vec<EvalSet>,
}

impl FederatedDataset {
    pub fn num_domains(&self) -> usize {
        self.eval.len()
    }

    pub fn eval_for(&self, domain: usize) -> Option<&EvalSet> {
        self.eval.iter().find(|e| e.domain == domain)
    }

    /// All evaluation examples, domain by domain.
    pub fn all_eval(&self) -> Vec<Example> {
        self.eval.iter().flat_map(|e| e.examples.iter().cloned()).collect()
    }

    /// Checks every client is non-empty and every domain has a client and an
    /// evaluation set.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clients.iter().find(|c| c.examples.is_empty()) {
            bail!(Data, "client {} has no examples", c.id);
        }
        for d in 0..self.config.num_domains {
            if !self.clients.iter().any(|c| c.domain == d) {
                bail!(Data, "domain {d} has no clients");
            }
            match self.eval_for(d) {
                Some(e) if !e.examples.is_empty() => {}
                _ => bail!(Data, "domain {d} has no evaluation set"),
            }
        }
        Ok(())
    }
}

/// Dense features and labels ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<Self> {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for e in examples {
            match dim {
                None => dim = Some(e.features.len()),
                Some(d) if d != e.features.len() => {
                    bail!(Shape, "mixed feature dimensions {d} and {}", e.features.len())
                }
                _ => {}
            }
            values.extend_from_slice(&e.features);
            labels.push(e.label);
        }
        let features = Matrix::from_vec(labels.len(), dim.unwrap_or(0), values)?;
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn normal_vec(rng: &mut Stream, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Samples a probability vector from a symmetric Dirichlet(`alpha`).
fn dirichlet(rng: &mut Stream, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|_| crate::Error::Config(alloc::format!("bad Dirichlet concentration {alpha}")))?;
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|v| *v /= sum);
    } else {
        // All draws underflowed: collapse onto one class.
        let c = rng.random_range(0..k);
        draws = vec![0.0; k];
        draws[c] = 1.0;
    }
    Ok(draws)
}

fn categorical(rng: &mut Stream, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

struct Mixture {
    /// `centres[class][mode]`
    centres: Vec<Vec<Vec<f64>>>,
    offsets: Vec<Vec<f64>>,
}

impl Mixture {
    fn new(config: &GeneratorConfig) -> Self {
        let mut rng = rng::stream(config.seed, Purpose::DataMixture, &[]);
        let centres = (0..config.num_classes)
            .map(|_| {
                (0..config.modes_per_class)
                    .map(|_| normal_vec(&mut rng, config.input_dim, config.class_separation))
                    .collect()
            })
            .collect();
        let offsets = (0..config.num_domains)
            .map(|_| {
                let dir = normal_vec(&mut rng, config.input_dim, 1.0);
                let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
                dir.iter().map(|v| v / norm * config.domain_shift).collect()
            })
            .collect();
        Self { centres, offsets }
    }

    fn example(&self, rng: &mut Stream, label: usize, domain: usize) -> Example {
        let modes = &self.centres[label];
        let centre = &modes[rng.random_range(0..modes.len())];
        let features = centre
            .iter()
            .zip(&self.offsets[domain])
            .map(|(c, o)| {
                let noise: f64 = StandardNormal.sample(rng);
                c + o + noise
            })
            .collect();
        Example { features, label, domain }
    }
}

/// Generates the dataset; a pure function of `config`. Client `i` belongs to
/// domain `i mod num_domains`.
pub fn generate(config: &GeneratorConfig) -> Result<FederatedDataset> {
    config.validate()?;
    let mixture = Mixture::new(config);
    let clients = (0..config.num_clients)
        .map(|id| {
            let domain = id % config.num_domains;
            let mut rng = rng::stream(config.seed, Purpose::DataClient, &[id as u64]);
            let probs = dirichlet(&mut rng, config.class_skew, config.num_classes)?;
            let examples = (0..config.examples_per_client)
                .map(|_| {
                    let label = categorical(&mut rng, &probs);
                    mixture.example(&mut rng, label, domain)
                })
                .collect();
            Ok(ClientData { id, domain, examples })
        })
        .collect::<Result<Vec<_>>>()?;
    let eval = (0..config.num_domains)
        .map(|domain| {
            let mut rng = rng::stream(config.seed, Purpose::DataEval, &[domain as u64]);
            let examples = (0..config.eval_examples_per_domain)
                .map(|_| {
                    let label = rng.random_range(0..config.num_classes);
                    mixture.example(&mut rng, label, domain)
                })
                .collect();
            EvalSet { domain, examples }
        })
        .collect();
    Ok(FederatedDataset { config: config.clone(), clients, eval })
}

/// Clients and evaluation data partitioned around one withheld domain.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub pretrain: Vec<ClientData>,
    pub adapt: Vec<ClientData>,
    pub holdout_eval: Vec<Example>,
    /// Evaluation examples of every other domain.
    pub seen_eval: Vec<Example>,
}

pub fn split_holdout(dataset: &FederatedDataset, holdout_domain: usize) -> Result<HoldoutSplit> {
    let Some(eval) = dataset.eval_for(holdout_domain) else {
        bail!(Config, "holdout domain {holdout_domain} does not exist");
    };
    if !dataset.clients.iter().any(|c| c.domain == holdout_domain) {
        bail!(Config, "holdout domain {holdout_domain} has no clients");
    }
    let (adapt, pretrain) = dataset.clients.iter().cloned().partition(|c| c.domain == holdout_domain);
    let seen_eval =
        dataset.eval.iter().filter(|e| e.domain != holdout_domain).flat_map(|e| e.examples.iter().cloned()).collect();
    Ok(HoldoutSplit { pretrain, adapt, holdout_eval: eval.examples.clone(), seen_eval })
}

/// Per-class frequencies of a set of examples.
pub fn class_histogram(examples: &[Example], num_classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; num_classes];
    for e in examples {
        h[e.label] += 1.0;
    }
    let n = examples.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Mean total-variation distance between each client's class histogram and
/// the pooled histogram of all clients.
pub fn mean_client_tv_distance(dataset: &FederatedDataset) -> f64 {
    let k = dataset.config.num_classes;
    let pooled: Vec<Example> = dataset.clients.iter().flat_map(|c| c.examples.iter().cloned()).collect();
    let global = class_histogram(&pooled, k);
    let total: f64 = dataset
        .clients
        .iter()
        .map(|c| {
            let h = class_histogram(&c.examples, k);
            0.5 * h.iter().zip(&global).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    total / dataset.clients.len() as f64
}
