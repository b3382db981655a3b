//! The frozen standard synthetic task and the run settings calibrated on it.
//!
//! Every directional threshold in the acceptance suite was calibrated against
//! exactly these values; changing any of them invalidates the calibration.

use crate::data::GeneratorConfig;
use crate::feddrop::{DropoutConfig, Scheme};
use crate::fedsim::{AggregationRule, CentralizedConfig, FederatedConfig, ServerOptimizer};
use crate::nn::Arch;
use crate::optim::AdamConfig;

pub const STANDARD_DATA_SEED: u64 = 20_220_415;

pub fn standard_generator() -> GeneratorConfig {
    GeneratorConfig {
        num_domains: 3,
        num_clients: 300,
        examples_per_client: 32,
        eval_examples_per_domain: 2000,
        input_dim: 8,
        num_classes: 4,
        modes_per_class: 3,
        class_separation: 1.5,
        class_skew: 0.5,
        domain_shift: 2.0,
        seed: STANDARD_DATA_SEED,
    }
}

pub fn standard_arch() -> Arch {
    Arch::new(8, 16, 32, 3, 4)
}

/// From-scratch FedDrop settings: client SGD, server Adam, 128 clients per round.
pub fn standard_federated(rates: &[f64], seed: u64) -> FederatedConfig {
    FederatedConfig {
        rounds: 150,
        clients_per_round: 128,
        client_lr: 0.1,
        local_steps: 4,
        batch_size: 16,
        server_optimizer: ServerOptimizer::Adam(AdamConfig::default()),
        dropout: DropoutConfig { rates: rates.to_vec(), scheme: Scheme::Pcpr, seed },
        aggregation: AggregationRule::CoveringMean,
        seed,
    }
}

/// Pooled pretraining for the domain-adaptation baseline.
pub fn standard_pretrain(seed: u64) -> CentralizedConfig {
    CentralizedConfig { steps: 3000, batch_size: 64, optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, seed }
}

/// Federated fine-tuning on the held-out domain (100 clients in the standard task).
pub fn standard_adapt(rates: &[f64], seed: u64) -> FederatedConfig {
    FederatedConfig { rounds: 60, clients_per_round: 64, ..standard_federated(rates, seed) }
}

pub const STANDARD_HOLDOUT_DOMAIN: usize = 2;
