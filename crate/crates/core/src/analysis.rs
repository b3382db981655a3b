//! Post-training analyses: which blocks are ambient (cheap to reset), how to
//! turn that ranking into per-block dropout rates, and how good sub-models
//! sampled from a trained full model are without further training.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::{bail, Result};
use crate::feddrop::{self, DropoutMapping};
use crate::fedsim;
use crate::nn::ModelParams;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AmbientRanking {
    /// Block indices, most ambient (smallest degradation) first.
    pub order: Vec<usize>,
    /// Error increase when the block is reset, indexed by block.
    pub degradation: Vec<f64>,
    pub trained_error: f64,
}

/// `trained` with block `block` replaced by its initial values.
pub fn reset_block(trained: &ModelParams, init: &ModelParams, block: usize) -> Result<ModelParams> {
    trained.check_congruent(init)?;
    if block >= trained.blocks.len() {
        bail!(Config, "block {block} out of range");
    }
    let mut out = trained.clone();
    out.blocks[block] = init.blocks[block].clone();
    Ok(out)
}

/// Resets each block in turn and ranks blocks by the resulting error increase.
pub fn ambient_rank(trained: &ModelParams, init: &ModelParams, eval: &Batch) -> Result<AmbientRanking> {
    trained.check_congruent(init)?;
    let trained_error = fedsim::evaluate(trained, eval)?.error;
    let degradation = (0..trained.blocks.len())
        .map(|b| Ok(fedsim::evaluate(&reset_block(trained, init, b)?, eval)?.error - trained_error))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..degradation.len()).collect();
    // stable sort keeps lower block indices first on ties
    order.sort_by(|&a, &b| degradation[a].total_cmp(&degradation[b]));
    Ok(AmbientRanking { order, degradation, trained_error })
}

/// Per-block rates: the block at ambient rank `n` gets `base_rate + extra[n]`.
pub fn assign_rates(base_rate: f64, extra: &[f64], ranking: &AmbientRanking) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&base_rate) {
        bail!(Config, "base rate {base_rate} outside [0, 1)");
    }
    let mut rates = vec![base_rate; ranking.order.len()];
    for (rank, &block) in ranking.order.iter().enumerate() {
        let rate = base_rate + extra.get(rank).copied().unwrap_or(0.0);
        if !(0.0..1.0).contains(&rate) {
            bail!(Config, "rate {rate} for ambient rank {rank} outside [0, 1)");
        }
        rates[block] = rate;
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubModelReport {
    pub n: usize,
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `errors`.
    pub std: f64,
    pub rate: f64,
    pub seed: u64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Evaluates `n` sub-models drawn at a uniform `rate` from `trained`, with no
/// further training. Sample `i` uses the stream keyed by `(seed, i)`.
pub fn sample_submodels(trained: &ModelParams, rate: f64, n: usize, seed: u64, eval: &Batch) -> Result<SubModelReport> {
    if n == 0 {
        bail!(Config, "at least one sub-model sample is required");
    }
    let hidden = trained.hidden_dims();
    let rates = vec![rate; hidden.len()];
    let errors = (0..n as u64)
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::SubModel, &[i]);
            let mapping = DropoutMapping::sample(&hidden, &rates, &mut rng)?;
            let sub = feddrop::shrink(trained, &mapping)?;
            Ok(fedsim::evaluate(&sub, eval)?.error)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&errors);
    Ok(SubModelReport { n, errors, mean, std, rate, seed })
}
