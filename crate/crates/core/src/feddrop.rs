//! Federated Dropout mechanics: which hidden units each client keeps, how a
//! full model is shrunk to a client sub-model, and how a sub-model update is
//! scattered back to full-model coordinates.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Arch, FFBlock, ModelParams};
use crate::rng::{self, Purpose, Stream};

/// How mappings are shared between the clients of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scheme {
    /// Per client per round: every client draws its own mapping.
    Pcpr,
    /// Per round: one mapping per round, shared by all clients.
    Pr,
}

/// Number of hidden units kept: `max(1, round((1 − rate)·hidden))`,
/// rounding half away from zero.
pub fn kept_count(hidden_dim: usize, rate: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rate) {
        bail!(Config, "dropout rate must lie in [0, 1), got {rate}");
    }
    if hidden_dim == 0 {
        bail!(Config, "hidden_dim must be at least 1");
    }
    let kept = libm::round((1.0 - rate) * hidden_dim as f64) as usize;
    Ok(kept.clamp(1, hidden_dim))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DropoutConfig {
    /// One dropout fraction per feedforward block.
    pub rates: Vec<f64>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl DropoutConfig {
    pub fn uniform(rate: f64, num_blocks: usize, scheme: Scheme, seed: u64) -> Self {
        Self { rates: alloc::vec![rate; num_blocks], scheme, seed }
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if self.rates.len() != num_blocks {
            bail!(Config, "{} dropout rates for {} blocks", self.rates.len(), num_blocks);
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            bail!(Config, "dropout rate {r} outside [0, 1)");
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.rates.iter().all(|&r| r == 0.0)
    }
}

/// Kept hidden-unit indices per feedforward block, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct DropoutMapping {
    kept: Vec<Vec<usize>>,
}

impl DropoutMapping {
    /// Builds a mapping after checking each index list is strictly increasing.
    pub fn new(kept: Vec<Vec<usize>>) -> Result<Self> {
        for (b, idx) in kept.iter().enumerate() {
            if idx.is_empty() {
                bail!(Mapping, "block {b} keeps no units");
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                bail!(Mapping, "block {b} indices not strictly increasing");
            }
        }
        Ok(Self { kept })
    }

    /// Keeps every unit of every block.
    pub fn full(hidden_dims: &[usize]) -> Self {
        Self { kept: hidden_dims.iter().map(|&h| (0..h).collect()).collect() }
    }

    pub fn kept(&self) -> &[Vec<usize>] {
        &self.kept
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.kept.iter().map(Vec::len).collect()
    }

    /// Errors unless the mapping has one list per block with indices below
    /// that block's hidden width.
    pub fn check_fits(&self, hidden_dims: &[usize]) -> Result<()> {
        if self.kept.len() != hidden_dims.len() {
            bail!(Mapping, "mapping has {} blocks, model has {}", self.kept.len(), hidden_dims.len());
        }
        for (b, (idx, &h)) in self.kept.iter().zip(hidden_dims).enumerate() {
            if let Some(&last) = idx.last() {
                if last >= h {
                    bail!(Mapping, "block {b} index {last} out of range for hidden {h}");
                }
            }
        }
        Ok(())
    }

    /// Draws a mapping: per block, `kept_count` indices uniformly without
    /// replacement, then sorted.
    pub fn sample(hidden_dims: &[usize], rates: &[f64], rng: &mut Stream) -> Result<Self> {
        if hidden_dims.len() != rates.len() {
            bail!(Config, "{} rates for {} blocks", rates.len(), hidden_dims.len());
        }
        let mut kept = Vec::with_capacity(hidden_dims.len());
        for (&h, &rate) in hidden_dims.iter().zip(rates) {
            let k = kept_count(h, rate)?;
            let mut idx = index::sample(rng, h, k).into_vec();
            idx.sort_unstable();
            kept.push(idx);
        }
        Ok(Self { kept })
    }
}

/// The mappings of one round, indexed by client slot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MappingSet {
    pub round: u64,
    pub mappings: Vec<DropoutMapping>,
}

/// Mappings for `clients` slots of `round`.
///
/// PCPR draws slot `k` from the stream keyed by `(seed, round, k)`; PR draws
/// once from `(seed, round)` and replicates.
pub fn generate_mappings(config: &DropoutConfig, clients: usize, round: u64, arch: &Arch) -> Result<MappingSet> {
    if clients == 0 {
        bail!(Config, "clients per round must be at least 1");
    }
    config.validate(arch.num_blocks)?;
    let hidden = alloc::vec![arch.hidden_dim; arch.num_blocks];
    let mappings = match config.scheme {
        Scheme::Pcpr => (0..clients)
            .map(|k| {
                let mut rng = rng::stream(config.seed, Purpose::Mapping, &[round, k as u64]);
                DropoutMapping::sample(&hidden, &config.rates, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?,
        Scheme::Pr => {
            let mut rng = rng::stream(config.seed, Purpose::Mapping, &[round]);
            let m = DropoutMapping::sample(&hidden, &config.rates, &mut rng)?;
            alloc::vec![m; clients]
        }
    };
    Ok(MappingSet { round, mappings })
}

/// Sub-model induced by `mapping`: columns of `w1`, entries of `b1` and rows
/// of `w2` at the kept indices. Projections and `b2` are copied unchanged and
/// kept weights are not rescaled.
pub fn shrink(params: &ModelParams, mapping: &DropoutMapping) -> Result<ModelParams> {
    mapping.check_fits(&params.hidden_dims())?;
    let blocks = params
        .blocks
        .iter()
        .zip(mapping.kept())
        .map(|(b, idx)| FFBlock {
            w1: b.w1.select_cols(idx),
            b1: idx.iter().map(|&i| b.b1[i]).collect(),
            w2: b.w2.select_rows(idx),
            b2: b.b2.clone(),
        })
        .collect();
    Ok(ModelParams {
        input_w: params.input_w.clone(),
        input_b: params.input_b.clone(),
        blocks,
        output_w: params.output_w.clone(),
        output_b: params.output_b.clone(),
    })
}

/// Marks the full-model coordinates a sub-model update wrote (1.0) or left
/// untouched (0.0).
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMask(ModelParams);

impl CoverageMask {
    pub fn tree(&self) -> &ModelParams {
        &self.0
    }

    pub fn covered_count(&self) -> usize {
        self.0.tensors().iter().map(|t| t.iter().filter(|&&v| v == 1.0).count()).sum()
    }
}

/// Scatters a sub-model-shaped tree back into full shape. Coordinates of
/// dropped units are zero and unmarked in the coverage mask.
pub fn expand(delta_sub: &ModelParams, mapping: &DropoutMapping, full: &Arch) -> Result<(ModelParams, CoverageMask)> {
    let full_hidden = alloc::vec![full.hidden_dim; full.num_blocks];
    mapping.check_fits(&full_hidden)?;
    let expected = ModelParams::zeros_with_hidden(full, &mapping.kept_counts());
    delta_sub.check_congruent(&expected).map_err(|_| {
        Error::Shape(format!("sub-model tree does not match mapping kept counts {:?}", mapping.kept_counts()))
    })?;

    let mut out = ModelParams::zeros(full);
    let mut mask = ModelParams::zeros(full);
    out.input_w = delta_sub.input_w.clone();
    out.input_b = delta_sub.input_b.clone();
    out.output_w = delta_sub.output_w.clone();
    out.output_b = delta_sub.output_b.clone();
    for t in [&mut mask.input_w, &mut mask.output_w] {
        fill(t, 1.0);
    }
    mask.input_b.fill(1.0);
    mask.output_b.fill(1.0);

    let model_dim = full.model_dim;
    for ((sub, idx), (dst, msk)) in
        delta_sub.blocks.iter().zip(mapping.kept()).zip(out.blocks.iter_mut().zip(mask.blocks.iter_mut()))
    {
        for r in 0..model_dim {
            for (j, &i) in idx.iter().enumerate() {
                dst.w1.set(r, i, sub.w1.get(r, j));
                msk.w1.set(r, i, 1.0);
            }
        }
        for (j, &i) in idx.iter().enumerate() {
            dst.b1[i] = sub.b1[j];
            msk.b1[i] = 1.0;
            for c in 0..model_dim {
                dst.w2.set(i, c, sub.w2.get(j, c));
                msk.w2.set(i, c, 1.0);
            }
        }
        dst.b2.copy_from_slice(&sub.b2);
        msk.b2.fill(1.0);
    }
    Ok((out, CoverageMask(mask)))
}

fn fill(m: &mut Matrix, v: f64) {
    m.as_mut_slice().fill(v);
}

/// Fraction of parameters removed from a client model:
/// `1 − |shrunk| / |full|`, with block widths from [`kept_count`].
pub fn size_reduction(arch: &Arch, rates: &[f64]) -> Result<f64> {
    arch.validate()?;
    if rates.len() != arch.num_blocks {
        bail!(Config, "{} rates for {} blocks", rates.len(), arch.num_blocks);
    }
    let kept = rates.iter().map(|&r| kept_count(arch.hidden_dim, r)).collect::<Result<Vec<_>>>()?;
    let shrunk = arch.param_count_with_hidden(&kept) as f64;
    Ok(1.0 - shrunk / arch.param_count() as f64)
}

/// Parameter count of the sub-model every client receives under `rates`.
pub fn client_param_count(arch: &Arch, rates: &[f64]) -> Result<usize> {
    let kept = rates.iter().map(|&r| kept_count(arch.hidden_dim, r)).collect::<Result<Vec<_>>>()?;
    Ok(arch.param_count_with_hidden(&kept))
}

/// Builds an accounting-only architecture whose feedforward blocks hold
/// `ff_fraction` of all parameters, at roughly `total_params_target` total.
///
/// The droppable part of the blocks (`w1`, `b1`, `w2`) is sized to at least
/// `ff_fraction` of the total, so the never-dropped `b2` biases lift the full
/// block share slightly above it. Hidden widths are multiples of 20, which
/// makes rates on a 5% grid drop an exact number of units.
pub fn make_table3_arch(ff_fraction: f64, total_params_target: usize) -> Result<Arch> {
    if !(ff_fraction > 0.0 && ff_fraction < 1.0) {
        bail!(Config, "ff_fraction must lie in (0, 1), got {ff_fraction}");
    }
    const BLOCKS: usize = 2;
    const CLASSES: usize = 2;
    const HIDDEN_STEP: usize = 20;
    let total = total_params_target as f64;
    let model_dim = ((libm::sqrt(total) / 8.0) as usize).max(2);
    let per_unit = BLOCKS * (2 * model_dim + 1);
    let hidden = ((ff_fraction * total / per_unit as f64) as usize / HIDDEN_STEP) * HIDDEN_STEP;
    if hidden == 0 {
        bail!(Config, "target of {total_params_target} parameters too small for ff_fraction {ff_fraction}");
    }
    let droppable = (per_unit * hidden) as f64;
    let ff = droppable + (BLOCKS * model_dim) as f64;
    let exempt_budget = droppable / ff_fraction - ff;
    let fixed = (model_dim + (model_dim + 1) * CLASSES) as f64;
    let input_dim = libm::floor((exempt_budget - fixed) / model_dim as f64);
    if input_dim < 1.0 {
        bail!(Config, "no input projection fits ff_fraction {ff_fraction} at {total_params_target} parameters");
    }
    let arch = Arch::new(input_dim as usize, model_dim, hidden, BLOCKS, CLASSES);
    let share = arch.ff_param_count() as f64 / arch.param_count() as f64;
    if (share - ff_fraction).abs() > 0.005 {
        bail!(Config, "feedforward share {share:.4} misses {ff_fraction} at {total_params_target} parameters");
    }
    Ok(arch)
}
