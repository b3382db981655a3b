//! Residual feedforward classifier with hand-written backpropagation.
//!
//! ```text
//! h0   = x · W_in + b_in
//! h_b  = h_{b-1} + relu(h_{b-1} · W1_b + b1_b) · W2_b + b2_b     (b = 1..N)
//! out  = h_N · W_out + b_out
//! ```
//!
//! Only the hidden dimension of each block (columns of `W1`, entries of `b1`,
//! rows of `W2`) can be dropped, so every block may carry its own hidden
//! width once a model has been shrunk.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Purpose};

/// Architecture of a full-size model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Arch {
    pub input_dim: usize,
    pub model_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
}

impl Arch {
    pub fn new(input_dim: usize, model_dim: usize, hidden_dim: usize, num_blocks: usize, num_classes: usize) -> Self {
        Self { input_dim, model_dim, hidden_dim, num_blocks, num_classes }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("model_dim", self.model_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_blocks", self.num_blocks),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                bail!(Config, "{name} must be at least 1");
            }
        }
        Ok(())
    }

    /// Parameters of one feedforward block with the given hidden width.
    pub fn block_param_count(&self, hidden: usize) -> usize {
        2 * self.model_dim * hidden + hidden + self.model_dim
    }

    /// Parameters outside the feedforward blocks (input and output projections).
    pub fn exempt_param_count(&self) -> usize {
        (self.input_dim + 1) * self.model_dim + (self.model_dim + 1) * self.num_classes
    }

    pub fn ff_param_count(&self) -> usize {
        self.num_blocks * self.block_param_count(self.hidden_dim)
    }

    pub fn param_count(&self) -> usize {
        self.exempt_param_count() + self.ff_param_count()
    }

    /// Parameter count when block `b` keeps `hidden[b]` units.
    pub fn param_count_with_hidden(&self, hidden: &[usize]) -> usize {
        self.exempt_param_count() + hidden.iter().map(|&h| self.block_param_count(h)).sum::<usize>()
    }
}

/// One residual feedforward block: `out = in + relu(in · w1 + b1) · w2 + b2`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FFBlock {
    /// `model_dim × hidden`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `hidden × model_dim`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl FFBlock {
    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    fn zeros(model_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(model_dim, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, model_dim),
            b2: vec![0.0; model_dim],
        }
    }
}

/// Parameter tree of the classifier.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    /// `input_dim × model_dim`
    pub input_w: Matrix,
    pub input_b: Vec<f64>,
    pub blocks: Vec<FFBlock>,
    /// `model_dim × num_classes`
    pub output_w: Matrix,
    pub output_b: Vec<f64>,
}

/// Gradients and parameter deltas share the parameter tree layout.
pub type Gradients = ModelParams;

impl ModelParams {
    /// All-zero parameters for `arch`.
    pub fn zeros(arch: &Arch) -> Self {
        Self::zeros_with_hidden(arch, &vec![arch.hidden_dim; arch.num_blocks])
    }

    pub fn zeros_with_hidden(arch: &Arch, hidden: &[usize]) -> Self {
        Self {
            input_w: Matrix::zeros(arch.input_dim, arch.model_dim),
            input_b: vec![0.0; arch.model_dim],
            blocks: hidden.iter().map(|&h| FFBlock::zeros(arch.model_dim, h)).collect(),
            output_w: Matrix::zeros(arch.model_dim, arch.num_classes),
            output_b: vec![0.0; arch.num_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_with_hidden(&self.arch(), &self.hidden_dims())
    }

    pub fn input_dim(&self) -> usize {
        self.input_w.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.input_w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.output_w.cols()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(FFBlock::hidden_dim).collect()
    }

    /// The architecture this tree belongs to. For shrunk trees `hidden_dim`
    /// reports the widest block.
    pub fn arch(&self) -> Arch {
        Arch {
            input_dim: self.input_dim(),
            model_dim: self.model_dim(),
            hidden_dim: self.blocks.iter().map(FFBlock::hidden_dim).max().unwrap_or(0),
            num_blocks: self.blocks.len(),
            num_classes: self.num_classes(),
        }
    }

    /// Checks that every shape chains and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim();
        if self.blocks.is_empty() {
            bail!(Config, "a model needs at least one block");
        }
        if self.input_b.len() != d || self.output_w.rows() != d {
            bail!(Shape, "projection shapes do not chain through model_dim {d}");
        }
        if self.output_b.len() != self.num_classes() {
            bail!(Shape, "output bias length {} != num_classes {}", self.output_b.len(), self.num_classes());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let h = b.b1.len();
            if b.w1.shape() != (d, h) || b.w2.shape() != (h, d) || b.b2.len() != d {
                bail!(Shape, "block {i} shapes inconsistent with model_dim {d}, hidden {h}");
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            bail!(Data, "non-finite parameter value");
        }
        Ok(())
    }

    /// Flat views in declaration order: input projection, then per block
    /// `w1, b1, w2, b2`, then output projection.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 + 4 * self.blocks.len());
        out.push(self.input_w.as_slice());
        out.push(&self.input_b[..]);
        for b in &self.blocks {
            out.push(b.w1.as_slice());
            out.push(&b.b1[..]);
            out.push(b.w2.as_slice());
            out.push(&b.b2[..]);
        }
        out.push(self.output_w.as_slice());
        out.push(&self.output_b[..]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 + 4 * self.blocks.len());
        out.push(self.input_w.as_mut_slice());
        out.push(&mut self.input_b[..]);
        for b in &mut self.blocks {
            out.push(b.w1.as_mut_slice());
            out.push(&mut b.b1[..]);
            out.push(b.w2.as_mut_slice());
            out.push(&mut b.b2[..]);
        }
        out.push(self.output_w.as_mut_slice());
        out.push(&mut self.output_b[..]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
            && self.input_w.shape() == other.input_w.shape()
            && self.output_w.shape() == other.output_w.shape()
            && self.hidden_dims() == other.hidden_dims()
    }

    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter trees differ: hidden {:?} vs {:?}",
                self.hidden_dims(),
                other.hidden_dims()
            )))
        }
    }

    /// Applies `f(self_value, other_value)` elementwise, in place.
    pub fn zip_apply(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        self.check_congruent(other)?;
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                f(d, s);
            }
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Refills the tree from a flat vector in [`tensors`](Self::tensors) order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            bail!(Shape, "flat vector has {} values, tree has {}", flat.len(), self.param_count());
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }
}

/// Seeded initialization: weights `U(-1/√fan_in, 1/√fan_in)`, biases zero.
pub fn init_params(arch: &Arch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = rng::stream(seed, Purpose::Init, &[]);
    let mut params = ModelParams::zeros(arch);
    let mut fill = |m: &mut Matrix| {
        let scale = 1.0 / libm::sqrt(m.rows() as f64);
        for v in m.as_mut_slice() {
            *v = (2.0 * rng.random::<f64>() - 1.0) * scale;
        }
    };
    fill(&mut params.input_w);
    for b in &mut params.blocks {
        fill(&mut b.w1);
        fill(&mut b.w2);
    }
    fill(&mut params.output_w);
    Ok(params)
}

/// Intermediates retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Residual stream `h_0 … h_N`.
    stream: Vec<Matrix>,
    /// Post-ReLU hidden activations per block.
    activations: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Matrix,
    pub cache: ForwardCache,
}

pub fn forward(params: &ModelParams, features: &Matrix) -> Result<Forward> {
    if features.cols() != params.input_dim() {
        bail!(Shape, "features have {} columns, model expects {}", features.cols(), params.input_dim());
    }
    let mut stream = Vec::with_capacity(params.blocks.len() + 1);
    let mut activations = Vec::with_capacity(params.blocks.len());
    stream.push(features.matmul_bias(&params.input_w, &params.input_b));
    for block in &params.blocks {
        let input = stream.last().expect("stream starts non-empty");
        let mut act = input.matmul_bias(&block.w1, &block.b1);
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut out = act.matmul_bias(&block.w2, &block.b2);
        for (o, &i) in out.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *o += i;
        }
        activations.push(act);
        stream.push(out);
    }
    let last = stream.last().expect("stream starts non-empty");
    let logits = last.matmul_bias(&params.output_w, &params.output_b);
    Ok(Forward { logits, cache: ForwardCache { stream, activations } })
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        bail!(Shape, "{} labels for {} rows", labels.len(), rows);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        bail!(Data, "label {bad} out of range for {classes} classes");
    }
    Ok(())
}

/// Softmax probabilities of one logit row, and the row's log-sum-exp.
fn softmax_row(row: &[f64], probs: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(row) {
        *p = libm::exp(z - max);
        sum += *p;
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    max + libm::log(sum)
}

/// Mean softmax cross-entropy and its exact gradient.
pub fn loss_and_grads(params: &ModelParams, features: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
    if features.rows() == 0 {
        bail!(Data, "empty batch");
    }
    check_labels(labels, features.rows(), params.num_classes())?;
    let Forward { logits, cache } = forward(params, features)?;
    let batch = features.rows();
    let classes = params.num_classes();
    let inv_batch = 1.0 / batch as f64;

    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(batch, classes);
    for (r, &label) in labels.iter().enumerate() {
        let probs = &mut dlogits.as_mut_slice()[r * classes..(r + 1) * classes];
        let lse = softmax_row(logits.row(r), probs);
        loss += lse - logits.get(r, label);
        probs[label] -= 1.0;
        probs.iter_mut().for_each(|p| *p *= inv_batch);
    }
    loss *= inv_batch;

    let mut grads = params.zeros_like();
    let n = params.blocks.len();
    cache.stream[n].t_matmul_into(&dlogits, &mut grads.output_w);
    dlogits.col_sums_into(&mut grads.output_b);
    let mut dstream = dlogits.matmul_t(&params.output_w);

    for b in (0..n).rev() {
        let block = &params.blocks[b];
        let act = &cache.activations[b];
        let g = &mut grads.blocks[b];
        act.t_matmul_into(&dstream, &mut g.w2);
        dstream.col_sums_into(&mut g.b2);
        let mut dpre = dstream.matmul_t(&block.w2);
        for (d, &a) in dpre.as_mut_slice().iter_mut().zip(act.as_slice()) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        cache.stream[b].t_matmul_into(&dpre, &mut g.w1);
        dpre.col_sums_into(&mut g.b1);
        let through = dpre.matmul_t(&block.w1);
        for (d, &t) in dstream.as_mut_slice().iter_mut().zip(through.as_slice()) {
            *d += t;
        }
    }
    features.t_matmul_into(&dstream, &mut grads.input_w);
    dstream.col_sums_into(&mut grads.input_b);
    Ok((loss, grads))
}

/// Mean loss and classification error rate of a model on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    pub loss: f64,
    pub error: f64,
}

/// Argmax over each logit row; ties go to the lowest class index.
pub fn predict(params: &ModelParams, features: &Matrix) -> Result<Vec<usize>> {
    let logits = forward(params, features)?.logits;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn evaluate(params: &ModelParams, features: &Matrix, labels: &[usize]) -> Result<EvalResult> {
    if features.rows() == 0 {
        bail!(Data, "empty evaluation set");
    }
    check_labels(labels, features.rows(), params.num_classes())?;
    let logits = forward(params, features)?.logits;
    let mut probs = vec![0.0; params.num_classes()];
    let mut loss = 0.0;
    let mut wrong = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        loss += softmax_row(row, &mut probs) - row[label];
        let mut best = 0;
        for (c, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = c;
            }
        }
        if best != label {
            wrong += 1;
        }
    }
    let n = labels.len() as f64;
    Ok(EvalResult { loss: loss / n, error: wrong as f64 / n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_arch() -> Arch {
        Arch::new(4, 8, 16, 2, 3)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&toy_arch(), 11).unwrap();
        let b = init_params(&toy_arch(), 11).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_ne!(a.flatten(), init_params(&toy_arch(), 12).unwrap().flatten());
        assert!(a.input_b.iter().chain(&a.output_b).all(|&v| v == 0.0));
        assert!(a.blocks.iter().all(|b| b.b1.iter().chain(&b.b2).all(|&v| v == 0.0)));
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.blocks[0].w1.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn param_count_matches_formula() {
        let arch = toy_arch();
        let expected = (4 * 8 + 8) + 2 * (8 * 16 + 16 + 16 * 8 + 8) + (8 * 3 + 3);
        assert_eq!(arch.param_count(), expected);
        assert_eq!(init_params(&arch, 0).unwrap().param_count(), expected);

        let doubled = Arch { num_blocks: 4, ..arch };
        assert_eq!(doubled.param_count() - arch.param_count(), 2 * (8 * 16 * 2 + 16 + 8));
    }

    #[test]
    fn invalid_dims_are_config_errors() {
        let bad = Arch { hidden_dim: 0, ..toy_arch() };
        assert!(matches!(init_params(&bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let p = ModelParams::zeros(&toy_arch());
        let x = Matrix::from_vec(2, 4, vec![1.0, -2.0, 3.0, 0.5, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = forward(&p, &x).unwrap();
        assert!(out.logits.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.logits.shape(), (2, 3));
    }

    #[test]
    fn zero_block_is_residual_identity() {
        let mut p = init_params(&toy_arch(), 3).unwrap();
        for b in &mut p.blocks {
            *b = FFBlock::zeros(8, 16);
        }
        let x = Matrix::from_vec(1, 4, vec![0.3, -0.7, 1.1, 2.0]).unwrap();
        let out = forward(&p, &x).unwrap();
        assert_eq!(out.cache.stream[0], out.cache.stream[1]);
        assert_eq!(out.cache.stream[1], out.cache.stream[2]);
    }

    #[test]
    fn hand_computed_two_by_two_forward() {
        // input 2 -> model 2 -> hidden 2 -> classes 2, one block.
        let p = ModelParams {
            input_w: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            input_b: vec![0.0, 0.0],
            blocks: vec![FFBlock {
                w1: Matrix::from_vec(2, 2, vec![1.0, -1.0, 2.0, 1.0]).unwrap(),
                b1: vec![0.5, 0.0],
                w2: Matrix::from_vec(2, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap(),
                b2: vec![0.0, -1.0],
            }],
            output_w: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            output_b: vec![0.1, 0.2],
        };
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        // h0 = (1, 2); pre = (1+4+0.5, -1+2) = (5.5, 1); relu same
        // ff = (5.5 + 1, 1) + (0, -1) = (6.5, 0); h1 = (7.5, 2)
        // logits = (7.5 + 6 + 0.1, 15 + 8 + 0.2) = (13.6, 23.2)
        let logits = forward(&p, &x).unwrap().logits;
        assert!((logits.get(0, 0) - 13.6).abs() < 1e-12);
        assert!((logits.get(0, 1) - 23.2).abs() < 1e-12);
    }

    #[test]
    fn batch_rows_are_independent() {
        let p = init_params(&toy_arch(), 5).unwrap();
        let mut rng = rng::stream(1, Purpose::DataEval, &[]);
        let vals: Vec<f64> = (0..32).map(|_| rng.random::<f64>() - 0.5).collect();
        let batch = Matrix::from_vec(8, 4, vals).unwrap();
        let full = forward(&p, &batch).unwrap().logits;
        for r in 0..8 {
            let single = Matrix::from_vec(1, 4, batch.row(r).to_vec()).unwrap();
            assert_eq!(forward(&p, &single).unwrap().logits.row(0), full.row(r));
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let p = ModelParams::zeros(&toy_arch());
        let x = Matrix::from_vec(3, 4, vec![0.5; 12]).unwrap();
        let (loss, _) = loss_and_grads(&p, &x, &[0, 1, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let p = init_params(&toy_arch(), 8).unwrap();
        let x = Matrix::from_vec(2, 4, vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0, 0.5, 0.0]).unwrap();
        let mut doubled = x.as_slice().to_vec();
        doubled.extend_from_slice(x.as_slice());
        let xx = Matrix::from_vec(4, 4, doubled).unwrap();
        let (l1, _) = loss_and_grads(&p, &x, &[0, 2]).unwrap();
        let (l2, _) = loss_and_grads(&p, &xx, &[0, 2, 0, 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let p = init_params(&toy_arch(), 8).unwrap();
        let x = Matrix::from_vec(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(loss_and_grads(&p, &x, &[3]), Err(Error::Data(_))));
        let wrong = Matrix::from_vec(1, 5, vec![0.0; 5]).unwrap();
        assert!(matches!(forward(&p, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&toy_arch(), 4).unwrap();
        let mut q = p.zeros_like();
        q.load_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.load_flat(&[0.0]).is_err());
    }
}
