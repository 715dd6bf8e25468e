//! The set-sequence network.
//!
//! Data flow for one user:
//!
//! ```text
//! M --gather(I)--> M_U ─┐
//!                       ├─ concat ─> Z ─> PE ─> Z̃ ─┬─> EE ──────────> O_e ─┐
//! C (membership) ───────┘                          └─> sum ─> MLP ─> Z̄     ├─> fuse ─> Ŷ
//!                                                        M · Z̄ ──> O_s ────┘
//! ```
//!
//! The forward pass is generic over [`Real`] so the benchmark can run it in
//! `f32`; the backward pass is `f64` only.

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSample;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    self, affine, affine_backward, column_sums, dot, outer_accumulate, row_reduce, vec_affine, vec_affine_input_grad,
    Activation, Matrix, Real, Reduce,
};

/// Column order of `Z`: membership columns first, then the embedding.
pub const CONCAT_LAYOUT: &str = "membership|embedding";

/// Which scoring branches feed the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Element evaluator removed: `Ŷ = α ⊙ O_s`.
    WithoutElementEvaluator,
    /// Global evaluator removed: `Ŷ_j = β_j O_e` on in-sequence elements, 0 elsewhere.
    WithoutGlobalEvaluator,
}

impl Variant {
    pub fn uses_element_scores(self) -> bool {
        self != Variant::WithoutElementEvaluator
    }

    pub fn uses_global_scores(self) -> bool {
        self != Variant::WithoutGlobalEvaluator
    }
}

/// Name and weight-decay eligibility of every learnable slot, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotInfo {
    pub name: &'static str,
    pub decayed: bool,
}

const fn slot(name: &'static str, decayed: bool) -> SlotInfo {
    SlotInfo { name, decayed }
}

pub const SLOT_COUNT: usize = 16;

pub const SLOTS: [SlotInfo; SLOT_COUNT] = [
    slot("embedding", true),
    slot("pe_w_global", true),
    slot("pe_w_local", true),
    slot("pe_bias", false),
    slot("ee_w1", true),
    slot("ee_b1", false),
    slot("ee_w2", true),
    slot("ee_b2", false),
    slot("pi_w1", true),
    slot("pi_b1", false),
    slot("pi_w2", true),
    slot("pi_b2", false),
    slot("pi_w3", true),
    slot("pi_b3", false),
    slot("alpha", false),
    slot("beta", false),
];

/// All learnable parameters.
///
/// Shapes, with `E` the vocabulary, `D` the embedding width and `K` the
/// history length:
///
/// | slot | shape |
/// |------|-------|
/// | `embedding` | E × D |
/// | `pe_w_global`, `pe_w_local` | (K+D) × D |
/// | `pe_bias`, `ee_b1`, `ee_w2`, `pi_b*` | D |
/// | `ee_w1`, `pi_w*` | D × D |
/// | `ee_b2` | scalar |
/// | `alpha`, `beta` | E |
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f64> {
    pub embedding: Matrix<T>,
    pub pe_w_global: Matrix<T>,
    pub pe_w_local: Matrix<T>,
    pub pe_bias: Vec<T>,
    pub ee_w1: Matrix<T>,
    pub ee_b1: Vec<T>,
    pub ee_w2: Vec<T>,
    pub ee_b2: T,
    pub pi_w1: Matrix<T>,
    pub pi_b1: Vec<T>,
    pub pi_w2: Matrix<T>,
    pub pi_b2: Vec<T>,
    pub pi_w3: Matrix<T>,
    pub pi_b3: Vec<T>,
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
}

/// Gradients share the parameter layout slot for slot.
pub type Gradients = ModelParams<f64>;

/// Model dimensions; everything else follows from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab_size: usize,
    pub dim: usize,
    pub max_len: usize,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            vocab_size: e,
            dim: d,
            max_len: k,
        } = dims;
        Self {
            embedding: Matrix::zeros(e, d),
            pe_w_global: Matrix::zeros(k + d, d),
            pe_w_local: Matrix::zeros(k + d, d),
            pe_bias: vec![T::zero(); d],
            ee_w1: Matrix::zeros(d, d),
            ee_b1: vec![T::zero(); d],
            ee_w2: vec![T::zero(); d],
            ee_b2: T::zero(),
            pi_w1: Matrix::zeros(d, d),
            pi_b1: vec![T::zero(); d],
            pi_w2: Matrix::zeros(d, d),
            pi_b2: vec![T::zero(); d],
            pi_w3: Matrix::zeros(d, d),
            pi_b3: vec![T::zero(); d],
            alpha: vec![T::zero(); e],
            beta: vec![T::zero(); e],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab_size: self.embedding.rows(),
            dim: self.embedding.cols(),
            max_len: self.pe_w_global.rows() - self.embedding.cols(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    /// Flat views of every slot in [`SLOTS`] order.
    pub fn slices(&self) -> [&[T]; SLOT_COUNT] {
        [
            self.embedding.as_slice(),
            self.pe_w_global.as_slice(),
            self.pe_w_local.as_slice(),
            &self.pe_bias,
            self.ee_w1.as_slice(),
            &self.ee_b1,
            &self.ee_w2,
            std::slice::from_ref(&self.ee_b2),
            self.pi_w1.as_slice(),
            &self.pi_b1,
            self.pi_w2.as_slice(),
            &self.pi_b2,
            self.pi_w3.as_slice(),
            &self.pi_b3,
            &self.alpha,
            &self.beta,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; SLOT_COUNT] {
        [
            self.embedding.as_mut_slice(),
            self.pe_w_global.as_mut_slice(),
            self.pe_w_local.as_mut_slice(),
            &mut self.pe_bias,
            self.ee_w1.as_mut_slice(),
            &mut self.ee_b1,
            &mut self.ee_w2,
            std::slice::from_mut(&mut self.ee_b2),
            self.pi_w1.as_mut_slice(),
            &mut self.pi_b1,
            self.pi_w2.as_mut_slice(),
            &mut self.pi_b2,
            self.pi_w3.as_mut_slice(),
            &mut self.pi_b3,
            &mut self.alpha,
            &mut self.beta,
        ]
    }

    /// Logical shape of every slot: `[r, c]` for matrices, `[n]` for
    /// vectors, `[]` for the scalar.
    pub fn shapes(&self) -> [Vec<usize>; SLOT_COUNT] {
        let m = |x: &Matrix<T>| vec![x.rows(), x.cols()];
        [
            m(&self.embedding),
            m(&self.pe_w_global),
            m(&self.pe_w_local),
            vec![self.pe_bias.len()],
            m(&self.ee_w1),
            vec![self.ee_b1.len()],
            vec![self.ee_w2.len()],
            vec![],
            m(&self.pi_w1),
            vec![self.pi_b1.len()],
            m(&self.pi_w2),
            vec![self.pi_b2.len()],
            m(&self.pi_w3),
            vec![self.pi_b3.len()],
            vec![self.alpha.len()],
            vec![self.beta.len()],
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let v = |x: &[T]| {
            x.iter()
                .map(|&a| U::from(a).expect("finite float casts"))
                .collect::<Vec<U>>()
        };
        ModelParams {
            embedding: self.embedding.cast(),
            pe_w_global: self.pe_w_global.cast(),
            pe_w_local: self.pe_w_local.cast(),
            pe_bias: v(&self.pe_bias),
            ee_w1: self.ee_w1.cast(),
            ee_b1: v(&self.ee_b1),
            ee_w2: v(&self.ee_w2),
            ee_b2: U::from(self.ee_b2).expect("finite float casts"),
            pi_w1: self.pi_w1.cast(),
            pi_b1: v(&self.pi_b1),
            pi_w2: self.pi_w2.cast(),
            pi_b2: v(&self.pi_b2),
            pi_w3: self.pi_w3.cast(),
            pi_b3: v(&self.pi_b3),
            alpha: v(&self.alpha),
            beta: v(&self.beta),
        }
    }
}

impl ModelParams<f64> {
    /// `self += other` slot by slot.
    pub fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for dst in self.slices_mut() {
            for a in dst.iter_mut() {
                *a *= s;
            }
        }
    }

    /// Σ‖W‖² over the weight-decayed slots.
    pub fn decayed_sq_norm(&self) -> f64 {
        self.slices()
            .iter()
            .zip(SLOTS)
            .filter(|(_, info)| info.decayed)
            .map(|(s, _)| s.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }
}

/// Glorot-uniform weights, zero biases, `N(0, 0.1)` embeddings, unit fusion weights.
pub fn init_params(vocab_size: usize, dim: usize, max_len: usize, seed: u64) -> Result<ModelParams> {
    if dim == 0 || max_len == 0 || vocab_size == 0 {
        return Err(Error::Config(format!(
            "model needs vocab_size, D and K >= 1, got {vocab_size}, {dim}, {max_len}"
        )));
    }
    let mut rng = seed::rng_for(seed, "init");
    let mut p = ModelParams::zeros(Dims {
        vocab_size,
        dim,
        max_len,
    });
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    for x in p.embedding.as_mut_slice() {
        *x = normal.sample(&mut rng);
    }
    let glorot = |rng: &mut rand_chacha::ChaCha8Rng, data: &mut [f64], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        for x in data {
            *x = dist.sample(rng);
        }
    };
    glorot(&mut rng, p.pe_w_global.as_mut_slice(), max_len + dim, dim);
    glorot(&mut rng, p.pe_w_local.as_mut_slice(), max_len + dim, dim);
    glorot(&mut rng, p.ee_w1.as_mut_slice(), dim, dim);
    glorot(&mut rng, &mut p.ee_w2, dim, 1);
    glorot(&mut rng, p.pi_w1.as_mut_slice(), dim, dim);
    glorot(&mut rng, p.pi_w2.as_mut_slice(), dim, dim);
    glorot(&mut rng, p.pi_w3.as_mut_slice(), dim, dim);
    p.alpha.fill(1.0);
    p.beta.fill(1.0);
    Ok(p)
}

/// `M_U`: rows of the embedding table for the sample's universe, in `index_map` order.
pub fn gather_rows<T: Real>(embedding: &Matrix<T>, index_map: &[usize]) -> Result<Matrix<T>> {
    if let Some(&bad) = index_map.iter().find(|&&j| j >= embedding.rows()) {
        return Err(Error::Mapping(format!(
            "element {bad} outside embedding table of {} rows",
            embedding.rows()
        )));
    }
    Ok(embedding.select_rows(index_map))
}

/// `Z = [C ‖ M_U]`.
pub fn sfi_concat<T: Real>(embedded: &Matrix<T>, membership: &Matrix<T>) -> Result<Matrix<T>> {
    if embedded.rows() != membership.rows() {
        return Err(Error::Config(format!(
            "sfi_concat: embedding rows {} != membership rows {}",
            embedded.rows(),
            membership.rows()
        )));
    }
    let (k, d) = (membership.cols(), embedded.cols());
    let mut z = Matrix::zeros(membership.rows(), k + d);
    for i in 0..membership.rows() {
        let row = z.row_mut(i);
        row[..k].copy_from_slice(membership.row(i));
        row[k..].copy_from_slice(embedded.row(i));
    }
    Ok(z)
}

/// Mean permutation-equivariant layer: `ELU(Z W_g + b_g − mean_i(Z_i W_ℓ))`.
/// Returns the output and its pre-activation.
pub fn pe_forward<T: Real>(z: &Matrix<T>, params: &ModelParams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    if z.rows() == 0 {
        return Err(Error::EmptySet("permutation-equivariant layer needs N >= 1".into()));
    }
    let mut pre = affine(z, &params.pe_w_global, Some(&params.pe_bias))?;
    // mean_i(Z_i W_ℓ) == mean_i(Z_i) W_ℓ; the right side costs O((K+D)D) instead of O(N(K+D)D)
    let z_mean = row_reduce(z, Reduce::Mean)?;
    let shared = vec_affine(&z_mean, &params.pe_w_local, None);
    for i in 0..pre.rows() {
        for (p, &s) in pre.row_mut(i).iter_mut().zip(&shared) {
            *p = *p - s;
        }
    }
    Ok((Activation::Elu.forward(&pre), pre))
}

/// Element evaluator cache: hidden pre-activation and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct EeCache<T: Real = f64> {
    pub hidden_pre: Matrix<T>,
    pub hidden: Matrix<T>,
}

/// Per-row two-layer MLP with ReLU: one score per universe element.
pub fn ee_forward<T: Real>(z_tilde: &Matrix<T>, params: &ModelParams<T>) -> Result<(Vec<T>, EeCache<T>)> {
    let hidden_pre = affine(z_tilde, &params.ee_w1, Some(&params.ee_b1))?;
    let hidden = Activation::Relu.forward(&hidden_pre);
    let scores = hidden
        .row_iter()
        .map(|h| dot(h, &params.ee_w2) + params.ee_b2)
        .collect();
    Ok((scores, EeCache { hidden_pre, hidden }))
}

/// Permutation-invariant cache: pooled sum and both hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PiCache<T: Real = f64> {
    pub pooled: Vec<T>,
    pub pre1: Vec<T>,
    pub act1: Vec<T>,
    pub pre2: Vec<T>,
    pub act2: Vec<T>,
}

/// Sum pooling followed by ELU → ELU → linear.
pub fn pi_forward<T: Real>(z_tilde: &Matrix<T>, params: &ModelParams<T>) -> Result<(Vec<T>, PiCache<T>)> {
    let pooled = row_reduce(z_tilde, Reduce::Sum)?;
    let pre1 = vec_affine(&pooled, &params.pi_w1, Some(&params.pi_b1));
    let act1 = Activation::Elu.forward_vec(&pre1);
    let pre2 = vec_affine(&act1, &params.pi_w2, Some(&params.pi_b2));
    let act2 = Activation::Elu.forward_vec(&pre2);
    let summary = vec_affine(&act2, &params.pi_w3, Some(&params.pi_b3));
    Ok((
        summary,
        PiCache {
            pooled,
            pre1,
            act1,
            pre2,
            act2,
        },
    ))
}

/// `O_s = M · Z̄`, one score per domain element.
pub fn ge_forward<T: Real>(summary: &[T], embedding: &Matrix<T>) -> Result<Vec<T>> {
    if summary.len() != embedding.cols() {
        return Err(Error::Config(format!(
            "ge_forward: summary has {} entries, embedding is {}x{}",
            summary.len(),
            embedding.rows(),
            embedding.cols()
        )));
    }
    Ok(embedding.row_iter().map(|m| dot(m, summary)).collect())
}

/// Blend global and element scores into logits over the whole domain.
pub fn fuse_scores<T: Real>(
    global_scores: &[T],
    element_scores: &[T],
    index_map: &[usize],
    alpha: &[T],
    beta: &[T],
    variant: Variant,
) -> Result<Vec<T>> {
    let e = alpha.len();
    if global_scores.len() != e || beta.len() != e || element_scores.len() != index_map.len() {
        return Err(Error::Config(format!(
            "fuse_scores: |O_s|={}, |O_e|={}, |I|={}, |α|={}, |β|={}",
            global_scores.len(),
            element_scores.len(),
            index_map.len(),
            e,
            beta.len()
        )));
    }
    let mut seen = vec![false; e];
    for &j in index_map {
        if j >= e {
            return Err(Error::Mapping(format!("index map target {j} outside domain of {e}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Mapping(format!("index map sends two rows to element {j}")));
        }
    }
    let mut logits: Vec<T> = if variant.uses_global_scores() {
        alpha.iter().zip(global_scores).map(|(&a, &s)| a * s).collect()
    } else {
        vec![T::zero(); e]
    };
    if variant.uses_element_scores() {
        for (&j, &o) in index_map.iter().zip(element_scores) {
            logits[j] = logits[j] + beta[j] * o;
        }
    }
    Ok(logits)
}

/// Every intermediate the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T: Real = f64> {
    pub variant: Variant,
    /// `Z`, N × (K+D).
    pub z: Matrix<T>,
    pub pe_pre: Matrix<T>,
    /// `Z̃`, N × D.
    pub z_tilde: Matrix<T>,
    pub ee: EeCache<T>,
    pub pi: PiCache<T>,
    /// `Z̄`, length D.
    pub summary: Vec<T>,
    /// `O_e`, length N.
    pub element_scores: Vec<T>,
    /// `O_s`, length E.
    pub global_scores: Vec<T>,
    /// `Ŷ`, length E.
    pub logits: Vec<T>,
}

/// Full forward pass for one prepared sample.
pub fn forward<T: Real>(
    index_map: &[usize],
    membership: &Matrix<T>,
    params: &ModelParams<T>,
    variant: Variant,
) -> Result<ForwardTrace<T>> {
    let dims = params.dims();
    if membership.cols() != dims.max_len {
        return Err(Error::Config(format!(
            "sample has K={} but the model was built for K={}",
            membership.cols(),
            dims.max_len
        )));
    }
    let embedded = gather_rows(&params.embedding, index_map)?;
    let z = sfi_concat(&embedded, membership)?;
    let (z_tilde, pe_pre) = pe_forward(&z, params)?;
    let (element_scores, ee) = ee_forward(&z_tilde, params)?;
    let (summary, pi) = pi_forward(&z_tilde, params)?;
    let global_scores = ge_forward(&summary, &params.embedding)?;
    let logits = fuse_scores(
        &global_scores,
        &element_scores,
        index_map,
        &params.alpha,
        &params.beta,
        variant,
    )?;
    Ok(ForwardTrace {
        variant,
        z,
        pe_pre,
        z_tilde,
        ee,
        pi,
        summary,
        element_scores,
        global_scores,
        logits,
    })
}

pub fn forward_sample(sample: &PreparedSample, params: &ModelParams, variant: Variant) -> Result<ForwardTrace> {
    forward(&sample.index_map, &sample.membership, params, variant)
}

/// Only the logits, for inference paths.
pub fn logits<T: Real>(
    index_map: &[usize],
    membership: &Matrix<T>,
    params: &ModelParams<T>,
    variant: Variant,
) -> Result<Vec<T>> {
    forward(index_map, membership, params, variant).map(|t| t.logits)
}

/// Gradients of `Ŷ · d_logits` with respect to every parameter.
pub fn backward(
    trace: &ForwardTrace,
    sample: &PreparedSample,
    params: &ModelParams,
    d_logits: &[f64],
) -> Result<Gradients> {
    let Dims {
        vocab_size: e,
        dim: d,
        max_len: k,
    } = params.dims();
    if d_logits.len() != e {
        return Err(Error::Config(format!(
            "d_logits has length {}, expected {e}",
            d_logits.len()
        )));
    }
    let n = sample.universe_size();
    let variant = trace.variant;
    let mut g = params.zeros_like();

    // fusion
    let mut d_global = vec![0.0; e];
    if variant.uses_global_scores() {
        for j in 0..e {
            g.alpha[j] = d_logits[j] * trace.global_scores[j];
            d_global[j] = d_logits[j] * params.alpha[j];
        }
    }
    let mut d_element = vec![0.0; n];
    if variant.uses_element_scores() {
        for (i, &j) in sample.index_map.iter().enumerate() {
            g.beta[j] = d_logits[j] * trace.element_scores[i];
            d_element[i] = d_logits[j] * params.beta[j];
        }
    }

    let mut d_z_tilde = Matrix::zeros(n, d);

    // global evaluator and the invariant branch
    if variant.uses_global_scores() {
        let mut d_summary = vec![0.0; d];
        for (j, &dj) in d_global.iter().enumerate().take(e) {
            if dj == 0.0 {
                continue;
            }
            let m_row = params.embedding.row(j);
            for (c, g_mc) in g.embedding.row_mut(j).iter_mut().enumerate() {
                *g_mc += dj * trace.summary[c];
                d_summary[c] += dj * m_row[c];
            }
        }
        let pi = &trace.pi;
        accumulate_outer(&mut g.pi_w3, &pi.act2, &d_summary);
        g.pi_b3.copy_from_slice(&d_summary);
        let d_act2 = vec_affine_input_grad(&params.pi_w3, &d_summary);
        let d_pre2 = Activation::Elu.backward(&pi.pre2, &pi.act2, &d_act2);
        accumulate_outer(&mut g.pi_w2, &pi.act1, &d_pre2);
        g.pi_b2.copy_from_slice(&d_pre2);
        let d_act1 = vec_affine_input_grad(&params.pi_w2, &d_pre2);
        let d_pre1 = Activation::Elu.backward(&pi.pre1, &pi.act1, &d_act1);
        accumulate_outer(&mut g.pi_w1, &pi.pooled, &d_pre1);
        g.pi_b1.copy_from_slice(&d_pre1);
        let d_pooled = vec_affine_input_grad(&params.pi_w1, &d_pre1);
        // sum pooling broadcasts unchanged
        for i in 0..n {
            d_z_tilde.row_mut(i).copy_from_slice(&d_pooled);
        }
    }

    // element evaluator
    if variant.uses_element_scores() {
        let ee = &trace.ee;
        g.ee_b2 = d_element.iter().sum();
        let mut d_hidden = Matrix::zeros(n, d);
        for (i, &de) in d_element.iter().enumerate().take(n) {
            for (c, gw) in g.ee_w2.iter_mut().enumerate() {
                *gw += ee.hidden[(i, c)] * de;
            }
            let pre = ee.hidden_pre.row(i);
            for (c, dh) in d_hidden.row_mut(i).iter_mut().enumerate() {
                *dh = if pre[c] > 0.0 { de * params.ee_w2[c] } else { 0.0 };
            }
        }
        let grads = affine_backward(&trace.z_tilde, &params.ee_w1, &d_hidden)?;
        g.ee_w1 = grads.dw;
        g.ee_b1 = grads.db;
        d_z_tilde.add_assign(&grads.dx);
    }

    // equivariant layer
    let d_pre = Matrix::from_vec(
        n,
        d,
        Activation::Elu.backward(trace.pe_pre.as_slice(), trace.z_tilde.as_slice(), d_z_tilde.as_slice()),
    )?;
    let grads = affine_backward(&trace.z, &params.pe_w_global, &d_pre)?;
    g.pe_w_global = grads.dw;
    g.pe_bias = grads.db;
    let mut d_z = grads.dx;
    // shared term: −mean(Z) W_ℓ broadcast to every row
    let d_shared: Vec<f64> = column_sums(&d_pre).into_iter().map(|v| -v).collect();
    let z_mean = row_reduce(&trace.z, Reduce::Mean)?;
    accumulate_outer(&mut g.pe_w_local, &z_mean, &d_shared);
    let d_mean = vec_affine_input_grad(&params.pe_w_local, &d_shared);
    let d_from_mean = tensor::row_reduce_backward(&d_mean, n, Reduce::Mean);
    d_z.add_assign(&d_from_mean);

    // concat → gather: the embedding columns of dZ scatter back into M
    for (i, &j) in sample.index_map.iter().enumerate() {
        let src = &d_z.row(i)[k..];
        for (gm, &v) in g.embedding.row_mut(j).iter_mut().zip(src) {
            *gm += v;
        }
    }
    Ok(g)
}

/// `out += a ⊗ b` for row vectors.
fn accumulate_outer(out: &mut Matrix, a: &[f64], b: &[f64]) {
    let row = Matrix::from_vec(1, a.len(), a.to_vec()).expect("row vector");
    let col = Matrix::from_vec(1, b.len(), b.to_vec()).expect("row vector");
    out.add_assign(&outer_accumulate(&row, &col));
}

/// The sample's membership matrix in another scalar type (0/1 casts exactly).
pub fn membership_as<T: Real>(sample: &PreparedSample) -> Matrix<T> {
    sample.membership.cast()
}
