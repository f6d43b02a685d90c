//! The permutation-prediction network and its training loop.
//!
//! Architecture: every element of the shuffled sequence goes through the same
//! affine+rectifier encoder; the `l` encodings are concatenated in sequence
//! order, pass a second affine+rectifier head, and a final affine layer emits
//! `l²` scores reshaped row-major to `l×l`. `to_positive` and the Sinkhorn
//! iterations turn the scores into a doubly-stochastic matrix.
//!
//! Everything is plain `f64` with hand-written backward passes; the
//! finite-difference utilities in [`crate::gradcheck`] are the oracle.

pub mod checkpoint;

use crate::assign::round_to_permutation;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::metrics::{hamming_similarity, kendall_tau, normalization_error, DoublyStochasticMatrix};
use crate::perm::{apply, recover, sample_permutation, Permutation, SequenceSample};
use crate::sinkhorn::{
    sinkhorn_backward, sinkhorn_forward, to_positive, to_positive_backward, SinkhornConfig,
    TapeCache,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Network dimensions: feature size `d`, encoder width `h`, head width `h2`,
/// sequence length `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub h: usize,
    pub h2: usize,
    pub l: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d", self.d), ("h", self.h), ("h2", self.h2), ("l", self.l)] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("dimension {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One affine layer: `weight` is input×output, `bias` a 1×output row.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Mat,
    pub bias: Mat,
}

impl LayerParams {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        LayerParams {
            weight: Mat::zeros(inputs, outputs),
            bias: Mat::zeros(1, outputs),
        }
    }
}

/// All trainable tensors. Also reused as the gradient/velocity container,
/// since those share the exact shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: LayerParams,
    pub head: LayerParams,
    pub score: LayerParams,
}

/// Fixed tensor order used by iteration, checkpoints, and reports.
pub const TENSOR_NAMES: [&str; 6] = [
    "encoder.weight",
    "encoder.bias",
    "head.weight",
    "head.bias",
    "score.weight",
    "score.bias",
];

impl ModelParams {
    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(ModelParams {
            dims: *dims,
            encoder: LayerParams::zeros(dims.d, dims.h),
            head: LayerParams::zeros(dims.l * dims.h, dims.h2),
            score: LayerParams::zeros(dims.h2, dims.l * dims.l),
        })
    }

    /// Gaussian weights with standard deviation `sqrt(2/fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for (_, w) in [
            ("encoder", &mut p.encoder.weight),
            ("head", &mut p.head.weight),
            ("score", &mut p.score.weight),
        ] {
            let std = (2.0 / w.rows() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            for v in w.as_mut_slice() {
                *v = normal.sample(rng);
            }
        }
        Ok(p)
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [(&'static str, &Mat); 6] {
        [
            (TENSOR_NAMES[0], &self.encoder.weight),
            (TENSOR_NAMES[1], &self.encoder.bias),
            (TENSOR_NAMES[2], &self.head.weight),
            (TENSOR_NAMES[3], &self.head.bias),
            (TENSOR_NAMES[4], &self.score.weight),
            (TENSOR_NAMES[5], &self.score.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Mat); 6] {
        [
            (TENSOR_NAMES[0], &mut self.encoder.weight),
            (TENSOR_NAMES[1], &mut self.encoder.bias),
            (TENSOR_NAMES[2], &mut self.head.weight),
            (TENSOR_NAMES[3], &mut self.head.bias),
            (TENSOR_NAMES[4], &mut self.score.weight),
            (TENSOR_NAMES[5], &mut self.score.bias),
        ]
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        let mut mine = self.tensors_mut();
        for ((_, a), (_, b)) in mine.iter_mut().zip(other.tensors()) {
            a.add_scaled(b, alpha);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// Loss used for training and the matching prediction path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Cross-entropy on the Sinkhorn output: each row of the DSM is a class
    /// distribution over original indices.
    SinkhornCe,
    /// Mean sigmoid cross-entropy directly on the raw scores; the baseline
    /// head without the normalization layer.
    NaiveSigmoidCe,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sinkhorn_ce" => Ok(LossKind::SinkhornCe),
            "naive_sigmoid_ce" => Ok(LossKind::NaiveSigmoidCe),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss {other:?}; want sinkhorn_ce or naive_sigmoid_ce"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SinkhornCe => "sinkhorn_ce",
            LossKind::NaiveSigmoidCe => "naive_sigmoid_ce",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Mini-batch steps to run.
    pub iterations: usize,
    /// Coefficient λ of the parameter penalty λ‖θ‖²; its gradient 2λθ is
    /// added to every tensor, biases included.
    pub weight_decay: f64,
    pub seed: u64,
    pub sinkhorn: SinkhornConfig,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            iterations: 500,
            weight_decay: 1e-4,
            seed: 0,
            sinkhorn: SinkhornConfig::default(),
            loss_kind: LossKind::SinkhornCe,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.sinkhorn.validate()
    }
}

/// Note: `learning_rate = 0` is rejected by `validate` but accepted by
/// [`train`] for the provable no-op case used in tests and the CLI; see
/// `train`'s docs.
///
/// Every intermediate of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<Vec<f64>>,
    enc_pre: Mat,
    enc_out: Mat,
    head_pre: Vec<f64>,
    head_out: Vec<f64>,
    scores: Mat,
    tape: TapeCache,
    cfg: SinkhornConfig,
}

impl ForwardCache {
    /// Raw `l×l` scores before `to_positive`; the naive loss consumes these.
    pub fn scores(&self) -> &Mat {
        &self.scores
    }
}

/// `x·W + b` for a row vector `x`.
fn affine(x: &[f64], layer: &LayerParams) -> Vec<f64> {
    let (w, b) = (&layer.weight, &layer.bias);
    debug_assert_eq!(x.len(), w.rows());
    let mut out = b.row(0).to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let wrow = w.row(i);
        for (o, &wij) in out.iter_mut().zip(wrow) {
            *o += xi * wij;
        }
    }
    out
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Runs the network on a shuffled sequence of `l` feature vectors.
pub fn forward(
    params: &ModelParams,
    x: &[Vec<f64>],
    cfg: &SinkhornConfig,
) -> Result<(DoublyStochasticMatrix, ForwardCache)> {
    let dims = &params.dims;
    if x.len() != dims.l {
        return Err(Error::shape("forward sequence length", dims.l, x.len()));
    }
    if let Some(bad) = x.iter().find(|v| v.len() != dims.d) {
        return Err(Error::shape("forward feature dimension", dims.d, bad.len()));
    }
    let mut enc_pre = Mat::zeros(dims.l, dims.h);
    let mut enc_out = Mat::zeros(dims.l, dims.h);
    for (e, xe) in x.iter().enumerate() {
        let pre = affine(xe, &params.encoder);
        enc_out.row_mut(e).copy_from_slice(&relu(&pre));
        enc_pre.row_mut(e).copy_from_slice(&pre);
    }
    // row-major layout means the concatenation is the encoder output buffer
    let concat = enc_out.as_slice();
    let head_pre = affine(concat, &params.head);
    let head_out = relu(&head_pre);
    let score_flat = affine(&head_out, &params.score);
    let scores = Mat::from_vec(dims.l, dims.l, score_flat)?;
    let q0 = to_positive(&scores, cfg)?;
    let (dsm, tape) = sinkhorn_forward(&q0, cfg)?;
    let cache = ForwardCache {
        x: x.to_vec(),
        enc_pre,
        enc_out,
        head_pre,
        head_out,
        scores,
        tape,
        cfg: *cfg,
    };
    Ok((dsm, cache))
}

/// Where the upstream gradient enters the backward pass.
#[derive(Debug, Clone, Copy)]
pub enum UpstreamGrad<'a> {
    /// Gradient on the doubly-stochastic output (cross-entropy head).
    OnDsm(&'a Mat),
    /// Gradient directly on the raw scores (naive sigmoid head).
    OnScores(&'a Mat),
}

/// Shared backward walk from a score-level gradient down to parameter and
/// input gradients.
fn backprop_from_scores(
    params: &ModelParams,
    cache: &ForwardCache,
    g_scores: &Mat,
) -> Result<(ModelParams, Vec<Vec<f64>>)> {
    let dims = &params.dims;
    let mut grads = ModelParams::zeros(dims)?;
    let g_flat = g_scores.as_slice();

    // score layer
    grads.score.bias.as_mut_slice().copy_from_slice(g_flat);
    let mut g_head_out = vec![0.0; dims.h2];
    for i in 0..dims.h2 {
        let wrow = params.score.weight.row(i);
        let hv = cache.head_out[i];
        let grow = grads.score.weight.row_mut(i);
        let mut acc = 0.0;
        for j in 0..dims.l * dims.l {
            grow[j] = hv * g_flat[j];
            acc += wrow[j] * g_flat[j];
        }
        g_head_out[i] = acc;
    }

    // head rectifier + affine
    let g_head_pre: Vec<f64> = g_head_out
        .iter()
        .zip(&cache.head_pre)
        .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
        .collect();
    grads.head.bias.as_mut_slice().copy_from_slice(&g_head_pre);
    let concat = cache.enc_out.as_slice();
    let mut g_concat = vec![0.0; dims.l * dims.h];
    for i in 0..dims.l * dims.h {
        let wrow = params.head.weight.row(i);
        let ci = concat[i];
        let grow = grads.head.weight.row_mut(i);
        let mut acc = 0.0;
        for j in 0..dims.h2 {
            grow[j] = ci * g_head_pre[j];
            acc += wrow[j] * g_head_pre[j];
        }
        g_concat[i] = acc;
    }

    // shared encoder: gradients accumulate over all l elements
    let mut g_x = vec![vec![0.0; dims.d]; dims.l];
    for e in 0..dims.l {
        let g_out = &g_concat[e * dims.h..(e + 1) * dims.h];
        let pre = cache.enc_pre.row(e);
        let g_pre: Vec<f64> = g_out
            .iter()
            .zip(pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        for (b, g) in grads.encoder.bias.as_mut_slice().iter_mut().zip(&g_pre) {
            *b += g;
        }
        let xe = &cache.x[e];
        for i in 0..dims.d {
            let wrow = params.encoder.weight.row(i);
            let grow = grads.encoder.weight.row_mut(i);
            let xi = xe[i];
            let mut acc = 0.0;
            for j in 0..dims.h {
                grow[j] += xi * g_pre[j];
                acc += wrow[j] * g_pre[j];
            }
            g_x[e][i] = acc;
        }
    }
    Ok((grads, g_x))
}

fn check_cache(params: &ModelParams, cache: &ForwardCache) -> Result<()> {
    let dims = &params.dims;
    if cache.x.len() != dims.l
        || cache.enc_out.cols() != dims.h
        || cache.head_out.len() != dims.h2
        || cache.scores.rows() != dims.l
    {
        return Err(Error::shape(
            "backward cache dimensions",
            dims.l,
            cache.x.len(),
        ));
    }
    Ok(())
}

/// Gradients of the loss with respect to every tensor, including the
/// parameter-penalty term `2·weight_decay·θ` on each one.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    upstream: UpstreamGrad,
    weight_decay: f64,
) -> Result<ModelParams> {
    check_cache(params, cache)?;
    let g_scores = match upstream {
        UpstreamGrad::OnScores(g) => g.clone(),
        UpstreamGrad::OnDsm(g_q) => {
            let g_q0 = sinkhorn_backward(g_q, &cache.tape)?;
            to_positive_backward(&cache.scores, &g_q0, &cache.cfg)?
        }
    };
    if !g_scores.same_shape(&cache.scores) {
        return Err(Error::shape(
            "backward upstream gradient",
            cache.scores.rows() * cache.scores.cols(),
            g_scores.rows() * g_scores.cols(),
        ));
    }
    let (mut grads, _) = backprop_from_scores(params, cache, &g_scores)?;
    if weight_decay != 0.0 {
        grads.add_scaled(params, 2.0 * weight_decay);
    }
    Ok(grads)
}

/// Gradient of `Σ` of the given DSM entries with respect to each input
/// vector; the saliency building block.
pub fn input_gradient(
    params: &ModelParams,
    x: &[Vec<f64>],
    cfg: &SinkhornConfig,
    targets: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty saliency target set".into()));
    }
    let l = params.dims.l;
    let mut g_q = Mat::zeros(l, l);
    for &(i, j) in targets {
        if i >= l || j >= l {
            return Err(Error::InvalidArgument(format!(
                "target entry ({i},{j}) outside {l}x{l} matrix"
            )));
        }
        g_q[(i, j)] += 1.0;
    }
    let (_, cache) = forward(params, x, cfg)?;
    let g_q0 = sinkhorn_backward(&g_q, &cache.tape)?;
    let g_scores = to_positive_backward(&cache.scores, &g_q0, &cache.cfg)?;
    let (_, g_x) = backprop_from_scores(params, &cache, &g_scores)?;
    Ok(g_x)
}

/// Per-element saliency of a set of DSM entries.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    /// `|gradient|` per feature, one map per sequence element.
    pub per_feature: Vec<Vec<f64>>,
    /// Maximum of each element's map: the channel-pooled summary.
    pub pooled: Vec<f64>,
}

/// Absolute input gradients of `Σ` of the `targets` entries of the DSM.
pub fn saliency(
    params: &ModelParams,
    x: &[Vec<f64>],
    cfg: &SinkhornConfig,
    targets: &[(usize, usize)],
) -> Result<SaliencyMap> {
    let g_x = input_gradient(params, x, cfg, targets)?;
    let per_feature: Vec<Vec<f64>> = g_x
        .into_iter()
        .map(|v| v.into_iter().map(f64::abs).collect())
        .collect();
    let pooled = per_feature
        .iter()
        .map(|m| m.iter().fold(0.0, |a: f64, &b| a.max(b)))
        .collect();
    Ok(SaliencyMap {
        per_feature,
        pooled,
    })
}

/// Row-of-the-DSM cross-entropy: `L = −Σ_i ln Q[i][pi[i]]`.
///
/// Returns the loss and its gradient with respect to `Q` (zero except
/// `−1/Q[i][pi[i]]` at the target entries).
pub fn loss_sinkhorn_ce(q: &DoublyStochasticMatrix, p: &Permutation) -> Result<(f64, Mat)> {
    let l = q.len();
    if p.len() != l {
        return Err(Error::shape("loss_sinkhorn_ce", l, p.len()));
    }
    let m = q.matrix();
    let mut loss = 0.0;
    let mut grad = Mat::zeros(l, l);
    for (i, &target) in p.as_slice().iter().enumerate() {
        let v = m[(i, target)];
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive entry {v} at target ({i},{target})"
            )));
        }
        loss -= v.ln();
        grad[(i, target)] = -1.0 / v;
    }
    Ok((loss, grad))
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean element-wise sigmoid cross-entropy of the raw scores against the 0/1
/// entries of the permutation matrix; gradient is `(σ(score) − target)/l²`.
pub fn loss_naive(scores: &Mat, p: &Permutation) -> Result<(f64, Mat)> {
    if !scores.is_square() {
        return Err(Error::NonSquare {
            rows: scores.rows(),
            cols: scores.cols(),
        });
    }
    let l = scores.rows();
    if p.len() != l {
        return Err(Error::shape("loss_naive", l, p.len()));
    }
    let n = (l * l) as f64;
    let mut acc = 0.0;
    let mut grad = Mat::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            let x = scores[(i, j)];
            let t = if p.as_slice()[i] == j { 1.0 } else { 0.0 };
            // max(x,0) − x·t + ln(1+e^{−|x|}): the overflow-safe form
            acc += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
            grad[(i, j)] = (stable_sigmoid(x) - t) / n;
        }
    }
    Ok((acc / n, grad))
}

/// Classical momentum update: `v ← momentum·v − lr·g`, `θ ← θ + v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    velocity: &mut ModelParams,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<()> {
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(Error::Diverged {
                iteration,
                what: format!("non-finite gradient in {name}"),
            });
        }
    }
    let mut vs = velocity.tensors_mut();
    let mut ps = params.tensors_mut();
    for (((_, v), (_, p)), (_, g)) in vs.iter_mut().zip(ps.iter_mut()).zip(grads.tensors()) {
        for ((vv, pv), gv) in v
            .as_mut_slice()
            .iter_mut()
            .zip(p.as_mut_slice())
            .zip(g.as_slice())
        {
            *vv = cfg.momentum * *vv - cfg.learning_rate * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// One row of the training log: `iter` is the mini-batch step count, `loss`
/// the epoch-mean training loss, and `kt`/`hs`/`ne` held-out means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub iter: usize,
    pub loss: f64,
    pub kt: f64,
    pub hs: f64,
    pub ne: f64,
}

/// Loss and parameter gradients for one (sample, permutation) pair.
fn sample_step(
    params: &ModelParams,
    sample: &SequenceSample,
    perm: &Permutation,
    cfg: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    let shuffled = apply(perm, sample.items())?;
    let (dsm, cache) = forward(params, &shuffled, &cfg.sinkhorn)?;
    match cfg.loss_kind {
        LossKind::SinkhornCe => {
            let (loss, g_q) = loss_sinkhorn_ce(&dsm, perm)?;
            let grads = backward(params, &cache, UpstreamGrad::OnDsm(&g_q), cfg.weight_decay)?;
            Ok((loss, grads))
        }
        LossKind::NaiveSigmoidCe => {
            let (loss, g_s) = loss_naive(cache.scores(), perm)?;
            let grads = backward(params, &cache, UpstreamGrad::OnScores(&g_s), cfg.weight_decay)?;
            Ok((loss, grads))
        }
    }
}

/// Evaluates per-sample forward/backward passes, optionally on several
/// threads. Results are returned in task order, so the reduction that follows
/// is bit-identical for any worker count.
fn run_batch(
    params: &ModelParams,
    tasks: &[(&SequenceSample, Permutation)],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<(f64, ModelParams)>> {
    if workers <= 1 || tasks.len() <= 1 {
        return tasks
            .iter()
            .map(|(s, p)| sample_step(params, s, p, cfg))
            .collect();
    }
    let mut out: Vec<Option<Result<(f64, ModelParams)>>> = Vec::new();
    out.resize_with(tasks.len(), || None);
    let chunk = tasks.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let mut slots = out.as_mut_slice();
        let mut offset = 0;
        while !slots.is_empty() {
            let take = chunk.min(slots.len());
            let (head, rest) = slots.split_at_mut(take);
            let task_chunk = &tasks[offset..offset + take];
            scope.spawn(move || {
                for (slot, (s, p)) in head.iter_mut().zip(task_chunk) {
                    *slot = Some(sample_step(params, s, p, cfg));
                }
            });
            slots = rest;
            offset += take;
        }
    });
    out.into_iter()
        .map(|r| r.expect("every slot is written by its worker"))
        .collect()
}

/// Mean held-out metrics under each sample's stored permutation.
fn evaluate(
    params: &ModelParams,
    heldout: &[SequenceSample],
    cfg: &SinkhornConfig,
    loss_kind: LossKind,
) -> Result<(f64, f64, f64)> {
    let (mut kt, mut hs, mut ne) = (0.0, 0.0, 0.0);
    for s in heldout {
        let pred = predict_with(params, &s.shuffled(), cfg, loss_kind)?;
        kt += kendall_tau(&pred.perm, s.perm())?;
        hs += hamming_similarity(&pred.perm, s.perm())?;
        ne += normalization_error(pred.dsm.matrix())?;
    }
    let n = heldout.len() as f64;
    Ok((kt / n, hs / n, ne / n))
}

/// Trains a freshly initialized model.
///
/// Weights are initialized from `cfg.seed`; every training sample visit draws
/// a fresh shuffle permutation; held-out metrics use each sample's stored
/// permutation so the trend is comparable across epochs. One log record is
/// written per epoch (a full pass over `train_set`, `ceil(N/batch)` steps)
/// and at the final iteration.
///
/// `learning_rate = 0` is allowed here (unlike `TrainConfig::validate`) and
/// provably returns the initial parameters unchanged.
pub fn train(
    train_set: &[SequenceSample],
    heldout: &[SequenceSample],
    dims: &ModelDims,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    dims.validate()?;
    if cfg.learning_rate != 0.0 {
        cfg.validate()?;
    }
    if train_set.is_empty() || heldout.is_empty() {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    for s in train_set.iter().chain(heldout) {
        if s.len() != dims.l || s.feature_dim() != dims.d {
            return Err(Error::shape("train sample shape", dims.l * dims.d, s.len() * s.feature_dim()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(dims, &mut rng)?;
    let mut velocity = ModelParams::zeros(dims)?;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut log = Vec::new();
    let mut cursor = 0usize;
    let mut epoch_loss = 0.0;
    let mut epoch_steps = 0usize;
    for it in 1..=cfg.iterations {
        let mut tasks = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let s = &train_set[cursor];
            cursor = (cursor + 1) % train_set.len();
            tasks.push((s, sample_permutation(dims.l, &mut rng)?));
        }
        let results = run_batch(&params, &tasks, cfg, workers)?;
        let mut grads = ModelParams::zeros(dims)?;
        let mut batch_loss = 0.0;
        for (loss, g) in &results {
            batch_loss += loss;
            grads.add_scaled(g, 1.0);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        batch_loss *= scale;
        grads.scale(scale);
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                what: format!("training loss {batch_loss} is not finite"),
            });
        }
        sgd_step(&mut params, &grads, &mut velocity, cfg, it)?;
        epoch_loss += batch_loss;
        epoch_steps += 1;
        if it % steps_per_epoch == 0 || it == cfg.iterations {
            let (kt, hs, ne) = evaluate(&params, heldout, &cfg.sinkhorn, cfg.loss_kind)?;
            log.push(MetricsRecord {
                iter: it,
                loss: epoch_loss / epoch_steps as f64,
                kt,
                hs,
                ne,
            });
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    }
    Ok((params, log))
}

/// A rounded prediction for one shuffled sequence.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub perm: Permutation,
    pub dsm: DoublyStochasticMatrix,
    /// The input sequence rearranged back into predicted original order.
    pub recovered: Vec<Vec<f64>>,
}

/// Predicts with the head matching `loss_kind`: the Sinkhorn output for the
/// cross-entropy head, raw sigmoid scores for the naive head (whose
/// normalization error is part of what evaluation measures).
pub fn predict_with(
    params: &ModelParams,
    shuffled: &[Vec<f64>],
    cfg: &SinkhornConfig,
    loss_kind: LossKind,
) -> Result<Prediction> {
    let (dsm, cache) = forward(params, shuffled, cfg)?;
    let q = match loss_kind {
        LossKind::SinkhornCe => dsm,
        LossKind::NaiveSigmoidCe => {
            DoublyStochasticMatrix::from_matrix(cache.scores().map(stable_sigmoid))?
        }
    };
    let rounded = round_to_permutation(&q)?;
    let recovered = recover(&rounded.perm, shuffled)?;
    Ok(Prediction {
        perm: rounded.perm,
        dsm: q,
        recovered,
    })
}

/// [`predict_with`] on the Sinkhorn head.
pub fn predict(
    params: &ModelParams,
    shuffled: &[Vec<f64>],
    cfg: &SinkhornConfig,
) -> Result<Prediction> {
    predict_with(params, shuffled, cfg, LossKind::SinkhornCe)
}

/// Finite-difference comparison for one tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: &'static str,
    pub summary: crate::gradcheck::CheckSummary,
}

/// Result of a whole-model gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Threshold for [`gradcheck_model`]: analytic and central-difference
/// gradients must agree to this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Checks the full analytic backward pass against central finite differences
/// on random parameters, input, and target, tensor by tensor.
///
/// `inject_fault` flips the sign of the encoder weight gradient first, as a
/// self-test that the checker actually fails on wrong gradients. The check
/// runs without weight decay: the penalty gradient is linear and covered by
/// its own tests.
pub fn gradcheck_model(
    dims: &ModelDims,
    seed: u64,
    sinkhorn: &SinkhornConfig,
    loss_kind: LossKind,
    inject_fault: bool,
) -> Result<GradCheckReport> {
    use crate::gradcheck::{central_diff_gradient, compare_gradients, DEFAULT_FD_STEP};
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(dims, &mut rng)?;
    let x: Vec<Vec<f64>> = (0..dims.l)
        .map(|_| (0..dims.d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let target = sample_permutation(dims.l, &mut rng)?;

    let loss_of = |p: &ModelParams| -> Result<f64> {
        let (dsm, cache) = forward(p, &x, sinkhorn)?;
        Ok(match loss_kind {
            LossKind::SinkhornCe => loss_sinkhorn_ce(&dsm, &target)?.0,
            LossKind::NaiveSigmoidCe => loss_naive(cache.scores(), &target)?.0,
        })
    };

    let (dsm, cache) = forward(&params, &x, sinkhorn)?;
    let mut analytic = match loss_kind {
        LossKind::SinkhornCe => {
            let (_, g_q) = loss_sinkhorn_ce(&dsm, &target)?;
            backward(&params, &cache, UpstreamGrad::OnDsm(&g_q), 0.0)?
        }
        LossKind::NaiveSigmoidCe => {
            let (_, g_s) = loss_naive(cache.scores(), &target)?;
            backward(&params, &cache, UpstreamGrad::OnScores(&g_s), 0.0)?
        }
    };
    if inject_fault {
        analytic.encoder.weight.scale(-1.0);
    }

    let mut tensors = Vec::new();
    let mut max_rel = 0.0f64;
    for idx in 0..TENSOR_NAMES.len() {
        let flat = params.tensors()[idx].1.as_slice().to_vec();
        let numeric = central_diff_gradient(
            |coords: &[f64]| {
                let mut probe = params.clone();
                probe.tensors_mut()[idx].1.as_mut_slice().copy_from_slice(coords);
                loss_of(&probe).expect("forward succeeds on perturbed params")
            },
            &flat,
            DEFAULT_FD_STEP,
        );
        let summary = compare_gradients(analytic.tensors()[idx].1.as_slice(), &numeric)?;
        max_rel = max_rel.max(summary.max_rel_error);
        tensors.push(TensorCheck {
            name: TENSOR_NAMES[idx],
            summary,
        });
    }
    Ok(GradCheckReport {
        tensors,
        max_rel_error: max_rel,
        pass: max_rel < GRADCHECK_TOLERANCE,
    })
}
