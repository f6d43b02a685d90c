//! Browser bindings for three interactive demos, served by `www/index.html`:
//!
//! 1. [`sinkhorn_trace`] — watch row/column normalization turn an arbitrary
//!    score matrix into a doubly-stochastic one, iteration by iteration.
//! 2. [`DemoTrainer`] — train the sequence model on the synthetic ordering
//!    task in small increments and plot the live loss/accuracy curves.
//! 3. [`PuzzleDemo`] — shuffle a 3×3 patch grid and let the model put the
//!    picture back together.
//!
//! Every method returns either a JSON string (parsed with `JSON.parse` on the
//! JS side) or a raw RGBA buffer for `putImageData`. All state is seeded
//! explicitly, so demos replay identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sinkperm::data::{
    grid_split, patch_features, procedural_image, reassemble, Image, PatchGridSpec, SynthSpec,
};
use sinkperm::model::{backward, UpstreamGrad};
use sinkperm::perm::apply;
use sinkperm::sinkhorn::to_positive;
use sinkperm::{
    forward, hamming_similarity, kendall_tau, loss_naive, loss_sinkhorn_ce, normalization_error,
    predict_with, sample_permutation, sgd_step, sinkhorn_forward, Error, LossKind, Mat, ModelDims,
    ModelParams, Permutation, Result, SequenceSample, SinkhornConfig, TrainConfig,
};
use wasm_bindgen::prelude::*;

fn to_js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

// ---------------------------------------------------------------------------
// Sinkhorn playground

#[derive(Serialize)]
struct TraceStep {
    /// Row-major l×l matrix after this iteration's column pass.
    matrix: Vec<f64>,
    ne: f64,
}

#[derive(Serialize)]
struct Trace {
    l: usize,
    /// The positive matrix the iterations start from: exp(clip(s)) + ε.
    input: Vec<f64>,
    input_ne: f64,
    steps: Vec<TraceStep>,
}

fn sinkhorn_trace_inner(scores: &[f64], iterations: usize, epsilon: f64, clamp: f64) -> Result<String> {
    let l = (scores.len() as f64).sqrt().round() as usize;
    if l * l != scores.len() || l == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values do not form a square matrix",
            scores.len()
        )));
    }
    let cfg = SinkhornConfig {
        iterations,
        epsilon,
        clamp,
    };
    let raw = Mat::from_vec(l, l, scores.to_vec())?;
    let positive = to_positive(&raw, &cfg)?;
    let (_, tape) = sinkhorn_forward(&positive, &cfg)?;
    let steps = tape
        .iterates()
        .map(|m| {
            Ok(TraceStep {
                matrix: m.as_slice().to_vec(),
                ne: normalization_error(m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    json(&Trace {
        l,
        input: positive.as_slice().to_vec(),
        input_ne: normalization_error(&positive)?,
        steps,
    })
}

/// Normalizes a flat row-major score matrix and reports every iterate.
#[wasm_bindgen]
pub fn sinkhorn_trace(
    scores: Vec<f64>,
    iterations: usize,
    epsilon: f64,
    clamp: f64,
) -> std::result::Result<String, JsError> {
    sinkhorn_trace_inner(&scores, iterations, epsilon, clamp).map_err(to_js)
}

// ---------------------------------------------------------------------------
// Incremental trainer shared by the synthetic and puzzle demos

/// The same loop as the library's `train`, unrolled so a browser event loop
/// can run it a few batches at a time: one seeded stream initializes the
/// weights and then feeds per-visit shuffles, the cursor walks the training
/// set in order, and batch gradients are averaged before one SGD step.
struct Trainer {
    dims: ModelDims,
    cfg: TrainConfig,
    train_set: Vec<SequenceSample>,
    heldout: Vec<SequenceSample>,
    params: ModelParams,
    velocity: ModelParams,
    rng: ChaCha8Rng,
    cursor: usize,
    iter: usize,
}

impl Trainer {
    fn new(
        train_set: Vec<SequenceSample>,
        heldout: Vec<SequenceSample>,
        dims: ModelDims,
        cfg: TrainConfig,
    ) -> Result<Self> {
        dims.validate()?;
        if train_set.is_empty() || heldout.is_empty() {
            return Err(Error::InvalidLength { len: 0, min: 1 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelParams::init(&dims, &mut rng)?;
        let velocity = ModelParams::zeros(&dims)?;
        Ok(Trainer {
            dims,
            cfg,
            train_set,
            heldout,
            params,
            velocity,
            rng,
            cursor: 0,
            iter: 0,
        })
    }

    /// One mini-batch step; returns its mean loss.
    fn step(&mut self) -> Result<f64> {
        let mut grads = ModelParams::zeros(&self.dims)?;
        let mut batch_loss = 0.0;
        for _ in 0..self.cfg.batch_size {
            let sample = &self.train_set[self.cursor];
            self.cursor = (self.cursor + 1) % self.train_set.len();
            let perm = sample_permutation(self.dims.l, &mut self.rng)?;
            let shuffled = apply(&perm, sample.items())?;
            let (dsm, cache) = forward(&self.params, &shuffled, &self.cfg.sinkhorn)?;
            let (loss, g) = match self.cfg.loss_kind {
                LossKind::SinkhornCe => {
                    let (loss, gq) = loss_sinkhorn_ce(&dsm, &perm)?;
                    let g = backward(
                        &self.params,
                        &cache,
                        UpstreamGrad::OnDsm(&gq),
                        self.cfg.weight_decay,
                    )?;
                    (loss, g)
                }
                LossKind::NaiveSigmoidCe => {
                    let (loss, gs) = loss_naive(cache.scores(), &perm)?;
                    let g = backward(
                        &self.params,
                        &cache,
                        UpstreamGrad::OnScores(&gs),
                        self.cfg.weight_decay,
                    )?;
                    (loss, g)
                }
            };
            batch_loss += loss;
            grads.add_scaled(&g, 1.0);
        }
        let scale = 1.0 / self.cfg.batch_size as f64;
        batch_loss *= scale;
        grads.scale(scale);
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iter + 1,
                what: format!("training loss {batch_loss} is not finite"),
            });
        }
        self.iter += 1;
        sgd_step(&mut self.params, &grads, &mut self.velocity, &self.cfg, self.iter)?;
        Ok(batch_loss)
    }

    fn steps(&mut self, n: usize) -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += self.step()?;
        }
        Ok(if n == 0 { f64::NAN } else { acc / n as f64 })
    }

    /// Mean held-out metrics under each sample's stored permutation.
    fn evaluate(&self) -> Result<(f64, f64, f64)> {
        let (mut kt, mut hs, mut ne) = (0.0, 0.0, 0.0);
        for s in &self.heldout {
            let pred = predict_with(&self.params, &s.shuffled(), &self.cfg.sinkhorn, self.cfg.loss_kind)?;
            kt += kendall_tau(&pred.perm, s.perm())?;
            hs += hamming_similarity(&pred.perm, s.perm())?;
            ne += normalization_error(pred.dsm.matrix())?;
        }
        let n = self.heldout.len() as f64;
        Ok((kt / n, hs / n, ne / n))
    }

    fn heldout_sample(&self, idx: usize) -> &SequenceSample {
        &self.heldout[idx % self.heldout.len()]
    }
}

#[derive(Serialize)]
struct StepReport {
    iter: usize,
    loss: f64,
}

#[derive(Serialize)]
struct EvalReport {
    iter: usize,
    kt: f64,
    hs: f64,
    ne: f64,
}

#[derive(Serialize)]
struct SampleView {
    l: usize,
    truth: Vec<usize>,
    pred: Vec<usize>,
    matched: bool,
    /// Row-major l×l doubly-stochastic prediction.
    dsm: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Synthetic ordering demo

/// Interactive trainer for the synthetic attribute task.
#[wasm_bindgen]
pub struct DemoTrainer {
    inner: Trainer,
}

impl DemoTrainer {
    #[allow(clippy::too_many_arguments)]
    fn new_inner(
        l: usize,
        d: usize,
        n_sequences: usize,
        heldout: usize,
        sigma: f64,
        data_seed: u64,
        h: usize,
        h2: usize,
        learning_rate: f64,
        batch_size: usize,
        sinkhorn_iterations: usize,
        train_seed: u64,
    ) -> Result<DemoTrainer> {
        if heldout == 0 || n_sequences == 0 {
            return Err(Error::InvalidLength { len: 0, min: 1 });
        }
        let spec = SynthSpec {
            l,
            d,
            n_sequences: n_sequences + heldout,
            noise_sigma: sigma,
            seed: data_seed,
        };
        let mut samples = sinkperm::data::synth_generate(&spec)?.samples;
        let held = samples.split_off(samples.len() - heldout);
        let dims = ModelDims { d, h, h2, l };
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            seed: train_seed,
            sinkhorn: SinkhornConfig {
                iterations: sinkhorn_iterations,
                ..SinkhornConfig::default()
            },
            ..TrainConfig::default()
        };
        Ok(DemoTrainer {
            inner: Trainer::new(samples, held, dims, cfg)?,
        })
    }

    fn steps_inner(&mut self, n: usize) -> Result<String> {
        let loss = self.inner.steps(n)?;
        json(&StepReport {
            iter: self.inner.iter,
            loss,
        })
    }

    fn evaluate_inner(&self) -> Result<String> {
        let (kt, hs, ne) = self.inner.evaluate()?;
        json(&EvalReport {
            iter: self.inner.iter,
            kt,
            hs,
            ne,
        })
    }

    fn sample_view_inner(&self, idx: usize) -> Result<String> {
        let s = self.inner.heldout_sample(idx);
        let pred = predict_with(
            &self.inner.params,
            &s.shuffled(),
            &self.inner.cfg.sinkhorn,
            self.inner.cfg.loss_kind,
        )?;
        json(&SampleView {
            l: s.len(),
            truth: s.perm().as_slice().to_vec(),
            pred: pred.perm.as_slice().to_vec(),
            matched: &pred.perm == s.perm(),
            dsm: pred.dsm.matrix().as_slice().to_vec(),
        })
    }
}

#[wasm_bindgen]
impl DemoTrainer {
    /// Builds the dataset and a freshly initialized model.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        l: u32,
        d: u32,
        n_sequences: u32,
        heldout: u32,
        sigma: f64,
        data_seed: u32,
        h: u32,
        h2: u32,
        learning_rate: f64,
        batch_size: u32,
        sinkhorn_iterations: u32,
        train_seed: u32,
    ) -> std::result::Result<DemoTrainer, JsError> {
        DemoTrainer::new_inner(
            l as usize,
            d as usize,
            n_sequences as usize,
            heldout as usize,
            sigma,
            data_seed as u64,
            h as usize,
            h2 as usize,
            learning_rate,
            batch_size as usize,
            sinkhorn_iterations as usize,
            train_seed as u64,
        )
        .map_err(to_js)
    }

    /// Runs `n` mini-batch steps; returns `{iter, loss}`.
    pub fn steps(&mut self, n: u32) -> std::result::Result<String, JsError> {
        self.steps_inner(n as usize).map_err(to_js)
    }

    /// Held-out metrics `{iter, kt, hs, ne}`.
    pub fn evaluate(&self) -> std::result::Result<String, JsError> {
        self.evaluate_inner().map_err(to_js)
    }

    /// Prediction detail for one held-out sample: `{l, truth, pred, matched, dsm}`.
    pub fn sample_view(&self, idx: u32) -> std::result::Result<String, JsError> {
        self.sample_view_inner(idx as usize).map_err(to_js)
    }

    pub fn iter(&self) -> u32 {
        self.inner.iter as u32
    }

    pub fn heldout_len(&self) -> u32 {
        self.inner.heldout.len() as u32
    }
}

// ---------------------------------------------------------------------------
// Patch puzzle demo

#[derive(Serialize)]
struct RestoreReport {
    truth: Vec<usize>,
    pred: Vec<usize>,
    matched: bool,
    kt: f64,
}

/// Interactive patch-puzzle demo over procedurally generated images.
#[wasm_bindgen]
pub struct PuzzleDemo {
    inner: Trainer,
    heldout_images: Vec<Image>,
    spec: PatchGridSpec,
}

fn rgba(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width() * img.height() * 4);
    let c = img.channels();
    for px in img.pixels().chunks(c) {
        let (r, g, b) = if c == 1 {
            (px[0], px[0], px[0])
        } else {
            (px[0], px[1], px[2])
        };
        out.extend_from_slice(&[r, g, b, 255]);
    }
    out
}

impl PuzzleDemo {
    #[allow(clippy::too_many_arguments)]
    fn new_inner(
        n_images: usize,
        heldout: usize,
        grid: usize,
        patch_px: usize,
        data_seed: u64,
        h: usize,
        h2: usize,
        learning_rate: f64,
        batch_size: usize,
        train_seed: u64,
    ) -> Result<PuzzleDemo> {
        if heldout == 0 || n_images <= heldout {
            return Err(Error::InvalidArgument(
                "need more images than the held-out count".into(),
            ));
        }
        let spec = PatchGridSpec {
            grid,
            patch_px,
            jitter: false,
        };
        spec.validate()?;
        let side = grid * patch_px;
        let l = grid * grid;

        let mut img_rng = ChaCha8Rng::seed_from_u64(data_seed);
        let images: Vec<Image> = (0..n_images)
            .map(|_| procedural_image(side, side, 1, &mut img_rng))
            .collect::<Result<Vec<_>>>()?;
        // separate stream for shuffles, as in the CLI dataset builder
        let mut perm_rng = ChaCha8Rng::seed_from_u64(data_seed.wrapping_add(1));
        let mut samples = Vec::with_capacity(n_images);
        for img in &images {
            let features: Vec<Vec<f64>> = grid_split(img, &spec)?
                .iter()
                .map(|p| patch_features(p, false))
                .collect();
            let perm = sample_permutation(l, &mut perm_rng)?;
            samples.push(SequenceSample::new(features, None, perm)?);
        }
        let held_samples = samples.split_off(n_images - heldout);
        let heldout_images = images[n_images - heldout..].to_vec();

        let dims = ModelDims {
            d: patch_px * patch_px,
            h,
            h2,
            l,
        };
        let cfg = TrainConfig {
            learning_rate,
            batch_size,
            seed: train_seed,
            ..TrainConfig::default()
        };
        Ok(PuzzleDemo {
            inner: Trainer::new(samples, held_samples, dims, cfg)?,
            heldout_images,
            spec,
        })
    }

    /// The held-out image's patches in their stored shuffled arrangement.
    fn shuffled_patches(&self, idx: usize) -> Result<(Vec<Image>, &Permutation)> {
        let idx = idx % self.heldout_images.len();
        let patches = grid_split(&self.heldout_images[idx], &self.spec)?;
        let perm = self.inner.heldout_sample(idx).perm();
        Ok((apply(perm, &patches)?, perm))
    }

    fn restored(&self, idx: usize) -> Result<(Image, RestoreReport)> {
        let (patches, truth) = self.shuffled_patches(idx)?;
        let s = self.inner.heldout_sample(idx);
        let pred = predict_with(
            &self.inner.params,
            &s.shuffled(),
            &self.inner.cfg.sinkhorn,
            self.inner.cfg.loss_kind,
        )?;
        let img = reassemble(&patches, &pred.perm)?;
        let report = RestoreReport {
            truth: truth.as_slice().to_vec(),
            pred: pred.perm.as_slice().to_vec(),
            matched: &pred.perm == truth,
            kt: kendall_tau(&pred.perm, truth)?,
        };
        Ok((img, report))
    }
}

#[wasm_bindgen]
impl PuzzleDemo {
    /// Generates `n_images` gradient-plus-shapes images and sets up a model
    /// over their `grid`×`grid` patch decomposition.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_images: u32,
        heldout: u32,
        grid: u32,
        patch_px: u32,
        data_seed: u32,
        h: u32,
        h2: u32,
        learning_rate: f64,
        batch_size: u32,
        train_seed: u32,
    ) -> std::result::Result<PuzzleDemo, JsError> {
        PuzzleDemo::new_inner(
            n_images as usize,
            heldout as usize,
            grid as usize,
            patch_px as usize,
            data_seed as u64,
            h as usize,
            h2 as usize,
            learning_rate,
            batch_size as usize,
            train_seed as u64,
        )
        .map_err(to_js)
    }

    pub fn side_px(&self) -> u32 {
        (self.spec.grid * self.spec.patch_px) as u32
    }

    pub fn heldout_len(&self) -> u32 {
        self.heldout_images.len() as u32
    }

    pub fn iter(&self) -> u32 {
        self.inner.iter as u32
    }

    /// RGBA bytes of the original held-out image.
    pub fn original_rgba(&self, idx: u32) -> Vec<u8> {
        rgba(&self.heldout_images[idx as usize % self.heldout_images.len()])
    }

    /// RGBA bytes of the image with its patches shuffled.
    pub fn shuffled_rgba(&self, idx: u32) -> std::result::Result<Vec<u8>, JsError> {
        let (patches, _) = self.shuffled_patches(idx as usize).map_err(to_js)?;
        let identity = Permutation::identity(patches.len());
        let img = reassemble(&patches, &identity).map_err(to_js)?;
        Ok(rgba(&img))
    }

    /// RGBA bytes of the model's reassembly of the shuffled patches.
    pub fn restored_rgba(&self, idx: u32) -> std::result::Result<Vec<u8>, JsError> {
        let (img, _) = self.restored(idx as usize).map_err(to_js)?;
        Ok(rgba(&img))
    }

    /// `{truth, pred, matched, kt}` for the current restoration of one image.
    pub fn restore_info(&self, idx: u32) -> std::result::Result<String, JsError> {
        let (_, report) = self.restored(idx as usize).map_err(to_js)?;
        json(&report).map_err(to_js)
    }

    /// Runs `n` mini-batch steps; returns `{iter, loss}`.
    pub fn steps(&mut self, n: u32) -> std::result::Result<String, JsError> {
        let loss = self.inner.steps(n as usize).map_err(to_js)?;
        json(&StepReport {
            iter: self.inner.iter,
            loss,
        })
        .map_err(to_js)
    }

    /// Held-out metrics `{iter, kt, hs, ne}`.
    pub fn evaluate(&self) -> std::result::Result<String, JsError> {
        let (kt, hs, ne) = self.inner.evaluate().map_err(to_js)?;
        json(&EvalReport {
            iter: self.inner.iter,
            kt,
            hs,
            ne,
        })
        .map_err(to_js)
    }
}
