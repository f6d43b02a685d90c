//! The subcommand implementations. Each returns `Ok` on success; `main`
//! translates errors into exit codes.

use crate::config::{RunConfig, Task};
use crate::dataset;
use crate::util::{fmt_perm, fmt_sig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sinkperm::data::{
    grid_split, load_pixmap, patch_features, reassemble, save_pixmap, Image, PatchGridSpec,
};
use sinkperm::model::predict_with;
use sinkperm::{
    gradcheck_model, hamming_similarity, kendall_tau, load_checkpoint, normalization_error,
    round_to_permutation, sample_permutation, save_checkpoint, sinkhorn_backward,
    sinkhorn_forward, DoublyStochasticMatrix, Error, LossKind, Mat, ModelDims, Permutation,
    Result, SinkhornConfig,
};
use sinkperm::perm::apply;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Generates (puzzle) or validates (synth) the configured dataset and prints
/// a comma-separated summary ending in a content hash.
pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let ds = dataset::build(cfg)?;
    match cfg.task {
        Task::Synth => {
            println!("task,synth");
            println!("l,{}", cfg.synth.l);
            println!("d,{}", cfg.synth.d);
            println!("sigma,{}", fmt_sig(cfg.synth.noise_sigma));
            println!("seed,{}", cfg.synth.seed);
            println!("sequences,{}", ds.train.len());
            println!("heldout,{}", ds.heldout.len());
        }
        Task::Puzzle => {
            if cfg.puzzle.manifest.is_none() {
                let images = dataset::puzzle_images(cfg)?;
                let img_dir = cfg.out_dir.join("images");
                std::fs::create_dir_all(&img_dir)?;
                let ext = if cfg.puzzle.channels == 1 { "pgm" } else { "ppm" };
                let mut manifest = String::new();
                for (i, img) in images.iter().enumerate() {
                    let name = format!("images/img_{i:04}.{ext}");
                    save_pixmap(img, &cfg.out_dir.join(&name))?;
                    manifest.push_str(&name);
                    manifest.push('\n');
                }
                std::fs::write(cfg.out_dir.join("manifest.txt"), manifest)?;
                std::fs::write(cfg.out_dir.join("config.resolved"), cfg.resolved_text())?;
                println!("manifest,{}", cfg.out_dir.join("manifest.txt").display());
            }
            println!("task,puzzle");
            println!("grid,{}", cfg.puzzle.spec.grid);
            println!("patch_px,{}", cfg.puzzle.spec.patch_px);
            println!("seed,{}", cfg.puzzle.seed);
            println!("images,{}", ds.train.len() + ds.heldout.len());
            println!("sequences,{}", ds.train.len());
            println!("heldout,{}", ds.heldout.len());
        }
    }
    println!("hash,{:016x}", ds.hash);
    Ok(())
}

/// Trains per config and writes `model.ckpt`, `metrics.csv`, and the
/// resolved config into the output directory.
pub fn train(cfg: &RunConfig, force: bool, workers: usize) -> Result<()> {
    let ckpt_path = cfg.out_dir.join("model.ckpt");
    let metrics_path = cfg.out_dir.join("metrics.csv");
    if !force {
        for p in [&ckpt_path, &metrics_path] {
            if p.exists() {
                return Err(Error::InvalidArgument(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    let ds = dataset::build(cfg)?;
    let (params, log) =
        sinkperm::train(&ds.train, &ds.heldout, &ds.dims, &cfg.train, workers.max(1))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    save_checkpoint(&params, &ckpt_path)?;
    let mut csv = String::from("iter,loss,kt,hs,ne\n");
    for r in &log {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            fmt_sig(r.loss),
            fmt_sig(r.kt),
            fmt_sig(r.hs),
            fmt_sig(r.ne)
        ));
    }
    std::fs::write(&metrics_path, csv)?;
    std::fs::write(cfg.out_dir.join("config.resolved"), cfg.resolved_text())?;
    let last = log.last().expect("the final iteration is always logged");
    println!("checkpoint,{}", ckpt_path.display());
    println!("metrics,{}", metrics_path.display());
    println!("final_iter,{}", last.iter);
    println!("final_loss,{}", fmt_sig(last.loss));
    println!("final_kt,{}", fmt_sig(last.kt));
    println!("final_hs,{}", fmt_sig(last.hs));
    println!("final_ne,{}", fmt_sig(last.ne));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// Returns the ground-truth permutation (sanity ceiling).
    Oracle,
    /// Returns a uniformly random permutation (chance floor).
    Random,
    /// Runs the trained model from a checkpoint.
    Model,
}

impl Predictor {
    fn name(&self) -> &'static str {
        match self {
            Predictor::Oracle => "oracle",
            Predictor::Random => "random",
            Predictor::Model => "model",
        }
    }
}

/// Mean KT/HS/NE of a predictor over freshly shuffled held-out samples,
/// printed as a two-line CSV table.
pub fn eval(cfg: &RunConfig, predictor: Predictor, checkpoint: Option<&Path>) -> Result<()> {
    let ds = dataset::build(cfg)?;
    let params = match predictor {
        Predictor::Model => {
            let path = checkpoint.ok_or_else(|| {
                Error::InvalidArgument("--predictor model requires --checkpoint".into())
            })?;
            let p = load_checkpoint(path)?;
            if p.dims.l != ds.dims.l || p.dims.d != ds.dims.d {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint dims (l={}, d={}) do not match the dataset (l={}, d={})",
                    p.dims.l, p.dims.d, ds.dims.l, ds.dims.d
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed);
    let (mut kt_sum, mut hs_sum, mut ne_sum) = (0.0, 0.0, 0.0);
    for i in 0..cfg.eval_samples {
        let sample = &ds.heldout[i % ds.heldout.len()];
        let truth = sample_permutation(ds.dims.l, &mut rng)?;
        let (pred, ne) = match predictor {
            Predictor::Oracle => (truth.clone(), normalization_error(&truth.matrix())?),
            Predictor::Random => {
                let p = sample_permutation(ds.dims.l, &mut rng)?;
                let ne = normalization_error(&p.matrix())?;
                (p, ne)
            }
            Predictor::Model => {
                let shuffled = apply(&truth, sample.items())?;
                let out = predict_with(
                    params.as_ref().expect("loaded above"),
                    &shuffled,
                    &cfg.train.sinkhorn,
                    cfg.train.loss_kind,
                )?;
                let ne = normalization_error(out.dsm.matrix())?;
                (out.perm, ne)
            }
        };
        kt_sum += kendall_tau(&pred, &truth)?;
        hs_sum += hamming_similarity(&pred, &truth)?;
        ne_sum += ne;
    }
    let n = cfg.eval_samples as f64;
    println!("predictor,samples,kt,hs,ne");
    println!(
        "{},{},{},{},{}",
        predictor.name(),
        cfg.eval_samples,
        fmt_sig(kt_sum / n),
        fmt_sig(hs_sum / n),
        fmt_sig(ne_sum / n)
    );
    Ok(())
}

pub struct UnshuffleOpts<'a> {
    pub checkpoint: &'a Path,
    pub image: Option<&'a Path>,
    pub patches: &'a [PathBuf],
    pub grid: Option<usize>,
    pub shuffle_seed: Option<u64>,
    pub use_truth: bool,
    pub out: Option<&'a Path>,
}

/// Restores patch order for one image or an explicit patch list, writes the
/// reassembled image, and prints the permutation used.
pub fn unshuffle(cfg: &RunConfig, o: &UnshuffleOpts) -> Result<()> {
    let params = load_checkpoint(o.checkpoint)?;
    let grid = o.grid.unwrap_or(cfg.puzzle.spec.grid);
    let l = grid * grid;
    if params.dims.l != l {
        return Err(Error::InvalidArgument(format!(
            "checkpoint was trained for l={}, but grid {grid} gives {l} patches",
            params.dims.l
        )));
    }
    let mut patches: Vec<Image> = if let Some(img_path) = o.image {
        let img = load_pixmap(img_path)?;
        let spec = PatchGridSpec {
            grid,
            ..cfg.puzzle.spec
        };
        grid_split(&img, &spec)?
    } else {
        if o.patches.len() != l {
            return Err(Error::InvalidArgument(format!(
                "need {l} patch files for grid {grid}, got {}",
                o.patches.len()
            )));
        }
        o.patches
            .iter()
            .map(|p| load_pixmap(p))
            .collect::<Result<Vec<_>>>()?
    };
    // a split image arrives in original order; an explicit scramble records
    // its ground truth, a bare patch list has none
    let truth: Option<Permutation> = match o.shuffle_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_permutation(l, &mut rng)?;
            patches = apply(&p, &patches)?;
            Some(p)
        }
        None => o.image.map(|_| Permutation::identity(l)),
    };
    let features: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| patch_features(p, cfg.puzzle.mean_subtract))
        .collect();
    if features[0].len() != params.dims.d {
        return Err(Error::InvalidArgument(format!(
            "checkpoint expects d={}, these patches give {}",
            params.dims.d,
            features[0].len()
        )));
    }
    let chosen: Permutation = if o.use_truth {
        truth.clone().ok_or_else(|| {
            Error::InvalidArgument(
                "--truth needs a known ground truth; give --image and/or --shuffle-seed".into(),
            )
        })?
    } else {
        predict_with(&params, &features, &cfg.train.sinkhorn, cfg.train.loss_kind)?.perm
    };
    let out_img = reassemble(&patches, &chosen)?;
    let default_name = if out_img.channels() == 1 {
        "unshuffled.pgm"
    } else {
        "unshuffled.ppm"
    };
    let out_path = o
        .out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(default_name));
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_pixmap(&out_img, &out_path)?;
    println!("pi = {}", fmt_perm(chosen.as_slice()));
    if let Some(t) = &truth {
        println!("truth = {}", fmt_perm(t.as_slice()));
        println!("match = {}", *t == chosen);
    }
    println!("out = {}", out_path.display());
    println!("dims = {}x{}", out_img.width(), out_img.height());
    Ok(())
}

/// Prints the per-tensor finite-difference report; returns whether it passed.
pub fn gradcheck(dims: &ModelDims, seed: u64, loss: LossKind, fault: bool) -> Result<bool> {
    let report = gradcheck_model(dims, seed, &SinkhornConfig::default(), loss, fault)?;
    println!("tensor,max_rel_error,worst_index,analytic,numeric");
    for t in &report.tensors {
        println!(
            "{},{},{},{},{}",
            t.name,
            fmt_sig(t.summary.max_rel_error),
            t.summary.worst_index,
            fmt_sig(t.summary.analytic),
            fmt_sig(t.summary.numeric)
        );
    }
    println!(
        "result,{},{}",
        if report.pass { "PASS" } else { "FAIL" },
        fmt_sig(report.max_rel_error)
    );
    Ok(report.pass)
}

/// Parses an ASCII matrix (one row per line, whitespace-separated reals).
pub fn parse_matrix(text: &str) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::InvalidArgument(format!("line {}: invalid number {tok:?}", idx + 1))
            })?;
            row.push(v);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::InvalidArgument(format!(
                    "line {}: expected {w} values, found {}",
                    idx + 1,
                    row.len()
                )));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    let w = width.ok_or_else(|| Error::InvalidArgument("matrix file is empty".into()))?;
    if rows.len() != w {
        return Err(Error::InvalidArgument(format!(
            "matrix is {}x{w}, expected square",
            rows.len()
        )));
    }
    Mat::from_rows(&rows)
}

/// Rounds a matrix file to the nearest permutation and prints it with the
/// Frobenius-distance objective.
pub fn round(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mat = parse_matrix(&text)?;
    let dsm = DoublyStochasticMatrix::from_matrix(mat)?;
    let res = round_to_permutation(&dsm)?;
    println!("pi = {}", fmt_perm(res.perm.as_slice()));
    println!("objective = {}", fmt_sig(res.objective));
    Ok(())
}

/// Times the three numeric kernels on random matrices.
pub fn bench(l: usize, iterations: usize, trials: usize, seed: u64) -> Result<()> {
    if l < 2 || trials == 0 {
        return Err(Error::InvalidArgument(
            "bench needs l >= 2 and trials >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SinkhornConfig {
        iterations,
        ..SinkhornConfig::default()
    };
    let mats: Vec<Mat> = (0..trials)
        .map(|_| {
            Mat::from_vec(l, l, (0..l * l).map(|_| rng.random_range(0.1..10.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    println!("op,l,trials,total_ms,per_op_us");
    let report = |op: &str, elapsed: std::time::Duration| {
        let ms = elapsed.as_secs_f64() * 1e3;
        println!(
            "{op},{l},{trials},{},{}",
            fmt_sig(ms),
            fmt_sig(ms * 1e3 / trials as f64)
        );
    };
    let t0 = Instant::now();
    let outs = mats
        .iter()
        .map(|q| sinkhorn_forward(q, &cfg))
        .collect::<Result<Vec<_>>>()?;
    report("sinkhorn_forward", t0.elapsed());
    let g = Mat::from_vec(l, l, vec![1.0; l * l])?;
    let t0 = Instant::now();
    for (_, tape) in &outs {
        sinkhorn_backward(&g, tape)?;
    }
    report("sinkhorn_backward", t0.elapsed());
    let t0 = Instant::now();
    for (dsm, _) in &outs {
        round_to_permutation(dsm)?;
    }
    report("hungarian_round", t0.elapsed());
    let mean_ne = outs
        .iter()
        .map(|(dsm, _)| normalization_error(dsm.matrix()))
        .sum::<Result<f64>>()?
        / trials as f64;
    println!("mean_ne,{}", fmt_sig(mean_ne));
    Ok(())
}
