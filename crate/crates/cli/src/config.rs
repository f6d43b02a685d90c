//! Layered run configuration: defaults, then a `key=value` file, then
//! repeatable `--set key=value` overrides. Unknown keys are rejected, and the
//! fully resolved config is echoed into the output directory so every run is
//! reproducible from its artifacts.

use sinkperm::data::synth::SynthSpec;
use sinkperm::data::PatchGridSpec;
use sinkperm::{Error, LossKind, Result, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Synth,
    Puzzle,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Synth => "synth",
            Task::Puzzle => "puzzle",
        }
    }
}

/// Settings for the patch-puzzle task beyond the grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PuzzleConfig {
    pub spec: PatchGridSpec,
    pub mean_subtract: bool,
    /// Procedural corpus size when no manifest is given.
    pub n_images: usize,
    /// Procedural images are square with this side length.
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// When set, images come from this manifest instead of the generator.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub out_dir: PathBuf,
    pub model_h: usize,
    pub model_h2: usize,
    pub train: TrainConfig,
    /// Held-out sample count, generated in addition to the training set.
    pub heldout: usize,
    pub synth: SynthSpec,
    pub puzzle: PuzzleConfig,
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Synth,
            out_dir: PathBuf::from("out"),
            model_h: 32,
            model_h2: 64,
            train: TrainConfig {
                learning_rate: 5e-3,
                batch_size: 64,
                iterations: 5000,
                ..TrainConfig::default()
            },
            heldout: 200,
            synth: SynthSpec {
                l: 4,
                d: 8,
                n_sequences: 2000,
                noise_sigma: 0.05,
                seed: 0,
            },
            puzzle: PuzzleConfig {
                spec: PatchGridSpec {
                    grid: 3,
                    patch_px: 16,
                    jitter: false,
                },
                mean_subtract: false,
                n_images: 240,
                image_size: 48,
                channels: 1,
                seed: 0,
                manifest: None,
            },
            eval_samples: 1000,
            eval_seed: 99,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("config key {key}: {e} (value {value:?})")))
}

impl RunConfig {
    /// Sets one key. Every supported key appears here; anything else is an
    /// error, never silently ignored.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => {
                self.task = match value {
                    "synth" => Task::Synth,
                    "puzzle" => Task::Puzzle,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "task must be synth or puzzle, got {other:?}"
                        )))
                    }
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "model.h" => self.model_h = parse_as(key, value)?,
            "model.h2" => self.model_h2 = parse_as(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_as(key, value)?,
            "train.momentum" => self.train.momentum = parse_as(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_as(key, value)?,
            "train.iterations" => self.train.iterations = parse_as(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_as(key, value)?,
            "train.seed" => self.train.seed = parse_as(key, value)?,
            "train.loss" => self.train.loss_kind = LossKind::parse(value)?,
            "train.heldout" => self.heldout = parse_as(key, value)?,
            "sinkhorn.iterations" => self.train.sinkhorn.iterations = parse_as(key, value)?,
            "sinkhorn.epsilon" => self.train.sinkhorn.epsilon = parse_as(key, value)?,
            "sinkhorn.clamp" => self.train.sinkhorn.clamp = parse_as(key, value)?,
            "synth.l" => self.synth.l = parse_as(key, value)?,
            "synth.d" => self.synth.d = parse_as(key, value)?,
            "synth.n" => self.synth.n_sequences = parse_as(key, value)?,
            "synth.sigma" => self.synth.noise_sigma = parse_as(key, value)?,
            "synth.seed" => self.synth.seed = parse_as(key, value)?,
            "puzzle.grid" => self.puzzle.spec.grid = parse_as(key, value)?,
            "puzzle.patch_px" => self.puzzle.spec.patch_px = parse_as(key, value)?,
            "puzzle.jitter" => self.puzzle.spec.jitter = parse_as(key, value)?,
            "puzzle.mean_subtract" => self.puzzle.mean_subtract = parse_as(key, value)?,
            "puzzle.n_images" => self.puzzle.n_images = parse_as(key, value)?,
            "puzzle.image_size" => self.puzzle.image_size = parse_as(key, value)?,
            "puzzle.channels" => self.puzzle.channels = parse_as(key, value)?,
            "puzzle.seed" => self.puzzle.seed = parse_as(key, value)?,
            "puzzle.manifest" => self.puzzle.manifest = Some(PathBuf::from(value)),
            "eval.samples" => self.eval_samples = parse_as(key, value)?,
            "eval.seed" => self.eval_seed = parse_as(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` comments and
    /// blank lines skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `--set key=value` overrides in order.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects key=value, got {pair:?}"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        // learning_rate = 0 is the provable-no-op case the trainer accepts
        let mut probe = self.train;
        if probe.learning_rate == 0.0 {
            probe.learning_rate = 1.0;
        }
        probe.validate()?;
        if self.model_h == 0 || self.model_h2 == 0 {
            return Err(Error::InvalidArgument(
                "model.h and model.h2 must be positive".into(),
            ));
        }
        if self.heldout == 0 {
            return Err(Error::InvalidArgument("train.heldout must be positive".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::InvalidArgument("eval.samples must be positive".into()));
        }
        match self.task {
            Task::Synth => self.synth.validate()?,
            Task::Puzzle => {
                self.puzzle.spec.validate()?;
                if !(self.puzzle.channels == 1 || self.puzzle.channels == 3) {
                    return Err(Error::InvalidArgument(format!(
                        "puzzle.channels must be 1 or 3, got {}",
                        self.puzzle.channels
                    )));
                }
                if let Some(m) = &self.puzzle.manifest {
                    if !m.exists() {
                        return Err(Error::InvalidArgument(format!(
                            "puzzle.manifest path {} does not exist",
                            m.display()
                        )));
                    }
                } else {
                    if self.puzzle.n_images <= self.heldout {
                        return Err(Error::InvalidArgument(format!(
                            "puzzle.n_images ({}) must exceed train.heldout ({})",
                            self.puzzle.n_images, self.heldout
                        )));
                    }
                    let min = self.puzzle.spec.grid * self.puzzle.spec.patch_px;
                    if self.puzzle.image_size < min {
                        return Err(Error::InvalidArgument(format!(
                            "puzzle.image_size ({}) below grid*patch_px ({min})",
                            self.puzzle.image_size
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical `key=value` rendering of every setting, for provenance.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("string write");
        kv("task", self.task.name().into());
        kv("out_dir", self.out_dir.display().to_string());
        kv("model.h", self.model_h.to_string());
        kv("model.h2", self.model_h2.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.momentum", self.train.momentum.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.iterations", self.train.iterations.to_string());
        kv("train.weight_decay", self.train.weight_decay.to_string());
        kv("train.seed", self.train.seed.to_string());
        kv("train.loss", self.train.loss_kind.name().into());
        kv("train.heldout", self.heldout.to_string());
        kv("sinkhorn.iterations", self.train.sinkhorn.iterations.to_string());
        kv("sinkhorn.epsilon", self.train.sinkhorn.epsilon.to_string());
        kv("sinkhorn.clamp", self.train.sinkhorn.clamp.to_string());
        kv("synth.l", self.synth.l.to_string());
        kv("synth.d", self.synth.d.to_string());
        kv("synth.n", self.synth.n_sequences.to_string());
        kv("synth.sigma", self.synth.noise_sigma.to_string());
        kv("synth.seed", self.synth.seed.to_string());
        kv("puzzle.grid", self.puzzle.spec.grid.to_string());
        kv("puzzle.patch_px", self.puzzle.spec.patch_px.to_string());
        kv("puzzle.jitter", self.puzzle.spec.jitter.to_string());
        kv("puzzle.mean_subtract", self.puzzle.mean_subtract.to_string());
        kv("puzzle.n_images", self.puzzle.n_images.to_string());
        kv("puzzle.image_size", self.puzzle.image_size.to_string());
        kv("puzzle.channels", self.puzzle.channels.to_string());
        kv("puzzle.seed", self.puzzle.seed.to_string());
        if let Some(m) = &self.puzzle.manifest {
            kv("puzzle.manifest", m.display().to_string());
        }
        kv("eval.samples", self.eval_samples.to_string());
        kv("eval.seed", self.eval_seed.to_string());
        s
    }

    /// Builds the config from an optional file plus overrides and validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
