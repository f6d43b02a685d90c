//! Data pipelines: synthetic ordered sequences, the image patch-grid task,
//! and a minimal pixmap codec, plus manifest handling for image corpora.

pub mod patches;
pub mod pixmap;
pub mod synth;

pub use patches::{
    grid_split, grid_split_jittered, patch_features, procedural_image, reassemble, PatchGridSpec,
};
pub use pixmap::{decode_pixmap, encode_pixmap, load_pixmap, save_pixmap, Image};
pub use synth::{synth_generate, SynthDataset, SynthSpec};

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

/// Reads an image manifest: one path per line, blank lines and `#` comments
/// skipped, paths resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(base.join(line));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "manifest {} lists no images",
            path.display()
        )));
    }
    Ok(out)
}
