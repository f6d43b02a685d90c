//! Spatial patch-grid pretext task: cut a g×g grid of patches out of an
//! image, shuffle them, and learn to put them back.
//!
//! Patch index is row-major: `index = row·g + col`. Patches come from the
//! top-left corner of each grid cell by default; optional jitter moves them
//! randomly inside the cell.

use crate::data::pixmap::Image;
use crate::error::{Error, Result};
use crate::perm::{recover, Permutation};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGridSpec {
    /// Cells per side.
    pub grid: usize,
    /// Patch side length in pixels.
    pub patch_px: usize,
    /// Random in-cell offsets instead of the top-left corner.
    pub jitter: bool,
}

impl Default for PatchGridSpec {
    fn default() -> Self {
        PatchGridSpec {
            grid: 3,
            patch_px: 64,
            jitter: false,
        }
    }
}

impl PatchGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2, got {}",
                self.grid
            )));
        }
        if self.patch_px == 0 {
            return Err(Error::InvalidArgument("patch_px must be positive".into()));
        }
        Ok(())
    }
}

/// Cell dimensions for `img` under `spec`, or a shape error when the image
/// cannot fit `grid` patches per side.
fn cell_dims(img: &Image, spec: &PatchGridSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    let cell_w = img.width() / spec.grid;
    let cell_h = img.height() / spec.grid;
    if cell_w < spec.patch_px || cell_h < spec.patch_px {
        return Err(Error::shape(
            "grid_split image side",
            spec.grid * spec.patch_px,
            img.width().min(img.height()),
        ));
    }
    Ok((cell_w, cell_h))
}

fn copy_patch(img: &Image, x0: usize, y0: usize, side: usize) -> Image {
    let c = img.channels();
    let mut pixels = Vec::with_capacity(side * side * c);
    for py in 0..side {
        let row = y0 + py;
        let start = (row * img.width() + x0) * c;
        pixels.extend_from_slice(&img.pixels()[start..start + side * c]);
    }
    Image::new(side, side, c, pixels).expect("patch dimensions are consistent")
}

/// Cuts `grid²` patches of `patch_px` pixels, one from the top-left corner of
/// each grid cell, ordered row-major.
pub fn grid_split(img: &Image, spec: &PatchGridSpec) -> Result<Vec<Image>> {
    let (cell_w, cell_h) = cell_dims(img, spec)?;
    let mut patches = Vec::with_capacity(spec.grid * spec.grid);
    for row in 0..spec.grid {
        for col in 0..spec.grid {
            patches.push(copy_patch(img, col * cell_w, row * cell_h, spec.patch_px));
        }
    }
    Ok(patches)
}

/// Like [`grid_split`] but each patch sits at a random offset inside its cell.
/// With cells exactly `patch_px` wide this degenerates to [`grid_split`].
pub fn grid_split_jittered<R: Rng + ?Sized>(
    img: &Image,
    spec: &PatchGridSpec,
    rng: &mut R,
) -> Result<Vec<Image>> {
    let (cell_w, cell_h) = cell_dims(img, spec)?;
    let mut patches = Vec::with_capacity(spec.grid * spec.grid);
    for row in 0..spec.grid {
        for col in 0..spec.grid {
            let dx = rng.random_range(0..=cell_w - spec.patch_px);
            let dy = rng.random_range(0..=cell_h - spec.patch_px);
            patches.push(copy_patch(img, col * cell_w + dx, row * cell_h + dy, spec.patch_px));
        }
    }
    Ok(patches)
}

/// Un-shuffles `patches` with `perm` and lays them out on the row-major grid.
///
/// `patches` is the shuffled view; with the permutation that produced it the
/// output is the original covered region, pixel-exact.
pub fn reassemble(patches: &[Image], perm: &Permutation) -> Result<Image> {
    if patches.is_empty() {
        return Err(Error::InvalidLength { len: 0, min: 1 });
    }
    let g = (patches.len() as f64).sqrt().round() as usize;
    if g * g != patches.len() {
        return Err(Error::InvalidArgument(format!(
            "{} patches do not form a square grid",
            patches.len()
        )));
    }
    let first = &patches[0];
    let (pw, ph, c) = (first.width(), first.height(), first.channels());
    if patches
        .iter()
        .any(|p| p.width() != pw || p.height() != ph || p.channels() != c)
    {
        return Err(Error::shape("reassemble patch size", pw * ph * c, 0));
    }
    let ordered = recover(perm, patches)?;
    let mut out = Image::filled(g * pw, g * ph, c, 0)?;
    for (idx, patch) in ordered.iter().enumerate() {
        let (row, col) = (idx / g, idx % g);
        for py in 0..ph {
            let dst_row = row * ph + py;
            let dst_start = (dst_row * out.width() + col * pw) * c;
            let src_start = py * pw * c;
            out.pixels_mut()[dst_start..dst_start + pw * c]
                .copy_from_slice(&patch.pixels()[src_start..src_start + pw * c]);
        }
    }
    Ok(out)
}

/// Flattens a patch to `width·height·channels` features in buffer order,
/// scaled to `[0, 1]`.
///
/// With `mean_subtract` the per-patch mean intensity is removed first. The
/// mean is computed as an integer sum so constant patches map to exact zeros.
pub fn patch_features(patch: &Image, mean_subtract: bool) -> Vec<f64> {
    let mean = if mean_subtract {
        let sum: u64 = patch.pixels().iter().map(|&p| p as u64).sum();
        sum as f64 / patch.pixels().len() as f64
    } else {
        0.0
    };
    patch
        .pixels()
        .iter()
        .map(|&p| (p as f64 - mean) / 255.0)
        .collect()
}

/// Procedurally generated test image: a brightness gradient that always
/// increases toward the bottom-right corner, plus a few random filled shapes.
///
/// The fixed gradient orientation makes every grid cell's position decodable
/// from its absolute brightness, which is what gives the patch task a
/// learnable signal.
pub fn procedural_image<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    channels: usize,
    rng: &mut R,
) -> Result<Image> {
    let mut img = Image::filled(width, height, channels, 0)?;
    let gx: f64 = rng.random_range(0.3..0.7);
    let gy: f64 = rng.random_range(0.3..0.7);
    let wm = (width - 1).max(1) as f64;
    let hm = (height - 1).max(1) as f64;
    for y in 0..height {
        for x in 0..width {
            let t = (gx * (x as f64 / wm) + gy * (y as f64 / hm)) / (gx + gy);
            let v = (20.0 + 200.0 * t) as u8;
            for ch in 0..channels {
                *img.sample_mut(x, y, ch) = v;
            }
        }
    }
    let shapes = rng.random_range(2..=5);
    for _ in 0..shapes {
        let cx = rng.random_range(0..width) as i64;
        let cy = rng.random_range(0..height) as i64;
        let r = rng.random_range((width.min(height) / 12).max(2)..=(width.min(height) / 5).max(3))
            as i64;
        let rect = rng.random_range(0..2u8) == 0;
        let mut delta = [0i16; 3];
        for d in delta.iter_mut().take(channels) {
            *d = rng.random_range(-60..=60);
        }
        for y in (cy - r).max(0)..(cy + r).min(height as i64) {
            for x in (cx - r).max(0)..(cx + r).min(width as i64) {
                let inside = if rect {
                    true
                } else {
                    (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r
                };
                if inside {
                    for ch in 0..channels {
                        let p = img.sample_mut(x as usize, y as usize, ch);
                        *p = (*p as i16 + delta[ch]).clamp(0, 255) as u8;
                    }
                }
            }
        }
    }
    Ok(img)
}
