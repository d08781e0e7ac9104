//! Non-overlapping tiling of fields into training patches.

use crate::error::{PicsError, Result};
use crate::imagecore::{crop_window, RasterImage};

/// Row-major tiling into `patch` x `patch` tiles.
pub fn patchify(img: &RasterImage, patch: usize) -> Result<Vec<RasterImage>> {
    let (h, w) = img.dims();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(PicsError::NonDivisible {
            dims: (h, w),
            divisor: patch,
        });
    }
    let mut out = Vec::with_capacity((h / patch) * (w / patch));
    for top in (0..h).step_by(patch) {
        for left in (0..w).step_by(patch) {
            out.push(crop_window(img, top, left, patch, patch));
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] for a field of `height` x `width`.
pub fn stitch(patches: &[RasterImage], height: usize, width: usize) -> Result<RasterImage> {
    let first = patches.first().ok_or(PicsError::EmptyInput("patch list"))?;
    let p = first.height();
    if p == 0 || first.width() != p || height % p != 0 || width % p != 0 {
        return Err(PicsError::NonDivisible {
            dims: (height, width),
            divisor: p,
        });
    }
    let per_row = width / p;
    if patches.len() != per_row * (height / p) {
        return Err(PicsError::ShapeMismatch(format!(
            "{} patches for a {height}x{width} field",
            patches.len()
        )));
    }
    let mut out = RasterImage::zeros(height, width, first.units);
    out.pixel_size_um = first.pixel_size_um;
    for (i, patch) in patches.iter().enumerate() {
        first.ensure_same_dims(patch)?;
        let (top, left) = ((i / per_row) * p, (i % per_row) * p);
        for r in 0..p {
            let dst = &mut out.pixels_mut()[(top + r) * width + left..(top + r) * width + left + p];
            dst.copy_from_slice(patch.row(r));
        }
    }
    Ok(out)
}
