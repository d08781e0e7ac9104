//! Integer translation registration by phase correlation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::fft::{signed_index, Fft2};
use crate::imagecore::{crop_center, roll, RasterImage};

/// Displacement of a moving image relative to a fixed one.
///
/// `moving(r, c) ≈ fixed(r - dy, c - dx)` (circularly); translating the
/// moving image by `(-dy, -dx)` aligns it to the fixed image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift2D {
    pub dy: i64,
    pub dx: i64,
    pub peak_correlation: f64,
}

impl Shift2D {
    pub fn zero() -> Self {
        Self {
            dy: 0,
            dx: 0,
            peak_correlation: 1.0,
        }
    }
}

const SPECTRUM_FLOOR: f64 = 1e-12;

fn is_constant(img: &RasterImage) -> bool {
    let first = img.pixels().first().copied().unwrap_or(0.0);
    img.pixels().iter().all(|&v| v == first)
}

/// Phase correlation between `fixed` and `moving`.
pub fn register_translation(fixed: &RasterImage, moving: &RasterImage) -> Result<Shift2D> {
    fixed.ensure_same_dims(moving)?;
    if is_constant(fixed) {
        return Err(PicsError::ConstantImage("fixed image"));
    }
    if is_constant(moving) {
        return Err(PicsError::ConstantImage("moving image"));
    }
    let (h, w) = fixed.dims();
    let plan = Fft2::new(h, w);
    let f = plan.forward_real(fixed.pixels());
    let m = plan.forward_real(moving.pixels());

    // conj(F)·M peaks at the displacement of moving relative to fixed
    let mut cross: Vec<Complex64> = f
        .iter()
        .zip(&m)
        .map(|(a, b)| {
            let z = a.conj() * b;
            z / z.norm().max(SPECTRUM_FLOOR)
        })
        .collect();
    plan.inverse(&mut cross);

    let (mut best, mut peak) = (0usize, f64::NEG_INFINITY);
    for (i, z) in cross.iter().enumerate() {
        if z.re > peak {
            peak = z.re;
            best = i;
        }
    }
    Ok(Shift2D {
        dy: signed_index(best / w, h),
        dx: signed_index(best % w, w),
        peak_correlation: peak.clamp(0.0, 1.0),
    })
}

/// Undoes `shift` on the fluorescence image, then center-crops both images
/// by `crop_total` pixels per axis.
pub fn apply_shift_and_crop(
    phase: &RasterImage,
    fluor: &RasterImage,
    shift: &Shift2D,
    crop_total: usize,
) -> Result<(RasterImage, RasterImage)> {
    phase.ensure_same_dims(fluor)?;
    let margin = crop_total / 2;
    if crop_total % 2 != 0 {
        return Err(PicsError::InvalidConfig(format!(
            "crop_total {crop_total} must be even"
        )));
    }
    if shift.dy.unsigned_abs() as usize > margin || shift.dx.unsigned_abs() as usize > margin {
        return Err(PicsError::ShiftExceedsMargin {
            dy: shift.dy,
            dx: shift.dx,
            margin,
        });
    }
    let (h, w) = phase.dims();
    if crop_total > h || crop_total > w {
        return Err(PicsError::TargetLargerThanSource {
            target: (h.saturating_sub(crop_total), w.saturating_sub(crop_total)),
            source_dims: (h, w),
        });
    }
    let aligned = roll(fluor, -shift.dy, -shift.dx);
    let (th, tw) = (h - crop_total, w - crop_total);
    Ok((crop_center(phase, th, tw)?, crop_center(&aligned, th, tw)?))
}
