//! Orthonormal 2-D Haar transform and the focus metric built on it.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{PicsError, Result};
use crate::imagecore::RasterImage;

/// Detail subbands of one decomposition level.
///
/// `lh` is lowpass along rows and highpass along columns (horizontal
/// edges), `hl` the reverse, `hh` diagonal.
#[derive(Debug, Clone)]
pub struct DetailBands {
    pub lh: RasterImage,
    pub hl: RasterImage,
    pub hh: RasterImage,
}

#[derive(Debug, Clone)]
pub struct HaarPyramid {
    /// Coarsest approximation.
    pub ll: RasterImage,
    /// Finest level first.
    pub details: Vec<DetailBands>,
}

impl HaarPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Σ(LH² + HL² + HH²) over every level.
    pub fn detail_energy(&self) -> f64 {
        self.details
            .iter()
            .map(|d| sum_sq(&d.lh) + sum_sq(&d.hl) + sum_sq(&d.hh))
            .sum()
    }

    /// Σ of all squared coefficients, LL included.
    pub fn total_energy(&self) -> f64 {
        sum_sq(&self.ll) + self.detail_energy()
    }
}

fn sum_sq(img: &RasterImage) -> f64 {
    img.pixels().iter().map(|v| v * v).sum()
}

fn analyze_level(img: &RasterImage) -> (RasterImage, DetailBands) {
    let (h, w) = (img.height() / 2, img.width() / 2);
    let mut ll = Vec::with_capacity(h * w);
    let mut lh = Vec::with_capacity(h * w);
    let mut hl = Vec::with_capacity(h * w);
    let mut hh = Vec::with_capacity(h * w);
    for r in 0..h {
        let top = img.row(2 * r);
        let bot = img.row(2 * r + 1);
        for c in 0..w {
            let (a, b) = (top[2 * c], top[2 * c + 1]);
            let (cc, d) = (bot[2 * c], bot[2 * c + 1]);
            // separable: rows first, then columns, each with 1/sqrt(2)
            let row_lo_top = (a + b) * FRAC_1_SQRT_2;
            let row_hi_top = (a - b) * FRAC_1_SQRT_2;
            let row_lo_bot = (cc + d) * FRAC_1_SQRT_2;
            let row_hi_bot = (cc - d) * FRAC_1_SQRT_2;
            ll.push((row_lo_top + row_lo_bot) * FRAC_1_SQRT_2);
            lh.push((row_lo_top - row_lo_bot) * FRAC_1_SQRT_2);
            hl.push((row_hi_top + row_hi_bot) * FRAC_1_SQRT_2);
            hh.push((row_hi_top - row_hi_bot) * FRAC_1_SQRT_2);
        }
    }
    let band = |v: Vec<f64>| {
        let mut r = RasterImage::zeros(h, w, img.units);
        r.pixels_mut().copy_from_slice(&v);
        r
    };
    (
        band(ll),
        DetailBands {
            lh: band(lh),
            hl: band(hl),
            hh: band(hh),
        },
    )
}

/// Multi-level orthonormal Haar analysis (filters `[1, 1]/√2`, `[1, -1]/√2`).
pub fn haar_dwt2(img: &RasterImage, levels: usize) -> Result<HaarPyramid> {
    if levels == 0 {
        return Err(PicsError::InvalidConfig("levels must be >= 1".into()));
    }
    let div = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| PicsError::InvalidConfig(format!("{levels} levels")))?;
    let (h, w) = img.dims();
    if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
        return Err(PicsError::NonDivisible {
            dims: (h, w),
            divisor: div,
        });
    }
    let mut details = Vec::with_capacity(levels);
    let mut current = img.clone();
    for _ in 0..levels {
        let (ll, d) = analyze_level(&current);
        details.push(d);
        current = ll;
    }
    Ok(HaarPyramid {
        ll: current,
        details,
    })
}

/// Synthesis; exact inverse of [`haar_dwt2`].
pub fn haar_idwt2(p: &HaarPyramid) -> RasterImage {
    let mut current = p.ll.clone();
    for d in p.details.iter().rev() {
        let (h, w) = current.dims();
        let mut out = RasterImage::zeros(2 * h, 2 * w, current.units);
        for r in 0..h {
            for c in 0..w {
                let ll = current.get(r, c);
                let lh = d.lh.get(r, c);
                let hl = d.hl.get(r, c);
                let hh = d.hh.get(r, c);
                let row_lo_top = (ll + lh) * FRAC_1_SQRT_2;
                let row_lo_bot = (ll - lh) * FRAC_1_SQRT_2;
                let row_hi_top = (hl + hh) * FRAC_1_SQRT_2;
                let row_hi_bot = (hl - hh) * FRAC_1_SQRT_2;
                out.set(2 * r, 2 * c, (row_lo_top + row_hi_top) * FRAC_1_SQRT_2);
                out.set(2 * r, 2 * c + 1, (row_lo_top - row_hi_top) * FRAC_1_SQRT_2);
                out.set(2 * r + 1, 2 * c, (row_lo_bot + row_hi_bot) * FRAC_1_SQRT_2);
                out.set(2 * r + 1, 2 * c + 1, (row_lo_bot - row_hi_bot) * FRAC_1_SQRT_2);
            }
        }
        current = out;
    }
    current
}

/// Images of one field at several focus positions.
#[derive(Debug, Clone)]
pub struct ZStack {
    slices: Vec<RasterImage>,
    pub z_spacing_um: Option<f64>,
}

impl ZStack {
    pub fn new(slices: Vec<RasterImage>) -> Result<Self> {
        if slices.is_empty() {
            return Err(PicsError::EmptyInput("z-stack"));
        }
        for s in &slices[1..] {
            slices[0].ensure_same_dims(s)?;
        }
        Ok(Self {
            slices,
            z_spacing_um: None,
        })
    }

    pub fn slices(&self) -> &[RasterImage] {
        &self.slices
    }
}

/// Index of the slice with the most Haar detail energy; ties go to the
/// lowest index.
pub fn select_focus(stack: &ZStack, levels: usize) -> Result<usize> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, s) in stack.slices.iter().enumerate() {
        let e = haar_dwt2(s, levels)?.detail_energy();
        if e > best.1 {
            best = (i, e);
        }
    }
    Ok(best.0)
}
