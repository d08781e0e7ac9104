//! Raster and mask types shared by every stage.
//!
//! Layout is row-major with the origin at the top-left; coordinates are
//! written `(row, col)` and `y` grows downward.

mod tiff_io;

pub use tiff_io::{
    load_raster, load_u8_raster, save_palette_u8, save_raster, save_rgb8, RgbImage,
};

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};

/// Physical meaning of raster values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Radians,
    #[default]
    IntensityAu,
    Dimensionless,
}

impl Units {
    pub fn as_str(self) -> &'static str {
        match self {
            Units::Radians => "radians",
            Units::IntensityAu => "intensity_au",
            Units::Dimensionless => "dimensionless",
        }
    }
}

/// Single-channel floating-point image.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pub pixel_size_um: Option<f64>,
    pub units: Units,
}

impl RasterImage {
    /// Builds a raster, rejecting wrong lengths and non-finite samples.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, units: Units) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(PicsError::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} raster",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(PicsError::NonFinite("raster pixels"));
        }
        Ok(Self {
            height,
            width,
            pixels,
            pixel_size_um: None,
            units,
        })
    }

    pub fn zeros(height: usize, width: usize, units: Units) -> Self {
        Self::filled(height, width, 0.0, units)
    }

    pub fn filled(height: usize, width: usize, value: f64, units: Units) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
            pixel_size_um: None,
            units,
        }
    }

    /// Evaluates `f(row, col)` at every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        units: Units,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            pixels,
            pixel_size_um: None,
            units,
        }
    }

    pub fn with_pixel_size(mut self, um: f64) -> Self {
        self.pixel_size_um = Some(um);
        self
    }

    pub fn with_units(mut self, units: Units) -> Self {
        self.units = units;
        self
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Returns a raster of the same geometry with `f` applied per pixel.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            pixel_size_um: self.pixel_size_um,
            units: self.units,
        }
    }

    pub(crate) fn with_pixels(&self, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            height: self.height,
            width: self.width,
            pixels,
            pixel_size_um: self.pixel_size_um,
            units: self.units,
        }
    }

    pub fn ensure_same_dims(&self, other: &RasterImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(PicsError::DimMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.pixels.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PicsError::NonFinite(what))
        }
    }
}

/// Per-pixel boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(PicsError::ShapeMismatch(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    /// Mask of pixels where `pred` holds.
    pub fn from_raster(img: &RasterImage, pred: impl Fn(f64) -> bool) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            bits: img.pixels().iter().map(|&v| pred(v)).collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        if self.dims() != other.dims() {
            return Err(PicsError::DimMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Central `target_h` x `target_w` window.
///
/// The margin split is symmetric, so `(source - target)` must be even on
/// both axes.
pub fn crop_center(img: &RasterImage, target_h: usize, target_w: usize) -> Result<RasterImage> {
    let (h, w) = img.dims();
    if target_h > h || target_w > w {
        return Err(PicsError::TargetLargerThanSource {
            target: (target_h, target_w),
            source_dims: (h, w),
        });
    }
    if (h - target_h) % 2 != 0 || (w - target_w) % 2 != 0 {
        return Err(PicsError::InvalidConfig(format!(
            "asymmetric crop {h}x{w} -> {target_h}x{target_w}"
        )));
    }
    let top = (h - target_h) / 2;
    let left = (w - target_w) / 2;
    Ok(crop_window(img, top, left, target_h, target_w))
}

pub(crate) fn crop_window(
    img: &RasterImage,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> RasterImage {
    let mut pixels = Vec::with_capacity(height * width);
    for r in top..top + height {
        pixels.extend_from_slice(&img.row(r)[left..left + width]);
    }
    RasterImage {
        height,
        width,
        pixels,
        pixel_size_um: img.pixel_size_um,
        units: img.units,
    }
}

/// 2x2 mean pooling.
pub fn downsample2(img: &RasterImage) -> Result<RasterImage> {
    let (h, w) = img.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(PicsError::OddDimension((h, w)));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut pixels = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let top = img.row(2 * r);
        let bottom = img.row(2 * r + 1);
        for c in 0..ow {
            let s = (top[2 * c] + top[2 * c + 1]) + (bottom[2 * c] + bottom[2 * c + 1]);
            pixels.push(s * 0.25);
        }
    }
    Ok(RasterImage {
        height: oh,
        width: ow,
        pixels,
        pixel_size_um: img.pixel_size_um.map(|p| p * 2.0),
        units: img.units,
    })
}

/// Nearest-neighbour 2x upsampling; the inverse footprint of [`downsample2`].
pub fn upsample2(img: &RasterImage) -> RasterImage {
    let (h, w) = img.dims();
    let mut pixels = Vec::with_capacity(4 * h * w);
    for r in 0..h {
        let row = img.row(r);
        for _ in 0..2 {
            for &v in row {
                pixels.push(v);
                pixels.push(v);
            }
        }
    }
    RasterImage {
        height: 2 * h,
        width: 2 * w,
        pixels,
        pixel_size_um: img.pixel_size_um.map(|p| p * 0.5),
        units: img.units,
    }
}

/// Circular translation: `out(r, c) = img(r - dy, c - dx)` with wrap-around.
pub fn roll(img: &RasterImage, dy: i64, dx: i64) -> RasterImage {
    let (h, w) = img.dims();
    let mut out = img.clone();
    if h == 0 || w == 0 {
        return out;
    }
    let sy = dy.rem_euclid(h as i64) as usize;
    let sx = dx.rem_euclid(w as i64) as usize;
    for r in 0..h {
        let src = img.row((r + h - sy) % h);
        let dst = &mut out.pixels[r * w..(r + 1) * w];
        for c in 0..w {
            dst[c] = src[(c + w - sx) % w];
        }
    }
    out
}

/// Symmetric (reflect, edge not repeated) padding to `(target_h, target_w)`,
/// placing the source at the top-left.
pub fn reflect_pad(img: &RasterImage, target_h: usize, target_w: usize) -> Result<RasterImage> {
    let (h, w) = img.dims();
    if target_h < h || target_w < w {
        return Err(PicsError::InvalidConfig(format!(
            "pad target {target_h}x{target_w} smaller than {h}x{w}"
        )));
    }
    if (target_h > h && h < 2) || (target_w > w && w < 2) {
        return Err(PicsError::InvalidConfig(
            "reflect padding needs at least 2 pixels per padded axis".into(),
        ));
    }
    let reflect = |i: usize, n: usize| -> usize {
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    Ok(RasterImage::from_fn(target_h, target_w, img.units, |r, c| {
        let rr = if r < h { r } else { reflect(r, h) };
        let cc = if c < w { c } else { reflect(c, w) };
        img.get(rr, cc)
    })
    .with_pixel_size_opt(img.pixel_size_um))
}

impl RasterImage {
    fn with_pixel_size_opt(mut self, um: Option<f64>) -> Self {
        self.pixel_size_um = um;
        self
    }
}

/// Separable Gaussian smoothing with symmetric boundary extension.
///
/// The kernel is truncated at `ceil(4σ)`; `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    if !(sigma > 0.0) || img.is_empty() {
        return img.clone();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (h, w) = img.dims();
    let clamp = |i: i64, n: usize| -> usize {
        let n = n as i64;
        let mut i = i;
        // mirror with edge repeated (scipy "reflect"), folded until in range
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = img.row(r);
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                acc += wk * row[clamp(c as i64 + k as i64 - radius, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for (k, &wk) in kernel.iter().enumerate() {
            let src = clamp(r as i64 + k as i64 - radius, h);
            let src_row = &tmp[src * w..(src + 1) * w];
            let dst = &mut out[r * w..(r + 1) * w];
            for c in 0..w {
                dst[c] += wk * src_row[c];
            }
        }
    }
    img.with_pixels(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> RasterImage {
        RasterImage::from_fn(h, w, Units::Dimensionless, |r, c| (r * w + c) as f64)
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(RasterImage::new(2, 2, vec![0.0; 3], Units::Radians).is_err());
        assert!(matches!(
            RasterImage::new(1, 2, vec![0.0, f64::NAN], Units::Radians),
            Err(PicsError::NonFinite(_))
        ));
    }

    #[test]
    fn crop_2048_to_1984_removes_32_per_side() {
        let img = RasterImage::from_fn(2048, 2048, Units::Radians, |r, c| (r * 3 + c) as f64);
        let out = crop_center(&img, 1984, 1984).unwrap();
        assert_eq!(out.dims(), (1984, 1984));
        assert_eq!(out.get(0, 0), img.get(32, 32));
        assert_eq!(out.get(1983, 1983), img.get(2015, 2015));
    }

    #[test]
    fn crop_same_size_is_identity() {
        let img = ramp(5, 7);
        assert_eq!(crop_center(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn crop_6x6_to_4x4_matches_index_arithmetic() {
        let img = ramp(6, 6);
        let out = crop_center(&img, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.get(r, c), ((r + 1) * 6 + (c + 1)) as f64);
            }
        }
    }

    #[test]
    fn crop_errors() {
        let img = ramp(4, 4);
        assert!(matches!(
            crop_center(&img, 5, 4),
            Err(PicsError::TargetLargerThanSource { .. })
        ));
        assert!(crop_center(&img, 3, 4).is_err());
    }

    #[test]
    fn downsample_shapes_and_values() {
        let img = RasterImage::zeros(992, 992, Units::Radians);
        assert_eq!(downsample2(&img).unwrap().dims(), (496, 496));

        let c = RasterImage::filled(6, 4, 2.75, Units::Radians);
        assert!(downsample2(&c).unwrap().pixels().iter().all(|&v| v == 2.75));

        let b = RasterImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], Units::Radians).unwrap();
        assert_eq!(downsample2(&b).unwrap().pixels(), &[2.5]);

        assert!(matches!(
            downsample2(&ramp(3, 4)),
            Err(PicsError::OddDimension(_))
        ));
    }

    #[test]
    fn downsample_preserves_mean() {
        let img = RasterImage::from_fn(8, 12, Units::Radians, |r, c| (r as f64) * 0.5 - c as f64);
        let d = downsample2(&img).unwrap();
        assert!((d.mean() - img.mean()).abs() < 1e-12);
    }

    #[test]
    fn roll_moves_content() {
        let img = ramp(4, 5);
        let r = roll(&img, 1, -2);
        assert_eq!(r.get(1, 0), img.get(0, 2));
        assert_eq!(roll(&r, -1, 2), img);
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let img =
            RasterImage::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Units::Dimensionless)
                .unwrap();
        let p = reflect_pad(&img, 3, 6).unwrap();
        assert_eq!(p.row(0), &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
        assert_eq!(p.row(2), &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
        assert_eq!(reflect_pad(&img, 2, 3).unwrap(), img);
    }

    #[test]
    fn gaussian_blur_preserves_constants_and_mass() {
        let c = RasterImage::filled(9, 7, 3.0, Units::Dimensionless);
        assert!(gaussian_blur(&c, 1.5)
            .pixels()
            .iter()
            .all(|&v| (v - 3.0).abs() < 1e-12));
        let mut spike = RasterImage::zeros(33, 33, Units::Dimensionless);
        spike.set(16, 16, 1.0);
        let b = gaussian_blur(&spike, 2.0);
        assert!((b.pixels().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.get(16, 16) < 0.1 && b.get(16, 17) > 0.0);
        assert_eq!(gaussian_blur(&spike, 0.0), spike);
    }

    #[test]
    fn mask_algebra() {
        let a = Mask::new(1, 3, vec![true, true, false]).unwrap();
        let b = Mask::new(1, 3, vec![false, true, true]).unwrap();
        assert_eq!(a.and(&b).unwrap().count(), 1);
        assert_eq!(a.or(&b).unwrap().count(), 3);
        assert_eq!(a.and_not(&b).unwrap().bits(), &[true, false, false]);
        assert!(a.and(&Mask::empty(2, 2)).is_err());
    }
}
