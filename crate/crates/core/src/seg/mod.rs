//! Four-class segmentation from digital stains by thresholding and mask algebra.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::imagecore::{gaussian_blur, load_u8_raster, save_palette_u8, Mask, RasterImage};

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    Otsu,
    Fixed(f64),
}

impl FromStr for ThresholdMethod {
    type Err = PicsError;

    /// `otsu` or a number for a fixed threshold.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("otsu") {
            return Ok(Self::Otsu);
        }
        let t = s.strip_prefix("fixed:").unwrap_or(s);
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Self::Fixed)
            .ok_or_else(|| PicsError::InvalidConfig(format!("threshold method '{s}'")))
    }
}

/// Otsu threshold of `values` on a `OTSU_BINS`-bin histogram spanning
/// `[min, max]`; returns the upper edge of the best lower class.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() || !(hi > lo) {
        return Err(PicsError::ConstantImage("Otsu needs at least two distinct values"));
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0usize; OTSU_BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(OTSU_BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let centers: Vec<f64> = (0..OTSU_BINS).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let sum_all: f64 = hist.iter().zip(&centers).map(|(&h, c)| h as f64 * c).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for k in 0..OTSU_BINS - 1 {
        w0 += hist[k] as f64;
        s0 += hist[k] as f64 * centers[k];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = s0 / w0 - (sum_all - s0) / w1;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Ok(lo + (best_k + 1) as f64 * width)
}

/// Smooths a non-negative stain (σ in pixels, `0` disables) and keeps the
/// pixels strictly above the threshold. Returns the mask and the threshold.
pub fn threshold_stain(stain: &RasterImage, method: ThresholdMethod, smoothing_sigma: f64) -> Result<(Mask, f64)> {
    stain.ensure_finite("stain")?;
    if stain.min_max().0 < 0.0 {
        return Err(PicsError::InvalidConfig("stain must be non-negative".into()));
    }
    let smooth = gaussian_blur(stain, smoothing_sigma);
    let t = match method {
        ThresholdMethod::Otsu => otsu_threshold(smooth.pixels())?,
        ThresholdMethod::Fixed(t) => t,
    };
    Ok((Mask::from_raster(&smooth, |v| v > t), t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SegClass {
    Background = 0,
    Axon = 1,
    DendriteSoma = 2,
    Nucleus = 3,
}

impl SegClass {
    pub const ALL: [SegClass; 4] = [Self::Background, Self::Axon, Self::DendriteSoma, Self::Nucleus];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Background => "background",
            Self::Axon => "axon",
            Self::DendriteSoma => "dendrite_soma",
            Self::Nucleus => "nucleus",
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

impl fmt::Display for SegClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegClass {
    type Err = PicsError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PicsError::UnknownClass(s.to_string()))
    }
}

/// Display colors of the paletted TIFF, indexed by class.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [0, 200, 0], [220, 0, 0], [40, 80, 255]];

/// Per-pixel class indices plus the legend and thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    #[serde(skip)]
    classes: Vec<u8>,
    pub legend: Vec<String>,
    /// Threshold used per stain, keyed by stain name.
    pub thresholds: BTreeMap<String, f64>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(PicsError::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                classes.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| SegClass::from_index(c).is_none()) {
            return Err(PicsError::UnknownClass(format!("index {bad}")));
        }
        Ok(Self {
            height,
            width,
            classes,
            legend: SegClass::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            thresholds: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn class_at(&self, row: usize, col: usize) -> SegClass {
        SegClass::from_index(self.classes[row * self.width + col]).expect("validated class index")
    }

    /// Pixel count per class, indexed like [`SegClass::ALL`].
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for &k in &self.classes {
            c[k as usize] += 1;
        }
        c
    }

    /// Errors when `class` is missing from the legend.
    pub fn ensure_in_legend(&self, class: SegClass) -> Result<()> {
        if self.legend.iter().any(|l| l == class.as_str()) {
            Ok(())
        } else {
            Err(PicsError::UnknownClass(class.as_str().to_string()))
        }
    }

    pub fn class_mask(&self, classes: &[SegClass]) -> Mask {
        let bits = self
            .classes
            .iter()
            .map(|&k| classes.iter().any(|&c| c as u8 == k))
            .collect();
        Mask::new(self.height, self.width, bits).expect("dims match")
    }

    fn sidecar(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes the 8-bit paletted TIFF and a JSON legend next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        save_palette_u8(self.height, self.width, &self.classes, &PALETTE, path)?;
        let side = Self::sidecar(path);
        std::fs::write(&side, serde_json::to_vec_pretty(self)?).map_err(|e| PicsError::io(&side, e))?;
        Ok(side)
    }

    /// Reads a map written by [`save`](Self::save); the legend sidecar is
    /// optional.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (h, w, data) = load_u8_raster(path)?;
        let mut map = Self::new(h, w, data)?;
        let side = Self::sidecar(path);
        if side.exists() {
            let text = std::fs::read(&side).map_err(|e| PicsError::io(&side, e))?;
            let meta: SegmentationMap = serde_json::from_slice(&text)?;
            if meta.dims() != (h, w) {
                return Err(PicsError::DimMismatch {
                    expected: (h, w),
                    actual: meta.dims(),
                });
            }
            map.legend = meta.legend;
            map.thresholds = meta.thresholds;
        }
        Ok(map)
    }
}

/// Class per pixel with precedence nucleus > dendrite_soma > axon:
/// nucleus = dapi, dendrite_soma = map2 ∧ ¬dapi, axon = tau ∧ ¬map2 ∧ ¬dapi.
pub fn compose_segmentation(tau: &Mask, map2: &Mask, dapi: &Mask) -> Result<SegmentationMap> {
    for m in [map2, dapi] {
        if m.dims() != tau.dims() {
            return Err(PicsError::DimMismatch {
                expected: tau.dims(),
                actual: m.dims(),
            });
        }
    }
    let classes = tau
        .bits()
        .iter()
        .zip(map2.bits())
        .zip(dapi.bits())
        .map(|((&t, &m), &d)| {
            if d {
                SegClass::Nucleus as u8
            } else if m {
                SegClass::DendriteSoma as u8
            } else if t {
                SegClass::Axon as u8
            } else {
                SegClass::Background as u8
            }
        })
        .collect();
    let (h, w) = tau.dims();
    SegmentationMap::new(h, w, classes)
}

/// Thresholds each stain and composes the map, recording the thresholds.
/// A missing DAPI stain yields no nucleus pixels.
pub fn segment_stains(
    tau: &RasterImage,
    map2: &RasterImage,
    dapi: Option<&RasterImage>,
    method: ThresholdMethod,
    sigma: f64,
) -> Result<SegmentationMap> {
    let (mt, tt) = threshold_stain(tau, method, sigma)?;
    let (mm, tm) = threshold_stain(map2, method, sigma)?;
    let (md, td) = match dapi {
        Some(d) => {
            let (m, t) = threshold_stain(d, method, sigma)?;
            (m, Some(t))
        }
        None => (Mask::empty(tau.height(), tau.width()), None),
    };
    let mut map = compose_segmentation(&mt, &mm, &md)?;
    map.thresholds.insert("tau".into(), tt);
    map.thresholds.insert("map2".into(), tm);
    if let Some(t) = td {
        map.thresholds.insert("dapi".into(), t);
    }
    Ok(map)
}
