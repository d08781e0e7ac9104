//! Applying trained checkpoints to phase images and time-lapse sequences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::imagecore::{crop_window, downsample2, reflect_pad, upsample2, RasterImage, RgbImage, Units};
use crate::nn::{build_unet, forward, Checkpoint, CheckpointInfo, Mode, NormalizationStats, Tensor4, UNetConfig};

impl Checkpoint {
    /// Untrained network (zero head) with the given normalization; maps its
    /// input to `target_std · (x − input_mean) / input_std + target_mean`.
    pub fn identity(config: UNetConfig, normalization: NormalizationStats) -> Result<Self> {
        let params = build_unet(&config, 0)?;
        Ok(Self {
            config,
            params,
            normalization,
            info: CheckpointInfo::default(),
        })
    }
}

fn pad_to_multiple(img: &RasterImage, m: usize) -> Result<RasterImage> {
    let (h, w) = img.dims();
    let up = |v: usize| v.div_ceil(m) * m;
    if (up(h), up(w)) == (h, w) {
        return Ok(img.clone());
    }
    reflect_pad(img, up(h), up(w))
}

fn shrink(mut img: RasterImage, steps: u32) -> Result<RasterImage> {
    for _ in 0..steps {
        img = downsample2(&img)?;
    }
    Ok(img)
}

/// Reflect-pads to a multiple of `multiple · 2^steps` and mean-pools `steps`
/// times: the raster a checkpoint with `input_downsample = steps` sees.
pub(crate) fn to_working(img: &RasterImage, steps: u32, multiple: usize) -> Result<RasterImage> {
    shrink(pad_to_multiple(img, multiple << steps)?, steps)
}

/// Ground truth at the resolution of [`predict_native`].
pub fn label_at_working(label: &RasterImage, steps: u32) -> Result<RasterImage> {
    to_working(label, steps, 1)
}

/// Network output per channel at the checkpoint's working resolution
/// (`dims / 2^input_downsample`, rounded up), de-normalized and clamped at 0.
pub fn predict_native(ckpt: &Checkpoint, phase: &RasterImage) -> Result<Vec<RasterImage>> {
    phase.ensure_finite("phase")?;
    let k = ckpt.info.input_downsample;
    let (h, w) = phase.dims();
    if h == 0 || w == 0 {
        return Err(PicsError::EmptyInput("phase image"));
    }
    let small = to_working(phase, k, ckpt.config.divisor())?;
    let norm = &ckpt.normalization;
    if norm.target_mean.len() != ckpt.config.out_channels {
        return Err(PicsError::CheckpointMismatch("normalization channels".into()));
    }
    let z = small.map(|v| (v - norm.input_mean) / norm.input_std);
    let x = Tensor4::from_rasters(&[&z])?;
    let (y, _) = forward(&ckpt.params, &ckpt.config, &x, Mode::Eval)?;
    let f = 1usize << k;
    let (oh, ow) = (h.div_ceil(f), w.div_ceil(f));
    Ok((0..ckpt.config.out_channels)
        .map(|c| {
            let (m, s) = (norm.target_mean[c], norm.target_std[c]);
            let out = y.to_raster(0, c, Units::IntensityAu).map(|v| (v * s + m).max(0.0));
            let mut out = crop_window(&out, 0, 0, oh, ow);
            out.pixel_size_um = phase.pixel_size_um.map(|p| p * f as f64);
            out
        })
        .collect())
}

/// Every output channel at the input's footprint.
pub fn predict_all(ckpt: &Checkpoint, phase: &RasterImage) -> Result<Vec<RasterImage>> {
    let (h, w) = phase.dims();
    let k = ckpt.info.input_downsample;
    predict_native(ckpt, phase)?
        .into_iter()
        .map(|mut img| {
            for _ in 0..k {
                img = upsample2(&img);
            }
            let mut out = crop_window(&img, 0, 0, h, w);
            out.pixel_size_um = phase.pixel_size_um;
            Ok(out)
        })
        .collect()
}

/// Digital stain (first output channel) with the same dims as `phase`.
///
/// Sizes that are not multiples of the network divisor are reflect-padded,
/// processed, and cropped back.
pub fn predict(ckpt: &Checkpoint, phase: &RasterImage) -> Result<RasterImage> {
    Ok(predict_all(ckpt, phase)?.swap_remove(0))
}

#[derive(Debug, Clone)]
pub struct TimelapseSequence {
    pub field_id: String,
    pub well_id: Option<String>,
    frames: Vec<(f64, RasterImage)>,
}

impl TimelapseSequence {
    pub fn new(field_id: impl Into<String>, well_id: Option<String>, frames: Vec<(f64, RasterImage)>) -> Result<Self> {
        let first = frames.first().ok_or(PicsError::EmptyInput("time-lapse sequence"))?;
        for pair in frames.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(PicsError::InvalidConfig(format!(
                    "frame times must increase strictly ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for (_, img) in &frames[1..] {
            first.1.ensure_same_dims(img)?;
        }
        Ok(Self {
            field_id: field_id.into(),
            well_id,
            frames,
        })
    }

    pub fn frames(&self) -> &[(f64, RasterImage)] {
        &self.frames
    }
}

#[derive(Debug, Clone)]
pub struct StainSet {
    pub time_hours: f64,
    pub tau: RasterImage,
    pub map2: RasterImage,
    pub dapi: Option<RasterImage>,
}

/// Min/max used to map each stain to 0..255, shared by all frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayScaling {
    pub map2: (f64, f64),
    pub tau: (f64, f64),
    pub dapi: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TimelapsePrediction {
    pub stains: Vec<StainSet>,
    /// Red = MAP2, green = Tau, blue = DAPI (zero without a DAPI model).
    pub overlays: Vec<RgbImage>,
    pub scaling: OverlayScaling,
}

fn range<'a>(imgs: impl Iterator<Item = &'a RasterImage>) -> (f64, f64) {
    imgs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), img| {
        let (a, b) = img.min_max();
        (lo.min(a), hi.max(b))
    })
}

fn to_u8(v: f64, (lo, hi): (f64, f64)) -> u8 {
    if hi > lo {
        (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8
    } else {
        0
    }
}

pub fn predict_timelapse(
    ckpt_tau: &Checkpoint,
    ckpt_map2: &Checkpoint,
    seq: &TimelapseSequence,
    ckpt_dapi: Option<&Checkpoint>,
) -> Result<TimelapsePrediction> {
    let stains = seq
        .frames
        .par_iter()
        .map(|(t, phase)| {
            Ok(StainSet {
                time_hours: *t,
                tau: predict(ckpt_tau, phase)?,
                map2: predict(ckpt_map2, phase)?,
                dapi: ckpt_dapi.map(|c| predict(c, phase)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scaling = OverlayScaling {
        map2: range(stains.iter().map(|s| &s.map2)),
        tau: range(stains.iter().map(|s| &s.tau)),
        dapi: ckpt_dapi.map(|_| range(stains.iter().filter_map(|s| s.dapi.as_ref()))),
    };
    let overlays = stains
        .iter()
        .map(|s| {
            let (h, w) = s.tau.dims();
            let mut rgb = RgbImage::new(h, w);
            for r in 0..h {
                for c in 0..w {
                    let blue = match (&s.dapi, scaling.dapi) {
                        (Some(d), Some(range)) => to_u8(d.get(r, c), range),
                        _ => 0,
                    };
                    rgb.put(
                        r,
                        c,
                        [
                            to_u8(s.map2.get(r, c), scaling.map2),
                            to_u8(s.tau.get(r, c), scaling.tau),
                            blue,
                        ],
                    );
                }
            }
            rgb
        })
        .collect();
    Ok(TimelapsePrediction {
        stains,
        overlays,
        scaling,
    })
}

/// Pixel counts of an overlay: `(red only, green only, red and green)`,
/// where a channel is "on" above `threshold`.
pub fn overlay_region_counts(rgb: &RgbImage, threshold: u8) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for px in rgb.data.chunks_exact(3) {
        match (px[0] > threshold, px[1] > threshold) {
            (true, false) => counts.0 += 1,
            (false, true) => counts.1 += 1,
            (true, true) => counts.2 += 1,
            _ => {}
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BranchKind, PhantomConfig, PhantomScene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> UNetConfig {
        UNetConfig {
            depth: 4,
            base_channels: 2,
            ..Default::default()
        }
    }

    fn random(h: usize, w: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::from_fn(h, w, Units::Radians, |_, _| rng.random_range(-1.0..2.0))
    }

    #[test]
    fn identity_checkpoint_returns_clamped_phase() {
        let stats = NormalizationStats {
            input_mean: 0.3,
            input_std: 0.8,
            target_mean: vec![0.3],
            target_std: vec![0.8],
        };
        let ckpt = Checkpoint::identity(small_cfg(), stats).unwrap();
        let phase = random(32, 48, 1);
        let out = predict(&ckpt, &phase).unwrap();
        assert_eq!(out.dims(), phase.dims());
        for (o, p) in out.pixels().iter().zip(phase.pixels()) {
            assert!((o - p.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let ckpt = Checkpoint::identity(small_cfg(), NormalizationStats::identity(1)).unwrap();
        let phase = random(500, 500, 2);
        let out = predict(&ckpt, &phase).unwrap();
        assert_eq!(out.dims(), (500, 500));
        assert_eq!(out, predict(&ckpt, &phase).unwrap());
        let tiny = random(7, 3, 3);
        assert_eq!(predict(&ckpt, &tiny).unwrap().dims(), (7, 3));
    }

    #[test]
    fn downsampling_checkpoint_restores_footprint() {
        let mut ckpt = Checkpoint::identity(small_cfg(), NormalizationStats::identity(1)).unwrap();
        ckpt.info.input_downsample = 1;
        let phase = random(40, 36, 4).map(f64::abs);
        let native = predict_native(&ckpt, &phase).unwrap();
        assert_eq!(native[0].dims(), (20, 18));
        assert_eq!(native[0].pixels(), downsample2(&phase).unwrap().pixels());
        assert_eq!(predict(&ckpt, &phase).unwrap().dims(), (40, 36));
    }

    fn map2_like(cut: f64) -> Checkpoint {
        let mut c = Checkpoint::identity(
            UNetConfig {
                depth: 2,
                base_channels: 2,
                ..Default::default()
            },
            NormalizationStats::identity(1),
        )
        .unwrap();
        // subtract a constant: faint (axon) phase falls below zero and is clamped
        let head = c.params.params().iter().position(|p| p.name == "head.bias").unwrap();
        c.params.params_mut()[head].values[0] = -cut;
        c
    }

    #[test]
    fn sequence_validation() {
        let a = random(8, 8, 1);
        assert!(TimelapseSequence::new("f", None, vec![]).is_err());
        assert!(TimelapseSequence::new("f", None, vec![(1.0, a.clone()), (1.0, a.clone())]).is_err());
        assert!(TimelapseSequence::new("f", None, vec![(0.0, a.clone()), (1.0, random(8, 4, 2))]).is_err());
        let s = TimelapseSequence::new("f", None, vec![(0.0, a)]).unwrap();
        let tau = Checkpoint::identity(small_cfg(), NormalizationStats::identity(1)).unwrap();
        let p = predict_timelapse(&tau, &tau, &s, None).unwrap();
        assert_eq!(p.stains.len(), 1);
        assert_eq!(p.overlays.len(), 1);
    }

    #[test]
    fn vanishing_axon_shrinks_green_only_region() {
        let cfg = PhantomConfig {
            size: 96,
            n_cells: 2,
            noise_sigma: 0.0,
            seed: 21,
            ..Default::default()
        };
        let mut scene = PhantomScene::generate(&cfg).unwrap();
        let mut frames = Vec::new();
        for t in 0..4 {
            if t == 2 {
                scene.set_extent(BranchKind::Axon, 0.0);
            }
            frames.push((t as f64, scene.render(0).phase));
        }
        let seq = TimelapseSequence::new("f", None, frames).unwrap();
        let tau = Checkpoint::identity(
            UNetConfig {
                depth: 2,
                base_channels: 2,
                ..Default::default()
            },
            NormalizationStats::identity(1),
        )
        .unwrap();
        let out = predict_timelapse(&tau, &map2_like(0.45), &seq, None).unwrap();
        let green: Vec<usize> = out.overlays.iter().map(|o| overlay_region_counts(o, 0).1).collect();
        assert_eq!(green[0], green[1]);
        assert!(green[2] < green[1], "{green:?}");
        assert_eq!(green[2], green[3]);
        assert!(out.overlays.iter().all(|o| o.data.len() == 96 * 96 * 3));

        // one scaling for the whole sequence
        let again = predict_timelapse(&tau, &map2_like(0.45), &seq, None).unwrap();
        assert_eq!(again.scaling, out.scaling);
        assert_eq!(again.overlays, out.overlays);
    }
}
