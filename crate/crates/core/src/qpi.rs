//! Four-frame phase-shifting reconstruction of sheared interferograms.
//!
//! Each pixel of the four frames samples `a + b·cos(g + k·δ)`; demodulation
//! recovers the wrapped phase difference `g` across the shear, and a
//! regularized Fourier inversion of the shear-difference operator integrates
//! it back to phase.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::fft::Fft2;
use crate::imagecore::{RasterImage, Units};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShearAxis {
    #[default]
    X,
    Y,
}

/// Acquisition geometry shared by a stack and its reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StackMeta {
    /// Phase step between consecutive frames, radians.
    pub shift_step_rad: f64,
    pub shear_axis: ShearAxis,
    /// Shear distance in pixels.
    pub shear_px: usize,
}

impl Default for StackMeta {
    fn default() -> Self {
        Self {
            shift_step_rad: FRAC_PI_2,
            shear_axis: ShearAxis::X,
            shear_px: 1,
        }
    }
}

impl StackMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift_step_rad > 0.0 && self.shift_step_rad <= PI) {
            return Err(PicsError::InvalidConfig(format!(
                "shift_step_rad {} outside (0, pi]",
                self.shift_step_rad
            )));
        }
        if self.shear_px == 0 {
            return Err(PicsError::InvalidConfig("shear_px must be >= 1".into()));
        }
        Ok(())
    }
}

/// Four phase-shifted intensity frames of one field.
#[derive(Debug, Clone)]
pub struct InterferogramStack {
    frames: [RasterImage; 4],
    meta: StackMeta,
}

impl InterferogramStack {
    pub fn new(frames: [RasterImage; 4], meta: StackMeta) -> Result<Self> {
        meta.validate()?;
        for f in &frames[1..] {
            frames[0].ensure_same_dims(f)?;
        }
        Ok(Self { frames, meta })
    }

    pub fn frames(&self) -> &[RasterImage; 4] {
        &self.frames
    }

    pub fn meta(&self) -> StackMeta {
        self.meta
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

/// Wrapped phase difference across the shear plus the fringe modulation.
#[derive(Debug, Clone)]
pub struct GradientMap {
    /// Radians per shear step, wrapped to `(-pi, pi]`.
    pub values: RasterImage,
    pub amplitude: RasterImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub regularization_eps: f64,
    pub zero_mean_output: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            regularization_eps: 1e-3,
            zero_mean_output: true,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization_eps > 0.0) || !self.regularization_eps.is_finite() {
            return Err(PicsError::InvalidConfig(format!(
                "regularization_eps must be > 0, got {}",
                self.regularization_eps
            )));
        }
        Ok(())
    }
}

#[inline]
fn wrap_half_open(g: f64) -> f64 {
    // atan2 can return exactly -pi; the convention here is (-pi, pi].
    if g <= -PI {
        g + 2.0 * PI
    } else if g > PI {
        g - 2.0 * PI
    } else {
        g
    }
}

/// Per-pixel demodulation of the four frames.
///
/// A step of exactly pi/2 uses the closed form `atan2(I4 - I2, I1 - I3)`;
/// any other step solves the 3-parameter least-squares fit of
/// `a + c·cos(δk) - s·sin(δk)`.
pub fn extract_phase_gradient(stack: &InterferogramStack) -> Result<GradientMap> {
    for f in &stack.frames {
        f.ensure_finite("interferogram frame")?;
    }
    let [i1, i2, i3, i4] = &stack.frames;
    let n = i1.len();
    let mut values = Vec::with_capacity(n);
    let mut amplitude = Vec::with_capacity(n);

    let step = stack.meta.shift_step_rad;
    if step == FRAC_PI_2 {
        for p in 0..n {
            let sin_part = i4.pixels()[p] - i2.pixels()[p];
            let cos_part = i1.pixels()[p] - i3.pixels()[p];
            values.push(wrap_half_open(sin_part.atan2(cos_part)));
            amplitude.push(0.5 * sin_part.hypot(cos_part));
        }
    } else {
        let proj = least_squares_projector(step)?;
        for p in 0..n {
            let samples = [
                i1.pixels()[p],
                i2.pixels()[p],
                i3.pixels()[p],
                i4.pixels()[p],
            ];
            let c: f64 = (0..4).map(|k| proj[1][k] * samples[k]).sum();
            let s: f64 = (0..4).map(|k| proj[2][k] * samples[k]).sum();
            values.push(wrap_half_open(s.atan2(c)));
            amplitude.push(s.hypot(c));
        }
    }
    let geometry = |v: Vec<f64>, units| {
        let mut r = i1.with_pixels(v);
        r.units = units;
        r
    };
    Ok(GradientMap {
        values: geometry(values, Units::Radians),
        amplitude: geometry(amplitude, Units::IntensityAu),
    })
}

/// Rows of `(AᵀA)⁻¹Aᵀ` for the design matrix `[1, cos δk, -sin δk]`.
fn least_squares_projector(step: f64) -> Result<[[f64; 4]; 3]> {
    let rows: Vec<[f64; 3]> = (0..4)
        .map(|k| {
            let d = k as f64 * step;
            [1.0, d.cos(), -d.sin()]
        })
        .collect();
    let mut m = [[0.0; 3]; 3];
    for row in &rows {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert3(&m).ok_or_else(|| {
        PicsError::InvalidConfig(format!(
            "phase step {step} rad gives a singular demodulation system"
        ))
    })?;
    let mut proj = [[0.0; 4]; 3];
    for i in 0..3 {
        for (k, row) in rows.iter().enumerate() {
            proj[i][k] = (0..3).map(|j| inv[i][j] * row[j]).sum();
        }
    }
    Ok(proj)
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-10 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    Some(inv)
}

/// Periodic forward difference `φ(p + shear) - φ(p)` along the shear axis.
pub fn shear_difference(phase: &RasterImage, axis: ShearAxis, shear_px: usize) -> RasterImage {
    let (h, w) = phase.dims();
    RasterImage::from_fn(h, w, Units::Radians, |r, c| match axis {
        ShearAxis::X => phase.get(r, (c + shear_px) % w) - phase.get(r, c),
        ShearAxis::Y => phase.get((r + shear_px) % h, c) - phase.get(r, c),
    })
}

/// Integrates a shear-difference map back to phase.
///
/// In the Fourier domain `Φ = G·conj(D) / (|D|² + ε)` where `D` is the
/// response of the shear difference. The DC bin is pinned to zero, and bins
/// where `D` vanishes (all frequencies constant along the shear axis) come
/// back as zero. Boundaries are periodic.
pub fn integrate_gradient(
    grad: &GradientMap,
    meta: &StackMeta,
    cfg: &IntegrationConfig,
) -> Result<RasterImage> {
    cfg.validate()?;
    meta.validate()?;
    grad.values.ensure_finite("gradient map")?;
    let (h, w) = grad.values.dims();
    if h == 0 || w == 0 {
        return Err(PicsError::EmptyInput("gradient map"));
    }
    let plan = Fft2::new(h, w);
    let mut spec = plan.forward_real(grad.values.pixels());

    let (n, s) = match meta.shear_axis {
        ShearAxis::X => (w, meta.shear_px),
        ShearAxis::Y => (h, meta.shear_px),
    };
    let response: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = 2.0 * PI * ((k * s) % n) as f64 / n as f64;
            Complex64::new(theta.cos() - 1.0, theta.sin())
        })
        .collect();
    let eps = cfg.regularization_eps;
    for r in 0..h {
        for c in 0..w {
            let d = match meta.shear_axis {
                ShearAxis::X => response[c],
                ShearAxis::Y => response[r],
            };
            let v = &mut spec[r * w + c];
            *v = *v * d.conj() / (d.norm_sqr() + eps);
        }
    }
    spec[0] = Complex64::new(0.0, 0.0);
    plan.inverse(&mut spec);

    let mut phase: Vec<f64> = spec.iter().map(|z| z.re).collect();
    if cfg.zero_mean_output {
        let mean = phase.iter().sum::<f64>() / phase.len() as f64;
        for v in &mut phase {
            *v -= mean;
        }
    }
    let mut out = grad.values.with_pixels(phase);
    out.units = Units::Radians;
    Ok(out)
}

/// Demodulation followed by integration.
pub fn reconstruct_phase(stack: &InterferogramStack, cfg: &IntegrationConfig) -> Result<RasterImage> {
    let grad = extract_phase_gradient(stack)?;
    integrate_gradient(&grad, &stack.meta, cfg)
}

/// Renders the four frames a sheared interferometer would record for `phase`.
pub fn synthesize_frames(
    phase: &RasterImage,
    background: f64,
    modulation: f64,
    meta: StackMeta,
) -> Result<InterferogramStack> {
    meta.validate()?;
    if !(modulation > 0.0) || background < modulation {
        return Err(PicsError::InvalidConfig(format!(
            "need modulation > 0 and background >= modulation (got {background}, {modulation})"
        )));
    }
    let g = shear_difference(phase, meta.shear_axis, meta.shear_px);
    let frame = |k: usize| {
        let offset = k as f64 * meta.shift_step_rad;
        let mut f = g.map(|gv| background + modulation * (gv + offset).cos());
        f.units = Units::IntensityAu;
        f
    };
    InterferogramStack::new([frame(0), frame(1), frame(2), frame(3)], meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn constant_stack(v: f64) -> InterferogramStack {
        let f = RasterImage::filled(8, 8, v, Units::IntensityAu);
        InterferogramStack::new([f.clone(), f.clone(), f.clone(), f], StackMeta::default())
            .unwrap()
    }

    fn rms_diff(a: &RasterImage, b: &RasterImage) -> f64 {
        let n = a.len() as f64;
        (a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    fn mean_removed(img: &RasterImage) -> RasterImage {
        let m = img.mean();
        img.map(|v| v - m)
    }

    /// Smooth periodic test phase whose spectrum avoids the bins the shear
    /// difference cannot see (zero frequency along x).
    pub(crate) fn sinusoid_phantom(n: usize) -> RasterImage {
        let tau = 2.0 * PI / n as f64;
        RasterImage::from_fn(n, n, Units::Radians, |r, c| {
            let (y, x) = (r as f64, c as f64);
            0.3 * (tau * (32.0 * x + 5.0 * y)).sin()
                + 0.2 * (tau * (48.0 * x - 8.0 * y)).cos()
                + 0.25 * (tau * (40.0 * x + 16.0 * y) + 0.4).sin()
        })
    }

    #[test]
    fn constant_frames_give_zero_gradient_and_amplitude() {
        let g = extract_phase_gradient(&constant_stack(3.0)).unwrap();
        assert!(g.values.pixels().iter().all(|&v| v == 0.0));
        assert!(g.amplitude.pixels().iter().all(|&v| v == 0.0));
    }

    fn synthetic_gradient_stack(g0: f64, step: f64) -> InterferogramStack {
        let frames: Vec<RasterImage> = (0..4)
            .map(|k| RasterImage::filled(4, 4, 2.0 + (g0 + k as f64 * step).cos(), Units::IntensityAu))
            .collect();
        let meta = StackMeta {
            shift_step_rad: step,
            ..StackMeta::default()
        };
        InterferogramStack::new(frames.try_into().unwrap(), meta).unwrap()
    }

    #[test]
    fn recovers_known_gradient() {
        let g = extract_phase_gradient(&synthetic_gradient_stack(0.7, FRAC_PI_2)).unwrap();
        for (&v, &a) in g.values.pixels().iter().zip(g.amplitude.pixels()) {
            assert!((v - 0.7).abs() < 1e-12);
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_boundary() {
        let g0 = PI - 1e-6;
        let g = extract_phase_gradient(&synthetic_gradient_stack(g0, FRAC_PI_2)).unwrap();
        for &v in g.values.pixels() {
            assert!(v > -PI && v <= PI);
            assert!((v - g0).abs() < 1e-9);
        }
        assert_eq!(wrap_half_open(-PI), PI);
    }

    #[test]
    fn least_squares_path_matches_other_steps() {
        for &step in &[1.2, 2.0 * PI / 3.0, 0.9] {
            let g = extract_phase_gradient(&synthetic_gradient_stack(-1.1, step)).unwrap();
            for (&v, &a) in g.values.pixels().iter().zip(g.amplitude.pixels()) {
                assert!((v + 1.1).abs() < 1e-10, "step {step}: {v}");
                assert!((a - 1.0).abs() < 1e-10);
            }
        }
        let degenerate = StackMeta {
            shift_step_rad: PI,
            ..StackMeta::default()
        };
        let f = RasterImage::filled(2, 2, 1.0, Units::IntensityAu);
        let stack = InterferogramStack::new([f.clone(), f.clone(), f.clone(), f], degenerate).unwrap();
        assert!(extract_phase_gradient(&stack).is_err());
    }

    #[test]
    fn affine_intensity_invariance() {
        let phase = sinusoid_phantom(32);
        let stack = synthesize_frames(&phase, 3.0, 1.0, StackMeta::default()).unwrap();
        let base = extract_phase_gradient(&stack).unwrap();
        let scaled: Vec<RasterImage> =
            stack.frames().iter().map(|f| f.map(|v| 2.5 * v + 7.0)).collect();
        let stack2 = InterferogramStack::new(scaled.try_into().unwrap(), stack.meta()).unwrap();
        let other = extract_phase_gradient(&stack2).unwrap();
        for (a, b) in base.values.pixels().iter().zip(other.values.pixels()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn stack_validation() {
        let a = RasterImage::zeros(4, 4, Units::IntensityAu);
        let b = RasterImage::zeros(4, 5, Units::IntensityAu);
        assert!(matches!(
            InterferogramStack::new([a.clone(), a.clone(), a.clone(), b], StackMeta::default()),
            Err(PicsError::DimMismatch { .. })
        ));
        let bad = StackMeta {
            shift_step_rad: 0.0,
            ..StackMeta::default()
        };
        assert!(InterferogramStack::new([a.clone(), a.clone(), a.clone(), a], bad).is_err());
    }

    #[test]
    fn zero_gradient_integrates_to_zero() {
        let grad = GradientMap {
            values: RasterImage::zeros(16, 16, Units::Radians),
            amplitude: RasterImage::zeros(16, 16, Units::IntensityAu),
        };
        let phi = integrate_gradient(&grad, &StackMeta::default(), &IntegrationConfig::default())
            .unwrap();
        assert!(phi.pixels().iter().all(|&v| v == 0.0));
    }

    fn exact_gradient(phase: &RasterImage, meta: &StackMeta) -> GradientMap {
        GradientMap {
            values: shear_difference(phase, meta.shear_axis, meta.shear_px),
            amplitude: RasterImage::filled(phase.height(), phase.width(), 1.0, Units::IntensityAu),
        }
    }

    #[test]
    fn integration_recovers_forward_difference_source() {
        let phi0 = sinusoid_phantom(256);
        let meta = StackMeta::default();
        let grad = exact_gradient(&phi0, &meta);
        let truth = mean_removed(&phi0);

        let tight = IntegrationConfig {
            regularization_eps: 1e-9,
            zero_mean_output: true,
        };
        let rms = rms_diff(&integrate_gradient(&grad, &meta, &tight).unwrap(), &truth);
        assert!(rms < 1e-6, "rms {rms}");

        let loose = IntegrationConfig::default();
        let rms = rms_diff(&integrate_gradient(&grad, &meta, &loose).unwrap(), &truth);
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn integration_along_y_and_wider_shear() {
        let n = 64;
        let tau = 2.0 * PI / n as f64;
        let phi0 = RasterImage::from_fn(n, n, Units::Radians, |r, c| {
            0.4 * (tau * (9.0 * r as f64 + 2.0 * c as f64)).sin()
        });
        for meta in [
            StackMeta {
                shear_axis: ShearAxis::Y,
                ..StackMeta::default()
            },
            StackMeta {
                shear_px: 2,
                ..StackMeta::default()
            },
        ] {
            let phi0 = if meta.shear_axis == ShearAxis::X {
                RasterImage::from_fn(n, n, Units::Radians, |r, c| phi0.get(c, r))
            } else {
                phi0.clone()
            };
            let grad = exact_gradient(&phi0, &meta);
            let cfg = IntegrationConfig {
                regularization_eps: 1e-12,
                zero_mean_output: true,
            };
            let rms = rms_diff(&integrate_gradient(&grad, &meta, &cfg).unwrap(), &mean_removed(&phi0));
            assert!(rms < 1e-8, "{meta:?}: {rms}");
        }
    }

    #[test]
    fn integration_is_zero_mean_and_linear() {
        let phi0 = sinusoid_phantom(64).map(|v| v + 0.3);
        let meta = StackMeta::default();
        let grad = exact_gradient(&phi0, &meta);
        let cfg = IntegrationConfig::default();
        let out = integrate_gradient(&grad, &meta, &cfg).unwrap();
        assert!(out.mean().abs() < 1e-15);

        let scaled = GradientMap {
            values: grad.values.map(|v| -3.5 * v),
            amplitude: grad.amplitude.clone(),
        };
        let out2 = integrate_gradient(&scaled, &meta, &cfg).unwrap();
        for (a, b) in out.pixels().iter().zip(out2.pixels()) {
            assert!((-3.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_constant_frames_is_zero() {
        let phi = reconstruct_phase(&constant_stack(1.0), &IntegrationConfig::default()).unwrap();
        assert_eq!(phi.units, Units::Radians);
        assert!(phi.pixels().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn synthesize_zero_phase_frames() {
        let zero = RasterImage::zeros(4, 4, Units::Radians);
        let stack = synthesize_frames(&zero, 2.0, 1.0, StackMeta::default()).unwrap();
        for (k, f) in stack.frames().iter().enumerate() {
            let expect = 2.0 + (k as f64 * FRAC_PI_2).cos();
            assert!(f.pixels().iter().all(|&v| (v - expect).abs() < 1e-15));
        }
        assert!(synthesize_frames(&zero, 0.5, 1.0, StackMeta::default()).is_err());
        assert!(synthesize_frames(&zero, 1.0, 0.0, StackMeta::default()).is_err());
    }

    #[test]
    fn synthesized_frames_are_bounded_below() {
        let phi = sinusoid_phantom(32).map(|v| 5.0 * v);
        let stack = synthesize_frames(&phi, 1.5, 1.5, StackMeta::default()).unwrap();
        for f in stack.frames() {
            assert!(f.min_max().0 >= -1e-15);
        }
    }

    #[test]
    fn round_trip_noiseless() {
        let phi0 = sinusoid_phantom(256);
        let stack = synthesize_frames(&phi0, 2.0, 1.0, StackMeta::default()).unwrap();
        let phi = reconstruct_phase(&stack, &IntegrationConfig::default()).unwrap();
        let rms = rms_diff(&phi, &mean_removed(&phi0));
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn round_trip_with_frame_noise() {
        let phi0 = sinusoid_phantom(256);
        let (bg, modulation) = (2.0, 1.0);
        let stack = synthesize_frames(&phi0, bg, modulation, StackMeta::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01 * modulation).unwrap();
        let noisy: Vec<RasterImage> = stack
            .frames()
            .iter()
            .map(|f| f.map(|v| v + noise.sample(&mut rng)))
            .collect();
        let noisy = InterferogramStack::new(noisy.try_into().unwrap(), stack.meta()).unwrap();
        let phi = reconstruct_phase(&noisy, &IntegrationConfig::default()).unwrap();
        let rms = rms_diff(&phi, &mean_removed(&phi0));
        assert!(rms < 0.05, "rms {rms}");
    }
}
