//! Confluence and dry-mass growth curves from segmented time-lapse data.

mod report;

pub use report::{emit_report, read_growth_csv, GrowthRow};

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::imagecore::{Mask, RasterImage, Units};
use crate::infer::TimelapseSequence;
use crate::seg::{SegClass, SegmentationMap};

/// Imaging constants for the phase-to-mass conversion. All are required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Optics {
    pub wavelength_um: f64,
    /// Refractive increment in mL/g, numerically equal to µm³/pg.
    pub refractive_increment_ml_per_g: f64,
    pub pixel_area_um2: f64,
}

impl Optics {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.wavelength_um) && ok(self.refractive_increment_ml_per_g) && ok(self.pixel_area_um2) {
            Ok(())
        } else {
            Err(PicsError::InvalidConfig(format!("optics must be positive: {self:?}")))
        }
    }

    /// Picograms per radian-pixel: `λ · A / (2π · γ)`.
    pub fn mass_per_radian_pixel(&self) -> f64 {
        self.wavelength_um * self.pixel_area_um2 / (2.0 * std::f64::consts::PI * self.refractive_increment_ml_per_g)
    }
}

/// Classes reported in a growth series. `Neurite` is axon ∪ dendrite_soma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportClass {
    Axon,
    DendriteSoma,
    Nucleus,
    Neurite,
}

impl ReportClass {
    pub const ALL: [ReportClass; 4] = [Self::Axon, Self::DendriteSoma, Self::Nucleus, Self::Neurite];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Axon => "axon",
            Self::DendriteSoma => "dendrite_soma",
            Self::Nucleus => "nucleus",
            Self::Neurite => "neurite",
        }
    }

    pub fn members(self) -> &'static [SegClass] {
        match self {
            Self::Axon => &[SegClass::Axon],
            Self::DendriteSoma => &[SegClass::DendriteSoma],
            Self::Nucleus => &[SegClass::Nucleus],
            Self::Neurite => &[SegClass::Axon, SegClass::DendriteSoma],
        }
    }
}

impl std::str::FromStr for ReportClass {
    type Err = PicsError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PicsError::UnknownClass(s.to_string()))
    }
}

/// Fraction of pixels belonging to any of `classes`.
pub fn confluence(seg: &SegmentationMap, classes: &[SegClass]) -> Result<f64> {
    for &c in classes {
        seg.ensure_in_legend(c)?;
    }
    let (h, w) = seg.dims();
    if h * w == 0 {
        return Err(PicsError::EmptyInput("segmentation map"));
    }
    let n = seg.classes().iter().filter(|&&k| classes.iter().any(|&c| c as u8 == k)).count();
    Ok(n as f64 / (h * w) as f64)
}

/// Dry mass in picograms: `λ/(2πγ) · Σ_mask φ · pixel_area`. Negative phase
/// pixels count negatively.
pub fn dry_mass(phase: &RasterImage, mask: &Mask, optics: &Optics) -> Result<f64> {
    if phase.units != Units::Radians {
        return Err(PicsError::UnitMismatch {
            expected: Units::Radians.as_str(),
            actual: phase.units.as_str(),
        });
    }
    optics.validate()?;
    if mask.dims() != phase.dims() {
        return Err(PicsError::DimMismatch {
            expected: phase.dims(),
            actual: mask.dims(),
        });
    }
    let sum: f64 = phase
        .pixels()
        .iter()
        .zip(mask.bits())
        .filter_map(|(&p, &b)| b.then_some(p))
        .sum();
    Ok(optics.mass_per_radian_pixel() * sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub time_hours: f64,
    pub class: ReportClass,
    pub confluence: f64,
    pub dry_mass_pg: f64,
    /// `None` when the class has zero mean mass over the window.
    pub dry_mass_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub field_id: String,
    pub well_id: Option<String>,
    /// Grouped by class, then ordered by time.
    pub points: Vec<GrowthPoint>,
    pub normalization_window_hours: f64,
    pub optics: Optics,
}

impl GrowthSeries {
    pub fn class_points(&self, class: ReportClass) -> impl Iterator<Item = &GrowthPoint> {
        self.points.iter().filter(move |p| p.class == class)
    }
}

/// Per-class confluence and dry mass of every frame, with mass normalized by
/// its mean over frames at `t ≤ window_hours`.
pub fn growth_series(
    seq: &TimelapseSequence,
    segs: &[SegmentationMap],
    optics: &Optics,
    window_hours: f64,
) -> Result<GrowthSeries> {
    optics.validate()?;
    let frames = seq.frames();
    if segs.len() != frames.len() {
        return Err(PicsError::ShapeMismatch(format!(
            "{} segmentation maps for {} frames",
            segs.len(),
            frames.len()
        )));
    }
    let in_window = frames.iter().filter(|(t, _)| *t <= window_hours).count();
    if in_window == 0 {
        return Err(PicsError::EmptyNormalizationWindow(window_hours));
    }
    let mut points = Vec::with_capacity(frames.len() * ReportClass::ALL.len());
    for class in ReportClass::ALL {
        let mut rows = Vec::with_capacity(frames.len());
        for ((t, phase), seg) in frames.iter().zip(segs) {
            let mask = seg.class_mask(class.members());
            rows.push((*t, confluence(seg, class.members())?, dry_mass(phase, &mask, optics)?));
        }
        let base = rows.iter().take(in_window).map(|r| r.2).sum::<f64>() / in_window as f64;
        points.extend(rows.into_iter().map(|(t, c, m)| GrowthPoint {
            time_hours: t,
            class,
            confluence: c,
            dry_mass_pg: m,
            dry_mass_norm: (base != 0.0).then(|| m / base),
        }));
    }
    Ok(GrowthSeries {
        field_id: seq.field_id.clone(),
        well_id: seq.well_id.clone(),
        points,
        normalization_window_hours: window_hours,
        optics: *optics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BranchKind, PhantomConfig, PhantomScene};
    use crate::seg::compose_segmentation;

    fn optics() -> Optics {
        Optics {
            wavelength_um: 0.55,
            refractive_increment_ml_per_g: 0.2,
            pixel_area_um2: 0.1,
        }
    }

    fn uniform_map(h: usize, w: usize, class: SegClass) -> SegmentationMap {
        SegmentationMap::new(h, w, vec![class as u8; h * w]).unwrap()
    }

    #[test]
    fn confluence_counts() {
        assert_eq!(confluence(&uniform_map(4, 4, SegClass::Background), &[SegClass::Axon]).unwrap(), 0.0);
        assert_eq!(confluence(&uniform_map(4, 4, SegClass::Axon), &[SegClass::Axon]).unwrap(), 1.0);
        let classes = (0..100 * 100).map(|i| u8::from(i / 100 < 10 && i % 100 < 10)).collect();
        let block = SegmentationMap::new(100, 100, classes).unwrap();
        assert_eq!(confluence(&block, &[SegClass::Axon]).unwrap(), 0.01);
        let mut partial = uniform_map(2, 2, SegClass::Axon);
        partial.legend.truncate(1);
        assert!(matches!(
            confluence(&partial, &[SegClass::Axon]),
            Err(PicsError::UnknownClass(_))
        ));
    }

    #[test]
    fn dry_mass_closed_form_and_units() {
        let phase = RasterImage::filled(40, 25, 1.0, Units::Radians);
        let m = dry_mass(&phase, &Mask::full(40, 25), &optics()).unwrap();
        let closed = 0.55 / (2.0 * std::f64::consts::PI * 0.2) * 1000.0 * 0.1;
        assert!((m - closed).abs() <= 1e-12 * closed, "{m}");
        assert_eq!((m * 1000.0).trunc() / 1000.0, 43.767);
        assert_eq!(dry_mass(&phase.map(|_| 0.0), &Mask::full(40, 25), &optics()).unwrap(), 0.0);
        let twice = dry_mass(&phase.map(|v| 2.0 * v), &Mask::full(40, 25), &optics()).unwrap();
        assert_eq!(twice, 2.0 * m);
        let wrong = phase.clone().with_units(Units::IntensityAu);
        assert!(matches!(
            dry_mass(&wrong, &Mask::full(40, 25), &optics()),
            Err(PicsError::UnitMismatch { .. })
        ));
    }

    fn seq(times: &[f64], phase: &RasterImage) -> TimelapseSequence {
        TimelapseSequence::new("f", Some("w1".into()), times.iter().map(|&t| (t, phase.clone())).collect()).unwrap()
    }

    #[test]
    fn normalization_windows() {
        let phase = RasterImage::filled(10, 10, 0.5, Units::Radians);
        let map = uniform_map(10, 10, SegClass::Nucleus);
        let s = growth_series(&seq(&[0.0, 2.5, 5.0, 9.0], &phase), &vec![map.clone(); 4], &optics(), 5.0).unwrap();
        for p in s.class_points(ReportClass::Nucleus) {
            assert_eq!(p.dry_mass_norm, Some(1.0));
        }
        assert!(s.class_points(ReportClass::Axon).all(|p| p.dry_mass_norm.is_none()));
        let one = growth_series(&seq(&[0.0], &phase), &[map.clone()], &optics(), 5.0).unwrap();
        assert_eq!(one.class_points(ReportClass::Nucleus).next().unwrap().dry_mass_norm, Some(1.0));
        assert!(matches!(
            growth_series(&seq(&[6.0], &phase), &[map], &optics(), 5.0),
            Err(PicsError::EmptyNormalizationWindow(_))
        ));
    }

    #[test]
    fn growing_axons_against_steady_nuclei() {
        let cfg = PhantomConfig {
            size: 128,
            n_cells: 2,
            noise_sigma: 0.0,
            seed: 4,
            ..Default::default()
        };
        let mut scene = PhantomScene::generate(&cfg).unwrap();
        let times = [0.0, 2.0, 4.0, 8.0, 16.0, 24.0];
        let mut frames = Vec::new();
        let mut segs = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            scene.set_extent(BranchKind::Axon, 0.3 + 0.7 * i as f64 / (times.len() - 1) as f64);
            let s = scene.render(0);
            let seg = compose_segmentation(
                &Mask::from_raster(&s.tau, |v| v > 0.1),
                &Mask::from_raster(&s.map2, |v| v > 0.1),
                &Mask::from_raster(&s.dapi, |v| v > 0.1),
            )
            .unwrap();
            frames.push((t, s.phase));
            segs.push(seg);
        }
        let seq = TimelapseSequence::new("f", None, frames).unwrap();
        let g = growth_series(&seq, &segs, &optics(), 5.0).unwrap();
        let axon: Vec<f64> = g.class_points(ReportClass::Axon).map(|p| p.dry_mass_norm.unwrap()).collect();
        assert!(axon.windows(2).all(|w| w[1] > w[0]), "{axon:?}");
        for p in g.class_points(ReportClass::Nucleus) {
            assert!((p.dry_mass_norm.unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
