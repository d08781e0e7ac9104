//! Batch driver: background removal, focus choice, registration and crop for
//! every record of a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    apply_shift_and_crop, estimate_background, register_translation, select_focus, subtract_background,
    BackgroundReport, Shift2D, ZStack, DEFAULT_CROP_TOTAL, DEFAULT_OUTLIER_K,
};
use crate::data::{Channel, DatasetManifest, SampleRecord};
use crate::error::{PicsError, Result};
use crate::imagecore::{crop_center, load_raster, save_raster, RasterImage, Units};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub outlier_k: f64,
    /// Total crop per axis after alignment.
    pub crop_total: usize,
    /// Haar levels of the focus measure.
    pub focus_levels: usize,
    pub subtract_background: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            outlier_k: DEFAULT_OUTLIER_K,
            crop_total: DEFAULT_CROP_TOTAL,
            focus_levels: 1,
            subtract_background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub field_id: String,
    pub time_index: Option<u32>,
    /// Chosen slice when the phase path is a directory of z-slices.
    pub focus_index: usize,
    pub z_slices: usize,
    /// `None` when registration was impossible (constant label) and no
    /// shift was applied.
    pub shift: Option<Shift2D>,
    pub registered_against: Option<Channel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub config: PreprocessConfig,
    pub background: Option<BackgroundReport>,
    pub fields: Vec<FieldReport>,
}

fn list_slices(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PicsError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tif" | "tiff")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(PicsError::EmptyInput("z-stack directory"));
    }
    Ok(out)
}

/// In-focus phase image of a record plus `(focus index, slice count)`.
fn load_focused(rec: &SampleRecord, levels: usize) -> Result<(RasterImage, usize, usize)> {
    if !rec.phase_path.is_dir() {
        return Ok((load_raster(&rec.phase_path)?.with_units(Units::Radians), 0, 1));
    }
    let slices = list_slices(&rec.phase_path)?
        .iter()
        .map(|p| load_raster(p).map(|r| r.with_units(Units::Radians)))
        .collect::<Result<Vec<_>>>()?;
    let n = slices.len();
    let stack = ZStack::new(slices)?;
    let k = select_focus(&stack, levels)?;
    Ok((stack.slices()[k].clone(), k, n))
}

fn stem(rec: &SampleRecord) -> String {
    match rec.time_index {
        Some(t) => format!("{}_t{t}", rec.field_id),
        None => rec.field_id.clone(),
    }
}

/// Processes every record and writes `<stem>_<channel>.tif` files plus
/// `manifest.json` and `preprocess_report.json` into `out_dir`.
///
/// The background is the outlier-robust mean of all in-focus phase images.
/// Labels are registered to the phase image (using the first available
/// stain), shifted by the same offset, and both are center-cropped.
pub fn preprocess_manifest(
    manifest: &DatasetManifest,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<(DatasetManifest, PreprocessReport)> {
    if manifest.records.is_empty() {
        return Err(PicsError::EmptyInput("manifest records"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| PicsError::io(out_dir, e))?;
    let mut focused = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        focused.push(load_focused(rec, cfg.focus_levels)?);
    }
    let background = if cfg.subtract_background && focused.len() >= 2 {
        let phases: Vec<RasterImage> = focused.iter().map(|f| f.0.clone()).collect();
        Some(estimate_background(&phases, cfg.outlier_k)?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(manifest.records.len());
    let mut fields = Vec::with_capacity(manifest.records.len());
    for (rec, (phase, focus_index, z_slices)) in manifest.records.iter().zip(focused) {
        let phase = match &background {
            Some(bg) => subtract_background(&phase, bg)?,
            None => phase,
        };
        let labels: Vec<(Channel, RasterImage)> = Channel::ALL
            .into_iter()
            .filter_map(|c| rec.label_path(c).map(|p| (c, p)))
            .map(|(c, p)| load_raster(p).map(|img| (c, img)))
            .collect::<Result<_>>()?;
        let (shift, against) = match labels.first() {
            Some((c, img)) => match register_translation(&phase, img) {
                Ok(s) => (Some(s), Some(*c)),
                Err(PicsError::ConstantImage(_)) => {
                    log::warn!("{}: constant {c} image, alignment skipped", rec.field_id);
                    (None, None)
                }
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        let s = shift.unwrap_or_else(Shift2D::zero);
        let (h, w) = phase.dims();
        if cfg.crop_total > h || cfg.crop_total > w {
            return Err(PicsError::InvalidConfig(format!(
                "crop_total {} exceeds {h}x{w}",
                cfg.crop_total
            )));
        }
        let cropped_phase = crop_center(&phase, h - cfg.crop_total, w - cfg.crop_total)?;
        let name = stem(rec);
        let mut out = rec.clone();
        out.phase_path = out_dir.join(format!("{name}_phase.tif"));
        save_raster(&cropped_phase, &out.phase_path)?;
        for c in Channel::ALL {
            *out.label_slot(c) = None;
        }
        for (c, img) in &labels {
            let (_, aligned) = apply_shift_and_crop(&phase, img, &s, cfg.crop_total)?;
            let p = out_dir.join(format!("{name}_{c}.tif"));
            save_raster(&aligned, &p)?;
            *out.label_slot(*c) = Some(p);
        }
        records.push(out);
        fields.push(FieldReport {
            field_id: rec.field_id.clone(),
            time_index: rec.time_index,
            focus_index,
            z_slices,
            shift,
            registered_against: against,
        });
    }
    let out_manifest = DatasetManifest {
        records,
        split: manifest.split.clone(),
        seed: manifest.seed,
    };
    let report = PreprocessReport {
        config: cfg.clone(),
        background: background.map(|b| b.report(cfg.outlier_k)),
        fields,
    };
    out_manifest.save(out_dir.join("manifest.json"))?;
    let rp = out_dir.join("preprocess_report.json");
    std::fs::write(&rp, serde_json::to_vec_pretty(&report)?).map_err(|e| PicsError::io(&rp, e))?;
    Ok((out_manifest, report))
}

/// Per-field shifts keyed by field id, for quick lookup.
pub fn shifts_by_field(report: &PreprocessReport) -> BTreeMap<String, Option<Shift2D>> {
    report.fields.iter().map(|f| (f.field_id.clone(), f.shift)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_phantom, write_sample, PhantomConfig};
    use crate::imagecore::{gaussian_blur, roll};

    #[test]
    fn aligns_shifted_labels_and_picks_the_sharp_slice() {
        let tmp = tempfile::tempdir().unwrap();
        let raw = tmp.path().join("raw");
        let mut manifest = DatasetManifest::default();
        for i in 0..3 {
            let s = synth_phantom(
                &PhantomConfig {
                    size: 96,
                    noise_sigma: 0.0,
                    seed: 11,
                    ..Default::default()
                }
                .for_sample(i),
            )
            .unwrap();
            let mut rec = write_sample(&s, &raw, &format!("f{i}"), None).unwrap();
            // misregister the stains by (3, -2)
            for c in Channel::ALL {
                let p = rec.label_path(c).unwrap().to_path_buf();
                save_raster(&roll(&load_raster(&p).unwrap(), 3, -2), &p).unwrap();
            }
            if i == 1 {
                let zdir = raw.join("f1_z");
                std::fs::create_dir_all(&zdir).unwrap();
                save_raster(&gaussian_blur(&s.phase, 2.0), zdir.join("z0.tif")).unwrap();
                save_raster(&s.phase, zdir.join("z1.tif")).unwrap();
                save_raster(&gaussian_blur(&s.phase, 4.0), zdir.join("z2.tif")).unwrap();
                rec.phase_path = zdir;
            }
            manifest.records.push(rec);
        }
        let out = tmp.path().join("out");
        let cfg = PreprocessConfig {
            crop_total: 16,
            subtract_background: false,
            ..Default::default()
        };
        let (m, report) = preprocess_manifest(&manifest, &out, &cfg).unwrap();
        assert_eq!(report.fields[1].focus_index, 1);
        assert_eq!(report.fields[1].z_slices, 3);
        for (f, rec) in report.fields.iter().zip(&m.records) {
            let s = f.shift.unwrap();
            assert_eq!((s.dy, s.dx), (3, -2), "{}", f.field_id);
            let phase = load_raster(&rec.phase_path).unwrap();
            assert_eq!(phase.dims(), (80, 80));
            assert!(rec.label_path(Channel::Map2).is_some());
        }
        let back = DatasetManifest::load(out.join("manifest.json")).unwrap();
        assert_eq!(back.records.len(), 3);
    }
}
