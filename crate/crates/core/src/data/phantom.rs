//! Synthetic neuron cultures with matching phase and fluorescence rasters.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::SampleRecord;
use crate::error::{PicsError, Result};
use crate::imagecore::{save_raster, Mask, RasterImage, Units};

/// Relative optical density of each structure in the phase image.
const SOMA_DENSITY: f64 = 1.0;
const NUCLEUS_DENSITY: f64 = 0.5;
const DENDRITE_DENSITY: f64 = 0.6;
const AXON_DENSITY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub size: usize,
    pub n_cells: usize,
    pub axon_width_px: f64,
    pub dendrite_width_px: f64,
    pub soma_radius_px: f64,
    pub phase_scale_rad: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 256,
            n_cells: 3,
            axon_width_px: 1.5,
            dendrite_width_px: 4.0,
            soma_radius_px: 8.0,
            phase_scale_rad: 1.0,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PicsError::InvalidConfig(m));
        if self.size < 8 {
            return bad(format!("phantom size {} too small", self.size));
        }
        if !(self.axon_width_px >= 1.0 && self.dendrite_width_px >= 1.0) {
            return bad("branch widths must be >= 1 px".into());
        }
        if self.axon_width_px >= self.dendrite_width_px {
            return bad(format!(
                "axon width {} must be below dendrite width {}",
                self.axon_width_px, self.dendrite_width_px
            ));
        }
        if !(self.soma_radius_px >= 1.0) || 2.0 * self.soma_radius_px + 4.0 > self.size as f64 {
            return bad(format!("soma radius {} does not fit", self.soma_radius_px));
        }
        if !(self.phase_scale_rad.is_finite() && self.noise_sigma.is_finite() && self.noise_sigma >= 0.0)
        {
            return bad("phase scale and noise must be finite, noise >= 0".into());
        }
        Ok(())
    }

    /// Config for the `index`-th sample of a batch.
    pub fn for_sample(&self, index: usize) -> Self {
        Self {
            seed: self.seed.wrapping_add(index as u64),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Axon,
    Dendrite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    /// Centerline sampled at unit arc length, starting on the soma rim.
    pub path: Vec<(f64, f64)>,
    /// Fraction of the path that is rendered, in [0, 1].
    pub extent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub center: (f64, f64),
    pub soma_radius: f64,
    pub nucleus_center: (f64, f64),
    pub nucleus_radius: f64,
    pub branches: Vec<Branch>,
}

/// Geometry of one field, renderable repeatedly (e.g. with growing branches).
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScene {
    pub config: PhantomConfig,
    pub cells: Vec<Cell>,
}

/// Rendered phantom: phase in radians, ground truths in [0, 1].
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub phase: RasterImage,
    pub tau: RasterImage,
    pub map2: RasterImage,
    pub dapi: RasterImage,
    pub soma_mask: Mask,
    pub axon_mask: Mask,
    pub dendrite_mask: Mask,
}

fn random_walk(rng: &mut ChaCha8Rng, start: (f64, f64), heading: f64, length: usize) -> Vec<(f64, f64)> {
    let turn = Normal::new(0.0, 0.04).unwrap();
    let mut path = Vec::with_capacity(length + 1);
    let (mut y, mut x) = start;
    let (mut theta, mut omega) = (heading, 0.0f64);
    path.push((y, x));
    for _ in 0..length {
        // angular velocity is itself a damped random walk, so curvature is smooth
        omega = 0.85 * omega + turn.sample(rng);
        theta += omega;
        y += theta.sin();
        x += theta.cos();
        path.push((y, x));
    }
    path
}

impl PhantomScene {
    pub fn generate(config: &PhantomConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.size as f64;
        let r = config.soma_radius_px;
        let margin = r + 2.0;
        let mut cells = Vec::with_capacity(config.n_cells);
        for _ in 0..config.n_cells {
            let center = (rng.random_range(margin..n - margin), rng.random_range(margin..n - margin));
            let nucleus_radius = 0.55 * r;
            let off_r = rng.random_range(0.0..0.2 * r);
            let off_a = rng.random_range(0.0..2.0 * PI);
            let nucleus_center = (center.0 + off_r * off_a.sin(), center.1 + off_r * off_a.cos());

            let n_dend = rng.random_range(2..=4usize);
            let base = rng.random_range(0.0..2.0 * PI);
            let mut branches = Vec::with_capacity(n_dend + 1);
            for k in 0..=n_dend {
                let kind = if k == 0 {
                    BranchKind::Axon
                } else {
                    BranchKind::Dendrite
                };
                // spread branches around the soma with some jitter
                let heading = base + 2.0 * PI * k as f64 / (n_dend + 1) as f64 + rng.random_range(-0.3..0.3);
                let length = match kind {
                    BranchKind::Axon => rng.random_range(0.35..0.6) * n,
                    BranchKind::Dendrite => rng.random_range(0.12..0.25) * n,
                };
                let start = (center.0 + r * heading.sin(), center.1 + r * heading.cos());
                branches.push(Branch {
                    kind,
                    path: random_walk(&mut rng, start, heading, length.round() as usize),
                    extent: 1.0,
                });
            }
            cells.push(Cell {
                center,
                soma_radius: r,
                nucleus_center,
                nucleus_radius,
                branches,
            });
        }
        Ok(Self {
            config: config.clone(),
            cells,
        })
    }

    /// Sets the rendered fraction of every branch of `kind`.
    pub fn set_extent(&mut self, kind: BranchKind, extent: f64) {
        for b in self.cells.iter_mut().flat_map(|c| c.branches.iter_mut()) {
            if b.kind == kind {
                b.extent = extent.clamp(0.0, 1.0);
            }
        }
    }

    /// Renders the scene; `noise_seed` drives only the additive phase noise.
    pub fn render(&self, noise_seed: u64) -> PhantomSample {
        let cfg = &self.config;
        let n = cfg.size;
        let mut soma = vec![0.0; n * n];
        let mut nucleus = vec![0.0; n * n];
        let mut dend = vec![0.0; n * n];
        let mut axon = vec![0.0; n * n];
        for cell in &self.cells {
            draw_disk(&mut soma, n, cell.center, cell.soma_radius);
            draw_disk(&mut nucleus, n, cell.nucleus_center, cell.nucleus_radius);
            for b in &cell.branches {
                let (layer, width) = match b.kind {
                    BranchKind::Axon => (&mut axon, cfg.axon_width_px),
                    BranchKind::Dendrite => (&mut dend, cfg.dendrite_width_px),
                };
                let keep = ((b.path.len() as f64) * b.extent).round() as usize;
                draw_tube(layer, n, &b.path[..keep.min(b.path.len())], width / 2.0);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise_sd = cfg.noise_sigma * cfg.phase_scale_rad.abs();
        let noise = Normal::new(0.0, noise_sd).unwrap();
        let phase: Vec<f64> = (0..n * n)
            .map(|i| {
                let density = SOMA_DENSITY * soma[i]
                    + NUCLEUS_DENSITY * nucleus[i]
                    + DENDRITE_DENSITY * dend[i]
                    + AXON_DENSITY * axon[i];
                let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                cfg.phase_scale_rad * density + eps
            })
            .collect();
        let tau: Vec<f64> = (0..n * n).map(|i| soma[i].max(dend[i]).max(axon[i])).collect();
        let map2: Vec<f64> = (0..n * n).map(|i| soma[i].max(dend[i])).collect();

        let raster = |v: Vec<f64>, units| {
            RasterImage::new(n, n, v, units).expect("rendered values are finite")
        };
        let mask = |v: &[f64]| {
            let mut m = Mask::empty(n, n);
            for (i, &x) in v.iter().enumerate() {
                if x > 0.0 {
                    m.set(i / n, i % n, true);
                }
            }
            m
        };
        PhantomSample {
            soma_mask: mask(&soma),
            axon_mask: mask(&axon),
            dendrite_mask: mask(&dend),
            phase: raster(phase, Units::Radians),
            tau: raster(tau, Units::Dimensionless),
            map2: raster(map2, Units::Dimensionless),
            dapi: raster(nucleus, Units::Dimensionless),
        }
    }
}

/// Anti-aliased disk: 1 inside, linear ramp over the last pixel.
fn draw_disk(layer: &mut [f64], n: usize, center: (f64, f64), radius: f64) {
    let (cy, cx) = center;
    let r0 = (cy - radius - 1.0).floor().max(0.0) as usize;
    let r1 = ((cy + radius + 1.0).ceil() as usize).min(n - 1);
    let c0 = (cx - radius - 1.0).floor().max(0.0) as usize;
    let c1 = ((cx + radius + 1.0).ceil() as usize).min(n - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            let v = (radius + 0.5 - d).clamp(0.0, 1.0);
            let p = &mut layer[r * n + c];
            *p = p.max(v);
        }
    }
}

/// Max over Gaussian profiles centred on the path points, cut at 3σ.
fn draw_tube(layer: &mut [f64], n: usize, path: &[(f64, f64)], sigma: f64) {
    let reach = 3.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    // densify so the tube has no beading between unit-spaced samples
    let mut pts = Vec::with_capacity(path.len() * 2);
    for w in path.windows(2) {
        pts.push(w[0]);
        pts.push(((w[0].0 + w[1].0) / 2.0, (w[0].1 + w[1].1) / 2.0));
    }
    pts.extend(path.last());
    let limit = n as f64 - 1.0;
    for &(py, px) in &pts {
        if py < -reach || px < -reach || py > limit + reach || px > limit + reach {
            continue;
        }
        let r0 = (py - reach).ceil().max(0.0) as usize;
        let r1 = (py + reach).floor().min(limit) as usize;
        let c0 = (px - reach).ceil().max(0.0) as usize;
        let c1 = (px + reach).floor().min(limit) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d2 = (r as f64 - py).powi(2) + (c as f64 - px).powi(2);
                if d2 > reach * reach {
                    continue;
                }
                let p = &mut layer[r * n + c];
                *p = p.max((-d2 * inv).exp());
            }
        }
    }
}

/// Generates and renders one phantom field.
pub fn synth_phantom(cfg: &PhantomConfig) -> Result<PhantomSample> {
    Ok(PhantomScene::generate(cfg)?.render(noise_seed(cfg.seed)))
}

/// Noise stream seed kept apart from the geometry stream.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Writes `<field>[_t<k>]_{phase,tau,map2,dapi}.tif` into `dir`.
pub fn write_sample(
    sample: &PhantomSample,
    dir: &Path,
    field_id: &str,
    time_index: Option<u32>,
) -> Result<SampleRecord> {
    std::fs::create_dir_all(dir).map_err(|e| PicsError::io(dir, e))?;
    let stem = match time_index {
        Some(t) => format!("{field_id}_t{t}"),
        None => field_id.to_string(),
    };
    let path = |suffix: &str| dir.join(format!("{stem}_{suffix}.tif"));
    let mut rec = SampleRecord::new(field_id, path("phase"));
    rec.time_index = time_index;
    save_raster(&sample.phase, &rec.phase_path)?;
    for (img, slot, name) in [
        (&sample.tau, &mut rec.tau_path, "tau"),
        (&sample.map2, &mut rec.map2_path, "map2"),
        (&sample.dapi, &mut rec.dapi_path, "dapi"),
    ] {
        let p = path(name);
        save_raster(img, &p)?;
        *slot = Some(p);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> PhantomConfig {
        PhantomConfig {
            size: 96,
            n_cells: 3,
            seed,
            ..Default::default()
        }
    }

    fn support(img: &RasterImage) -> Vec<bool> {
        img.pixels().iter().map(|&v| v > 0.0).collect()
    }

    #[test]
    fn empty_field_is_pure_noise() {
        let cfg = PhantomConfig {
            n_cells: 0,
            ..small(1)
        };
        let s = synth_phantom(&cfg).unwrap();
        for img in [&s.tau, &s.map2, &s.dapi] {
            assert!(img.pixels().iter().all(|&v| v == 0.0));
        }
        let m = s.phase.mean();
        let sd = (s.phase.pixels().iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.phase.len() as f64).sqrt();
        assert!(m.abs() < 0.005 && (sd - 0.02).abs() < 0.003, "mean {m} sd {sd}");
    }

    #[test]
    fn supports_nest() {
        for seed in 0..10 {
            let s = synth_phantom(&small(seed)).unwrap();
            let tau = support(&s.tau);
            for (i, m) in support(&s.map2).into_iter().enumerate() {
                assert!(!m || tau[i]);
            }
            for (i, d) in support(&s.dapi).into_iter().enumerate() {
                assert!(!d || s.soma_mask.get(i / 96, i % 96));
            }
        }
    }

    #[test]
    fn ground_truth_in_unit_range_and_nonempty() {
        let s = synth_phantom(&small(3)).unwrap();
        for img in [&s.tau, &s.map2, &s.dapi] {
            let (lo, hi) = img.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
            assert!(hi > 0.5);
        }
        assert!(s.axon_mask.count() > 0 && s.dendrite_mask.count() > 0);
    }

    #[test]
    fn bit_identical_under_seed() {
        let a = synth_phantom(&small(5)).unwrap();
        let b = synth_phantom(&small(5)).unwrap();
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.tau, b.tau);
        let c = synth_phantom(&small(6)).unwrap();
        assert_ne!(a.phase, c.phase);
    }

    #[test]
    fn axons_are_fainter_than_dendrites() {
        let cfg = PhantomConfig {
            noise_sigma: 0.0,
            ..small(7)
        };
        let s = synth_phantom(&cfg).unwrap();
        let mean_on = |m: &Mask| {
            let (mut sum, mut k) = (0.0, 0usize);
            for r in 0..96 {
                for c in 0..96 {
                    if m.get(r, c) && !s.soma_mask.get(r, c) {
                        sum += s.phase.get(r, c);
                        k += 1;
                    }
                }
            }
            (sum / k as f64, k)
        };
        let only_axon = s.axon_mask.and_not(&s.dendrite_mask).unwrap();
        let only_dend = s.dendrite_mask.and_not(&s.axon_mask).unwrap();
        let (pa, _) = mean_on(&only_axon);
        let (pd, _) = mean_on(&only_dend);
        assert!(pa < pd, "axon {pa} dendrite {pd}");
    }

    #[test]
    fn extent_controls_branch_length() {
        let mut scene = PhantomScene::generate(&small(8)).unwrap();
        let full = scene.render(0).axon_mask.count();
        scene.set_extent(BranchKind::Axon, 0.5);
        let half = scene.render(0).axon_mask.count();
        scene.set_extent(BranchKind::Axon, 0.0);
        let none = scene.render(0).axon_mask.count();
        assert!(full > half && half > none);
        assert_eq!(none, 0);
    }

    #[test]
    fn invalid_configs() {
        let c = PhantomConfig {
            axon_width_px: 5.0,
            dendrite_width_px: 4.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PhantomConfig {
            axon_width_px: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn writes_loadable_files() {
        let tmp = tempfile::tempdir().unwrap();
        let s = synth_phantom(&small(2)).unwrap();
        let rec = write_sample(&s, tmp.path(), "f0", Some(3)).unwrap();
        assert!(rec.phase_path.ends_with("f0_t3_phase.tif"));
        let back = crate::imagecore::load_raster(&rec.phase_path).unwrap();
        for (a, b) in back.pixels().iter().zip(s.phase.pixels()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let m = super::super::build_manifest(tmp.path(), tmp.path()).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].tau_path, rec.tau_path);
    }
}
