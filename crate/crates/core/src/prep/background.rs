//! Background estimation with energy-based outlier rejection.

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::imagecore::RasterImage;

/// Scale factor turning a MAD into a Gaussian-consistent sigma.
const MAD_SCALE: f64 = 1.4826;

/// Sum of absolute pixel values.
pub fn image_energy(img: &RasterImage) -> f64 {
    img.pixels().iter().map(|v| v.abs()).sum()
}

#[derive(Debug, Clone)]
pub struct BackgroundModel {
    pub background: RasterImage,
    pub included_count: usize,
    pub excluded_indices: Vec<usize>,
    pub energy_values: Vec<f64>,
    /// Set when every image was rejected and the pixelwise median of all
    /// inputs was used instead.
    pub used_median_fallback: bool,
}

/// Summary written into preprocessing reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundReport {
    pub energies: Vec<f64>,
    pub excluded_indices: Vec<usize>,
    pub included_count: usize,
    pub outlier_rule: String,
    pub used_median_fallback: bool,
}

impl BackgroundModel {
    pub fn report(&self, outlier_k: f64) -> BackgroundReport {
        BackgroundReport {
            energies: self.energy_values.clone(),
            excluded_indices: self.excluded_indices.clone(),
            included_count: self.included_count,
            outlier_rule: format!("|E - median(E)| > {outlier_k} * 1.4826 * MAD(E)"),
            used_median_fallback: self.used_median_fallback,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of the images whose energy is not an outlier.
///
/// Image `i` is rejected when `|E_i - median(E)| > k · 1.4826 · MAD(E)`.
/// If that rejects everything, the pixelwise median of all inputs is used.
pub fn estimate_background(images: &[RasterImage], outlier_k: f64) -> Result<BackgroundModel> {
    if images.is_empty() {
        return Err(PicsError::EmptyInput("background image set"));
    }
    if images.len() < 2 {
        return Err(PicsError::InsufficientRecords {
            needed: 1,
            available: images.len(),
        });
    }
    for img in &images[1..] {
        images[0].ensure_same_dims(img)?;
    }
    let energies: Vec<f64> = images.iter().map(image_energy).collect();
    let med = median(&energies);
    let deviations: Vec<f64> = energies.iter().map(|e| (e - med).abs()).collect();
    let mad = median(&deviations) * MAD_SCALE;

    // With a zero MAD only images that differ from the median are rejected.
    let excluded: Vec<usize> = deviations
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > outlier_k * mad)
        .map(|(i, _)| i)
        .collect();

    let n_pix = images[0].len();
    if excluded.len() == images.len() {
        let mut column = vec![0.0; images.len()];
        let pixels: Vec<f64> = (0..n_pix)
            .map(|p| {
                for (slot, img) in column.iter_mut().zip(images) {
                    *slot = img.pixels()[p];
                }
                median(&column)
            })
            .collect();
        return Ok(BackgroundModel {
            background: images[0].with_pixels(pixels),
            included_count: images.len(),
            excluded_indices: Vec::new(),
            energy_values: energies,
            used_median_fallback: true,
        });
    }

    let mut sum = vec![0.0; n_pix];
    let mut included = 0usize;
    for (i, img) in images.iter().enumerate() {
        if excluded.binary_search(&i).is_ok() {
            continue;
        }
        included += 1;
        for (s, &v) in sum.iter_mut().zip(img.pixels()) {
            *s += v;
        }
    }
    let inv = 1.0 / included as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(BackgroundModel {
        background: images[0].with_pixels(sum),
        included_count: included,
        excluded_indices: excluded,
        energy_values: energies,
        used_median_fallback: false,
    })
}

pub fn subtract_background(img: &RasterImage, bg: &BackgroundModel) -> Result<RasterImage> {
    img.ensure_same_dims(&bg.background)?;
    let pixels = img
        .pixels()
        .iter()
        .zip(bg.background.pixels())
        .map(|(a, b)| a - b)
        .collect();
    Ok(img.with_pixels(pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Units;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(v: f64) -> RasterImage {
        RasterImage::filled(4, 4, v, Units::IntensityAu)
    }

    fn random(seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::from_fn(6, 5, Units::IntensityAu, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn energy_examples() {
        assert_eq!(image_energy(&constant(0.0)), 0.0);
        let img = RasterImage::new(2, 2, vec![1.0, -1.0, 2.0, -2.0], Units::IntensityAu).unwrap();
        assert_eq!(image_energy(&img), 6.0);
        assert_eq!(image_energy(&constant(-1.5)), 1.5 * 16.0);
    }

    #[test]
    fn identical_images_exclude_nothing() {
        let img = random(1);
        let bg = estimate_background(&vec![img.clone(); 5], 3.0).unwrap();
        assert!(bg.excluded_indices.is_empty());
        assert_eq!(bg.included_count, 5);
        for (a, b) in bg.background.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bright_outlier_is_rejected() {
        let mut imgs = vec![constant(1.0); 9];
        imgs.push(constant(100.0));
        let bg = estimate_background(&imgs, 3.0).unwrap();
        assert_eq!(bg.excluded_indices, vec![9]);
        assert_eq!(bg.included_count, 9);
        assert!(bg.background.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn spread_inliers_keep_their_mean() {
        let mut imgs: Vec<RasterImage> = (0..9).map(|i| constant(1.0 + 0.001 * i as f64)).collect();
        imgs.push(constant(100.0));
        let bg = estimate_background(&imgs, 3.0).unwrap();
        assert_eq!(bg.excluded_indices, vec![9]);
        assert!(bg.background.pixels().iter().all(|&v| (v - 1.004).abs() < 1e-12));
    }

    #[test]
    fn two_images_average() {
        let bg = estimate_background(&[constant(0.0), constant(2.0)], 3.0).unwrap();
        assert!(bg.excluded_indices.is_empty());
        assert!(bg.background.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn median_fallback_when_everything_is_rejected() {
        let imgs = vec![constant(1.0), constant(2.0), constant(4.0), constant(8.0)];
        let bg = estimate_background(&imgs, 0.0).unwrap();
        assert!(bg.used_median_fallback);
        assert!(bg.background.pixels().iter().all(|&v| v == 3.0));
        assert!(bg.included_count >= 1);
    }

    #[test]
    fn uncontaminated_background_is_the_mean() {
        let imgs: Vec<RasterImage> = (0..4).map(|s| random(10 + s)).collect();
        let bg = estimate_background(&imgs, 3.0).unwrap();
        assert!(bg.excluded_indices.is_empty());
        for p in 0..imgs[0].len() {
            let m = imgs.iter().map(|i| i.pixels()[p]).sum::<f64>() / 4.0;
            assert_eq!(bg.background.pixels()[p], m);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            estimate_background(&[], 3.0),
            Err(PicsError::EmptyInput(_))
        ));
        let other = RasterImage::zeros(3, 3, Units::IntensityAu);
        assert!(matches!(
            estimate_background(&[constant(1.0), other.clone()], 3.0),
            Err(PicsError::DimMismatch { .. })
        ));
        let bg = estimate_background(&[constant(1.0), constant(1.0)], 3.0).unwrap();
        assert!(subtract_background(&other, &bg).is_err());
    }

    #[test]
    fn subtraction_examples() {
        let img = random(5);
        let bg = estimate_background(&[img.clone(), img.clone()], 3.0).unwrap();
        assert!(subtract_background(&img, &bg)
            .unwrap()
            .pixels()
            .iter()
            .all(|&v| v == 0.0));
        let shifted = img.map(|v| v + 0.3);
        for (v, (a, b)) in subtract_background(&shifted, &bg)
            .unwrap()
            .pixels()
            .iter()
            .zip(shifted.pixels().iter().zip(bg.background.pixels()))
        {
            assert_eq!(*v, a - b);
            assert!((v - 0.3).abs() < 1e-12);
        }
    }
}
