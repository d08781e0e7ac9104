//! Preprocessing of raw phase/fluorescence pairs: background removal, focus
//! selection, registration and patching.

mod background;
mod patch;
mod pipeline;
mod register;
mod wavelet;

pub use background::{
    estimate_background, image_energy, subtract_background, BackgroundModel, BackgroundReport,
};
pub use patch::{patchify, stitch};
pub use pipeline::{preprocess_manifest, shifts_by_field, FieldReport, PreprocessConfig, PreprocessReport};
pub use register::{apply_shift_and_crop, register_translation, Shift2D};
pub use wavelet::{haar_dwt2, haar_idwt2, select_focus, DetailBands, HaarPyramid, ZStack};

/// Default outlier multiplier for background estimation.
pub const DEFAULT_OUTLIER_K: f64 = 3.0;
/// Default total crop after registration (pixels per axis).
pub const DEFAULT_CROP_TOTAL: usize = 64;
/// Default training patch edge.
pub const DEFAULT_PATCH: usize = 992;
