//! Tensor engine, the U-Net generator, and checkpoints.
//!
//! Convolutions are lowered to matrix products (im2col + dgemm). All
//! arithmetic is `f64`; checkpoints store `f32`.

mod checkpoint;
pub(crate) mod ops;
mod params;
mod tensor;
mod unet;

pub use checkpoint::{Checkpoint, CheckpointInfo, NormalizationStats};
pub use params::{Mode, ModelParams, ParamTensor, BN_MOMENTUM};
pub use tensor::Tensor4;
pub use unet::{
    absorb_batch_stats, backward, build_unet, export_activations, forward, normalized_preactivations,
    ForwardCache, Gradients, LayerActivation, UNetConfig, UpMode,
};

pub(crate) use params::{Init, ParamBuilder, Unit, UnitCache};

use std::path::Path;

use crate::error::Result;
use crate::imagecore::{save_raster, Units};

/// Writes one float TIFF per channel of every activation:
/// `<dir>/<layer>_c<k>.tif` (first batch item only).
pub fn save_activation_grid(acts: &[LayerActivation], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::PicsError::io(dir, e))?;
    let mut written = Vec::new();
    for a in acts {
        for c in 0..a.tensor.channels() {
            let path = dir.join(format!("{}_c{c:03}.tif", a.name));
            save_raster(&a.tensor.to_raster(0, c, Units::Dimensionless), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
