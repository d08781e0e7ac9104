//! Dataset bookkeeping and the synthetic phantom generator.

mod manifest;
mod phantom;

pub use manifest::{build_manifest, split_dataset, Channel, DatasetManifest, SampleRecord, Split};
pub use phantom::{
    noise_seed, synth_phantom, write_sample, Branch, BranchKind, Cell, PhantomConfig, PhantomSample,
    PhantomScene,
};

use crate::error::{PicsError, Result};
use crate::imagecore::{load_raster, RasterImage, Units};

/// Loads the phase image and the `channel` ground truth of a record.
pub fn load_pair(record: &SampleRecord, channel: Channel) -> Result<(RasterImage, RasterImage)> {
    let label_path = record.label_path(channel).ok_or_else(|| {
        PicsError::InvalidConfig(format!(
            "record {} has no {channel} ground truth",
            record.field_id
        ))
    })?;
    let phase = load_raster(&record.phase_path)?.with_units(Units::Radians);
    let label = load_raster(label_path)?;
    phase.ensure_same_dims(&label)?;
    Ok((phase, label))
}
