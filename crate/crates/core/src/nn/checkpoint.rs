//! Checkpoint files: magic, JSON header, then little-endian f32 tensors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamTensor};
use super::unet::{build_unet, UNetConfig};
use crate::error::{PicsError, Result};

const MAGIC: &[u8; 8] = b"PICSCKPT";
const FORMAT_VERSION: u32 = 1;

/// Z-score statistics applied around the network.
///
/// Inputs are fed as `(x − input_mean) / input_std`; outputs of channel `c`
/// are mapped back as `y · target_std[c] + target_mean[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub input_mean: f64,
    pub input_std: f64,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl NormalizationStats {
    /// Leaves values unchanged.
    pub fn identity(out_channels: usize) -> Self {
        Self {
            input_mean: 0.0,
            input_std: 1.0,
            target_mean: vec![0.0; out_channels],
            target_std: vec![1.0; out_channels],
        }
    }
}

/// Provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointInfo {
    /// Output channel names, e.g. `["tau"]`.
    pub channels: Vec<String>,
    /// 2×2 mean-pool steps applied to the phase before the network.
    pub input_downsample: u32,
    pub epoch: usize,
    pub val_pearson: Option<f64>,
    pub loss: String,
    pub seed: u64,
    /// Full training configuration, when produced by the trainer.
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: UNetConfig,
    pub params: ModelParams,
    pub normalization: NormalizationStats,
    pub info: CheckpointInfo,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// In f32 elements from the start of the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: UNetConfig,
    normalization: NormalizationStats,
    info: CheckpointInfo,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Rounds every stored value through f32, the on-disk precision, so a
    /// save/load round trip is exact.
    pub fn round_to_f32(&mut self) {
        for p in self.params.params_mut() {
            p.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for p in self.params.buffers_mut() {
            p.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut entries = Vec::new();
        let mut offset = 0;
        let tagged = self
            .params
            .params()
            .iter()
            .map(|p| (TensorKind::Param, p))
            .chain(self.params.buffers().iter().map(|p| (TensorKind::Buffer, p)));
        let mut data = Vec::new();
        for (kind, p) in tagged {
            entries.push(TensorEntry {
                name: p.name.clone(),
                kind,
                shape: p.shape.clone(),
                offset,
            });
            offset += p.values.len();
            for &v in &p.values {
                data.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            normalization: self.normalization.clone(),
            info: self.info.clone(),
            tensors: entries,
        })?;
        let mut f = std::fs::File::create(path).map_err(|e| PicsError::io(path, e))?;
        let mut write = |b: &[u8]| f.write_all(b).map_err(|e| PicsError::io(path, e));
        write(MAGIC)?;
        write(&(header.len() as u64).to_le_bytes())?;
        write(&header)?;
        write(&data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| PicsError::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(PicsError::CorruptHeader(format!("{}: not a checkpoint", path.display())));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| PicsError::CorruptHeader("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format_version != FORMAT_VERSION {
            return Err(PicsError::CheckpointMismatch(format!(
                "format version {}",
                header.format_version
            )));
        }
        let data = &bytes[16 + hlen..];
        let mut params = build_unet(&header.config, 0)?;
        let read = |slot: &mut ParamTensor, entry: &TensorEntry| -> Result<()> {
            if slot.name != entry.name || slot.shape != entry.shape {
                return Err(PicsError::CheckpointMismatch(format!(
                    "tensor {} {:?} where the configuration expects {} {:?}",
                    entry.name, entry.shape, slot.name, slot.shape
                )));
            }
            let start = entry.offset * 4;
            let end = start + slot.values.len() * 4;
            let raw = data
                .get(start..end)
                .ok_or_else(|| PicsError::CorruptHeader(format!("tensor {} truncated", entry.name)))?;
            for (v, chunk) in slot.values.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
            if slot.values.iter().any(|v| !v.is_finite()) {
                return Err(PicsError::NonFinite("checkpoint tensor"));
            }
            Ok(())
        };
        let (pe, be): (Vec<_>, Vec<_>) = header
            .tensors
            .iter()
            .partition(|e| matches!(e.kind, TensorKind::Param));
        if pe.len() != params.params().len() || be.len() != params.buffers().len() {
            return Err(PicsError::CheckpointMismatch(format!(
                "{} tensors where the configuration expects {}",
                header.tensors.len(),
                params.params().len() + params.buffers().len()
            )));
        }
        for (slot, e) in params.params_mut().iter_mut().zip(&pe) {
            read(slot, e)?;
        }
        for (slot, e) in params.buffers_mut().iter_mut().zip(&be) {
            read(slot, e)?;
        }
        if header.normalization.target_mean.len() != header.config.out_channels
            || header.normalization.target_std.len() != header.config.out_channels
        {
            return Err(PicsError::CheckpointMismatch(
                "normalization stats do not match out_channels".into(),
            ));
        }
        Ok(Self {
            config: header.config,
            params,
            normalization: header.normalization,
            info: header.info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = UNetConfig {
            depth: 2,
            base_channels: 4,
            ..Default::default()
        };
        let mut params = build_unet(&config, 3).unwrap();
        params.buffers_mut()[0].values[0] = 0.25;
        let mut c = Checkpoint {
            config,
            params,
            normalization: NormalizationStats {
                input_mean: 0.1,
                input_std: 0.7,
                target_mean: vec![0.2],
                target_std: vec![0.3],
            },
            info: CheckpointInfo {
                channels: vec!["tau".into()],
                input_downsample: 1,
                ..Default::default()
            },
        };
        c.round_to_f32();
        c
    }

    #[test]
    fn round_trip_is_exact_after_rounding() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.normalization, c.normalization);
        assert_eq!(back.info, c.info);
        assert_eq!(back.params.params(), c.params.params());
        assert_eq!(back.params.buffers(), c.params.buffers());
    }

    #[test]
    fn rejects_garbage_and_mismatched_shapes() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("bad.ckpt");
        std::fs::write(&p, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(PicsError::CorruptHeader(_))));

        // header claims a deeper network than the stored tensors
        let c = sample();
        c.save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[16..16 + hlen].to_vec()).unwrap();
        let edited = text.replace("\"depth\":2", "\"depth\":3");
        assert_ne!(edited, text);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes.split_off(16 + hlen));
        std::fs::write(&p, out).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(PicsError::CheckpointMismatch(_))));
    }

    #[test]
    fn truncated_data_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("t.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(PicsError::CorruptHeader(_))));
    }
}
