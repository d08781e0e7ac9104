//! Dataset manifests: pairing files by field, and deterministic splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};

/// Fluorescence channel a network is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Tau,
    Map2,
    Dapi,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Tau, Channel::Map2, Channel::Dapi];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Tau => "tau",
            Channel::Map2 => "map2",
            Channel::Dapi => "dapi",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = PicsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tau" => Ok(Channel::Tau),
            "map2" => Ok(Channel::Map2),
            "dapi" => Ok(Channel::Dapi),
            other => Err(PicsError::InvalidConfig(format!("unknown channel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub field_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_index: Option<u32>,
    pub phase_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map2_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dapi_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub well_id: Option<String>,
}

impl SampleRecord {
    pub fn new(field_id: impl Into<String>, phase_path: impl Into<PathBuf>) -> Self {
        Self {
            field_id: field_id.into(),
            time_index: None,
            phase_path: phase_path.into(),
            tau_path: None,
            map2_path: None,
            dapi_path: None,
            well_id: None,
        }
    }

    pub fn label_path(&self, channel: Channel) -> Option<&Path> {
        match channel {
            Channel::Tau => self.tau_path.as_deref(),
            Channel::Map2 => self.map2_path.as_deref(),
            Channel::Dapi => self.dapi_path.as_deref(),
        }
    }

    /// Mutable path slot of one label channel.
    pub fn label_slot(&mut self, channel: Channel) -> &mut Option<PathBuf> {
        match channel {
            Channel::Tau => &mut self.tau_path,
            Channel::Map2 => &mut self.map2_path,
            Channel::Dapi => &mut self.dapi_path,
        }
    }

    /// No fluorescence ground truth at all.
    pub fn is_inference_only(&self) -> bool {
        Channel::ALL.iter().all(|&c| self.label_path(c).is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    #[serde(default)]
    pub split: BTreeMap<String, Split>,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PicsError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        // relative paths are resolved against the manifest's directory
        if let Some(base) = path.parent() {
            for r in &mut m.records {
                resolve(&mut r.phase_path, base);
                for c in Channel::ALL {
                    if let Some(p) = r.label_slot(c) {
                        resolve(p, base);
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| PicsError::io(path, e))
    }

    /// Distinct field ids in first-appearance order.
    pub fn field_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.field_id.clone()))
            .map(|r| r.field_id.clone())
            .collect()
    }

    pub fn split_of(&self, field_id: &str) -> Option<Split> {
        self.split.get(field_id).copied()
    }

    /// Records assigned to `split`, in manifest order.
    pub fn records_in(&self, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| self.split_of(&r.field_id) == Some(split))
            .collect()
    }

    /// Records of `split` that carry ground truth for `channel`.
    pub fn labelled(&self, split: Split, channel: Channel) -> Vec<&SampleRecord> {
        self.records_in(split)
            .into_iter()
            .filter(|r| r.label_path(channel).is_some())
            .collect()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let ids = self.field_ids();
        let count = |s| ids.iter().filter(|id| self.split_of(id) == Some(s)).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }
}

fn resolve(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileRole {
    Phase,
    Label(Channel),
}

/// Parses `<field>[_t<k>]_<channel>.tif[f]`. Non-TIFF names yield `None`.
fn parse_name(name: &str) -> Result<Option<(String, Option<u32>, FileRole)>> {
    let lower = name.to_ascii_lowercase();
    let stem = if let Some(s) = lower.strip_suffix(".tiff") {
        &name[..s.len()]
    } else if let Some(s) = lower.strip_suffix(".tif") {
        &name[..s.len()]
    } else {
        return Ok(None);
    };
    let bad = || PicsError::UnparseableFilename(name.to_string());
    let (rest, channel) = stem.rsplit_once('_').ok_or_else(bad)?;
    let role = match channel.to_ascii_lowercase().as_str() {
        "phase" => FileRole::Phase,
        other => FileRole::Label(other.parse().map_err(|_| bad())?),
    };
    let (field, time) = match rest.rsplit_once('_') {
        Some((f, t))
            if t.len() > 1 && t.starts_with('t') && t[1..].bytes().all(|b| b.is_ascii_digit()) =>
        {
            (f, Some(t[1..].parse::<u32>().map_err(|_| bad())?))
        }
        _ => (rest, None),
    };
    if field.is_empty() {
        return Err(bad());
    }
    Ok(Some((field.to_string(), time, role)))
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| PicsError::io(dir, e))? {
        let entry = entry.map_err(|e| PicsError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs phase and fluorescence files by field id (and time index).
///
/// Fields without a phase image are dropped with a warning; fields without
/// fluorescence become inference-only records.
pub fn build_manifest(phase_dir: &Path, fluor_dir: &Path) -> Result<DatasetManifest> {
    let mut files = list_dir(phase_dir)?;
    if fluor_dir != phase_dir {
        files.extend(list_dir(fluor_dir)?);
    }
    type Key = (String, Option<u32>);
    let mut phases: BTreeMap<Key, PathBuf> = BTreeMap::new();
    let mut labels: BTreeMap<Key, BTreeMap<Channel, PathBuf>> = BTreeMap::new();
    for path in files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| PicsError::UnparseableFilename(path.display().to_string()))?;
        let Some((field, time, role)) = parse_name(name)? else {
            continue;
        };
        let key = (field.clone(), time);
        let describe = |c: &str| match time {
            Some(t) => format!("{field} (t{t}) has two {c} files"),
            None => format!("{field} has two {c} files"),
        };
        match role {
            FileRole::Phase => {
                if phases.insert(key, path).is_some() {
                    return Err(PicsError::DuplicateField(describe("phase")));
                }
            }
            FileRole::Label(c) => {
                if labels.entry(key).or_default().insert(c, path).is_some() {
                    return Err(PicsError::DuplicateField(describe(c.as_str())));
                }
            }
        }
    }
    for key in labels.keys() {
        if !phases.contains_key(key) {
            log::warn!("field {} has fluorescence but no phase image; skipped", key.0);
        }
    }
    let records = phases
        .into_iter()
        .map(|((field, time), phase)| {
            let mut rec = SampleRecord::new(field.clone(), phase);
            rec.time_index = time;
            if let Some(ls) = labels.get(&(field, time)) {
                for (&c, p) in ls {
                    *rec.label_slot(c) = Some(p.clone());
                }
            }
            rec
        })
        .collect();
    Ok(DatasetManifest {
        records,
        split: BTreeMap::new(),
        seed: 0,
    })
}

/// Assigns every field to train/val/test.
///
/// Fields are shuffled with `seed`; the last `n_test` go to test, then
/// `floor(remaining · val_fraction)` (at least 1 when the fraction is
/// positive and at least 2 fields remain) go to validation.
pub fn split_dataset(
    manifest: &DatasetManifest,
    n_test: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(PicsError::InvalidConfig(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut ids = manifest.field_ids();
    if n_test >= ids.len() {
        return Err(PicsError::InsufficientRecords {
            needed: n_test,
            available: ids.len(),
        });
    }
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let remaining = ids.len() - n_test;
    let mut n_val = (remaining as f64 * val_fraction).floor() as usize;
    if val_fraction > 0.0 && remaining >= 2 {
        n_val = n_val.max(1);
    }
    n_val = n_val.min(remaining.saturating_sub(1));

    let mut split = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        let s = if i >= remaining {
            Split::Test
        } else if i < n_val {
            Split::Val
        } else {
            Split::Train
        };
        split.insert(id, s);
    }
    Ok(DatasetManifest {
        records: manifest.records.clone(),
        split,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"").unwrap();
    }

    fn dummy(n: usize) -> DatasetManifest {
        DatasetManifest {
            records: (0..n)
                .map(|i| {
                    let mut r = SampleRecord::new(format!("f{i:03}"), format!("f{i:03}_phase.tif"));
                    r.tau_path = Some(format!("f{i:03}_tau.tif").into());
                    r
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            parse_name("well_A1_phase.tif").unwrap(),
            Some(("well_A1".into(), None, FileRole::Phase))
        );
        assert_eq!(
            parse_name("f3_t12_map2.TIF").unwrap(),
            Some(("f3".into(), Some(12), FileRole::Label(Channel::Map2)))
        );
        assert_eq!(parse_name("notes.txt").unwrap(), None);
        assert!(parse_name("phase.tif").is_err());
        assert!(parse_name("f1_gfp.tif").is_err());
    }

    #[test]
    fn complete_and_inference_only_records() {
        let tmp = tempfile::tempdir().unwrap();
        let (pd, fd) = (tmp.path().join("p"), tmp.path().join("f"));
        fs::create_dir_all(&pd).unwrap();
        fs::create_dir_all(&fd).unwrap();
        for f in ["A", "B"] {
            touch(&pd, &format!("{f}_phase.tif"));
            touch(&fd, &format!("{f}_tau.tif"));
            touch(&fd, &format!("{f}_map2.tif"));
        }
        touch(&pd, "C_phase.tif");
        touch(&fd, "D_tau.tif");
        let m = build_manifest(&pd, &fd).unwrap();
        assert_eq!(m.records.len(), 3);
        let a = &m.records[0];
        assert_eq!(a.field_id, "A");
        assert!(a.tau_path.is_some() && a.map2_path.is_some() && a.dapi_path.is_none());
        assert!(!a.is_inference_only());
        assert!(m.records[2].is_inference_only());
    }

    #[test]
    fn duplicate_phase_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let (pd, fd) = (tmp.path().join("p"), tmp.path().join("f"));
        fs::create_dir_all(&pd).unwrap();
        fs::create_dir_all(&fd).unwrap();
        touch(&pd, "A_phase.tif");
        touch(&fd, "A_phase.tiff");
        assert!(matches!(
            build_manifest(&pd, &fd),
            Err(PicsError::DuplicateField(_))
        ));
    }

    #[test]
    fn time_lapse_records_are_distinct() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "A_t0_phase.tif");
        touch(tmp.path(), "A_t1_phase.tif");
        let m = build_manifest(tmp.path(), tmp.path()).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].time_index, Some(1));
        assert_eq!(m.field_ids(), vec!["A".to_string()]);
    }

    #[test]
    fn reproduces_reported_split_counts() {
        let m = split_dataset(&dummy(243), 25, 0.10, 7).unwrap();
        assert_eq!(m.split_counts(), (197, 21, 25));
    }

    #[test]
    fn two_fields_no_validation() {
        let m = split_dataset(&dummy(2), 1, 0.0, 1).unwrap();
        assert_eq!(m.split_counts(), (1, 0, 1));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let a = split_dataset(&dummy(50), 5, 0.1, 3).unwrap();
        let b = split_dataset(&dummy(50), 5, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&dummy(50), 5, 0.1, 4).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn insufficient_records() {
        assert!(matches!(
            split_dataset(&dummy(3), 3, 0.1, 0),
            Err(PicsError::InsufficientRecords { .. })
        ));
    }

    #[test]
    fn manifest_json_round_trip_and_strictness() {
        let tmp = tempfile::tempdir().unwrap();
        let m = split_dataset(&dummy(4), 1, 0.25, 0).unwrap();
        let p = tmp.path().join("m.json");
        m.save(&p).unwrap();
        let back = DatasetManifest::load(&p).unwrap();
        assert_eq!(back.split, m.split);
        assert_eq!(back.records[0].phase_path, tmp.path().join("f000_phase.tif"));

        fs::write(&p, r#"{"records": [], "bogus": 1}"#).unwrap();
        assert!(DatasetManifest::load(&p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn splits_partition_fields(n in 2usize..80, test_frac in 0.0f64..0.9, val in 0.0f64..0.9, seed in 0u64..1000) {
            let n_test = ((n as f64 * test_frac) as usize).min(n - 1);
            let m = split_dataset(&dummy(n), n_test, val, seed).unwrap();
            let (tr, va, te) = m.split_counts();
            proptest::prop_assert_eq!(tr + va + te, n);
            proptest::prop_assert_eq!(te, n_test);
            proptest::prop_assert!(tr >= 1);
            proptest::prop_assert_eq!(m.split.len(), n);
        }
    }
}
