//! Subcommand implementations. Each returns the files it read and wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pics::analysis::{emit_report, growth_series, GrowthSeries, Optics};
use pics::data::{
    build_manifest, split_dataset, write_sample, BranchKind, Channel, DatasetManifest, PhantomScene, SampleRecord,
};
use pics::imagecore::{load_raster, save_raster, save_rgb8, RasterImage, Units};
use pics::infer::{predict_all, predict_timelapse, TimelapseSequence};
use pics::losses::LossKind;
use pics::nn::Checkpoint;
use pics::prep::preprocess_manifest;
use pics::qpi::{reconstruct_phase, InterferogramStack, ShearAxis};
use pics::seg::{segment_stains, SegmentationMap, ThresholdMethod};
use pics::train::{train_model, validate};
use pics::data::Split;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| invalid(format!("cannot create {}: {e}", dir.display())))
}

fn tiffs_in(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| invalid(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Trailing `_<k>` index of a frame file name.
fn frame_index(p: &Path) -> Option<usize> {
    file_stem(p).rsplit_once('_').and_then(|(_, k)| k.parse().ok())
}

pub struct ReconstructArgs {
    pub frames: PathBuf,
    pub eps: Option<f64>,
    pub shear_axis: Option<ShearAxis>,
    pub shear_px: Option<usize>,
    pub out: PathBuf,
}

pub fn reconstruct(a: ReconstructArgs, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let sec = &mut cfg.reconstruct;
    if let Some(e) = a.eps {
        sec.integration.regularization_eps = e;
    }
    if let Some(axis) = a.shear_axis {
        sec.stack.shear_axis = axis;
    }
    if let Some(px) = a.shear_px {
        sec.stack.shear_px = px;
    }
    let mut files: Vec<(usize, PathBuf)> = tiffs_in(&a.frames)?
        .into_iter()
        .filter_map(|p| frame_index(&p).map(|k| (k, p)))
        .filter(|(k, _)| *k < 4)
        .collect();
    files.sort();
    let idx: Vec<usize> = files.iter().map(|f| f.0).collect();
    if idx != [0, 1, 2, 3] {
        return Err(invalid(format!(
            "{} must hold four frames with suffixes _0.._3, found {idx:?}",
            a.frames.display()
        )));
    }
    let frames: Vec<RasterImage> = files.iter().map(|(_, p)| load_raster(p)).collect::<Result<_, _>>()?;
    let frames: [RasterImage; 4] = frames.try_into().expect("four frames");
    let stack = InterferogramStack::new(frames, sec.stack)?;
    let phase = reconstruct_phase(&stack, &sec.integration)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    save_raster(&phase, &a.out)?;
    Ok(Outcome {
        inputs: files.into_iter().map(|f| f.1).collect(),
        outputs: vec![a.out],
    })
}

pub fn preprocess(manifest: PathBuf, out: PathBuf, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let m = DatasetManifest::load(&manifest)?;
    let (_, report) = preprocess_manifest(&m, &out, &cfg.preprocess)?;
    log::info!("preprocessed {} records", report.fields.len());
    Ok(Outcome {
        inputs: vec![manifest],
        outputs: vec![out.join("manifest.json"), out.join("preprocess_report.json")],
    })
}

pub struct SynthArgs {
    pub n: usize,
    pub size: Option<usize>,
    pub frames: usize,
    pub wells: usize,
    pub hold_out: Option<usize>,
    pub out: PathBuf,
}

/// Independent fields, or time-lapse fields whose axons lengthen frame by
/// frame when `frames > 1`.
pub fn synth(a: SynthArgs, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    if a.n == 0 || a.frames == 0 || a.wells == 0 {
        return Err(invalid("--n, --frames and --wells must be at least 1"));
    }
    if let Some(s) = a.size {
        cfg.phantom.size = s;
    }
    cfg.phantom.validate()?;
    mkdir(&a.out)?;
    let mut manifest = DatasetManifest::default();
    for i in 0..a.n {
        let pc = cfg.phantom.for_sample(i);
        let field = format!("f{i:03}");
        let well = format!("W{}", i % a.wells);
        let mut scene = PhantomScene::generate(&pc)?;
        for k in 0..a.frames {
            let sample = if a.frames == 1 {
                scene.render(pics::data::noise_seed(pc.seed))
            } else {
                scene.set_extent(BranchKind::Axon, 0.3 + 0.7 * k as f64 / (a.frames - 1) as f64);
                scene.render(pics::data::noise_seed(pc.seed).wrapping_add(k as u64))
            };
            let t = (a.frames > 1).then_some(k as u32);
            let mut rec: SampleRecord = write_sample(&sample, &a.out, &field, t)?;
            rec.well_id = Some(well.clone());
            manifest.records.push(rec);
        }
    }
    manifest.seed = cfg.phantom.seed;
    if let Some(n_test) = a.hold_out {
        manifest = split_dataset(&manifest, n_test, cfg.split.val_fraction, cfg.phantom.seed)?;
    }
    let mp = a.out.join("manifest.json");
    manifest.save(&mp)?;
    let mut outputs: Vec<PathBuf> = manifest
        .records
        .iter()
        .flat_map(|r| {
            std::iter::once(r.phase_path.clone()).chain(Channel::ALL.iter().filter_map(|c| r.label_path(*c).map(Path::to_path_buf)))
        })
        .collect();
    outputs.push(mp);
    Ok(Outcome {
        inputs: vec![],
        outputs,
    })
}

pub fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s.to_ascii_lowercase().replace('_', "+").as_str() {
        "l1" => Ok(LossKind::L1),
        "l1+pearson" => Ok(LossKind::L1Pearson),
        "l1+gan" => Ok(LossKind::L1Gan),
        other => Err(format!("unknown loss '{other}' (l1, l1+pearson, l1+gan)")),
    }
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub channel: Channel,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
}

pub fn train(a: TrainArgs, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let mut m = DatasetManifest::load(&a.manifest)?;
    if m.split.is_empty() {
        log::info!(
            "manifest has no split; holding out {} fields for test and {} of the rest for validation",
            cfg.split.n_test,
            cfg.split.val_fraction
        );
        m = split_dataset(&m, cfg.split.n_test, cfg.split.val_fraction, cfg.train.seed)?;
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    let history = a.history.unwrap_or_else(|| a.out.with_extension("history.csv"));
    cfg.train.checkpoint_path = Some(a.out.clone());
    cfg.train.history_csv = Some(history.clone());
    let (ckpt, _) = train_model(&m, a.channel, &cfg.network, &cfg.train)?;
    let test_path = a.out.with_extension("test.json");
    let mut outputs = vec![a.out, history];
    match validate(&ckpt, &m, Split::Test) {
        Ok(metrics) => {
            log::info!("test mean rho {:.4}, mean L1 {:.5}", metrics.mean_rho, metrics.mean_l1);
            std::fs::write(&test_path, serde_json::to_vec_pretty(&metrics).map_err(|e| CliError::Internal(e.to_string()))?)
                .map_err(|e| invalid(format!("cannot write {}: {e}", test_path.display())))?;
            outputs.push(test_path);
        }
        Err(pics::PicsError::EmptySplit(_)) => log::info!("no labelled test fields; skipping test metrics"),
        Err(e) => return Err(e.into()),
    }
    Ok(Outcome {
        inputs: vec![a.manifest],
        outputs,
    })
}

pub struct InferArgs {
    pub ckpts: Vec<PathBuf>,
    pub input: PathBuf,
    pub overlay: bool,
    pub frame_interval_h: f64,
    pub out: PathBuf,
}

fn checkpoint_channel(c: &Checkpoint, path: &Path) -> Result<Channel, CliError> {
    c.info
        .channels
        .first()
        .ok_or_else(|| invalid(format!("{} names no output channel", path.display())))?
        .parse()
        .map_err(CliError::from)
}

/// Phase files grouped into per-field sequences ordered by time index.
fn phase_sequences(input: &Path, interval_h: f64) -> Result<(Vec<TimelapseSequence>, Vec<PathBuf>), CliError> {
    let records: Vec<SampleRecord> = if input.join("manifest.json").is_file() {
        DatasetManifest::load(input.join("manifest.json"))?.records
    } else if input.is_dir() {
        build_manifest(input, input)?.records
    } else {
        let name = file_stem(input);
        let field = name.strip_suffix("_phase").unwrap_or(&name).to_string();
        vec![SampleRecord::new(field, input)]
    };
    if records.is_empty() {
        return Err(invalid(format!("no phase images under {}", input.display())));
    }
    let mut groups: BTreeMap<String, Vec<&SampleRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.field_id.clone()).or_default().push(r);
    }
    let mut seqs = Vec::new();
    for (field, mut recs) in groups {
        recs.sort_by_key(|r| r.time_index);
        let frames = recs
            .iter()
            .map(|r| {
                let t = r.time_index.unwrap_or(0) as f64 * interval_h;
                Ok((t, load_raster(&r.phase_path)?.with_units(Units::Radians)))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        seqs.push(TimelapseSequence::new(field, recs[0].well_id.clone(), frames)?);
    }
    Ok((seqs, records.into_iter().map(|r| r.phase_path).collect()))
}

fn frame_stem(seq: &TimelapseSequence, k: usize) -> String {
    if seq.frames().len() > 1 {
        format!("{}_t{k}", seq.field_id)
    } else {
        seq.field_id.clone()
    }
}

pub fn infer(a: InferArgs) -> Result<Outcome, CliError> {
    if !(a.frame_interval_h > 0.0) {
        return Err(invalid("--frame-interval-h must be positive"));
    }
    let mut by_channel: BTreeMap<Channel, Checkpoint> = BTreeMap::new();
    for p in &a.ckpts {
        let c = Checkpoint::load(p)?;
        let ch = checkpoint_channel(&c, p)?;
        if by_channel.insert(ch, c).is_some() {
            return Err(invalid(format!("two checkpoints predict {ch}")));
        }
    }
    mkdir(&a.out)?;
    let (seqs, mut inputs) = phase_sequences(&a.input, a.frame_interval_h)?;
    let mut outputs = Vec::new();
    if a.overlay {
        let (Some(tau), Some(map2)) = (by_channel.get(&Channel::Tau), by_channel.get(&Channel::Map2)) else {
            return Err(invalid("--overlay needs a tau and a map2 checkpoint"));
        };
        let dapi = by_channel.get(&Channel::Dapi);
        for seq in &seqs {
            let pred = predict_timelapse(tau, map2, seq, dapi)?;
            for (k, (stains, rgb)) in pred.stains.iter().zip(&pred.overlays).enumerate() {
                let stem = frame_stem(seq, k);
                let mut write = |img: &RasterImage, ch: &str| -> Result<(), CliError> {
                    let p = a.out.join(format!("{stem}_{ch}.tif"));
                    save_raster(img, &p)?;
                    outputs.push(p);
                    Ok(())
                };
                write(&stains.tau, "tau")?;
                write(&stains.map2, "map2")?;
                if let Some(d) = &stains.dapi {
                    write(d, "dapi")?;
                }
                let p = a.out.join(format!("{stem}_overlay.tif"));
                save_rgb8(rgb, &p)?;
                outputs.push(p);
            }
            let sp = a.out.join(format!("{}_overlay_scaling.json", seq.field_id));
            std::fs::write(&sp, serde_json::to_vec_pretty(&pred.scaling).map_err(|e| CliError::Internal(e.to_string()))?)
                .map_err(|e| invalid(format!("cannot write {}: {e}", sp.display())))?;
            outputs.push(sp);
        }
    } else {
        for seq in &seqs {
            for (k, (_, phase)) in seq.frames().iter().enumerate() {
                for (ch, ckpt) in &by_channel {
                    let img = predict_all(ckpt, phase)?.swap_remove(0);
                    let p = a.out.join(format!("{}_{ch}.tif", frame_stem(seq, k)));
                    save_raster(&img, &p)?;
                    outputs.push(p);
                }
            }
        }
    }
    inputs.extend(a.ckpts);
    Ok(Outcome { inputs, outputs })
}

pub struct SegmentArgs {
    pub tau: Option<PathBuf>,
    pub map2: Option<PathBuf>,
    pub dapi: Option<PathBuf>,
    pub stains: Option<PathBuf>,
    pub method: Option<ThresholdMethod>,
    pub sigma: Option<f64>,
    pub out: PathBuf,
}

pub fn segment(a: SegmentArgs, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    if let Some(m) = a.method {
        cfg.segment.method = m;
    }
    if let Some(s) = a.sigma {
        cfg.segment.sigma = s;
    }
    let (method, sigma) = (cfg.segment.method, cfg.segment.sigma);
    let one = |tau: &Path, map2: &Path, dapi: Option<&Path>, out: &Path| -> Result<Vec<PathBuf>, CliError> {
        let t = load_raster(tau)?;
        let m = load_raster(map2)?;
        let d = dapi.map(load_raster).transpose()?;
        let map = segment_stains(&t, &m, d.as_ref(), method, sigma)?;
        let side = map.save(out)?;
        Ok(vec![out.to_path_buf(), side])
    };
    match (&a.stains, &a.tau, &a.map2) {
        (Some(dir), None, None) => {
            mkdir(&a.out)?;
            let mut out = Outcome::default();
            for tau in tiffs_in(dir)? {
                let Some(stem) = file_stem(&tau).strip_suffix("_tau").map(str::to_string) else {
                    continue;
                };
                let map2 = dir.join(format!("{stem}_map2.tif"));
                if !map2.exists() {
                    log::warn!("{stem}: no map2 stain, skipped");
                    continue;
                }
                let dapi = Some(dir.join(format!("{stem}_dapi.tif"))).filter(|p| p.exists());
                out.outputs.extend(one(&tau, &map2, dapi.as_deref(), &a.out.join(format!("{stem}_seg.tif")))?);
                out.inputs.extend([tau, map2].into_iter().chain(dapi));
            }
            if out.outputs.is_empty() {
                return Err(invalid(format!("no <stem>_tau.tif / <stem>_map2.tif pairs in {}", dir.display())));
            }
            Ok(out)
        }
        (None, Some(tau), Some(map2)) => {
            if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                mkdir(parent)?;
            }
            let outputs = one(tau, map2, a.dapi.as_deref(), &a.out)?;
            Ok(Outcome {
                inputs: [tau.clone(), map2.clone()].into_iter().chain(a.dapi).collect(),
                outputs,
            })
        }
        _ => Err(invalid("give either --stains <dir> or both --tau and --map2")),
    }
}

pub struct AnalyzeArgs {
    pub seq: PathBuf,
    pub segs: PathBuf,
    pub lambda_um: Option<f64>,
    pub gamma: Option<f64>,
    pub pixel_area_um2: Option<f64>,
    pub window_h: Option<f64>,
    pub frame_interval_h: Option<f64>,
    pub out: PathBuf,
}

pub fn analyze(a: AnalyzeArgs, cfg: &mut RunConfig) -> Result<Outcome, CliError> {
    let sec = &mut cfg.analyze;
    let base = sec.optics;
    let pick = |flag: Option<f64>, from_cfg: Option<f64>, name: &str| {
        flag.or(from_cfg)
            .ok_or_else(|| invalid(format!("{name} is required (flag or analyze.optics in the config)")))
    };
    let optics = Optics {
        wavelength_um: pick(a.lambda_um, base.map(|o| o.wavelength_um), "--lambda-um")?,
        refractive_increment_ml_per_g: pick(a.gamma, base.map(|o| o.refractive_increment_ml_per_g), "--gamma")?,
        pixel_area_um2: pick(a.pixel_area_um2, base.map(|o| o.pixel_area_um2), "--pixel-area-um2")?,
    };
    optics.validate()?;
    sec.optics = Some(optics);
    if let Some(w) = a.window_h {
        sec.window_hours = w;
    }
    if let Some(f) = a.frame_interval_h {
        sec.frame_interval_hours = f;
    }
    if !(sec.frame_interval_hours > 0.0) {
        return Err(invalid("frame interval must be positive"));
    }
    let (seqs, mut inputs) = phase_sequences(&a.seq, sec.frame_interval_hours)?;
    let mut series: Vec<GrowthSeries> = Vec::new();
    for seq in &seqs {
        let segs = (0..seq.frames().len())
            .map(|k| {
                let p = a.segs.join(format!("{}_seg.tif", frame_stem(seq, k)));
                inputs.push(p.clone());
                SegmentationMap::load(&p).map_err(CliError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;
        series.push(growth_series(seq, &segs, &optics, sec.window_hours)?);
    }
    let outputs = emit_report(&series, &a.out)?;
    Ok(Outcome { inputs, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_names() {
        assert_eq!(parse_loss("l1+pearson"), Ok(LossKind::L1Pearson));
        assert_eq!(parse_loss("L1_GAN"), Ok(LossKind::L1Gan));
        assert_eq!(parse_loss("l1"), Ok(LossKind::L1));
        assert!(parse_loss("l2").is_err());
    }

    #[test]
    fn frame_suffixes() {
        assert_eq!(frame_index(Path::new("a/stack_2.tif")), Some(2));
        assert_eq!(frame_index(Path::new("a/stack.tif")), None);
    }
}
