//! Optimization loop: Adam updates, per-epoch validation, best-ρ checkpoints.

mod adam;

pub use adam::{adam_step, AdamConfig, AdamState};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_pair, Channel, DatasetManifest, Split};
use crate::error::{PicsError, Result};
use crate::imagecore::{crop_window, RasterImage};
use crate::infer::{label_at_working, predict_native, to_working};
use crate::losses::{
    absorb_disc_stats, build_discriminator, disc_backward, disc_forward, gan_objectives, l1_loss, pearson_loss,
    pearson_per_item, DiscConfig, LossConfig, LossKind, LossParts,
};
use crate::nn::{
    absorb_batch_stats, backward, build_unet, forward, Checkpoint, CheckpointInfo, Mode, ModelParams,
    NormalizationStats, Tensor4, UNetConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Z-score phase inputs with training-set statistics.
    pub normalize_inputs: bool,
    /// Z-score labels likewise; predictions are mapped back at inference.
    pub normalize_targets: bool,
    /// 2×2 mean-pool steps applied to phase and labels before training.
    pub input_downsample: u32,
    /// Side of the random square patch drawn per field and epoch; `None`
    /// trains on whole (padded) images.
    pub patch_size: Option<usize>,
    pub discriminator: DiscConfig,
    /// Written whenever validation ρ improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Rewritten after every epoch.
    pub history_csv: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 50,
            batch_size: 1,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            loss: LossConfig::default(),
            seed: 0,
            normalize_inputs: true,
            normalize_targets: true,
            input_downsample: 0,
            patch_size: None,
            discriminator: DiscConfig::default(),
            checkpoint_path: None,
            history_csv: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &UNetConfig) -> Result<()> {
        net.validate()?;
        self.loss.validate()?;
        let bad = |m: String| Err(PicsError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if let Some(p) = self.patch_size {
            if p == 0 || p % net.divisor() != 0 {
                return bad(format!("patch size {p} is not a multiple of {}", net.divisor()));
            }
        }
        if net.out_channels != 1 || net.in_channels != 1 {
            return bad("training expects one phase channel and one label channel".into());
        }
        if self.loss.kind == LossKind::L1Gan {
            self.discriminator.validate()?;
            if self.discriminator.in_channels != 2 {
                return bad("discriminator must see phase plus one label channel".into());
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One co-registered training field.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub field_id: String,
    pub phase: RasterImage,
    pub label: RasterImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_l1: f64,
    /// Mean `1 − ρ` over training items with a non-constant label.
    pub train_rho_loss: Option<f64>,
    pub train_gan_g: Option<f64>,
    pub train_gan_d: Option<f64>,
    pub val_l1: Option<f64>,
    pub val_rho: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Equality of every logged metric, ignoring wall time.
    pub fn same_metrics(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| EpochRecord { seconds: 0.0, ..a.clone() } == EpochRecord { seconds: 0.0, ..b.clone() })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| PicsError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub mean_l1: f64,
    pub mean_rho: f64,
    pub per_field_rho: Vec<(String, f64)>,
}

struct Prepared {
    phase: RasterImage,
    label: RasterImage,
}

fn mean_std(imgs: &[&RasterImage]) -> (f64, f64) {
    let n: usize = imgs.iter().map(|i| i.pixels().len()).sum();
    let mean = imgs.iter().flat_map(|i| i.pixels()).sum::<f64>() / n as f64;
    let var = imgs.iter().flat_map(|i| i.pixels()).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

/// Reconstruction loss with per-item Pearson terms; items whose label is
/// constant contribute only to L1.
fn objective(pred: &Tensor4, target: &Tensor4, cfg: &LossConfig) -> Result<(LossParts, Tensor4, Option<f64>)> {
    let (l1, mut grad) = l1_loss(pred, target)?;
    let mut parts = LossParts {
        l1,
        total: l1,
        ..Default::default()
    };
    let valid: Vec<usize> = (0..target.batch())
        .filter(|&n| {
            let t = target.item(n);
            t.iter().any(|&v| v != t[0])
        })
        .collect();
    if valid.is_empty() {
        return Ok((parts, grad, None));
    }
    let mut rho_loss = 0.0;
    let w = 1.0 / valid.len() as f64;
    for &n in &valid {
        let (pl, pg) = pearson_loss(&pred.slice_batch(n, n + 1), &target.slice_batch(n, n + 1))?;
        rho_loss += w * pl;
        if cfg.kind == LossKind::L1Pearson {
            for (g, d) in grad.item_mut(n).iter_mut().zip(pg.data()) {
                *g += cfg.pearson_weight * w * d;
            }
        }
    }
    if cfg.kind == LossKind::L1Pearson {
        parts.pearson = Some(1.0 - rho_loss);
        parts.total += cfg.pearson_weight * rho_loss;
    }
    Ok((parts, grad, Some(rho_loss)))
}

/// Mean L1 and per-field ρ of `ckpt` on `pairs`, both at the checkpoint's
/// working resolution.
pub fn evaluate_pairs(ckpt: &Checkpoint, pairs: &[TrainingPair]) -> Result<ValidationMetrics> {
    if pairs.is_empty() {
        return Err(PicsError::EmptySplit("no fields to evaluate".into()));
    }
    let scored = pairs
        .par_iter()
        .map(|pair| {
            let pred = predict_native(ckpt, &pair.phase)?.swap_remove(0);
            let label = label_at_working(&pair.label, ckpt.info.input_downsample)?;
            let (p, t) = (Tensor4::from_rasters(&[&pred])?, Tensor4::from_rasters(&[&label])?);
            Ok((l1_loss(&p, &t)?.0, (pair.field_id.clone(), pearson_per_item(&p, &t)?[0])))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pairs.len() as f64;
    let l1: f64 = scored.iter().map(|s| s.0).sum();
    let per_field_rho: Vec<(String, f64)> = scored.into_iter().map(|s| s.1).collect();
    Ok(ValidationMetrics {
        mean_l1: l1 / n,
        mean_rho: per_field_rho.iter().map(|(_, r)| r).sum::<f64>() / n,
        per_field_rho,
    })
}

fn batch_tensor(imgs: &[RasterImage]) -> Result<Tensor4> {
    let refs: Vec<&RasterImage> = imgs.iter().collect();
    Tensor4::from_rasters(&refs)
}

fn non_finite(step: usize, batch: usize, parts: &LossParts, d: Option<f64>) -> PicsError {
    PicsError::NonFiniteLoss {
        step,
        batch,
        components: format!(
            "l1={} rho={:?} gan_g={:?} gan_d={:?} total={}",
            parts.l1, parts.pearson, parts.gan, d, parts.total
        ),
    }
}

struct GanState {
    params: ModelParams,
    adam: AdamState,
}

/// Trains one single-channel network on in-memory pairs.
///
/// `val` may be empty, in which case the final weights are returned;
/// otherwise the returned checkpoint is the one with the best validation ρ.
pub fn train_on_samples(
    train: &[TrainingPair],
    val: &[TrainingPair],
    channel: &str,
    net_cfg: &UNetConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate(net_cfg)?;
    if train.is_empty() {
        return Err(PicsError::EmptySplit(format!("no training fields for {channel}")));
    }
    let k = cfg.input_downsample;
    let prepared = train
        .iter()
        .map(|p| {
            p.phase.ensure_same_dims(&p.label)?;
            Ok(Prepared {
                phase: to_working(&p.phase, k, net_cfg.divisor())?,
                label: to_working(&p.label, k, net_cfg.divisor())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(ps) = cfg.patch_size {
        if let Some(small) = prepared.iter().find(|p| p.phase.dims().0 < ps || p.phase.dims().1 < ps) {
            return Err(PicsError::InvalidConfig(format!(
                "patch size {ps} exceeds working image {:?}",
                small.phase.dims()
            )));
        }
    }
    let phases: Vec<&RasterImage> = prepared.iter().map(|p| &p.phase).collect();
    let labels: Vec<&RasterImage> = prepared.iter().map(|p| &p.label).collect();
    let (im, is) = if cfg.normalize_inputs { mean_std(&phases) } else { (0.0, 1.0) };
    let (tm, ts) = if cfg.normalize_targets { mean_std(&labels) } else { (0.0, 1.0) };
    let normalization = NormalizationStats {
        input_mean: im,
        input_std: is,
        target_mean: vec![tm],
        target_std: vec![ts],
    };

    let mut params = build_unet(net_cfg, cfg.seed)?;
    let mut opt = AdamState::new(params.params());
    let adam = cfg.adam();
    let mut gan = if cfg.loss.kind == LossKind::L1Gan {
        let p = build_discriminator(&cfg.discriminator, cfg.seed.wrapping_add(1))?;
        let adam = AdamState::new(p.params());
        Some(GanState { params: p, adam })
    } else {
        None
    };
    let info = CheckpointInfo {
        channels: vec![channel.to_string()],
        input_downsample: k,
        epoch: 0,
        val_pearson: None,
        loss: serde_json::to_value(cfg.loss.kind)?.as_str().unwrap_or_default().to_string(),
        seed: cfg.seed,
        train_config: serde_json::to_value(cfg)?,
    };
    let snapshot = |params: &ModelParams, epoch: usize, rho: Option<f64>| {
        let mut c = Checkpoint {
            config: net_cfg.clone(),
            params: params.clone(),
            normalization: normalization.clone(),
            info: CheckpointInfo {
                epoch,
                val_pearson: rho,
                ..info.clone()
            },
        };
        c.round_to_f32();
        c
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum_l1, mut sum_rho, mut n_rho, mut sum_g, mut sum_d, mut n_steps) = (0.0, 0.0, 0usize, 0.0, 0.0, 0usize);
        for (batch_id, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (ph, lb) = (&prepared[i].phase, &prepared[i].label);
                let (ph, lb) = match cfg.patch_size {
                    Some(ps) => {
                        let (h, w) = ph.dims();
                        let top = rng.random_range(0..=h - ps);
                        let left = rng.random_range(0..=w - ps);
                        (crop_window(ph, top, left, ps, ps), crop_window(lb, top, left, ps, ps))
                    }
                    None => (ph.clone(), lb.clone()),
                };
                xs.push(ph.map(|v| (v - im) / is));
                ys.push(lb.map(|v| (v - tm) / ts));
            }
            let x = batch_tensor(&xs)?;
            let y = batch_tensor(&ys)?;
            step += 1;

            let (pred, cache) = forward(&params, net_cfg, &x, Mode::Train)?;
            let cache = cache.expect("train mode returns a cache");
            let (mut parts, mut grad, rho_loss) = objective(&pred, &y, &cfg.loss)?;
            let mut d_loss = None;
            if let Some(g) = gan.as_mut() {
                let dcfg = &cfg.discriminator;
                let (sr, cr) = disc_forward(&g.params, dcfg, &x, &y, Mode::Train)?;
                let (sf, cf) = disc_forward(&g.params, dcfg, &x, &pred, Mode::Train)?;
                let obj = gan_objectives(&sr, &sf)?;
                d_loss = Some(obj.d_loss);
                if !obj.d_loss.is_finite() {
                    return Err(non_finite(step, batch_id, &parts, d_loss));
                }
                let (cr, cf) = (cr.expect("train cache"), cf.expect("train cache"));
                let mut dg = disc_backward(&g.params, dcfg, &cr, &obj.d_grad_real)?.params;
                let gf = disc_backward(&g.params, dcfg, &cf, &obj.d_grad_fake)?.params;
                for (a, b) in dg.iter_mut().zip(&gf) {
                    a.values.iter_mut().zip(&b.values).for_each(|(u, v)| *u += v);
                }
                absorb_disc_stats(&mut g.params, dcfg, &cr)?;
                absorb_disc_stats(&mut g.params, dcfg, &cf)?;
                adam_step(g.params.params_mut(), &dg, &mut g.adam, &adam)?;

                let (sf2, cf2) = disc_forward(&g.params, dcfg, &x, &pred, Mode::Train)?;
                let gobj = gan_objectives(&sf2, &sf2)?;
                let gg = disc_backward(&g.params, dcfg, &cf2.expect("train cache"), &gobj.g_grad_fake)?.candidate;
                for (a, b) in grad.data_mut().iter_mut().zip(gg.data()) {
                    *a += cfg.loss.gan_weight * b;
                }
                parts.gan = Some(gobj.g_loss);
                parts.total += cfg.loss.gan_weight * gobj.g_loss;
            }
            if !parts.total.is_finite() || !grad.all_finite() {
                return Err(non_finite(step, batch_id, &parts, d_loss));
            }
            let grads = backward(&params, net_cfg, &cache, &grad)?;
            if grads.params.iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
                return Err(non_finite(step, batch_id, &parts, d_loss));
            }
            absorb_batch_stats(&mut params, net_cfg, &cache)?;
            adam_step(params.params_mut(), &grads.params, &mut opt, &adam)?;

            sum_l1 += parts.l1;
            if let Some(r) = rho_loss {
                sum_rho += r;
                n_rho += 1;
            }
            sum_g += parts.gan.unwrap_or(0.0);
            sum_d += d_loss.unwrap_or(0.0);
            n_steps += 1;
        }

        let (val_l1, val_rho) = if val.is_empty() {
            (None, None)
        } else {
            let m = evaluate_pairs(&snapshot(&params, epoch, None), val)?;
            (Some(m.mean_l1), Some(m.mean_rho))
        };
        if let Some(r) = val_rho {
            if best.as_ref().is_none_or(|b| b.info.val_pearson.is_some_and(|br| r > br)) {
                let ckpt = snapshot(&params, epoch, Some(r));
                if let Some(path) = &cfg.checkpoint_path {
                    ckpt.save(path)?;
                }
                best = Some(ckpt);
            }
        }
        let ns = n_steps as f64;
        let record = EpochRecord {
            epoch,
            train_l1: sum_l1 / ns,
            train_rho_loss: (n_rho > 0).then(|| sum_rho / n_rho as f64),
            train_gan_g: gan.as_ref().map(|_| sum_g / ns),
            train_gan_d: gan.as_ref().map(|_| sum_d / ns),
            val_l1,
            val_rho,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{channel} epoch {epoch}: train_l1 {:.5} val_rho {:?} ({:.1} s)",
            record.train_l1,
            record.val_rho,
            record.seconds
        );
        history.records.push(record);
        if let Some(path) = &cfg.history_csv {
            history.write_csv(path)?;
        }
    }
    let out = match best {
        Some(b) => b,
        None => {
            let last = snapshot(&params, cfg.epochs, None);
            if let Some(path) = &cfg.checkpoint_path {
                last.save(path)?;
            }
            last
        }
    };
    Ok((out, history))
}

fn load_pairs(manifest: &DatasetManifest, split: Split, channel: Channel) -> Result<Vec<TrainingPair>> {
    manifest
        .labelled(split, channel)
        .into_iter()
        .map(|r| {
            let (phase, label) = load_pair(r, channel)?;
            Ok(TrainingPair {
                field_id: r.field_id.clone(),
                phase,
                label,
            })
        })
        .collect()
}

/// Trains the network for one stain from the manifest's train and val splits.
pub fn train_model(
    manifest: &DatasetManifest,
    channel: Channel,
    net_cfg: &UNetConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    let train = load_pairs(manifest, Split::Train, channel)?;
    if train.is_empty() {
        return Err(PicsError::EmptySplit(format!("train split has no {channel} ground truth")));
    }
    let val = load_pairs(manifest, Split::Val, channel)?;
    if val.is_empty() {
        log::warn!("val split has no {channel} ground truth; keeping the final weights");
    }
    train_on_samples(&train, &val, channel.as_str(), net_cfg, cfg)
}

fn checkpoint_channel(ckpt: &Checkpoint) -> Result<Channel> {
    let name = ckpt
        .info
        .channels
        .first()
        .ok_or_else(|| PicsError::CheckpointMismatch("checkpoint names no output channel".into()))?;
    name.parse()
}

/// Metrics of `ckpt` on one split of the manifest, for the stain named in
/// the checkpoint.
pub fn validate(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<ValidationMetrics> {
    let channel = checkpoint_channel(ckpt)?;
    let pairs = load_pairs(manifest, split, channel)?;
    if pairs.is_empty() {
        return Err(PicsError::EmptySplit(format!("{split:?} split has no {channel} ground truth")));
    }
    evaluate_pairs(ckpt, &pairs)
}

/// Untrained (zero-head) network for `channel`: predicts the phase itself,
/// clamped at zero. Its validation ρ is the baseline a trained model must beat.
pub fn identity_checkpoint(net_cfg: &UNetConfig, channel: Channel, input_downsample: u32) -> Result<Checkpoint> {
    let mut c = Checkpoint::identity(net_cfg.clone(), NormalizationStats::identity(net_cfg.out_channels))?;
    c.info.channels = vec![channel.as_str().to_string()];
    c.info.input_downsample = input_downsample;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_phantom, PhantomConfig};

    fn pairs(n: usize, size: usize, seed: u64) -> Vec<TrainingPair> {
        (0..n)
            .map(|i| {
                let s = synth_phantom(
                    &PhantomConfig {
                        size,
                        n_cells: 1,
                        seed,
                        ..Default::default()
                    }
                    .for_sample(i),
                )
                .unwrap();
                TrainingPair {
                    field_id: format!("f{i}"),
                    phase: s.phase,
                    label: s.map2,
                }
            })
            .collect()
    }

    fn tiny_net() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn constant_labels_only_feed_l1() {
        let pred = Tensor4::new([2, 1, 1, 3], vec![0.1, 0.5, 0.2, 1.0, 2.0, 4.0]).unwrap();
        let target = Tensor4::new([2, 1, 1, 3], vec![0.0, 0.0, 0.0, 1.0, 3.0, 2.0]).unwrap();
        let cfg = LossConfig::default();
        let (parts, grad, rho) = objective(&pred, &target, &cfg).unwrap();
        let (l1, g1) = l1_loss(&pred, &target).unwrap();
        assert_eq!(&grad.data()[..3], &g1.data()[..3]);
        let (pl, _) = pearson_loss(&pred.slice_batch(1, 2), &target.slice_batch(1, 2)).unwrap();
        assert_eq!(rho, Some(pl));
        assert!((parts.total - (l1 + 0.2 * pl)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_history_and_best_checkpoint() {
        let train = pairs(2, 32, 5);
        let val = pairs(1, 32, 50);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-3,
            seed: 9,
            patch_size: Some(16),
            ..Default::default()
        };
        let (a, ha) = train_on_samples(&train, &val, "map2", &tiny_net(), &cfg).unwrap();
        let (b, hb) = train_on_samples(&train, &val, "map2", &tiny_net(), &cfg).unwrap();
        assert!(ha.same_metrics(&hb));
        assert_eq!(a.params, b.params);
        assert_eq!(ha.records.len(), 3);
        let best = ha.records.iter().filter_map(|r| r.val_rho).fold(f64::MIN, f64::max);
        assert_eq!(a.info.val_pearson, Some(best));
        assert_eq!(evaluate_pairs(&a, &val).unwrap().mean_rho, best);
    }

    #[test]
    fn gan_path_trains_and_rejects_bad_configs() {
        let train = pairs(2, 32, 1);
        let mut cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            loss: LossConfig {
                kind: LossKind::L1Gan,
                ..Default::default()
            },
            discriminator: DiscConfig {
                channels: vec![2, 2],
                ..Default::default()
            },
            ..Default::default()
        };
        let (_, h) = train_on_samples(&train, &[], "tau", &tiny_net(), &cfg).unwrap();
        assert!(h.records[0].train_gan_d.is_some() && h.records[0].val_rho.is_none());
        cfg.lr = 0.0;
        assert!(train_on_samples(&train, &[], "tau", &tiny_net(), &cfg).is_err());
        cfg.lr = 1e-4;
        cfg.patch_size = Some(6);
        assert!(train_on_samples(&train, &[], "tau", &tiny_net(), &cfg).is_err());
        assert!(matches!(
            train_on_samples(&[], &[], "tau", &tiny_net(), &TrainConfig::default()),
            Err(PicsError::EmptySplit(_))
        ));
    }

    #[test]
    fn exact_predictor_scores_perfectly() {
        // noiseless phantom with non-negative phase: identity output is the phase
        let s = synth_phantom(&PhantomConfig {
            size: 32,
            n_cells: 1,
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let pair = TrainingPair {
            field_id: "f".into(),
            phase: s.phase.clone(),
            label: s.phase.clone(),
        };
        let c = identity_checkpoint(&tiny_net(), Channel::Tau, 0).unwrap();
        let m = evaluate_pairs(&c, &[pair]).unwrap();
        assert_eq!(m.mean_l1, 0.0);
        assert!((m.mean_rho - 1.0).abs() < 1e-12);
    }
}
