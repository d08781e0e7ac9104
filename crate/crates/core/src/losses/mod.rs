//! Training objectives: L1, L1 + Pearson correlation, and L1 + adversarial.

mod disc;

pub use disc::{
    absorb_disc_stats, build_discriminator, disc_backward, disc_forward, discriminate, DiscCache, DiscConfig,
    DiscGradients,
};

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::nn::Tensor4;

/// Floor on the prediction variance inside the correlation denominator.
pub const PEARSON_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    #[default]
    L1Pearson,
    L1Gan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub pearson_weight: f64,
    pub gan_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::L1Pearson,
            pearson_weight: 0.2,
            gan_weight: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("pearson_weight", self.pearson_weight), ("gan_weight", self.gan_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(PicsError::InvalidConfig(format!("{name} = {w} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn check_dims(pred: &Tensor4, target: &Tensor4) -> Result<()> {
    pred.ensure_dims(target)
}

/// Mean absolute error and its gradient `sign(pred − target) / N`.
pub fn l1_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    check_dims(pred, target)?;
    let n = pred.len() as f64;
    let mut grad = Tensor4::zeros(pred.dims());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

struct ItemCorrelation {
    rho: f64,
    /// dρ/dpred over the item's elements.
    grad: Vec<f64>,
}

fn correlate(p: &[f64], t: &[f64]) -> Result<ItemCorrelation> {
    let m = p.len() as f64;
    let pm = p.iter().sum::<f64>() / m;
    let tm = t.iter().sum::<f64>() / m;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(t) {
        let (da, db) = (a - pm, b - tm);
        cov += da * db;
        vp += da * da;
        vt += db * db;
    }
    cov /= m;
    vp /= m;
    vt /= m;
    if vt == 0.0 {
        return Err(PicsError::ConstantTarget);
    }
    let floored = vp < PEARSON_EPS;
    let vp_eff = vp.max(PEARSON_EPS);
    let den = (vp_eff * vt).sqrt();
    let rho = cov / den;
    let grad = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let from_cov = (b - tm) / (m * den);
            if floored {
                from_cov
            } else {
                from_cov - rho * (a - pm) / (m * vp_eff)
            }
        })
        .collect();
    Ok(ItemCorrelation { rho, grad })
}

/// Pearson ρ of every batch item, computed over all its channels and pixels.
pub fn pearson_per_item(pred: &Tensor4, target: &Tensor4) -> Result<Vec<f64>> {
    check_dims(pred, target)?;
    (0..pred.batch())
        .map(|n| correlate(pred.item(n), target.item(n)).map(|c| c.rho))
        .collect()
}

/// `1 − ρ` averaged over the batch, with its analytic gradient.
pub fn pearson_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    check_dims(pred, target)?;
    let nb = pred.batch() as f64;
    let mut grad = Tensor4::zeros(pred.dims());
    let mut loss = 0.0;
    for n in 0..pred.batch() {
        let c = correlate(pred.item(n), target.item(n))?;
        loss += (1.0 - c.rho) / nb;
        for (g, d) in grad.item_mut(n).iter_mut().zip(&c.grad) {
            *g = -d / nb;
        }
    }
    Ok((loss, grad))
}

/// Components of a generator objective, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    /// Mean ρ over the batch (when computed).
    pub pearson: Option<f64>,
    pub gan: Option<f64>,
    pub total: f64,
}

/// Reconstruction objective selected by `cfg.kind`.
///
/// `l1_pearson` gives `L1 + λ_ρ·(1 − ρ)`; `l1` and `l1_gan` give plain L1
/// (the adversarial term needs a discriminator and is added by the trainer).
pub fn combined_loss(pred: &Tensor4, target: &Tensor4, cfg: &LossConfig) -> Result<(f64, Tensor4)> {
    let (parts, grad) = combined_loss_parts(pred, target, cfg)?;
    Ok((parts.total, grad))
}

pub fn combined_loss_parts(pred: &Tensor4, target: &Tensor4, cfg: &LossConfig) -> Result<(LossParts, Tensor4)> {
    cfg.validate()?;
    let (l1, mut grad) = l1_loss(pred, target)?;
    let mut parts = LossParts {
        l1,
        total: l1,
        ..Default::default()
    };
    if cfg.kind == LossKind::L1Pearson {
        let (pl, pg) = pearson_loss(pred, target)?;
        parts.pearson = Some(1.0 - pl);
        parts.total += cfg.pearson_weight * pl;
        for (g, p) in grad.data_mut().iter_mut().zip(pg.data()) {
            *g += cfg.pearson_weight * p;
        }
    }
    Ok((parts, grad))
}

#[derive(Debug, Clone)]
pub struct GanObjectives {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_grad_real: Tensor4,
    pub d_grad_fake: Tensor4,
    pub g_grad_fake: Tensor4,
}

/// Least-squares adversarial losses:
/// `d = ½·mean((real − 1)²) + ½·mean(fake²)`, `g = ½·mean((fake − 1)²)`.
pub fn gan_objectives(scores_real: &Tensor4, scores_fake: &Tensor4) -> Result<GanObjectives> {
    check_dims(scores_fake, scores_real)?;
    let m = scores_real.len() as f64;
    let mut d_loss = 0.0;
    let mut g_loss = 0.0;
    let mut dr = Tensor4::zeros(scores_real.dims());
    let mut df = Tensor4::zeros(scores_fake.dims());
    let mut gf = Tensor4::zeros(scores_fake.dims());
    for (i, (&r, &f)) in scores_real.data().iter().zip(scores_fake.data()).enumerate() {
        d_loss += 0.5 * ((r - 1.0) * (r - 1.0) + f * f) / m;
        g_loss += 0.5 * (f - 1.0) * (f - 1.0) / m;
        dr.data_mut()[i] = (r - 1.0) / m;
        df.data_mut()[i] = f / m;
        gf.data_mut()[i] = (f - 1.0) / m;
    }
    Ok(GanObjectives {
        d_loss,
        g_loss,
        d_grad_real: dr,
        d_grad_fake: df,
        g_grad_fake: gf,
    })
}
