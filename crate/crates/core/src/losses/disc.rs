//! Conditional PatchGAN discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{PicsError, Result};
use crate::nn::ops::{concat_channels, split_channels, Activation, ConvSpec};
use crate::nn::{Init, Mode, ModelParams, ParamBuilder, ParamTensor, Tensor4, Unit, UnitCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    /// Output channels of the stride-2 blocks.
    pub channels: Vec<usize>,
    /// Phase channels plus label channels.
    pub in_channels: usize,
    pub leaky_slope: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256, 512],
            in_channels: 2,
            leaky_slope: 0.2,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.in_channels < 2 {
            return Err(PicsError::InvalidConfig(format!("discriminator {self:?}")));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(PicsError::InvalidConfig(format!("leaky slope {}", self.leaky_slope)));
        }
        Ok(())
    }

    /// Spatial reduction of the score map.
    pub fn stride(&self) -> usize {
        1 << self.channels.len()
    }

    /// Input pixels seen by one score (per axis).
    pub fn receptive_field(&self) -> usize {
        let (mut rf, mut jump) = (1, 1);
        for _ in &self.channels {
            rf += 3 * jump;
            jump *= 2;
        }
        rf + 2 * jump
    }
}

struct Layout {
    units: Vec<Unit>,
    builder: ParamBuilder,
}

fn layout(cfg: &DiscConfig) -> Result<Layout> {
    cfg.validate()?;
    let mut b = ParamBuilder::default();
    let mut units = Vec::with_capacity(cfg.channels.len() + 1);
    let mut ci = cfg.in_channels;
    for (i, &co) in cfg.channels.iter().enumerate() {
        let spec = ConvSpec {
            in_ch: ci,
            out_ch: co,
            kernel: 4,
            stride: 2,
            pad: 1,
        };
        let bn = i > 0;
        units.push(b.unit(
            &format!("disc{i}"),
            spec,
            !bn,
            bn,
            Activation::LeakyRelu(cfg.leaky_slope),
            Init::He,
        ));
        ci = co;
    }
    units.push(b.unit(
        "disc_out",
        ConvSpec::same3(ci, 1),
        true,
        false,
        Activation::Identity,
        Init::He,
    ));
    Ok(Layout { units, builder: b })
}

pub fn build_discriminator(cfg: &DiscConfig, init_seed: u64) -> Result<ModelParams> {
    Ok(layout(cfg)?.builder.build(init_seed))
}

pub struct DiscCache {
    config: DiscConfig,
    version: u64,
    cond_channels: usize,
    units: Vec<UnitCache>,
}

#[derive(Debug, Clone)]
pub struct DiscGradients {
    pub params: Vec<ParamTensor>,
    /// Gradient w.r.t. the candidate label channels only.
    pub candidate: Tensor4,
}

fn check(lay: &Layout, cfg: &DiscConfig, params: &ModelParams, x: &Tensor4) -> Result<()> {
    if !lay.builder.matches(params) {
        return Err(PicsError::CheckpointMismatch(
            "discriminator parameters do not match the configuration".into(),
        ));
    }
    if x.channels() != cfg.in_channels {
        return Err(PicsError::ChannelMismatch {
            expected: cfg.in_channels,
            actual: x.channels(),
        });
    }
    let (h, w) = x.spatial();
    let s = cfg.stride();
    if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
        return Err(PicsError::NonDivisible {
            dims: (h, w),
            divisor: s,
        });
    }
    Ok(())
}

/// Scores `candidate` conditioned on `phase`; output is `(N, 1, H/16, W/16)`
/// for four blocks.
pub fn disc_forward(
    params: &ModelParams,
    cfg: &DiscConfig,
    phase: &Tensor4,
    candidate: &Tensor4,
    mode: Mode,
) -> Result<(Tensor4, Option<DiscCache>)> {
    if phase.batch() != candidate.batch() || phase.spatial() != candidate.spatial() {
        return Err(PicsError::ShapeMismatch(format!(
            "phase {:?} vs candidate {:?}",
            phase.dims(),
            candidate.dims()
        )));
    }
    let x = concat_channels(phase, candidate);
    let lay = layout(cfg)?;
    check(&lay, cfg, params, &x)?;
    let mut caches = Vec::new();
    let mut h = x;
    for u in &lay.units {
        let (y, c) = u.forward(params, h, mode);
        caches.extend(c);
        h = y;
    }
    let cache = (mode == Mode::Train).then(|| DiscCache {
        config: cfg.clone(),
        version: params.version(),
        cond_channels: phase.channels(),
        units: caches,
    });
    Ok((h, cache))
}

/// Train-mode scores (batch statistics); a pure function of its inputs.
pub fn discriminate(params: &ModelParams, cfg: &DiscConfig, phase: &Tensor4, candidate: &Tensor4) -> Result<Tensor4> {
    Ok(disc_forward(params, cfg, phase, candidate, Mode::Train)?.0)
}

pub fn disc_backward(
    params: &ModelParams,
    cfg: &DiscConfig,
    cache: &DiscCache,
    dscores: &Tensor4,
) -> Result<DiscGradients> {
    if cache.config != *cfg {
        return Err(PicsError::StaleCache("cache built for a different configuration"));
    }
    if cache.version != params.version() {
        return Err(PicsError::StaleCache("parameters changed since the forward pass"));
    }
    let lay = layout(cfg)?;
    let mut grads = params.zeros_like();
    let mut d = dscores.clone();
    for (u, c) in lay.units.iter().zip(&cache.units).rev() {
        d = u.backward(params, c, d, &mut grads, true).expect("input gradient requested");
    }
    let (_, candidate) = split_channels(&d, cache.cond_channels);
    Ok(DiscGradients {
        params: grads,
        candidate,
    })
}

/// Folds batch statistics into the running buffers.
pub fn absorb_disc_stats(params: &mut ModelParams, cfg: &DiscConfig, cache: &DiscCache) -> Result<()> {
    let lay = layout(cfg)?;
    for (u, c) in lay.units.iter().zip(&cache.units) {
        u.absorb_stats(params, c);
    }
    Ok(())
}
