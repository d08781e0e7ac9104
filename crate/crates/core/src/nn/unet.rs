//! U-Net generator with skip concatenations and a global input add.

use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, ConvSpec};
use super::params::{Init, Mode, ModelParams, ParamBuilder, ParamTensor, Unit, UnitCache};
use super::tensor::Tensor4;
use crate::error::{PicsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    /// Nearest-neighbour ×2 upsampling followed by a 3×3 conv.
    #[default]
    NearestConv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub use_batchnorm: bool,
    pub global_add: bool,
    pub up_mode: UpMode,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            in_channels: 1,
            out_channels: 1,
            use_batchnorm: true,
            global_add: true,
            up_mode: UpMode::NearestConv,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PicsError::InvalidConfig(m));
        if self.depth == 0 || self.depth > 10 {
            return bad(format!("depth {} outside 1..=10", self.depth));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.global_add && self.in_channels != 1 && self.in_channels != self.out_channels {
            return bad(format!(
                "global add needs 1 input channel or in == out (got {} -> {})",
                self.in_channels, self.out_channels
            ));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

struct DecoderLevel {
    up: Unit,
    conv: [Unit; 2],
}

struct Layout {
    encoder: Vec<[Unit; 2]>,
    bottleneck: [Unit; 2],
    /// Indexed by level; executed deepest first.
    decoder: Vec<DecoderLevel>,
    head: Unit,
    builder: ParamBuilder,
}

fn layout(cfg: &UNetConfig) -> Result<Layout> {
    cfg.validate()?;
    let mut b = ParamBuilder::default();
    let bn = cfg.use_batchnorm;
    let bias = !bn;
    let unit = |b: &mut ParamBuilder, name: String, ci: usize, co: usize| {
        b.unit(&name, ConvSpec::same3(ci, co), bias, bn, Activation::Relu, Init::He)
    };
    let mut encoder = Vec::with_capacity(cfg.depth);
    let mut ci = cfg.in_channels;
    for l in 0..cfg.depth {
        let co = cfg.width(l);
        encoder.push([
            unit(&mut b, format!("enc{l}.conv1"), ci, co),
            unit(&mut b, format!("enc{l}.conv2"), co, co),
        ]);
        ci = co;
    }
    let mid = cfg.width(cfg.depth);
    let bottleneck = [
        unit(&mut b, "mid.conv1".into(), ci, mid),
        unit(&mut b, "mid.conv2".into(), mid, mid),
    ];
    let mut decoder: Vec<Option<DecoderLevel>> = (0..cfg.depth).map(|_| None).collect();
    for l in (0..cfg.depth).rev() {
        let (wide, co) = (cfg.width(l + 1), cfg.width(l));
        decoder[l] = Some(DecoderLevel {
            up: unit(&mut b, format!("dec{l}.up"), wide, co),
            conv: [
                unit(&mut b, format!("dec{l}.conv1"), 2 * co, co),
                unit(&mut b, format!("dec{l}.conv2"), co, co),
            ],
        });
    }
    let head = b.unit(
        "head",
        ConvSpec {
            in_ch: cfg.base_channels,
            out_ch: cfg.out_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
        },
        true,
        false,
        Activation::Identity,
        Init::Zero,
    );
    Ok(Layout {
        encoder,
        bottleneck,
        decoder: decoder.into_iter().map(|d| d.expect("every level built")).collect(),
        head,
        builder: b,
    })
}

/// Allocates and initializes the generator's parameters.
pub fn build_unet(cfg: &UNetConfig, init_seed: u64) -> Result<ModelParams> {
    Ok(layout(cfg)?.builder.build(init_seed))
}

/// Intermediates of a train-mode forward pass.
pub struct ForwardCache {
    config: UNetConfig,
    version: u64,
    input_dims: [usize; 4],
    encoder: Vec<[UnitCache; 2]>,
    pools: Vec<([usize; 4], Vec<u32>)>,
    bottleneck: [UnitCache; 2],
    decoder: Vec<Option<(UnitCache, [UnitCache; 2])>>,
    head: UnitCache,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same names and order as [`ModelParams::params`].
    pub params: Vec<ParamTensor>,
    pub input: Tensor4,
}

/// Feature map recorded at one block output.
#[derive(Debug, Clone)]
pub struct LayerActivation {
    pub name: String,
    pub tensor: Tensor4,
    pub channel_min: Vec<f64>,
    pub channel_max: Vec<f64>,
}

fn check_input(cfg: &UNetConfig, x: &Tensor4) -> Result<()> {
    if x.channels() != cfg.in_channels {
        return Err(PicsError::ChannelMismatch {
            expected: cfg.in_channels,
            actual: x.channels(),
        });
    }
    let (h, w) = x.spatial();
    let d = cfg.divisor();
    if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
        return Err(PicsError::NonDivisible {
            dims: (h, w),
            divisor: d,
        });
    }
    Ok(())
}

fn check_params(lay: &Layout, params: &ModelParams) -> Result<()> {
    if !lay.builder.matches(params) {
        return Err(PicsError::CheckpointMismatch(
            "parameter set does not match the network configuration".into(),
        ));
    }
    Ok(())
}

fn add_input(y: &mut Tensor4, x: &Tensor4) {
    let hw = x.spatial().0 * x.spatial().1;
    let (cy, cx) = (y.channels(), x.channels());
    for n in 0..y.batch() {
        let xs = x.item(n).to_vec();
        let ys = y.item_mut(n);
        for c in 0..cy {
            let src = if cx == 1 { &xs[..hw] } else { &xs[c * hw..(c + 1) * hw] };
            for (o, v) in ys[c * hw..(c + 1) * hw].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
}

struct Pass {
    output: Tensor4,
    cache: Option<ForwardCache>,
    activations: Vec<(String, Tensor4)>,
}

fn run(params: &ModelParams, cfg: &UNetConfig, x: &Tensor4, mode: Mode, record: bool) -> Result<Pass> {
    let lay = layout(cfg)?;
    check_params(&lay, params)?;
    check_input(cfg, x)?;
    let train = mode == Mode::Train;
    let mut acts = Vec::new();
    let mut enc_caches = Vec::new();
    let mut pools = Vec::new();
    let mut skips = Vec::with_capacity(cfg.depth);

    let mut h = x.clone();
    for (l, [u1, u2]) in lay.encoder.iter().enumerate() {
        let (a, c1) = u1.forward(params, h, mode);
        let (a, c2) = u2.forward(params, a, mode);
        if record {
            acts.push((format!("enc{l}"), a.clone()));
        }
        let (p, arg) = ops::maxpool2_forward(&a);
        if train {
            enc_caches.push([c1.unwrap(), c2.unwrap()]);
            pools.push((a.dims(), arg));
        }
        skips.push(a);
        h = p;
    }
    let (h1, m1) = lay.bottleneck[0].forward(params, h, mode);
    let (mut h, m2) = lay.bottleneck[1].forward(params, h1, mode);
    if record {
        acts.push(("bottleneck".into(), h.clone()));
    }
    let mut dec_caches: Vec<Option<(UnitCache, [UnitCache; 2])>> = (0..cfg.depth).map(|_| None).collect();
    for l in (0..cfg.depth).rev() {
        let level = &lay.decoder[l];
        let (u, cu) = level.up.forward(params, ops::upsample2_forward(&h), mode);
        let cat = ops::concat_channels(&u, &skips[l]);
        let (a, c1) = level.conv[0].forward(params, cat, mode);
        let (a, c2) = level.conv[1].forward(params, a, mode);
        if record {
            acts.push((format!("dec{l}"), a.clone()));
        }
        if train {
            dec_caches[l] = Some((cu.unwrap(), [c1.unwrap(), c2.unwrap()]));
        }
        h = a;
    }
    let (mut y, ch) = lay.head.forward(params, h, mode);
    if cfg.global_add {
        add_input(&mut y, x);
    }
    let cache = train.then(|| ForwardCache {
        config: cfg.clone(),
        version: params.version(),
        input_dims: x.dims(),
        encoder: enc_caches,
        pools,
        bottleneck: [m1.unwrap(), m2.unwrap()],
        decoder: dec_caches,
        head: ch.unwrap(),
    });
    Ok(Pass {
        output: y,
        cache,
        activations: acts,
    })
}

/// Runs the network. Train mode normalizes with batch statistics and
/// returns a cache for [`backward`]; eval mode uses the running statistics
/// and returns no cache.
pub fn forward(
    params: &ModelParams,
    cfg: &UNetConfig,
    x: &Tensor4,
    mode: Mode,
) -> Result<(Tensor4, Option<ForwardCache>)> {
    let pass = run(params, cfg, x, mode, false)?;
    Ok((pass.output, pass.cache))
}

/// Folds the batch statistics of a train-mode pass into the running
/// buffers with momentum [`BN_MOMENTUM`](super::params::BN_MOMENTUM).
pub fn absorb_batch_stats(params: &mut ModelParams, cfg: &UNetConfig, cache: &ForwardCache) -> Result<()> {
    let lay = layout(cfg)?;
    check_params(&lay, params)?;
    if cache.config != *cfg {
        return Err(PicsError::StaleCache("cache built for a different configuration"));
    }
    for (units, caches) in lay.encoder.iter().zip(&cache.encoder) {
        units[0].absorb_stats(params, &caches[0]);
        units[1].absorb_stats(params, &caches[1]);
    }
    lay.bottleneck[0].absorb_stats(params, &cache.bottleneck[0]);
    lay.bottleneck[1].absorb_stats(params, &cache.bottleneck[1]);
    for (level, c) in lay.decoder.iter().zip(&cache.decoder) {
        let (cu, [c1, c2]) = c.as_ref().expect("train cache has every level");
        level.up.absorb_stats(params, cu);
        level.conv[0].absorb_stats(params, c1);
        level.conv[1].absorb_stats(params, c2);
    }
    Ok(())
}

/// Reverse-mode gradients of a scalar loss given `dloss_dy`.
pub fn backward(
    params: &ModelParams,
    cfg: &UNetConfig,
    cache: &ForwardCache,
    dloss_dy: &Tensor4,
) -> Result<Gradients> {
    if cache.config != *cfg {
        return Err(PicsError::StaleCache("cache built for a different configuration"));
    }
    if cache.version != params.version() {
        return Err(PicsError::StaleCache("parameters changed since the forward pass"));
    }
    let lay = layout(cfg)?;
    check_params(&lay, params)?;
    let [n, _, h, w] = cache.input_dims;
    let out_dims = [n, cfg.out_channels, h, w];
    if dloss_dy.dims() != out_dims {
        return Err(PicsError::ShapeMismatch(format!(
            "output gradient {:?}, expected {:?}",
            dloss_dy.dims(),
            out_dims
        )));
    }
    let mut grads = params.zeros_like();

    let mut dh = lay
        .head
        .backward(params, &cache.head, dloss_dy.clone(), &mut grads, true)
        .unwrap();
    let mut dskips: Vec<Option<Tensor4>> = (0..cfg.depth).map(|_| None).collect();
    for l in 0..cfg.depth {
        let level = &lay.decoder[l];
        let (cu, [c1, c2]) = cache.decoder[l].as_ref().expect("train cache has every level");
        let d = level.conv[1].backward(params, c2, dh, &mut grads, true).unwrap();
        let d = level.conv[0].backward(params, c1, d, &mut grads, true).unwrap();
        let (dup, dskip) = ops::split_channels(&d, level.up.spec.out_ch);
        dskips[l] = Some(dskip);
        let d = level.up.backward(params, cu, dup, &mut grads, true).unwrap();
        dh = ops::upsample2_backward(&d);
    }
    dh = lay.bottleneck[1]
        .backward(params, &cache.bottleneck[1], dh, &mut grads, true)
        .unwrap();
    dh = lay.bottleneck[0]
        .backward(params, &cache.bottleneck[0], dh, &mut grads, true)
        .unwrap();
    for l in (0..cfg.depth).rev() {
        let (dims, arg) = &cache.pools[l];
        let mut d = ops::maxpool2_backward(*dims, arg, &dh);
        let skip = dskips[l].take().expect("decoder visited every level");
        for (a, b) in d.data_mut().iter_mut().zip(skip.data()) {
            *a += b;
        }
        let [c1, c2] = &cache.encoder[l];
        let d = lay.encoder[l][1].backward(params, c2, d, &mut grads, true).unwrap();
        dh = lay.encoder[l][0].backward(params, c1, d, &mut grads, true).unwrap();
    }

    if cfg.global_add {
        let hw = h * w;
        for i in 0..n {
            let g = dloss_dy.item(i);
            let dx = dh.item_mut(i);
            for c in 0..cfg.out_channels {
                let dst = if cfg.in_channels == 1 {
                    &mut dx[..hw]
                } else {
                    &mut dx[c * hw..(c + 1) * hw]
                };
                for (a, b) in dst.iter_mut().zip(&g[c * hw..(c + 1) * hw]) {
                    *a += b;
                }
            }
        }
    }
    Ok(Gradients {
        params: grads,
        input: dh,
    })
}

/// Eval-mode block outputs: one per encoder level, the bottleneck, and one
/// per decoder level.
pub fn export_activations(params: &ModelParams, cfg: &UNetConfig, x: &Tensor4) -> Result<Vec<LayerActivation>> {
    let pass = run(params, cfg, x, Mode::Eval, true)?;
    Ok(pass
        .activations
        .into_iter()
        .map(|(name, tensor)| {
            let c = tensor.channels();
            let mut lo = vec![f64::INFINITY; c];
            let mut hi = vec![f64::NEG_INFINITY; c];
            for n in 0..tensor.batch() {
                for ch in 0..c {
                    for &v in tensor.plane(n, ch) {
                        lo[ch] = lo[ch].min(v);
                        hi[ch] = hi[ch].max(v);
                    }
                }
            }
            LayerActivation {
                name,
                tensor,
                channel_min: lo,
                channel_max: hi,
            }
        })
        .collect())
}

/// Normalized pre-activations of every batchnorm in a train-mode cache,
/// each with the per-channel batch variance used.
pub fn normalized_preactivations(cache: &ForwardCache) -> Result<Vec<(&Tensor4, &[f64])>> {
    let lay = layout(&cache.config)?;
    let mut pairs: Vec<(&Unit, &UnitCache)> = Vec::new();
    for (units, caches) in lay.encoder.iter().zip(&cache.encoder) {
        pairs.push((&units[0], &caches[0]));
        pairs.push((&units[1], &caches[1]));
    }
    pairs.push((&lay.bottleneck[0], &cache.bottleneck[0]));
    pairs.push((&lay.bottleneck[1], &cache.bottleneck[1]));
    for (level, c) in lay.decoder.iter().zip(&cache.decoder) {
        let (cu, [c1, c2]) = c.as_ref().expect("train cache has every level");
        pairs.push((&level.up, cu));
        pairs.push((&level.conv[0], c1));
        pairs.push((&level.conv[1], c2));
    }
    Ok(pairs.into_iter().filter_map(|(u, c)| u.normalized(c)).collect())
}
