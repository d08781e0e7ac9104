//! Named parameter storage and the conv → batchnorm → activation unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, Activation, BnCache, ConvSpec};
use super::tensor::Tensor4;

/// Running-statistics momentum: `running = m · running + (1 − m) · batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    fn new(name: String, shape: Vec<usize>, fill: f64) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            values: vec![fill; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Trainable tensors plus non-trainable buffers (batchnorm running stats).
///
/// Every mutable access to trainable values bumps `version`, which forward
/// caches record so a cache cannot be replayed against changed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    params: Vec<ParamTensor>,
    buffers: Vec<ParamTensor>,
    version: u64,
}

impl ModelParams {
    pub(crate) fn from_parts(params: Vec<ParamTensor>, buffers: Vec<ParamTensor>) -> Self {
        Self {
            params,
            buffers,
            version: 0,
        }
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn buffers(&self) -> &[ParamTensor] {
        &self.buffers
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        self.version += 1;
        &mut self.params
    }

    pub fn buffers_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.buffers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param(&self, name: &str) -> Option<&ParamTensor> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn buffer(&self, name: &str) -> Option<&ParamTensor> {
        self.buffers.iter().find(|p| p.name == name)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    /// Zero-valued tensors with the names and shapes of the trainable set.
    pub fn zeros_like(&self) -> Vec<ParamTensor> {
        self.params
            .iter()
            .map(|p| ParamTensor::new(p.name.clone(), p.shape.clone(), 0.0))
            .collect()
    }

    /// Same names and shapes in both sets.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        let eq = |a: &[ParamTensor], b: &[ParamTensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.name == y.name && x.shape == y.shape)
        };
        eq(&self.params, &other.params) && eq(&self.buffers, &other.buffers)
    }

    pub(crate) fn value(&self, i: usize) -> &[f64] {
        &self.params[i].values
    }

    pub(crate) fn buffer_value(&self, i: usize) -> &[f64] {
        &self.buffers[i].values
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnSlots {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// conv → optional batchnorm → activation.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub spec: ConvSpec,
    weight: usize,
    bias: Option<usize>,
    bn: Option<BnSlots>,
    act: Activation,
}

#[derive(Debug, Clone)]
pub(crate) struct UnitCache {
    input: Tensor4,
    bn: Option<BnCache>,
    output: Tensor4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Unit {
    pub fn forward(&self, p: &ModelParams, x: Tensor4, mode: Mode) -> (Tensor4, Option<UnitCache>) {
        let mut z = ops::conv_forward(&x, p.value(self.weight), self.bias.map(|b| p.value(b)), &self.spec);
        let mut bn_cache = None;
        if let Some(bn) = self.bn {
            let (g, b) = (p.value(bn.gamma), p.value(bn.beta));
            z = match mode {
                Mode::Train => {
                    let (y, c) = ops::bn_forward_train(&z, g, b);
                    bn_cache = Some(c);
                    y
                }
                Mode::Eval => ops::bn_forward_eval(&z, g, b, p.buffer_value(bn.mean), p.buffer_value(bn.var)),
            };
        }
        self.act.apply(&mut z);
        match mode {
            Mode::Train => {
                let cache = UnitCache {
                    input: x,
                    bn: bn_cache,
                    output: z.clone(),
                };
                (z, Some(cache))
            }
            Mode::Eval => (z, None),
        }
    }

    pub fn backward(
        &self,
        p: &ModelParams,
        cache: &UnitCache,
        mut dout: Tensor4,
        grads: &mut [ParamTensor],
        need_dx: bool,
    ) -> Option<Tensor4> {
        self.act.backward(&cache.output, &mut dout);
        if let (Some(bn), Some(bc)) = (self.bn, cache.bn.as_ref()) {
            let (dg, db) = two_mut(grads, bn.gamma, bn.beta);
            dout = ops::bn_backward(bc, p.value(bn.gamma), &dout, &mut dg.values, &mut db.values);
        }
        let (dw, dbias) = match self.bias {
            Some(b) => {
                let (w, b) = two_mut(grads, self.weight, b);
                (&mut w.values, Some(&mut b.values[..]))
            }
            None => (&mut grads[self.weight].values, None),
        };
        ops::conv_backward(&cache.input, p.value(self.weight), &self.spec, &dout, dw, dbias, need_dx)
    }

    /// Folds this unit's batch statistics into the running buffers.
    pub fn absorb_stats(&self, p: &mut ModelParams, cache: &UnitCache) {
        if let (Some(bn), Some(bc)) = (self.bn, cache.bn.as_ref()) {
            for (r, &m) in p.buffers[bn.mean].values.iter_mut().zip(&bc.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, &v) in p.buffers[bn.var].values.iter_mut().zip(&bc.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }

    /// Normalized pre-activation of the last forward and the batch
    /// variance it was divided by (train mode).
    pub fn normalized<'a>(&self, cache: &'a UnitCache) -> Option<(&'a Tensor4, &'a [f64])> {
        cache.bn.as_ref().map(|c| (&c.xhat, &c.var[..]))
    }
}

fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (a, b) = v.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    He,
    Zero,
}

/// Registers tensors in a fixed order, then initializes them from a seed.
#[derive(Default)]
pub(crate) struct ParamBuilder {
    params: Vec<ParamTensor>,
    buffers: Vec<ParamTensor>,
    inits: Vec<(Init, usize, f64)>,
}

impl ParamBuilder {
    // values are allocated only in `build`, so layouts are cheap to derive
    fn push(&mut self, name: String, shape: Vec<usize>, fill: f64, init: Init, fan_in: usize) -> usize {
        self.params.push(ParamTensor {
            name,
            shape,
            values: Vec::new(),
        });
        self.inits.push((init, fan_in, fill));
        self.params.len() - 1
    }

    fn push_buffer(&mut self, name: String, len: usize, fill: f64) -> usize {
        self.buffers.push(ParamTensor::new(name, vec![len], fill));
        self.buffers.len() - 1
    }

    /// Whether `p` has exactly the tensors this builder registers.
    pub fn matches(&self, p: &ModelParams) -> bool {
        let eq = |a: &[ParamTensor], b: &[ParamTensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.name == y.name && x.shape == y.shape && y.values.len() == y.shape.iter().product::<usize>()
                })
        };
        eq(&self.params, &p.params) && eq(&self.buffers, &p.buffers)
    }

    pub fn unit(&mut self, prefix: &str, spec: ConvSpec, bias: bool, bn: bool, act: Activation, init: Init) -> Unit {
        let k = spec.kernel;
        let weight = self.push(
            format!("{prefix}.weight"),
            vec![spec.out_ch, spec.in_ch, k, k],
            0.0,
            init,
            spec.fan_in(),
        );
        let bias = bias.then(|| self.push(format!("{prefix}.bias"), vec![spec.out_ch], 0.0, Init::Zero, 0));
        let bn = bn.then(|| BnSlots {
            gamma: self.push(format!("{prefix}.bn.gamma"), vec![spec.out_ch], 1.0, Init::Zero, 0),
            beta: self.push(format!("{prefix}.bn.beta"), vec![spec.out_ch], 0.0, Init::Zero, 0),
            mean: self.push_buffer(format!("{prefix}.bn.running_mean"), spec.out_ch, 0.0),
            var: self.push_buffer(format!("{prefix}.bn.running_var"), spec.out_ch, 1.0),
        });
        Unit {
            spec,
            weight,
            bias,
            bn,
            act,
        }
    }

    /// He-normal weights drawn in registration order; other tensors keep
    /// their fill value (zero, or one for batchnorm gains).
    pub fn build(self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = self.params;
        for (p, (init, fan_in, fill)) in params.iter_mut().zip(self.inits) {
            p.values = vec![fill; p.shape.iter().product()];
            if init == Init::He && fan_in > 0 {
                let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                p.values.iter_mut().for_each(|v| *v = d.sample(&mut rng));
            }
        }
        ModelParams::from_parts(params, self.buffers)
    }
}
