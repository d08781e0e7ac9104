//! Forward and backward kernels shared by the generator and discriminator.

use super::tensor::Tensor4;

/// `C = op(A)·op(B) + beta·C`, all row-major; `op(A)` is `m×k`, `op(B)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn same3(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    #[cfg(test)]
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |s: usize| (s + 2 * self.pad - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], h: usize, w: usize, s: &ConvSpec, cols: &mut [f64]) {
    let (ho, wo) = s.out_size(h, w);
    let k = s.kernel;
    let p = ho * wo;
    for c in 0..s.in_ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], h: usize, w: usize, s: &ConvSpec, dx: &mut [f64]) {
    let (ho, wo) = s.out_size(h, w);
    let k = s.kernel;
    let p = ho * wo;
    dx.fill(0.0);
    for c in 0..s.in_ch {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding; `weight` is `(out, in, k, k)`.
pub(crate) fn conv_forward(x: &Tensor4, weight: &[f64], bias: Option<&[f64]>, s: &ConvSpec) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    debug_assert_eq!(c, s.in_ch);
    let (ho, wo) = s.out_size(h, w);
    let p = ho * wo;
    let kk = s.fan_in();
    let mut out = Tensor4::zeros([n, s.out_ch, ho, wo]);
    let mut cols = if s.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    for i in 0..n {
        let src: &[f64] = if s.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), h, w, s, &mut cols);
            &cols
        };
        let y = out.item_mut(i);
        gemm(s.out_ch, kk, p, weight, false, src, false, y, 0.0);
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                y[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients; returns the input gradient if asked.
pub(crate) fn conv_backward(
    x: &Tensor4,
    weight: &[f64],
    s: &ConvSpec,
    dy: &Tensor4,
    dweight: &mut [f64],
    mut dbias: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Tensor4> {
    let [n, _, h, w] = x.dims();
    let (ho, wo) = s.out_size(h, w);
    let p = ho * wo;
    let kk = s.fan_in();
    let mut dx = need_dx.then(|| Tensor4::zeros(x.dims()));
    let mut cols = if s.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    let mut dcols = if need_dx && !s.is_pointwise() {
        vec![0.0; kk * p]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let g = dy.item(i);
        let src: &[f64] = if s.is_pointwise() {
            x.item(i)
        } else {
            im2col(x.item(i), h, w, s, &mut cols);
            &cols
        };
        gemm(s.out_ch, p, kk, g, false, src, true, dweight, 1.0);
        if let Some(db) = dbias.as_deref_mut() {
            for (o, d) in db.iter_mut().enumerate() {
                *d += g[o * p..(o + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            if s.is_pointwise() {
                gemm(kk, s.out_ch, p, weight, true, g, false, dx.item_mut(i), 0.0);
            } else {
                gemm(kk, s.out_ch, p, weight, true, g, false, &mut dcols, 0.0);
                col2im(&dcols, h, w, s, dx.item_mut(i));
            }
        }
    }
    dx
}

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn channel_iter(t: &Tensor4, c: usize) -> impl Iterator<Item = &f64> {
    (0..t.batch()).flat_map(move |n| t.plane(n, c).iter())
}

/// Batch normalization with batch statistics (biased variance).
pub(crate) fn bn_forward_train(x: &Tensor4, gamma: &[f64], beta: &[f64]) -> (Tensor4, BnCache) {
    let [n, c, h, w] = x.dims();
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mu = channel_iter(x, ch).sum::<f64>() / m;
        mean[ch] = mu;
        var[ch] = channel_iter(x, ch).map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = Tensor4::zeros(x.dims());
    let hw = h * w;
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            let xs = &mut xhat.data_mut()[off..off + hw];
            for v in xs.iter_mut() {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
            let ys = &mut y.data_mut()[off..off + hw];
            for (o, &v) in ys.iter_mut().zip(&xhat.data()[off..off + hw]) {
                *o = gamma[ch] * v + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub(crate) fn bn_forward_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let mut y = x.clone();
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - running_mean[ch] * scale;
            let off = (i * c + ch) * hw;
            for v in &mut y.data_mut()[off..off + hw] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

/// Input gradient of train-mode batch norm; accumulates `dgamma`, `dbeta`.
pub(crate) fn bn_backward(
    cache: &BnCache,
    gamma: &[f64],
    dy: &Tensor4,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor4 {
    let [n, c, h, w] = dy.dims();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dx = Tensor4::zeros(dy.dims());
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for i in 0..n {
            let off = (i * c + ch) * hw;
            for (g, xh) in dy.data()[off..off + hw].iter().zip(&cache.xhat.data()[off..off + hw]) {
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for i in 0..n {
            let off = (i * c + ch) * hw;
            let out = &mut dx.data_mut()[off..off + hw];
            for ((o, g), xh) in out
                .iter_mut()
                .zip(&dy.data()[off..off + hw])
                .zip(&cache.xhat.data()[off..off + hw])
            {
                *o = k * (m * g - sum_dy - xh * sum_dy_xhat);
            }
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, t: &mut Tensor4) {
        match self {
            Activation::Identity => {}
            Activation::Relu => t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::LeakyRelu(a) => t
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { *v } else { a * *v }),
        }
    }

    /// Gradient through the activation given its output (sign is preserved
    /// by every supported activation).
    pub fn backward(self, out: &Tensor4, dy: &mut Tensor4) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &o) in dy.data_mut().iter_mut().zip(out.data()) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Activation::LeakyRelu(a) => {
                for (g, &o) in dy.data_mut().iter_mut().zip(out.data()) {
                    if o <= 0.0 {
                        *g *= a;
                    }
                }
            }
        }
    }
}

/// 2×2 max-pool; also returns the flat argmax index of every output.
pub(crate) fn maxpool2_forward(x: &Tensor4) -> (Tensor4, Vec<u32>) {
    let [n, c, h, w] = x.dims();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let src = x.data();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + w, i0 + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                y.data_mut()[k] = src[best];
                arg[k] = best as u32;
                k += 1;
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool2_backward(in_dims: [usize; 4], arg: &[u32], dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(in_dims);
    for (&a, &g) in arg.iter().zip(dy.data()) {
        dx.data_mut()[a as usize] += g;
    }
    dx
}

pub(crate) fn upsample2_forward(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let mut y = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    let w2 = 2 * w;
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y.data_mut()[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for r in 0..2 * h {
            for col in 0..w2 {
                dst[r * w2 + col] = src[(r / 2) * w + col / 2];
            }
        }
    }
    y
}

pub(crate) fn upsample2_backward(dy: &Tensor4) -> Tensor4 {
    let [n, c, h2, w2] = dy.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    for plane in 0..n * c {
        let src = &dy.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for r in 0..h2 {
            for col in 0..w2 {
                dst[(r / 2) * w + col / 2] += src[r * w2 + col];
            }
        }
    }
    dx
}

/// Channel-wise concatenation `[a, b]`.
pub(crate) fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    let [n, ca, h, w] = a.dims();
    let cb = b.channels();
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor4::from_vec_unchecked([n, ca + cb, h, w], data)
}

pub(crate) fn split_channels(t: &Tensor4, ca: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = t.dims();
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for i in 0..n {
        let item = t.item(i);
        a.extend_from_slice(&item[..ca * hw]);
        b.extend_from_slice(&item[ca * hw..]);
    }
    (
        Tensor4::from_vec_unchecked([n, ca, h, w], a),
        Tensor4::from_vec_unchecked([n, c - ca, h, w], b),
    )
}
