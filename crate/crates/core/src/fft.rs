//! Separable 2-D FFT over row-major complex buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.height * self.width) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        debug_assert_eq!(data.len(), h * w);
        rows.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = data[r * w + c];
            }
            cols.process(&mut col);
            for r in 0..h {
                data[r * w + c] = col[r];
            }
        }
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Signed frequency index for bin `k` of an `n`-point transform.
#[inline]
pub(crate) fn signed_index(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
