use crate::error::{PicsError, Result};
use crate::imagecore::{RasterImage, Units};

/// Dense NCHW tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(PicsError::ShapeMismatch(format!(
                "{} values for dims {:?}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PicsError::NonFinite("tensor values"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], v: f64) -> Self {
        Self {
            dims,
            data: vec![v; dims.iter().product()],
        }
    }

    pub(crate) fn from_vec_unchecked(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    /// Stacks single-channel rasters into an `(N, 1, H, W)` batch.
    pub fn from_rasters(images: &[&RasterImage]) -> Result<Self> {
        let first = images.first().ok_or(PicsError::EmptyInput("raster batch"))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            first.ensure_same_dims(img)?;
            data.extend_from_slice(img.pixels());
        }
        Ok(Self {
            dims: [images.len(), 1, h, w],
            data,
        })
    }

    /// Channel `c` of batch item `n` as a raster.
    pub fn to_raster(&self, n: usize, c: usize, units: Units) -> RasterImage {
        let [_, _, h, w] = self.dims;
        RasterImage::new(h, w, self.plane(n, c).to_vec(), units).expect("finite tensor")
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.dims[2], self.dims[3])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.dims;
        ((n * cc + c) * h + y) * w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Contiguous `(C, H, W)` block of batch item `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * chw..(n + 1) * chw]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * chw..(n + 1) * chw]
    }

    pub fn ensure_dims(&self, other: &Tensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(PicsError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch items `range` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor4 {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        Tensor4 {
            dims: [end - start, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * chw..end * chw].to_vec(),
        }
    }

    pub fn concat_batch(parts: &[&Tensor4]) -> Result<Tensor4> {
        let first = parts.first().ok_or(PicsError::EmptyInput("tensor list"))?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(PicsError::ShapeMismatch(format!(
                    "{:?} vs {:?}",
                    p.dims, first.dims
                )));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            dims: [n, first.dims[1], first.dims[2], first.dims[3]],
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor4::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::new([1, 1, 1, 1], vec![f64::NAN]).is_err());
        let t = Tensor4::new([2, 3, 2, 2], (0..24).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.get(1, 2, 1, 0), 22.0);
        assert_eq!(t.plane(1, 0), &[12.0, 13.0, 14.0, 15.0]);
        assert_eq!(t.slice_batch(1, 2).data()[0], 12.0);
    }

    #[test]
    fn raster_round_trip() {
        let img = RasterImage::from_fn(3, 4, Units::Radians, |r, c| (r * 4 + c) as f64);
        let t = Tensor4::from_rasters(&[&img, &img]).unwrap();
        assert_eq!(t.dims(), [2, 1, 3, 4]);
        assert_eq!(t.to_raster(1, 0, Units::Radians), img);
    }
}
