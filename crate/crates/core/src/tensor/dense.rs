use crate::error::{Error, Result};

/// Dense row-major FP32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "tensor needs at least one dimension".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "all extents must be >= 1".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows usize".into(),
        })
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        out[d] = out[d + 1] * shape[d + 1];
    }
    out
}

impl DenseTensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data has {} elements, shape needs {len}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every coordinate in row-major order.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> f32) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Linear offset of `idx`, or `None` when out of range or of the wrong rank.
    pub fn offset(&self, idx: &[usize]) -> Option<usize> {
        if idx.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &e) in idx.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            off = off * e + i;
        }
        Some(off)
    }

    pub fn get(&self, idx: &[usize]) -> Option<f32> {
        self.offset(idx).map(|o| self.data[o])
    }

    pub fn set(&mut self, idx: &[usize], value: f32) -> Result<()> {
        let off = self.offset(idx).ok_or_else(|| Error::ShapeMismatch {
            context: "DenseTensor::set",
            expected: self.shape.clone(),
            actual: idx.to_vec(),
        })?;
        self.data[off] = value;
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2d(&self) -> Result<Self> {
        let &[rows, cols] = self.shape.as_slice() else {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "transpose2d needs a rank-2 tensor".into(),
            });
        };
        let mut data = vec![0.0; self.data.len()];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = self.data[r * cols + c];
            }
        }
        Ok(Self {
            shape: vec![cols, rows],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Contiguous sub-tensor at `index` along the leading dimension.
    pub fn slice_outer(&self, index: usize) -> Option<&[f32]> {
        let inner: usize = self.shape[1..].iter().product();
        (index < self.shape[0]).then(|| &self.data[index * inner..(index + 1) * inner])
    }
}

/// Max over elements of `|a - b| / max(|b|, 1e-6)`.
pub fn max_rel_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "max_rel_error",
            expected: b.shape().to_vec(),
            actual: a.shape().to_vec(),
        });
    }
    Ok(max_rel_error_slices(a.data(), b.data()))
}

pub(crate) const REL_EPS: f64 = 1e-6;

/// Slice form of [`max_rel_error`]; lengths must already agree.
pub fn max_rel_error_slices(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (f64::from(x), f64::from(y));
            if x == y {
                0.0
            } else {
                (x - y).abs() / y.abs().max(REL_EPS)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_bad_length() {
        assert!(DenseTensor::zeros([2, 0]).is_err());
        assert!(DenseTensor::new([2, 3], vec![0.0; 5]).is_err());
        assert!(DenseTensor::new([2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn from_fn_is_row_major() {
        let t = DenseTensor::from_fn([2, 3], |i| (10 * i[0] + i[1]) as f32).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(t.get(&[1, 2]), Some(12.0));
        assert_eq!(t.get(&[2, 0]), None);
    }

    #[test]
    fn transpose2d_swaps_axes() {
        let t = DenseTensor::from_fn([2, 3], |i| (10 * i[0] + i[1]) as f32).unwrap();
        let tt = t.transpose2d().unwrap();
        assert_eq!(tt.shape(), &[3, 2]);
        assert_eq!(tt.get(&[2, 1]), Some(12.0));
        assert_eq!(tt.transpose2d().unwrap(), t);
    }

    #[test]
    fn rel_error_identical_is_zero() {
        let t = DenseTensor::from_fn([4, 4], |i| i[0] as f32 - i[1] as f32).unwrap();
        assert_eq!(max_rel_error(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn rel_error_scaled_perturbation() {
        let b = DenseTensor::from_fn([8], |i| 1.0 + i[0] as f32).unwrap();
        let a = b.map(|v| v + 1e-5 * v);
        let e = max_rel_error(&a, &b).unwrap();
        assert!((e - 1e-5).abs() < 2e-7, "{e}");
    }

    #[test]
    fn rel_error_matches_scalar_loop() {
        // xorshift fill, values in [-1, 1)
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        };
        let a = DenseTensor::from_fn([5, 7], |_| next()).unwrap();
        let b = DenseTensor::from_fn([5, 7], |_| next()).unwrap();
        let mut expected = 0.0f64;
        for i in 0..a.len() {
            let x = a.data()[i] as f64;
            let y = b.data()[i] as f64;
            let r = (x - y).abs() / y.abs().max(1e-6);
            if r > expected {
                expected = r;
            }
        }
        assert_eq!(max_rel_error(&a, &b).unwrap(), expected);
    }

    #[test]
    fn rel_error_shape_mismatch() {
        let a = DenseTensor::zeros([2, 3]).unwrap();
        let b = DenseTensor::zeros([3, 2]).unwrap();
        assert!(matches!(
            max_rel_error(&a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
