use std::fmt;

use crate::error::{shape_err, Result};

/// Dense row-major tensor of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(shape_err!("tensor must have rank >= 1"));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(shape_err!("zero extent on axis {axis} in {dims:?}"));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| shape_err!("element count overflows for {dims:?}"))
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if len != data.len() {
            return Err(shape_err!("dims {dims:?} need {len} values, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    /// Builds a tensor by calling `f` with each flat row-major offset.
    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> f64) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: (0..len).map(f).collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// Trailing-axis vector at the given leading index.
    pub fn row(&self, leading: &[usize]) -> &[f64] {
        let last = *self.dims.last().unwrap();
        let strides = self.strides();
        let start: usize = leading.iter().zip(&strides).map(|(i, s)| i * s).sum();
        &self.data[start..start + last]
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if len != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {dims:?}", self.dims));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|x| alpha * x)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.dims != other.dims {
            return Err(shape_err!("elementwise add of {:?} and {:?}", self.dims, other.dims));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.dims == other.dims).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Matrix product of `[m, k] x [k, n]`, accumulating over `k` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[m, k], &[k2, n]) = (a.dims(), b.dims()) else {
        return Err(shape_err!(
            "matmul needs two matrices, got {:?} and {:?}",
            a.dims(),
            b.dims()
        ));
    };
    if k != k2 {
        return Err(shape_err!("matmul inner dims {k} != {k2}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (p, &av) in arow.iter().enumerate() {
                acc += av * bd[p * n + j];
            }
            *o = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Numerically stable softmax of a single slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    let last = *x.dims().last().unwrap();
    if x.is_empty() || last == 0 {
        return Err(shape_err!("softmax over an empty axis"));
    }
    let data = x.data().chunks(last).flat_map(softmax).collect();
    Tensor::new(x.dims().to_vec(), data)
}

/// Averages equal blocks over the leading axes of `x`.
///
/// `blocks[i]` is the block extent on axis `i`; axes past `blocks.len()` are
/// kept as-is. Every block extent must divide its axis.
pub fn mean_pool_regions(x: &Tensor, blocks: &[usize]) -> Result<Tensor> {
    let dims = x.dims();
    if blocks.len() > dims.len() {
        return Err(shape_err!(
            "{} pooling extents for a rank-{} tensor",
            blocks.len(),
            dims.len()
        ));
    }
    let mut full_blocks = blocks.to_vec();
    full_blocks.resize(dims.len(), 1);
    for (axis, (&d, &b)) in dims.iter().zip(&full_blocks).enumerate() {
        if b == 0 || d % b != 0 {
            return Err(shape_err!("block extent {b} does not divide axis {axis} of extent {d}"));
        }
    }
    let out_dims: Vec<usize> = dims.iter().zip(&full_blocks).map(|(d, b)| d / b).collect();
    let block_len: usize = full_blocks.iter().product();
    let out_strides = strides_of(&out_dims);

    let mut sums = vec![0.0; out_dims.iter().product()];
    let mut index = vec![0usize; dims.len()];
    for &v in x.data() {
        let out_off: usize = index
            .iter()
            .zip(&full_blocks)
            .zip(&out_strides)
            .map(|((i, b), s)| (i / b) * s)
            .sum();
        sums[out_off] += v;
        increment(&mut index, dims);
    }
    let inv = block_len as f64;
    for s in &mut sums {
        *s /= inv;
    }
    Tensor::new(out_dims, sums)
}

fn increment(index: &mut [usize], dims: &[usize]) {
    for axis in (0..dims.len()).rev() {
        index[axis] += 1;
        if index[axis] < dims[axis] {
            return;
        }
        index[axis] = 0;
    }
}

/// Source coordinate and blend weight for output position `i` of a 1-D resize.
fn source_position(i: usize, src: usize, dst: usize, align_corners: bool) -> (usize, usize, f64) {
    if src == 1 {
        return (0, 0, 0.0);
    }
    let pos = if align_corners {
        if dst == 1 {
            0.0
        } else {
            (i * (src - 1)) as f64 / (dst - 1) as f64
        }
    } else {
        ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
    };
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = (1.0 - t) * a + t * b;
    v.clamp(a.min(b), a.max(b))
}

fn resize_axis(x: &Tensor, axis: usize, target: usize, align_corners: bool) -> Tensor {
    let dims = x.dims();
    let src = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let taps: Vec<_> = (0..target)
        .map(|i| source_position(i, src, target, align_corners))
        .collect();

    let mut out = Vec::with_capacity(outer * target * inner);
    let xd = x.data();
    for o in 0..outer {
        let base = o * src * inner;
        for &(lo, hi, t) in &taps {
            let lo_row = &xd[base + lo * inner..base + (lo + 1) * inner];
            let hi_row = &xd[base + hi * inner..base + (hi + 1) * inner];
            out.extend(lo_row.iter().zip(hi_row).map(|(&a, &b)| lerp(a, b, t)));
        }
    }
    let mut out_dims = dims.to_vec();
    out_dims[axis] = target;
    Tensor {
        dims: out_dims,
        data: out,
    }
}

/// Separable multi-linear resize.
///
/// `target_dims` covers the leading axes; trailing axes keep their extent.
/// With `align_corners`, the first and last source samples land exactly on the
/// first and last target samples (a target extent of 1 samples index 0).
pub fn linear_interp_resize(x: &Tensor, target_dims: &[usize], align_corners: bool) -> Result<Tensor> {
    if target_dims.len() > x.rank() {
        return Err(shape_err!(
            "resize target {target_dims:?} has more axes than {:?}",
            x.dims()
        ));
    }
    if let Some(axis) = target_dims.iter().position(|&d| d == 0) {
        return Err(shape_err!("zero target extent on axis {axis}"));
    }
    let mut out = x.clone();
    for (axis, &target) in target_dims.iter().enumerate() {
        if out.dims()[axis] != target {
            out = resize_axis(&out, axis, target, align_corners);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::zeros(&[2, 0]).is_err());
        assert!(Tensor::zeros(&[]).is_err());
    }

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);

        let i3 = Tensor::identity(3).unwrap();
        let m = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.5 - 1.0).unwrap();
        assert_eq!(matmul(&i3, &m).unwrap(), m);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(crate::Error::Shape(_))));
        let v = Tensor::zeros(&[3]).unwrap();
        assert!(matmul(&a, &v).is_err());
    }

    #[test]
    fn softmax_cases() {
        let x = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        for p in softmax_lastdim(&x).unwrap().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let p = softmax_lastdim(&x).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15);
        assert!(p.data()[1] < 1e-300);
    }

    #[test]
    fn mean_pool_row_index() {
        let x = Tensor::from_fn(&[4, 4], |i| (i / 4) as f64).unwrap();
        let y = mean_pool_regions(&x, &[2, 2]).unwrap();
        assert_eq!(y.dims(), &[2, 2]);
        assert_eq!(y.data(), &[0.5, 0.5, 2.5, 2.5]);
    }

    #[test]
    fn mean_pool_rejects_non_divisible() {
        let x = Tensor::zeros(&[5, 4]).unwrap();
        assert!(matches!(mean_pool_regions(&x, &[2, 2]), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn resize_linear_ramp() {
        let x = Tensor::new(vec![5], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = linear_interp_resize(&x, &[3], true).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 4.0]);
        assert!(linear_interp_resize(&x, &[0], true).is_err());
    }

    #[test]
    fn resize_half_pixel_stays_in_range() {
        let x = Tensor::new(vec![4], vec![0.0, 3.0, -1.0, 2.0]).unwrap();
        let y = linear_interp_resize(&x, &[7], false).unwrap();
        assert!(y.data().iter().all(|&v| (-1.0..=3.0).contains(&v)));
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[6], 2.0);
    }
}
