//! Dense real arrays and the handful of kernels the network is built from.
//!
//! Everything here is a pure function of its inputs. Feature maps use the
//! `[batch, channels, time, freq]` layout in row-major order.

mod activation;
mod conv;
mod norm;

pub use activation::{activate, lsigmoid, prelu, sigmoid, sigmoid_scalar, silu, softmax, Activation};
pub use conv::{conv2d, conv2d_output_shape, ConvSpec};
pub use norm::{normalize, NormKind, NORM_EPS};

use crate::error::{Error, Result};

/// Row-major dense array of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::Shape(format!(
            "rank must be 1..=4, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl DenseArray {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics if `shape` is invalid; use [`DenseArray::new`] for fallible construction.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Shape as `[b, c, t, f]`, left-padding lower ranks with ones.
    pub fn dims4(&self) -> [usize; 4] {
        let mut d = [1usize; 4];
        let off = 4 - self.shape.len();
        d[off..].copy_from_slice(&self.shape);
        d
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Element at a 4-d index (lower ranks are left-padded).
    pub fn at4(&self, b: usize, c: usize, t: usize, f: usize) -> f64 {
        let [_, cc, tt, ff] = self.dims4();
        self.data[((b * cc + c) * tt + t) * ff + f]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Concatenate rank-4 arrays along the channel axis.
    pub fn concat_channels(parts: &[&DenseArray]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero arrays".into()))?;
        let [b, _, t, f] = first.dims4();
        let mut channels = 0;
        for p in parts {
            let [pb, pc, pt, pf] = p.dims4();
            if (pb, pt, pf) != (b, t, f) || p.rank() != 4 {
                return Err(Error::Shape(format!(
                    "cannot concat {:?} with {:?} along channels",
                    first.shape, p.shape
                )));
            }
            channels += pc;
        }
        let plane = t * f;
        let mut data = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for p in parts {
                let pc = p.shape[1];
                let start = bi * pc * plane;
                data.extend_from_slice(&p.data[start..start + pc * plane]);
            }
        }
        Self::new(&[b, channels, t, f], data)
    }

    /// Channel range `[start, start + count)` of a rank-4 array.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let [b, c, t, f] = self.dims4();
        if self.rank() != 4 || start + count > c || count == 0 {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} out of range for {:?}",
                start + count,
                self.shape
            )));
        }
        let plane = t * f;
        let mut data = Vec::with_capacity(b * count * plane);
        for bi in 0..b {
            let s = (bi * c + start) * plane;
            data.extend_from_slice(&self.data[s..s + count * plane]);
        }
        Self::new(&[b, count, t, f], data)
    }

    /// Keep the leading `t` frames and `f` bins of a rank-4 array.
    pub fn crop(&self, t: usize, f: usize) -> Result<Self> {
        let [b, c, tt, ff] = self.dims4();
        if t > tt || f > ff {
            return Err(Error::Shape(format!(
                "cannot crop {:?} to ({t}, {f})",
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(b * c * t * f);
        for bc in 0..b * c {
            for ti in 0..t {
                let s = (bc * tt + ti) * ff;
                data.extend_from_slice(&self.data[s..s + f]);
            }
        }
        Self::new(&[b, c, t, f], data)
    }
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!(
            "matmul needs [m,k] x [k,n], got {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    DenseArray::new(&[m, n], out)
}
