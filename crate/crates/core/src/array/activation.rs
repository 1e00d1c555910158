use super::DenseArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Activation<'a> {
    /// Per-channel negative slope (one value, or one per channel of a rank-4 input).
    PRelu(&'a [f64]),
    Silu,
    Sigmoid,
    /// `beta * sigmoid(alpha_k * x)` with one `alpha` per frequency bin (last axis).
    LSigmoid { alpha: &'a [f64], beta: f64 },
    Softmax { axis: usize },
}

pub fn activate(input: &DenseArray, kind: Activation<'_>) -> Result<DenseArray> {
    match kind {
        Activation::PRelu(a) => prelu(input, a),
        Activation::Silu => Ok(silu(input)),
        Activation::Sigmoid => Ok(sigmoid(input)),
        Activation::LSigmoid { alpha, beta } => lsigmoid(input, alpha, beta),
        Activation::Softmax { axis } => softmax(input, axis),
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &DenseArray) -> DenseArray {
    input.map(sigmoid_scalar)
}

pub fn silu(input: &DenseArray) -> DenseArray {
    input.map(|x| x * sigmoid_scalar(x))
}

pub fn prelu(input: &DenseArray, slopes: &[f64]) -> Result<DenseArray> {
    let [_, c, t, f] = input.dims4();
    if slopes.len() != 1 && slopes.len() != c {
        return Err(Error::Shape(format!(
            "prelu has {} slopes for {c} channels",
            slopes.len()
        )));
    }
    let plane = t * f;
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            let a = if slopes.len() == 1 {
                slopes[0]
            } else {
                slopes[(i / plane) % c]
            };
            *v *= a;
        }
    }
    Ok(out)
}

pub fn lsigmoid(input: &DenseArray, alpha: &[f64], beta: f64) -> Result<DenseArray> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lsigmoid beta must be positive, got {beta}"
        )));
    }
    let bins = *input.shape().last().unwrap();
    if alpha.len() != bins {
        return Err(Error::Shape(format!(
            "lsigmoid needs one alpha per bin: {} alphas for {bins} bins",
            alpha.len()
        )));
    }
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = beta * sigmoid_scalar(alpha[i % bins] * *v);
    }
    Ok(out)
}

pub fn softmax(input: &DenseArray, axis: usize) -> Result<DenseArray> {
    let shape = input.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for {shape:?}"
        )));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = input.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let m = (0..n).map(|j| d[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (d[idx(j)] - m).exp();
                d[idx(j)] = e;
                z += e;
            }
            for j in 0..n {
                d[idx(j)] /= z;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> DenseArray {
        DenseArray::new(&[1], vec![x]).unwrap()
    }

    #[test]
    fn reference_values() {
        assert_eq!(silu(&scalar(0.0)).data()[0], 0.0);
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        assert_eq!(lsigmoid(&scalar(0.0), &[1.0], 2.0).unwrap().data()[0], 1.0);
        assert_eq!(prelu(&scalar(-3.0), &[0.25]).unwrap().data()[0], -0.75);
        assert_eq!(prelu(&scalar(3.0), &[0.25]).unwrap().data()[0], 3.0);
    }

    #[test]
    fn uniform_softmax() {
        let x = DenseArray::filled(&[2, 5], 0.7);
        let y = activate(&x, Activation::Softmax { axis: 1 }).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn lsigmoid_needs_one_alpha_per_bin() {
        let x = DenseArray::zeros(&[2, 3]);
        assert!(lsigmoid(&x, &[1.0, 1.0], 2.0).is_err());
        assert!(lsigmoid(&x, &[1.0; 3], 0.0).is_err());
    }
}
