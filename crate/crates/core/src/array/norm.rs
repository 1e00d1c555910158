use super::DenseArray;
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Statistics over `(C, T, F)` for each batch element.
    Layer,
    /// Statistics over `(T, F)` for each `(batch, channel)`.
    Instance,
}

/// Normalize a `[B, C, T, F]` array, then apply per-channel `gain` and `shift`.
///
/// `gain` and `shift` hold either one value per channel or a single scalar.
/// A constant slice normalizes to exactly zero.
pub fn normalize(
    input: &DenseArray,
    kind: NormKind,
    gain: &DenseArray,
    shift: &DenseArray,
    eps: f64,
) -> Result<DenseArray> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "normalization eps must be positive, got {eps}"
        )));
    }
    let [_, c, t, f] = input.dims4();
    for (name, p) in [("gain", gain), ("shift", shift)] {
        if p.len() != c && p.len() != 1 {
            return Err(Error::Shape(format!(
                "{name} has {} entries, expected 1 or {c}",
                p.len()
            )));
        }
    }
    let per_channel = |p: &DenseArray, ch: usize| {
        if p.len() == 1 {
            p.data()[0]
        } else {
            p.data()[ch]
        }
    };
    let plane = t * f;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let group = match kind {
        NormKind::Layer => c * plane,
        NormKind::Instance => plane,
    };
    for (gi, (chunk, dst)) in x.chunks(group).zip(out.chunks_mut(group)).enumerate() {
        let n = chunk.len() as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let constant = chunk.iter().all(|&v| v == chunk[0]);
        let inv = 1.0 / (var + eps).sqrt();
        for (i, (&v, d)) in chunk.iter().zip(dst.iter_mut()).enumerate() {
            let ch = match kind {
                NormKind::Layer => i / plane,
                NormKind::Instance => gi % c,
            };
            let z = if constant { 0.0 } else { (v - mean) * inv };
            *d = z * per_channel(gain, ch) + per_channel(shift, ch);
        }
    }
    DenseArray::new(input.shape(), out)
}
