//! Taylor-linearised multi-head self-attention and its companions.
//!
//! Softmax attention weights key `j` for query `i` by `exp(q_i . k_j / sqrt(d))`.
//! Replacing the exponential with its first-order expansion `1 + q_i . k_j`
//! turns the weighted mean into
//!
//! ```text
//! v'_i = (sum_j v_j + q_i^T (sum_j k_j v_j^T)) / (N + q_i . sum_j k_j)
//! ```
//!
//! so the `N x N` weight matrix is never formed. Query and key rows are
//! L2-normalised first, which keeps every weight in `[0, 2]`.
//!
//! The dropped remainder is compensated by a gated local correction (MSAR),
//! and a spatial/channel gating branch (SCEA) runs in parallel.

use crate::array::{conv2d, sigmoid, sigmoid_scalar, ConvSpec, DenseArray};
use crate::error::{Error, Result};
use crate::nn;
use crate::weights::{Params, SpecBuilder};

const MIN_DENOMINATOR: f64 = 1e-6;

/// Per-head queries, keys and values laid out `[H, N, Dh]` over a `t x f` patch grid.
#[derive(Debug, Clone)]
pub struct AttentionInput {
    pub q: DenseArray,
    pub k: DenseArray,
    pub v: DenseArray,
    pub grid: (usize, usize),
}

impl AttentionInput {
    pub fn new(q: DenseArray, k: DenseArray, v: DenseArray, grid: (usize, usize)) -> Result<Self> {
        q.same_shape(&k)?;
        q.same_shape(&v)?;
        if q.rank() != 3 {
            return Err(Error::Shape(format!(
                "attention expects [H, N, Dh], got {:?}",
                q.shape()
            )));
        }
        if grid.0 * grid.1 != q.shape()[1] {
            return Err(Error::Shape(format!(
                "grid {grid:?} does not tile {} patches",
                q.shape()[1]
            )));
        }
        Ok(Self { q, k, v, grid })
    }

    pub fn heads(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.q.shape()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.q.shape()[2]
    }

    /// Split a `[1, H*Dh, t, f]` feature map into heads.
    pub fn from_maps(q: &DenseArray, k: &DenseArray, v: &DenseArray, heads: usize) -> Result<Self> {
        let grid = (q.dims4()[2], q.dims4()[3]);
        Self::new(
            map_to_heads(q, heads)?,
            map_to_heads(k, heads)?,
            map_to_heads(v, heads)?,
            grid,
        )
    }
}

/// `[1, H*Dh, t, f] -> [H, t*f, Dh]`.
pub fn map_to_heads(x: &DenseArray, heads: usize) -> Result<DenseArray> {
    let [b, c, t, f] = x.dims4();
    if b != 1 || heads == 0 || c % heads != 0 {
        return Err(Error::Shape(format!(
            "cannot split {:?} into {heads} heads",
            x.shape()
        )));
    }
    let dh = c / heads;
    let n = t * f;
    let src = x.data();
    let mut out = vec![0.0; c * n];
    for h in 0..heads {
        for d in 0..dh {
            let plane = &src[(h * dh + d) * n..(h * dh + d + 1) * n];
            for (i, &v) in plane.iter().enumerate() {
                out[(h * n + i) * dh + d] = v;
            }
        }
    }
    DenseArray::new(&[heads, n, dh], out)
}

/// `[H, t*f, Dh] -> [1, H*Dh, t, f]`.
pub fn heads_to_map(x: &DenseArray, grid: (usize, usize)) -> Result<DenseArray> {
    let [_, heads, n, dh] = x.dims4();
    if x.rank() != 3 || grid.0 * grid.1 != n {
        return Err(Error::Shape(format!(
            "cannot place {:?} on grid {grid:?}",
            x.shape()
        )));
    }
    let src = x.data();
    let mut out = vec![0.0; heads * n * dh];
    for h in 0..heads {
        for i in 0..n {
            for d in 0..dh {
                out[(h * dh + d) * n + i] = src[(h * n + i) * dh + d];
            }
        }
    }
    DenseArray::new(&[1, heads * dh, grid.0, grid.1], out)
}

fn row(a: &DenseArray, h: usize, i: usize) -> &[f64] {
    let [_, _, n, d] = a.dims4();
    let s = (h * n + i) * d;
    &a.data()[s..s + d]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact softmax attention, `O(N^2)` per head. Reference path.
pub fn softmax_attention(input: &AttentionInput, scale: f64) -> DenseArray {
    let (heads, n, dh) = (input.heads(), input.tokens(), input.head_dim());
    let mut out = vec![0.0; heads * n * dh];
    let mut logits = vec![0.0; n];
    for h in 0..heads {
        for i in 0..n {
            let qi = row(&input.q, h, i);
            for (j, l) in logits.iter_mut().enumerate() {
                *l = scale * dot(qi, row(&input.k, h, j));
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - m).exp();
                z += *l;
            }
            let o = &mut out[(h * n + i) * dh..(h * n + i + 1) * dh];
            for (j, &w) in logits.iter().enumerate() {
                for (od, vd) in o.iter_mut().zip(row(&input.v, h, j)) {
                    *od += w * vd;
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
    }
    DenseArray::new(&[heads, n, dh], out).expect("shape preserved")
}

/// Rows scaled to unit L2 norm; zero rows stay zero.
pub fn l2_normalize_rows(a: &DenseArray) -> DenseArray {
    let d = *a.shape().last().unwrap();
    let mut out = a.clone();
    for r in out.data_mut().chunks_mut(d) {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            r.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// First-order Taylor attention in linearised form.
pub fn taylor_attention(input: &AttentionInput) -> Result<DenseArray> {
    taylor_attention_scaled(input, 1.0)
}

/// Taylor attention with weights `1 + scale * q_i . k_j` on normalised rows.
///
/// `scale` in `[0, 1]` keeps every weight non-negative.
pub fn taylor_attention_scaled(input: &AttentionInput, scale: f64) -> Result<DenseArray> {
    let (heads, n, dh) = (input.heads(), input.tokens(), input.head_dim());
    let q = l2_normalize_rows(&input.q);
    let k = l2_normalize_rows(&input.k);
    let mut out = vec![0.0; heads * n * dh];
    let mut kv = vec![0.0; dh * dh];
    let mut sum_k = vec![0.0; dh];
    let mut sum_v = vec![0.0; dh];
    for h in 0..heads {
        kv.fill(0.0);
        sum_k.fill(0.0);
        sum_v.fill(0.0);
        for j in 0..n {
            let kj = row(&k, h, j);
            let vj = row(&input.v, h, j);
            for a in 0..dh {
                sum_k[a] += kj[a];
                sum_v[a] += vj[a];
                let kv_row = &mut kv[a * dh..(a + 1) * dh];
                for (c, &vb) in kv_row.iter_mut().zip(vj) {
                    *c += kj[a] * vb;
                }
            }
        }
        for i in 0..n {
            let qi = row(&q, h, i);
            let den = n as f64 + scale * dot(qi, &sum_k);
            if den < MIN_DENOMINATOR {
                return Err(Error::DegenerateAttention {
                    head: h,
                    row: i,
                    denominator: den,
                });
            }
            let o = &mut out[(h * n + i) * dh..(h * n + i + 1) * dh];
            o.copy_from_slice(&sum_v);
            for (a, &qa) in qi.iter().enumerate() {
                let s = scale * qa;
                for (od, &c) in o.iter_mut().zip(&kv[a * dh..(a + 1) * dh]) {
                    *od += s * c;
                }
            }
            o.iter_mut().for_each(|v| *v /= den);
        }
    }
    DenseArray::new(&[heads, n, dh], out)
}

/// `V'' = V' + sigmoid(gate([Q; K])) * depthwise3x3(V)` on the patch grid.
///
/// Reads `local.{weight,bias}` (`[C, 1, 3, 3]`) and `gate.{weight,bias}`
/// (`[C, 2C, 1, 1]`) from `params`.
pub fn msar_correct(
    input: &AttentionInput,
    vprime: &DenseArray,
    params: &Params<'_>,
) -> Result<DenseArray> {
    input.v.same_shape(vprime)?;
    let grid = input.grid;
    let q = heads_to_map(&input.q, grid)?;
    let k = heads_to_map(&input.k, grid)?;
    let v = heads_to_map(&input.v, grid)?;
    let channels = q.dims4()[1];
    let local = nn::conv(
        &params.scope("local"),
        &v,
        &ConvSpec::same((3, 3), (1, 1)).groups(channels),
    )?;
    let qk = DenseArray::concat_channels(&[&q, &k])?;
    let gate = sigmoid(&nn::conv(&params.scope("gate"), &qk, &ConvSpec::pointwise())?);
    let corrected = heads_to_map(vprime, grid)?.add(&gate.mul(&local)?)?;
    map_to_heads(&corrected, input.heads())
}

/// Zero-initialised, so the correction starts inert.
pub fn msar_specs(b: &mut SpecBuilder, prefix: &str, channels: usize) {
    b.zero_conv(&format!("{prefix}.local"), [channels, 1, 3, 3], channels)
        .zero_conv(&format!("{prefix}.gate"), [channels, 2 * channels, 1, 1], channels);
}

/// Spatial-channel gating: `x * gate_channel * gate_spatial`.
///
/// The channel gate pools each channel over `(T, F)` and runs a zero-padded
/// 3-tap convolution across channels. The spatial gate pools mean and max
/// across channels and runs a 5x5 convolution over the plane.
pub fn scea(x: &DenseArray, params: &Params<'_>) -> Result<DenseArray> {
    let [b, c, t, f] = x.dims4();
    if x.rank() != 4 {
        return Err(Error::Shape(format!("scea expects [B,C,T,F], got {:?}", x.shape())));
    }
    let cw = params.get("channel.weight")?;
    let cb = params.get("channel.bias")?;
    if cw.len() != 3 || cb.len() != 1 {
        return Err(Error::Shape("scea channel conv must have 3 taps and 1 bias".into()));
    }
    let (cw, cb) = (cw.data(), cb.data()[0]);
    let plane = t * f;
    let data = x.data();

    let mut pooled = vec![0.0; b * c];
    for (i, p) in pooled.iter_mut().enumerate() {
        *p = data[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
    let mut gate_ch = vec![0.0; b * c];
    for bi in 0..b {
        for ch in 0..c {
            let mut s = cb;
            for (tap, &w) in cw.iter().enumerate() {
                let src = ch as isize + tap as isize - 1;
                if src >= 0 && (src as usize) < c {
                    s += w * pooled[bi * c + src as usize];
                }
            }
            gate_ch[bi * c + ch] = sigmoid_scalar(s);
        }
    }

    let mut stats = vec![0.0; b * 2 * plane];
    for bi in 0..b {
        for p in 0..plane {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = data[(bi * c + ch) * plane + p];
                sum += v;
                max = max.max(v);
            }
            stats[bi * 2 * plane + p] = sum / c as f64;
            stats[(bi * 2 + 1) * plane + p] = max;
        }
    }
    let stats = DenseArray::new(&[b, 2, t, f], stats)?;
    let gate_sp = sigmoid(&conv2d(
        &stats,
        params.get("spatial.weight")?,
        Some(params.get("spatial.bias")?),
        &ConvSpec::same((5, 5), (1, 1)),
    )?);

    let gs = gate_sp.data();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let bc = i / plane;
        let bi = bc / c;
        *v *= gate_ch[bc] * gs[bi * plane + i % plane];
    }
    Ok(out)
}

pub fn scea_specs(b: &mut SpecBuilder, prefix: &str) {
    b.conv(&format!("{prefix}.channel"), [1, 1, 1, 3], 1);
    b.conv(&format!("{prefix}.spatial"), [1, 2, 5, 5], 1);
}

/// The full attention module on a `[B, C, T, F]` map:
/// `out(msar(taylor(q, k, v)) + scea(x))`, all projections pointwise.
///
/// `params` is the block scope holding `tmsa.*`, `msar.*` and `scea.*`.
pub fn tmsa_module(x: &DenseArray, params: &Params<'_>, heads: usize) -> Result<DenseArray> {
    let branches = tmsa_branches(x, params, heads)?;
    let merged = branches.attention.add(&branches.scea)?;
    nn::conv(&params.scope("tmsa.out"), &merged, &ConvSpec::pointwise())
}

/// Pre-projection branch outputs of [`tmsa_module`].
#[derive(Debug, Clone)]
pub struct TmsaBranches {
    pub attention: DenseArray,
    pub scea: DenseArray,
}

pub fn tmsa_branches(x: &DenseArray, params: &Params<'_>, heads: usize) -> Result<TmsaBranches> {
    let [b, _, _, _] = x.dims4();
    let pw = ConvSpec::pointwise();
    let q = nn::conv(&params.scope("tmsa.q"), x, &pw)?;
    let k = nn::conv(&params.scope("tmsa.k"), x, &pw)?;
    let v = nn::conv(&params.scope("tmsa.v"), x, &pw)?;
    let mut per_batch = Vec::with_capacity(b);
    for bi in 0..b {
        let c = q.dims4()[1];
        let take = |a: &DenseArray| -> Result<DenseArray> {
            let [_, _, t, f] = a.dims4();
            let n = c * t * f;
            DenseArray::new(&[1, c, t, f], a.data()[bi * n..(bi + 1) * n].to_vec())
        };
        let input = AttentionInput::from_maps(&take(&q)?, &take(&k)?, &take(&v)?, heads)?;
        let vprime = taylor_attention(&input)?;
        let refined = msar_correct(&input, &vprime, &params.scope("msar"))?;
        per_batch.push(heads_to_map(&refined, input.grid)?);
    }
    let attention = if b == 1 {
        per_batch.pop().unwrap()
    } else {
        let [_, c, t, f] = x.dims4();
        let mut data = Vec::with_capacity(x.len());
        for m in &per_batch {
            data.extend_from_slice(m.data());
        }
        DenseArray::new(&[b, c, t, f], data)?
    };
    let scea = scea(x, &params.scope("scea"))?;
    Ok(TmsaBranches { attention, scea })
}

pub fn tmsa_specs(b: &mut SpecBuilder, prefix: &str, channels: usize) {
    for name in ["q", "k", "v", "out"] {
        b.conv(&format!("{prefix}.tmsa.{name}"), [channels, channels, 1, 1], channels);
    }
    msar_specs(b, &format!("{prefix}.msar"), channels);
    scea_specs(b, &format!("{prefix}.scea"));
}

/// Closed-form operation counts for a `t x f` patch grid with hidden size `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub mhsa_ops: u64,
    pub tmsa_ops: u64,
}

/// `4tfD^2 + 2t^2f^2D` for softmax attention and `18tfD + 2tfD^2` for the
/// Taylor form.
pub fn count_ops(t: u64, f: u64, d: u64) -> OpCount {
    let tf = t * f;
    OpCount {
        mhsa_ops: 4 * tf * d * d + 2 * tf * tf * d,
        tmsa_ops: 18 * tf * d + 2 * tf * d * d,
    }
}
