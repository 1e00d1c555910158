//! The full enhancement graph.
//!
//! ```text
//! stft -> [mag, phase] -> encoder -> stage x N -> magnitude decoder -> mask
//!                                             \-> phase decoder     -> phase
//! ```
//!
//! Every stage halves time and frequency with a strided convolution, applies
//! the deformable embedding and one locally refined Taylor transformer at the
//! coarse resolution, upsamples back with a transposed convolution and adds
//! the stage input. All stages therefore have the same cost and size.

use crate::array::{lsigmoid, silu, ConvSpec, DenseArray, NormKind};
use crate::attention::{self, tmsa_module};
use crate::config::{DenseNetConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::local_refine::{self, lrc_block, DlcConfig};
use crate::nn;
use crate::signal::{decompose, istft, recompose, stft_with, ComplexSpec, MagPhase, Waveform};
use crate::weights::{ParamSpec, Params, SpecBuilder, WeightStore};

/// Half-plane kernel of the encoder's frequency-halving convolution.
const ENC_DOWN: (usize, usize) = (1, 3);
/// Kernel of the decoders' frequency-restoring transposed convolution.
const DEC_UP: (usize, usize) = (1, 4);
const DEFORM_TAPS: usize = 9;

fn dense_layers(d: &DenseNetConfig) -> Vec<ConvSpec> {
    d.dilations
        .iter()
        .map(|&r| ConvSpec::same((d.kernel, d.kernel), (r, r)))
        .collect()
}

fn enc_down_spec() -> ConvSpec {
    ConvSpec::new(ENC_DOWN).stride((1, 2)).padding((0, 1))
}

fn dec_up_spec() -> ConvSpec {
    ConvSpec::new(DEC_UP).stride((1, 2)).padding((0, 1)).transposed()
}

fn stage_down_spec() -> ConvSpec {
    ConvSpec::new((3, 3)).stride((2, 2)).padding((1, 1))
}

fn stage_up_spec() -> ConvSpec {
    ConvSpec::new((2, 2)).stride((2, 2)).transposed()
}

/// Every learnable tensor of the model, in canonical order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let layers = dense_layers(&cfg.densenet);
    let mut b = SpecBuilder::new();

    nn::conv_norm_act_specs(&mut b, "enc.in", [c, 2, 1, 1], c);
    nn::dilated_dense_specs(&mut b, "enc.dense", c, &layers);
    nn::conv_norm_act_specs(&mut b, "enc.down", [c, c, ENC_DOWN.0, ENC_DOWN.1], c);

    for i in 0..cfg.n_blocks {
        stage_specs(&mut b, &format!("block{i}"), cfg);
    }

    for dec in ["dec.mag", "dec.pha"] {
        nn::dilated_dense_specs(&mut b, &format!("{dec}.dense"), c, &layers);
        nn::conv_norm_act_specs(&mut b, &format!("{dec}.up"), [c, c, DEC_UP.0, DEC_UP.1], c);
    }
    b.conv("dec.mag.out", [1, c, 1, 1], 1);
    b.push(
        "dec.mag.lsigmoid.alpha",
        &[cfg.bins()],
        crate::weights::Init::Constant(1.0),
    );
    b.conv("dec.pha.real", [1, c, 1, 1], 1);
    b.conv("dec.pha.imag", [1, c, 1, 1], 1);
    b.build()
}

fn stage_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let (c, w) = (cfg.channels, cfg.stage_width());
    nn::conv_norm_act_specs(b, &format!("{prefix}.down"), [w, c, 3, 3], w);
    dsdcn_specs(b, &format!("{prefix}.dsdcn"), w);
    lrtt_specs(b, prefix, w, &cfg.dlc);
    b.conv(&format!("{prefix}.up"), [w, c, 2, 2], c);
}

pub fn dsdcn_specs(b: &mut SpecBuilder, prefix: &str, w: usize) {
    b.zero_conv(&format!("{prefix}.offset"), [2 * DEFORM_TAPS, w, 3, 3], 2 * DEFORM_TAPS)
        .conv(&format!("{prefix}.dw"), [w, 1, 3, 3], w)
        .conv(&format!("{prefix}.pw"), [w, w, 1, 1], w);
}

pub fn lrtt_specs(b: &mut SpecBuilder, prefix: &str, w: usize, dlc: &DlcConfig) {
    b.norm(&format!("{prefix}.norm1"), w);
    attention::tmsa_specs(b, prefix, w);
    b.norm(&format!("{prefix}.norm2"), w);
    b.conv(&format!("{prefix}.ffn.expand"), [2 * w, w, 1, 1], 2 * w);
    b.conv(&format!("{prefix}.ffn.project"), [w, 2 * w, 1, 1], w);
    local_refine::lrc_specs(b, &format!("{prefix}.lrc"), w, dlc);
}

pub fn count_params(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

/// `[B, 2, T, F] -> [B, C, T, ceil(F / 2)]`.
pub fn encode(x: &DenseArray, params: &Params<'_>, cfg: &ModelConfig) -> Result<DenseArray> {
    let inorm = cfg.densenet.instance_norm;
    let h = nn::conv_norm_act(&params.scope("in"), x, &ConvSpec::pointwise(), inorm)?;
    let h = nn::dilated_dense(
        &params.scope("dense"),
        &h,
        &dense_layers(&cfg.densenet),
        inorm,
    )?;
    nn::conv_norm_act(&params.scope("down"), &h, &enc_down_spec(), inorm)
}

fn bilinear(plane: &[f64], t: usize, f: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (dy, dx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= t as isize || xx >= f as isize {
            0.0
        } else {
            plane[yy as usize * f + xx as usize]
        }
    };
    (1.0 - dy) * ((1.0 - dx) * at(y0, x0) + dx * at(y0, x0 + 1))
        + dy * ((1.0 - dx) * at(y0 + 1, x0) + dx * at(y0 + 1, x0 + 1))
}

/// Depthwise 3x3 convolution whose taps sample the input at learned
/// fractional offsets (bilinear, zero outside), followed by a pointwise
/// convolution.
///
/// Offset channel `2k` shifts tap `k` along time and `2k + 1` along frequency.
pub fn dsdcn_embed(x: &DenseArray, params: &Params<'_>) -> Result<DenseArray> {
    let offsets = nn::conv(
        &params.scope("offset"),
        x,
        &ConvSpec::same((3, 3), (1, 1)),
    )?;
    deformable_depthwise(x, &offsets, params).and_then(|h| {
        nn::conv(&params.scope("pw"), &h, &ConvSpec::pointwise())
    })
}

/// The sampling half of [`dsdcn_embed`] with explicit offsets `[B, 18, T, F]`.
pub fn deformable_depthwise(
    x: &DenseArray,
    offsets: &DenseArray,
    params: &Params<'_>,
) -> Result<DenseArray> {
    let [b, c, t, f] = x.dims4();
    if offsets.dims4() != [b, 2 * DEFORM_TAPS, t, f] {
        return Err(Error::Shape(format!(
            "offsets {:?} do not match input {:?}",
            offsets.shape(),
            x.shape()
        )));
    }
    let w = params.get("dw.weight")?;
    if w.dims4() != [c, 1, 3, 3] {
        return Err(Error::Shape(format!("depthwise weight {:?}", w.shape())));
    }
    let bias = params.get_opt("dw.bias");
    let plane = t * f;
    let (xd, od, wd) = (x.data(), offsets.data(), w.data());
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        let off = &od[bi * 2 * DEFORM_TAPS * plane..(bi + 1) * 2 * DEFORM_TAPS * plane];
        for ch in 0..c {
            let src = &xd[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
            let dst = &mut out[(bi * c + ch) * plane..(bi * c + ch + 1) * plane];
            let b0 = bias.map_or(0.0, |v| v.data()[ch]);
            for ti in 0..t {
                for fi in 0..f {
                    let p = ti * f + fi;
                    let mut acc = b0;
                    for k in 0..DEFORM_TAPS {
                        let (ki, kj) = (k / 3, k % 3);
                        let y = ti as f64 + ki as f64 - 1.0 + off[2 * k * plane + p];
                        let xx = fi as f64 + kj as f64 - 1.0 + off[(2 * k + 1) * plane + p];
                        acc += wd[ch * 9 + k] * bilinear(src, t, f, y, xx);
                    }
                    dst[p] = acc;
                }
            }
        }
    }
    DenseArray::new(x.shape(), out)
}

/// One locally refined Taylor transformer:
/// attention and feed-forward sublayers with pre-norm residuals, then the
/// locally refined convolution.
pub fn lrtt_block(x: &DenseArray, params: &Params<'_>, cfg: &ModelConfig) -> Result<DenseArray> {
    let h = nn::norm(&params.scope("norm1"), x, NormKind::Layer)?;
    let x = x.add(&tmsa_module(&h, params, cfg.heads)?)?;
    let h = nn::norm(&params.scope("norm2"), &x, NormKind::Layer)?;
    let pw = ConvSpec::pointwise();
    let h = silu(&nn::conv(&params.scope("ffn.expand"), &h, &pw)?);
    let x = x.add(&nn::conv(&params.scope("ffn.project"), &h, &pw)?)?;
    lrc_block(&x, &cfg.dlc, &params.scope("lrc"))
}

/// Down, embed, transform, up, crop and add the stage input.
pub fn stage(x: &DenseArray, params: &Params<'_>, cfg: &ModelConfig) -> Result<DenseArray> {
    let [_, _, t, f] = x.dims4();
    let h = nn::conv_norm_act(&params.scope("down"), x, &stage_down_spec(), true)?;
    let h = dsdcn_embed(&h, &params.scope("dsdcn"))?;
    let h = lrtt_block(&h, params, cfg)?;
    let h = nn::conv(&params.scope("up"), &h, &stage_up_spec())?;
    x.add(&h.crop(t, f)?)
}

/// Shapes `(t, f)` at each stage's coarse resolution, checking that every
/// upsampled map covers its skip.
pub fn u_path_shapes(cfg: &ModelConfig, t: usize, f: usize) -> Result<Vec<(usize, usize)>> {
    let down = stage_down_spec();
    let up = stage_up_spec();
    let mut out = Vec::with_capacity(cfg.n_blocks);
    for _ in 0..cfg.n_blocks {
        let (th, fh) = crate::array::conv2d_output_shape(&down, t, f)?;
        let (tu, fu) = crate::array::conv2d_output_shape(&up, th, fh)?;
        if tu < t || fu < f {
            return Err(Error::Shape(format!(
                "upsampled ({tu}, {fu}) cannot cover skip ({t}, {f})"
            )));
        }
        out.push((th, fh));
    }
    Ok(out)
}

fn decoder_trunk(
    x: &DenseArray,
    params: &Params<'_>,
    cfg: &ModelConfig,
    bins: usize,
) -> Result<DenseArray> {
    let inorm = cfg.densenet.instance_norm;
    let h = nn::dilated_dense(
        &params.scope("dense"),
        x,
        &dense_layers(&cfg.densenet),
        inorm,
    )?;
    let h = nn::conv_norm_act(&params.scope("up"), &h, &dec_up_spec(), inorm)?;
    let t = h.dims4()[2];
    h.crop(t, bins)
}

/// Bounded multiplicative mask `[T, F]` in `(0, beta)`.
pub fn decode_mask(x: &DenseArray, params: &Params<'_>, cfg: &ModelConfig) -> Result<DenseArray> {
    let bins = cfg.bins();
    let h = decoder_trunk(x, params, cfg, bins)?;
    let h = nn::conv(&params.scope("out"), &h, &ConvSpec::pointwise())?;
    let m = lsigmoid(&h, params.get("lsigmoid.alpha")?.data(), cfg.lsigmoid_beta)?;
    let t = m.dims4()[2];
    m.reshape(&[t, bins])
}

/// Phase `[T, F]` in `(-pi, pi]` from a pseudo real/imaginary pair.
pub fn decode_phase(x: &DenseArray, params: &Params<'_>, cfg: &ModelConfig) -> Result<DenseArray> {
    let bins = cfg.bins();
    let h = decoder_trunk(x, params, cfg, bins)?;
    let pw = ConvSpec::pointwise();
    let r = nn::conv(&params.scope("real"), &h, &pw)?;
    let i = nn::conv(&params.scope("imag"), &h, &pw)?;
    let p = r.zip_map(&i, crate::signal::wrapped_angle)?;
    let t = p.dims4()[2];
    p.reshape(&[t, bins])
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub enhanced: Waveform,
    pub spec: ComplexSpec,
    pub noisy_spec: ComplexSpec,
    pub mask: DenseArray,
    pub phase: DenseArray,
}

/// Network input `[1, 2, T, F]`: compressed magnitude and phase.
pub fn input_features(spec: &ComplexSpec, cfg: &ModelConfig) -> Result<DenseArray> {
    let MagPhase { mag, phase } = decompose(spec);
    let (t, f) = (spec.frames(), spec.bins());
    let mag = crate::signal::compress_magnitude(&mag, cfg.mag_compression).reshape(&[1, 1, t, f])?;
    let phase = phase.reshape(&[1, 1, t, f])?;
    DenseArray::concat_channels(&[&mag, &phase])
}

/// Apply a mask and phase to a noisy spectrogram and resynthesise at the
/// noisy signal's length. The mask acts on the compressed magnitude.
pub fn reconstruct(
    noisy: &ComplexSpec,
    mask: &DenseArray,
    phase: &DenseArray,
    cfg: &ModelConfig,
) -> Result<(Waveform, ComplexSpec)> {
    let noisy_mag = decompose(noisy).mag;
    let c = cfg.mag_compression;
    let mag = noisy_mag.zip_map(mask, |m, k| {
        if c == 1.0 {
            k * m
        } else {
            (k * m.powf(c)).powf(1.0 / c)
        }
    })?;
    let spec = recompose(
        &MagPhase {
            mag,
            phase: phase.clone(),
        },
        noisy,
    )?;
    let mut enhanced = istft(&spec, noisy.signal_len)?;
    enhanced.sample_rate = cfg.sample_rate;
    Ok((enhanced, spec))
}

pub fn forward(noisy: &Waveform, weights: &WeightStore, cfg: &ModelConfig) -> Result<ForwardOutput> {
    cfg.validate()?;
    weights.validate(&param_specs(cfg))?;
    let noisy_spec = stft_with(&noisy.samples, &cfg.stft)?;
    let root = weights.scope("");
    let mut h = encode(&input_features(&noisy_spec, cfg)?, &root.scope("enc"), cfg)?;
    for i in 0..cfg.n_blocks {
        h = stage(&h, &root.scope(&format!("block{i}")), cfg)?;
    }
    let mask = decode_mask(&h, &root.scope("dec.mag"), cfg)?;
    let phase = decode_phase(&h, &root.scope("dec.pha"), cfg)?;
    let (mut enhanced, spec) = reconstruct(&noisy_spec, &mask, &phase, cfg)?;
    enhanced.sample_rate = noisy.sample_rate;
    if enhanced.len() != noisy.len() {
        return Err(Error::Shape(format!(
            "enhanced length {} differs from input {}",
            enhanced.len(),
            noisy.len()
        )));
    }
    Ok(ForwardOutput {
        enhanced,
        spec,
        noisy_spec,
        mask,
        phase,
    })
}

/// Operation estimate for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopEstimate {
    pub macs: u64,
    /// Two operations per multiply-accumulate.
    pub flops: u64,
}

/// Multiply-accumulates per component for a `duration_s` clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacBreakdown {
    pub encoder: u64,
    pub per_block: u64,
    pub decoders: u64,
}

pub fn mac_breakdown(cfg: &ModelConfig, duration_s: f64) -> MacBreakdown {
    let samples = ((duration_s * cfg.sample_rate as f64).round() as usize).max(1);
    let t = cfg.stft.frames(samples);
    let f = cfg.bins();
    let c = cfg.channels;
    let w = cfg.stage_width();
    let fp = f.div_ceil(2);
    let tf = |a: usize, b: usize| (a * b) as u64;
    let dense: u64 = (1..=cfg.densenet.depth())
        .map(|j| (c * c * j * cfg.densenet.kernel * cfg.densenet.kernel) as u64)
        .sum();

    let encoder = (2 * c) as u64 * tf(t, f)
        + dense * tf(t, f)
        + (c * c * ENC_DOWN.0 * ENC_DOWN.1) as u64 * tf(t, fp);

    let (th, fh) = (t.div_ceil(2), fp.div_ceil(2));
    let n = tf(th, fh);
    let (w64, c64) = (w as u64, c as u64);
    let dh = (w / cfg.heads) as u64;
    let down = 9 * w64 * c64 * n;
    let dsdcn = (2 * DEFORM_TAPS as u64 * w64 * 9 + 4 * DEFORM_TAPS as u64 * w64 + 9 * w64 + w64 * w64) * n;
    let attn = 4 * w64 * w64 * n + 2 * n * w64 * dh + 3 * n * w64;
    let msar = 9 * w64 * n + 2 * w64 * w64 * n;
    let scea = 2 * 25 * n + 3 * w64;
    let ffn = 4 * w64 * w64 * n;
    let lrc = local_refine::lrc_macs(w, th, fh, &cfg.dlc);
    let up = 4 * w64 * c64 * n;
    let per_block = down + dsdcn + attn + msar + scea + ffn + lrc + up;

    let dec_trunk = dense * tf(t, fp) + (c * c * DEC_UP.0 * DEC_UP.1) as u64 * tf(t, fp);
    let decoders = 2 * dec_trunk + c64 * tf(t, f) + 2 * c64 * tf(t, f);

    MacBreakdown {
        encoder,
        per_block,
        decoders,
    }
}

pub fn estimate_flops(cfg: &ModelConfig, duration_s: f64) -> FlopEstimate {
    let m = mac_breakdown(cfg, duration_s);
    let macs = m.encoder + m.decoders + m.per_block * cfg.n_blocks as u64;
    FlopEstimate {
        macs,
        flops: 2 * macs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_block_params_constant() {
        let counts: Vec<usize> = (1..=5)
            .map(|n| {
                count_params(&ModelConfig {
                    n_blocks: n,
                    ..ModelConfig::default()
                })
            })
            .collect();
        let d0 = counts[1] - counts[0];
        assert!(counts.windows(2).all(|w| w[1] - w[0] == d0));
    }

    #[test]
    fn u_path_covers_skips() {
        for n in 1..=6 {
            let cfg = ModelConfig {
                n_blocks: n,
                ..ModelConfig::default()
            };
            for t in 1..20 {
                assert_eq!(u_path_shapes(&cfg, t, 128).unwrap().len(), n);
            }
        }
    }
}
