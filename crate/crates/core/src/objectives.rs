//! Training objective: complex, magnitude, anti-wrapped phase, consistency and
//! metric-adversarial terms, combined by a weighted sum.
//!
//! Mean-squared errors average over the cells of each plane and sum across
//! planes, so an all-ones estimate against a zero reference scores 2.0 on the
//! real/imaginary term.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::array::{ConvSpec, DenseArray};
use crate::error::{Error, Result};
use crate::nn;
use crate::signal::{
    decompose, istft_adjoint, istft_samples, stft_adjoint, stft_with, ComplexSpec, Waveform,
};
use crate::weights::{Params, SpecBuilder};

/// Weights of the five loss terms, in the order complex, magnitude, phase,
/// consistency, adversarial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ri: f64,
    pub mag: f64,
    pub pha: f64,
    pub con: f64,
    pub g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ri: 0.1,
            mag: 0.9,
            pha: 0.3,
            con: 0.1,
            g: 0.05,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.ri, self.mag, self.pha, self.con, self.g]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "loss weights must be finite and non-negative, got {:?}",
                self.as_array()
            )))
        }
    }
}

/// The three phase terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseLosses {
    pub ip: f64,
    pub gd: f64,
    pub iaf: f64,
    pub pha: f64,
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub ri: f64,
    pub mag: f64,
    pub phase: PhaseLosses,
    pub con: f64,
    pub g: f64,
}

impl LossTerms {
    /// Every term, including each phase component, set to `v`.
    pub fn uniform(v: f64) -> Self {
        Self {
            ri: v,
            mag: v,
            phase: PhaseLosses {
                ip: v,
                gd: v,
                iaf: v,
                pha: v,
            },
            con: v,
            g: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_ri: f64,
    pub l_mag: f64,
    pub l_gd: f64,
    pub l_iaf: f64,
    pub l_ip: f64,
    pub l_pha: f64,
    pub l_con: f64,
    pub l_g: f64,
    pub total: f64,
}

impl LossReport {
    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("l_ri", self.l_ri),
            ("l_mag", self.l_mag),
            ("l_gd", self.l_gd),
            ("l_iaf", self.l_iaf),
            ("l_ip", self.l_ip),
            ("l_pha", self.l_pha),
            ("l_con", self.l_con),
            ("l_g", self.l_g),
            ("total", self.total),
        ]
    }
}

/// `key=value` pairs separated by spaces, six significant digits.
/// Magnitudes below `1e-12` print as 0: they are floating-point residue of
/// quantities that vanish analytically.
impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .fields()
            .iter()
            .map(|(k, v)| format!("{k}={}", format_sig6(*v)))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Six significant digits; values within `1e-12` of zero print as `0`.
pub fn format_sig6(v: f64) -> String {
    if v.abs() < 1e-12 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.5e}")
    }
}

pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> LossReport {
    let total =
        w.ri * terms.ri + w.mag * terms.mag + w.pha * terms.phase.pha + w.con * terms.con + w.g * terms.g;
    LossReport {
        l_ri: terms.ri,
        l_mag: terms.mag,
        l_gd: terms.phase.gd,
        l_iaf: terms.phase.iaf,
        l_ip: terms.phase.ip,
        l_pha: terms.phase.pha,
        l_con: terms.con,
        l_g: terms.g,
        total,
    }
}

fn mse(a: &DenseArray, b: &DenseArray) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

fn mse_grad(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    let n = a.len() as f64;
    a.zip_map(b, |x, y| 2.0 * (x - y) / n)
}

fn same_geometry(est: &ComplexSpec, reference: &ComplexSpec) -> Result<()> {
    est.re.same_shape(&reference.re)
}

pub fn loss_ri(est: &ComplexSpec, reference: &ComplexSpec) -> Result<f64> {
    same_geometry(est, reference)?;
    Ok(mse(&est.re, &reference.re)? + mse(&est.im, &reference.im)?)
}

/// Gradient of [`loss_ri`] with respect to the estimate's `(re, im)` planes.
pub fn loss_ri_grad(est: &ComplexSpec, reference: &ComplexSpec) -> Result<(DenseArray, DenseArray)> {
    same_geometry(est, reference)?;
    Ok((
        mse_grad(&est.re, &reference.re)?,
        mse_grad(&est.im, &reference.im)?,
    ))
}

pub fn loss_mag(est: &DenseArray, reference: &DenseArray) -> Result<f64> {
    mse(est, reference)
}

pub fn loss_mag_grad(est: &DenseArray, reference: &DenseArray) -> Result<DenseArray> {
    est.same_shape(reference)?;
    mse_grad(est, reference)
}

/// `|x - 2 pi round(x / 2 pi)|`, in `[0, pi]`.
pub fn anti_wrap(x: f64) -> f64 {
    (x - 2.0 * PI * (x / (2.0 * PI)).round()).abs()
}

/// Derivative of [`anti_wrap`]; 0 at multiples of `2 pi`.
pub fn anti_wrap_slope(x: f64) -> f64 {
    let r = x - 2.0 * PI * (x / (2.0 * PI)).round();
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn anti_wrap_array(x: &DenseArray) -> DenseArray {
    x.map(anti_wrap)
}

#[derive(Debug, Clone, Copy)]
enum Diff {
    None,
    Time,
    Freq,
}

/// Differences `(a[i] - b[i])` after the chosen first difference, with the
/// flat index pairs `(hi, lo)` they came from.
fn phase_terms(est: &DenseArray, reference: &DenseArray, diff: Diff) -> Vec<(f64, usize, usize)> {
    let [_, _, t, f] = est.dims4();
    let (e, r) = (est.data(), reference.data());
    let mut out = Vec::new();
    match diff {
        Diff::None => {
            for i in 0..t * f {
                out.push((e[i] - r[i], i, usize::MAX));
            }
        }
        Diff::Freq => {
            for ti in 0..t {
                for fi in 0..f.saturating_sub(1) {
                    let (hi, lo) = (ti * f + fi + 1, ti * f + fi);
                    out.push(((e[hi] - e[lo]) - (r[hi] - r[lo]), hi, lo));
                }
            }
        }
        Diff::Time => {
            for ti in 0..t.saturating_sub(1) {
                for fi in 0..f {
                    let (hi, lo) = ((ti + 1) * f + fi, ti * f + fi);
                    out.push(((e[hi] - e[lo]) - (r[hi] - r[lo]), hi, lo));
                }
            }
        }
    }
    out
}

fn mean_anti_wrap(terms: &[(f64, usize, usize)]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(|(d, _, _)| anti_wrap(*d)).sum::<f64>() / terms.len() as f64
}

fn check_phase(est: &DenseArray, reference: &DenseArray) -> Result<()> {
    est.same_shape(reference)?;
    if est.rank() != 2 {
        return Err(Error::Shape(format!(
            "phase planes must be [T, F], got {:?}",
            est.shape()
        )));
    }
    if !est.all_finite() || !reference.all_finite() {
        return Err(Error::InvalidInput("phase planes must be finite".into()));
    }
    Ok(())
}

/// Instantaneous phase, group delay (difference along frequency) and
/// instantaneous angular frequency (difference along time) losses.
pub fn loss_phase(est: &DenseArray, reference: &DenseArray) -> Result<PhaseLosses> {
    check_phase(est, reference)?;
    let ip = mean_anti_wrap(&phase_terms(est, reference, Diff::None));
    let gd = mean_anti_wrap(&phase_terms(est, reference, Diff::Freq));
    let iaf = mean_anti_wrap(&phase_terms(est, reference, Diff::Time));
    Ok(PhaseLosses {
        ip,
        gd,
        iaf,
        pha: ip + gd + iaf,
    })
}

/// Gradients of the three phase terms with respect to `est`.
#[derive(Debug, Clone)]
pub struct PhaseGrads {
    pub ip: DenseArray,
    pub gd: DenseArray,
    pub iaf: DenseArray,
}

pub fn loss_phase_grad(est: &DenseArray, reference: &DenseArray) -> Result<PhaseGrads> {
    check_phase(est, reference)?;
    let grad = |diff: Diff| {
        let terms = phase_terms(est, reference, diff);
        let mut g = DenseArray::zeros(est.shape());
        if terms.is_empty() {
            return g;
        }
        let n = terms.len() as f64;
        let data = g.data_mut();
        for (d, hi, lo) in terms {
            let s = anti_wrap_slope(d) / n;
            data[hi] += s;
            if lo != usize::MAX {
                data[lo] -= s;
            }
        }
        g
    };
    Ok(PhaseGrads {
        ip: grad(Diff::None),
        gd: grad(Diff::Freq),
        iaf: grad(Diff::Time),
    })
}

/// `stft(istft(spec))` at the spectrogram's own signal length.
pub fn consistency_projection(spec: &ComplexSpec) -> Result<ComplexSpec> {
    let samples = istft_samples(spec, spec.signal_len)?;
    let projected = stft_with(&samples, &spec.config)?;
    if projected.frames() != spec.frames() {
        return Err(Error::Shape(format!(
            "projection produced {} frames for a {}-frame spectrogram",
            projected.frames(),
            spec.frames()
        )));
    }
    Ok(projected)
}

/// MSE between a spectrogram and its projection onto consistent spectrograms.
pub fn loss_consistency(est: &ComplexSpec) -> Result<f64> {
    let p = consistency_projection(est)?;
    Ok(mse(&est.re, &p.re)? + mse(&est.im, &p.im)?)
}

/// Gradient of [`loss_consistency`] with respect to `(re, im)`.
///
/// With `P` the (real-linear) projection and `d = e - Pe`, the gradient is
/// `(2 / n) (d - P^T d)`; `P^T` is the adjoint of the inverse transform
/// applied after the adjoint of the forward transform.
pub fn loss_consistency_grad(est: &ComplexSpec) -> Result<(DenseArray, DenseArray)> {
    let p = consistency_projection(est)?;
    let dre = est.re.sub(&p.re)?;
    let dim = est.im.sub(&p.im)?;
    let back = stft_adjoint(dre.data(), dim.data(), &est.config, est.signal_len);
    let (pre, pim) = istft_adjoint(&back, est);
    let n = est.re.len() as f64;
    let finish = |d: &DenseArray, pt: Vec<f64>| -> Result<DenseArray> {
        let pt = DenseArray::new(d.shape(), pt)?;
        Ok(d.sub(&pt)?.scale(2.0 / n))
    };
    Ok((finish(&dre, pre)?, finish(&dim, pim)?))
}

const DISC_WIDTHS: [usize; 4] = [16, 16, 32, 32];

/// Parameters of the metric discriminator under `prefix`.
pub fn discriminator_specs(b: &mut SpecBuilder, prefix: &str) {
    let mut cin = 2;
    for (i, &w) in DISC_WIDTHS.iter().enumerate() {
        nn::conv_norm_act_specs(b, &format!("{prefix}.conv.{i}"), [w, cin, 3, 3], w);
        cin = w;
    }
    b.conv(&format!("{prefix}.head"), [1, cin, 1, 1], 1);
}

/// Quality score in `(0, 1)` for an estimated magnitude against a reference.
pub fn discriminate(ref_m: &DenseArray, est_m: &DenseArray, params: &Params<'_>) -> Result<f64> {
    ref_m.same_shape(est_m)?;
    if ref_m.rank() != 2 {
        return Err(Error::Shape(format!(
            "discriminator expects [T, F] magnitudes, got {:?}",
            ref_m.shape()
        )));
    }
    let (t, f) = (ref_m.shape()[0], ref_m.shape()[1]);
    let r = ref_m.clone().reshape(&[1, 1, t, f])?;
    let e = est_m.clone().reshape(&[1, 1, t, f])?;
    let mut h = DenseArray::concat_channels(&[&r, &e])?;
    let spec = ConvSpec::same((3, 3), (1, 1)).stride((2, 2));
    for i in 0..DISC_WIDTHS.len() {
        h = nn::conv_norm_act(&params.scope(&format!("conv.{i}")), &h, &spec, true)?;
    }
    let [_, c, ht, hf] = h.dims4();
    let plane = (ht * hf) as f64;
    let pooled: Vec<f64> = h
        .data()
        .chunks(ht * hf)
        .map(|p| p.iter().sum::<f64>() / plane)
        .collect();
    let pooled = DenseArray::new(&[1, c, 1, 1], pooled)?;
    let logit = nn::conv(&params.scope("head"), &pooled, &ConvSpec::pointwise())?;
    Ok(crate::array::sigmoid_scalar(logit.data()[0]))
}

/// Generator adversarial loss `(D - 1)^2`.
pub fn loss_g(score: f64) -> f64 {
    (score - 1.0).powi(2)
}

/// Discriminator loss `(D(ref, ref) - 1)^2 + (D(ref, est) - q)^2`.
pub fn loss_d(score_ref: f64, score_est: f64, q: f64) -> f64 {
    (score_ref - 1.0).powi(2) + (score_est - q).powi(2)
}

/// A normalised quality score with `score(x, x) == 1`.
pub trait QualityOracle {
    fn score(&self, reference: &Waveform, estimate: &Waveform) -> Result<f64>;
}

/// Segmental SNR mapped to `[0, 1]` by `clamp((ssnr + 10) / 30, 0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct SegSnrProxy {
    pub frame_len: usize,
}

impl Default for SegSnrProxy {
    fn default() -> Self {
        Self { frame_len: 512 }
    }
}

impl SegSnrProxy {
    pub const FLOOR_DB: f64 = -10.0;
    pub const CEIL_DB: f64 = 35.0;

    pub fn segmental_snr(&self, reference: &[f64], estimate: &[f64]) -> Result<f64> {
        if reference.len() != estimate.len() {
            return Err(Error::InvalidInput(format!(
                "reference has {} samples, estimate {}",
                reference.len(),
                estimate.len()
            )));
        }
        if reference.is_empty() || self.frame_len == 0 {
            return Err(Error::InvalidInput("empty signal or frame".into()));
        }
        let mut total = 0.0;
        let mut count = 0;
        for (r, e) in reference
            .chunks(self.frame_len)
            .zip(estimate.chunks(self.frame_len))
        {
            let signal: f64 = r.iter().map(|v| v * v).sum();
            let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let db = if noise == 0.0 {
                Self::CEIL_DB
            } else {
                10.0 * (signal / noise).log10()
            };
            total += db.clamp(Self::FLOOR_DB, Self::CEIL_DB);
            count += 1;
        }
        Ok(total / count as f64)
    }
}

impl QualityOracle for SegSnrProxy {
    fn score(&self, reference: &Waveform, estimate: &Waveform) -> Result<f64> {
        let ssnr = self.segmental_snr(&reference.samples, &estimate.samples)?;
        Ok(((ssnr + 10.0) / 30.0).clamp(0.0, 1.0))
    }
}

/// All terms for an estimate spectrogram against a reference; the
/// adversarial term is supplied by the caller.
pub fn spectral_terms(est: &ComplexSpec, reference: &ComplexSpec, l_g: f64) -> Result<LossTerms> {
    let e = decompose(est);
    let r = decompose(reference);
    Ok(LossTerms {
        ri: loss_ri(est, reference)?,
        mag: loss_mag(&e.mag, &r.mag)?,
        phase: loss_phase(&e.phase, &r.phase)?,
        con: loss_consistency(est)?,
        g: l_g,
    })
}

/// Loss report for two waveforms, using the quality oracle as critic:
/// `l_g = (q - 1)^2`.
pub fn waveform_report(
    reference: &Waveform,
    estimate: &Waveform,
    cfg: &crate::signal::StftConfig,
    weights: &LossWeights,
    oracle: &dyn QualityOracle,
) -> Result<LossReport> {
    let r = stft_with(&reference.samples, cfg)?;
    let e = stft_with(&estimate.samples, cfg)?;
    let q = oracle.score(reference, estimate)?;
    let terms = spectral_terms(&e, &r, loss_g(q))?;
    Ok(total_loss(&terms, weights))
}
