//! Waveforms, WAV I/O and the STFT analysis/synthesis pair.
//!
//! Analysis uses a periodic Hann window with reflect padding of `win_len / 2`
//! on both ends, so frame `m` is centred on sample `m * hop`. Synthesis is a
//! weighted overlap-add normalised by the summed squared window, which makes
//! `istft(stft(x)) == x` up to rounding for any hop that keeps the denominator
//! away from zero.

mod wav;

pub use wav::{read_wav, write_wav};

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16000;
const MIN_OLA_DENOMINATOR: f64 = 1e-8;

/// Mono audio with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_len: usize,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_len: 510,
            win_len: 510,
            hop: 100,
        }
    }
}

impl StftConfig {
    pub fn new(fft_len: usize, win_len: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            fft_len,
            win_len,
            hop,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::InvalidInput("hop must be positive".into()));
        }
        if self.win_len < 2 || self.win_len > self.fft_len {
            return Err(Error::InvalidInput(format!(
                "window length {} must be in 2..={}",
                self.win_len, self.fft_len
            )));
        }
        if self.hop > self.win_len {
            return Err(Error::InvalidInput(format!(
                "hop {} exceeds window length {}",
                self.hop, self.win_len
            )));
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.win_len / 2
    }

    pub fn frames(&self, signal_len: usize) -> usize {
        (signal_len + 2 * self.pad() - self.win_len) / self.hop + 1
    }

    pub fn window(&self) -> Vec<f64> {
        hann_periodic(self.win_len)
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// One-sided complex spectrogram, `[T, F]` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpec {
    pub re: DenseArray,
    pub im: DenseArray,
    pub config: StftConfig,
    pub window: Vec<f64>,
    /// Length of the waveform the frames describe.
    pub signal_len: usize,
}

impl ComplexSpec {
    /// Wrap raw planes; the signal length defaults to `(T - 1) * hop`.
    pub fn from_planes(re: DenseArray, im: DenseArray, config: StftConfig) -> Result<Self> {
        config.validate()?;
        re.same_shape(&im)?;
        if re.rank() != 2 || re.shape()[1] != config.bins() {
            return Err(Error::Shape(format!(
                "spectrogram planes must be [T, {}], got {:?}",
                config.bins(),
                re.shape()
            )));
        }
        let signal_len = (re.shape()[0] - 1) * config.hop;
        Ok(Self {
            re,
            im,
            config,
            window: config.window(),
            signal_len,
        })
    }

    pub fn frames(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.re.shape()[1]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            re: self.re.scale(s),
            im: self.im.scale(s),
            ..self.clone()
        }
    }

    pub fn with_planes(&self, re: DenseArray, im: DenseArray) -> Result<Self> {
        self.re.same_shape(&re)?;
        self.re.same_shape(&im)?;
        Ok(Self {
            re,
            im,
            ..self.clone()
        })
    }

    pub fn energy(&self) -> f64 {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(r, i)| r * r + i * i)
            .sum()
    }
}

/// Polar form of a spectrogram. `phase` lies in `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagPhase {
    pub mag: DenseArray,
    pub phase: DenseArray,
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

fn reflect_index(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = j.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

fn padded_source(cfg: &StftConfig, signal_len: usize) -> Vec<usize> {
    let pad = cfg.pad() as isize;
    (0..signal_len + 2 * cfg.pad())
        .map(|j| reflect_index(j as isize - pad, signal_len))
        .collect()
}

pub fn stft(x: &Waveform, fft_len: usize, win_len: usize, hop: usize) -> Result<ComplexSpec> {
    stft_with(&x.samples, &StftConfig::new(fft_len, win_len, hop)?)
}

pub fn stft_with(x: &[f64], cfg: &StftConfig) -> Result<ComplexSpec> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidInput("cannot analyse an empty signal".into()));
    }
    let n = cfg.fft_len;
    let bins = cfg.bins();
    let frames = cfg.frames(x.len());
    let window = cfg.window();
    let src = padded_source(cfg, x.len());
    let fft = plans(n).forward;
    let mut re = vec![0.0; frames * bins];
    let mut im = vec![0.0; frames * bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for m in 0..frames {
        buf.fill(Complex::new(0.0, 0.0));
        for (k, w) in window.iter().enumerate() {
            buf[k].re = x[src[m * cfg.hop + k]] * w;
        }
        fft.process(&mut buf);
        for k in 0..bins {
            re[m * bins + k] = buf[k].re;
            im[m * bins + k] = buf[k].im;
        }
    }
    Ok(ComplexSpec {
        re: DenseArray::new(&[frames, bins], re)?,
        im: DenseArray::new(&[frames, bins], im)?,
        config: *cfg,
        window,
        signal_len: x.len(),
    })
}

/// Inverse real DFT weight of bin `k`: DC and Nyquist count once, the rest twice.
fn bin_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

fn is_self_conjugate(k: usize, n: usize) -> bool {
    k == 0 || (n.is_multiple_of(2) && k == n / 2)
}

struct OlaGeometry {
    pad: usize,
    buf_len: usize,
    denom: Vec<f64>,
}

fn ola_geometry(spec: &ComplexSpec) -> OlaGeometry {
    let cfg = &spec.config;
    let frames = spec.frames();
    let buf_len = (frames - 1) * cfg.hop + cfg.win_len;
    let mut denom = vec![0.0; buf_len];
    for m in 0..frames {
        for (k, w) in spec.window.iter().enumerate() {
            denom[m * cfg.hop + k] += w * w;
        }
    }
    OlaGeometry {
        pad: cfg.pad(),
        buf_len,
        denom,
    }
}

fn check_denominator(geo: &OlaGeometry, out_len: usize) -> Result<()> {
    for i in 0..out_len {
        let j = i + geo.pad;
        if j >= geo.buf_len {
            break;
        }
        if geo.denom[j] < MIN_OLA_DENOMINATOR {
            return Err(Error::NonInvertibleWindow {
                index: i,
                min_denominator: geo.denom[j],
            });
        }
    }
    Ok(())
}

/// Weighted overlap-add inverse, truncated or zero-padded to `out_len`.
pub fn istft(spec: &ComplexSpec, out_len: usize) -> Result<Waveform> {
    Ok(Waveform {
        samples: istft_samples(spec, out_len)?,
        sample_rate: DEFAULT_SAMPLE_RATE,
    })
}

pub(crate) fn istft_samples(spec: &ComplexSpec, out_len: usize) -> Result<Vec<f64>> {
    let cfg = &spec.config;
    let n = cfg.fft_len;
    let bins = spec.bins();
    let geo = ola_geometry(spec);
    check_denominator(&geo, out_len)?;
    let ifft = plans(n).inverse;
    let mut acc = vec![0.0; geo.buf_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let (re, im) = (spec.re.data(), spec.im.data());
    for m in 0..spec.frames() {
        buf.fill(Complex::new(0.0, 0.0));
        for k in 0..bins {
            let mut z = Complex::new(re[m * bins + k], im[m * bins + k]);
            if is_self_conjugate(k, n) {
                z.im = 0.0;
            }
            buf[k] = z;
            if k > 0 && k < n - k {
                buf[n - k] = z.conj();
            }
        }
        ifft.process(&mut buf);
        for (k, w) in spec.window.iter().enumerate() {
            acc[m * cfg.hop + k] += w * buf[k].re / n as f64;
        }
    }
    let mut out = vec![0.0; out_len];
    for (i, o) in out.iter_mut().enumerate() {
        let j = i + geo.pad;
        if j >= geo.buf_len {
            break;
        }
        *o = acc[j] / geo.denom[j];
    }
    Ok(out)
}

/// Adjoint of [`stft_with`] as a real-linear map from samples to `(re, im)` planes.
pub(crate) fn stft_adjoint(
    gre: &[f64],
    gim: &[f64],
    cfg: &StftConfig,
    signal_len: usize,
) -> Vec<f64> {
    let n = cfg.fft_len;
    let bins = cfg.bins();
    let frames = gre.len() / bins;
    let window = cfg.window();
    let src = padded_source(cfg, signal_len);
    let ifft = plans(n).inverse;
    let mut grad = vec![0.0; signal_len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for m in 0..frames {
        buf.fill(Complex::new(0.0, 0.0));
        for k in 0..bins {
            buf[k] = Complex::new(gre[m * bins + k], gim[m * bins + k]);
        }
        ifft.process(&mut buf);
        for (k, w) in window.iter().enumerate() {
            grad[src[m * cfg.hop + k]] += w * buf[k].re;
        }
    }
    grad
}

/// Adjoint of [`istft_samples`] for a fixed spectrogram geometry.
pub(crate) fn istft_adjoint(g: &[f64], spec: &ComplexSpec) -> (Vec<f64>, Vec<f64>) {
    let cfg = &spec.config;
    let n = cfg.fft_len;
    let bins = spec.bins();
    let frames = spec.frames();
    let geo = ola_geometry(spec);
    let mut gbuf = vec![0.0; geo.buf_len];
    for (i, &v) in g.iter().enumerate() {
        let j = i + geo.pad;
        if j >= geo.buf_len {
            break;
        }
        gbuf[j] = v / geo.denom[j];
    }
    let fft = plans(n).forward;
    let mut gre = vec![0.0; frames * bins];
    let mut gim = vec![0.0; frames * bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for m in 0..frames {
        buf.fill(Complex::new(0.0, 0.0));
        for (k, w) in spec.window.iter().enumerate() {
            buf[k].re = w * gbuf[m * cfg.hop + k];
        }
        fft.process(&mut buf);
        for k in 0..bins {
            let c = bin_weight(k, n) / n as f64;
            gre[m * bins + k] = c * buf[k].re;
            gim[m * bins + k] = if is_self_conjugate(k, n) {
                0.0
            } else {
                c * buf[k].im
            };
        }
    }
    (gre, gim)
}

/// Polar decomposition. Zero-magnitude cells get phase 0; `-pi` maps to `pi`.
pub fn decompose(spec: &ComplexSpec) -> MagPhase {
    let mag = spec
        .re
        .zip_map(&spec.im, |r, i| r.hypot(i))
        .expect("planes share a shape");
    let phase = spec
        .re
        .zip_map(&spec.im, wrapped_angle)
        .expect("planes share a shape");
    MagPhase { mag, phase }
}

pub(crate) fn wrapped_angle(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn recompose(mp: &MagPhase, like: &ComplexSpec) -> Result<ComplexSpec> {
    let re = mp.mag.zip_map(&mp.phase, |m, p| m * p.cos())?;
    let im = mp.mag.zip_map(&mp.phase, |m, p| m * p.sin())?;
    like.with_planes(re, im)
}

/// Power-law magnitude compression `mag^exponent`; exponent 1 is the identity.
pub fn compress_magnitude(mag: &DenseArray, exponent: f64) -> DenseArray {
    if exponent == 1.0 {
        mag.clone()
    } else {
        mag.map(|m| m.powf(exponent))
    }
}
