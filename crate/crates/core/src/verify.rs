//! Numerical checks and a gradient-free toy trainer.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::DenseArray;
use crate::attention::{l2_normalize_rows, softmax_attention, taylor_attention_scaled, AttentionInput};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::{self, count_params, estimate_flops};
use crate::objectives::{
    self, anti_wrap, discriminate, loss_consistency, loss_consistency_grad, loss_g, loss_mag,
    loss_mag_grad, loss_phase, loss_phase_grad, loss_ri, loss_ri_grad, total_loss, LossTerms,
};
use crate::signal::{decompose, ComplexSpec, StftConfig, Waveform};
use crate::weights::{SpecBuilder, WeightStore};

/// Central differences `(f(t + e_i eps) - f(t - e_i eps)) / 2 eps`.
pub fn finite_diff(
    f: impl Fn(&[f64]) -> f64,
    theta: &DenseArray,
    eps: f64,
) -> Result<DenseArray> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let mut x = theta.data().to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x0 = x[i];
        x[i] = x0 + eps;
        let up = f(&x);
        x[i] = x0 - eps;
        let down = f(&x);
        x[i] = x0;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    DenseArray::new(theta.shape(), grad)
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub max_rel_err: f64,
    /// Loss term and flat coordinate of the worst disagreement.
    pub argmax_location: (String, usize),
    pub n_checked: usize,
}

/// Names of the checked gradients, in check order.
pub const GRADCHECK_TERMS: [&str; 6] = ["ri", "mag", "con", "ip", "gd", "iaf"];

pub const GRADCHECK_INSTANCES: usize = 20;
const GRADCHECK_EPS: f64 = 1e-5;
/// Phase instances keep every anti-wrap argument this far from a kink.
const KINK_MARGIN: f64 = 1e-3;

/// Analytic-vs-finite-difference comparison for every differentiable loss
/// term on random 8x8 instances.
pub fn gradcheck_losses(seed: u64) -> Result<GradCheckResult> {
    gradcheck_losses_with(seed, &|_, _| {})
}

/// [`gradcheck_losses`] with a hook that may tamper with each analytic
/// gradient before comparison, for harness self-tests.
pub fn gradcheck_losses_with(
    seed: u64,
    corrupt: &dyn Fn(&str, &mut [f64]),
) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StftConfig::new(14, 14, 3)?;
    let (t, f) = (8, cfg.bins());
    let mut worst = GradCheckResult {
        max_rel_err: 0.0,
        argmax_location: (String::new(), 0),
        n_checked: 0,
    };
    let mut record = |name: &str, analytic: &[f64], numeric: &[f64]| {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let e = relative_error(*a, *n);
            worst.n_checked += 1;
            if e > worst.max_rel_err || worst.argmax_location.0.is_empty() {
                worst.max_rel_err = e;
                worst.argmax_location = (name.to_string(), i);
            }
        }
    };

    for _ in 0..GRADCHECK_INSTANCES {
        let est = random_spec(&mut rng, t, cfg)?;
        let reference = random_spec(&mut rng, t, cfg)?;

        let theta = stack(&est);
        let loss = |x: &[f64]| loss_ri(&unstack(x, &est).unwrap(), &reference).unwrap();
        let (gr, gi) = loss_ri_grad(&est, &reference)?;
        let mut a = [gr.data(), gi.data()].concat();
        corrupt("ri", &mut a);
        record("ri", &a, finite_diff(loss, &theta, GRADCHECK_EPS)?.data());

        let em = DenseArray::from_fn(&[t, f], |_| rng.random_range(0.0..2.0));
        let rm = DenseArray::from_fn(&[t, f], |_| rng.random_range(0.0..2.0));
        let loss = |x: &[f64]| loss_mag(&DenseArray::new(&[t, f], x.to_vec()).unwrap(), &rm).unwrap();
        let mut a = loss_mag_grad(&em, &rm)?.into_data();
        corrupt("mag", &mut a);
        record("mag", &a, finite_diff(loss, &em, GRADCHECK_EPS)?.data());

        let loss = |x: &[f64]| loss_consistency(&unstack(x, &est).unwrap()).unwrap();
        let (gr, gi) = loss_consistency_grad(&est)?;
        let mut a = [gr.data(), gi.data()].concat();
        corrupt("con", &mut a);
        record("con", &a, finite_diff(loss, &theta, GRADCHECK_EPS)?.data());

        let (ep, rp) = smooth_phase_pair(&mut rng, t, f);
        let grads = loss_phase_grad(&ep, &rp)?;
        for (name, g) in [("ip", grads.ip), ("gd", grads.gd), ("iaf", grads.iaf)] {
            let loss = |x: &[f64]| {
                let l = loss_phase(&DenseArray::new(&[t, f], x.to_vec()).unwrap(), &rp).unwrap();
                match name {
                    "ip" => l.ip,
                    "gd" => l.gd,
                    _ => l.iaf,
                }
            };
            let mut a = g.into_data();
            corrupt(name, &mut a);
            record(name, &a, finite_diff(loss, &ep, GRADCHECK_EPS)?.data());
        }
    }
    Ok(worst)
}

fn random_spec(rng: &mut ChaCha8Rng, t: usize, cfg: StftConfig) -> Result<ComplexSpec> {
    let f = cfg.bins();
    let re = DenseArray::from_fn(&[t, f], |_| StandardNormal.sample(rng));
    let im = DenseArray::from_fn(&[t, f], |_| StandardNormal.sample(rng));
    ComplexSpec::from_planes(re, im, cfg)
}

fn stack(spec: &ComplexSpec) -> DenseArray {
    let n = spec.re.len();
    DenseArray::new(&[2 * n], [spec.re.data(), spec.im.data()].concat()).expect("non-empty")
}

fn unstack(x: &[f64], like: &ComplexSpec) -> Result<ComplexSpec> {
    let n = like.re.len();
    like.with_planes(
        DenseArray::new(like.re.shape(), x[..n].to_vec())?,
        DenseArray::new(like.re.shape(), x[n..].to_vec())?,
    )
}

fn near_kink(d: f64) -> bool {
    let r = anti_wrap(d);
    !(KINK_MARGIN..=std::f64::consts::PI - KINK_MARGIN).contains(&r)
}

/// Random phase planes whose anti-wrap arguments all avoid the kinks.
fn smooth_phase_pair(rng: &mut ChaCha8Rng, t: usize, f: usize) -> (DenseArray, DenseArray) {
    use std::f64::consts::PI;
    loop {
        let e = DenseArray::from_fn(&[t, f], |_| rng.random_range(-PI..PI));
        let r = DenseArray::from_fn(&[t, f], |_| rng.random_range(-PI..PI));
        let (ed, rd) = (e.data(), r.data());
        let mut ok = (0..t * f).all(|i| !near_kink(ed[i] - rd[i]));
        for ti in 0..t {
            for fi in 0..f {
                let i = ti * f + fi;
                if fi + 1 < f {
                    ok &= !near_kink((ed[i + 1] - ed[i]) - (rd[i + 1] - rd[i]));
                }
                if ti + 1 < t {
                    ok &= !near_kink((ed[i + f] - ed[i]) - (rd[i + f] - rd[i]));
                }
            }
        }
        if ok {
            return (e, r);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// `(scale, max |taylor - softmax|)` per scale.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of `log err` against `log scale`, over positive points.
    pub slope: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scale,max_err\n");
        for (sc, e) in &self.points {
            let _ = writeln!(s, "{},{}", objectives::format_sig6(*sc), objectives::format_sig6(*e));
        }
        s
    }
}

pub const SWEEP_TOKENS: usize = 32;
pub const SWEEP_HEAD_DIM: usize = 8;

/// For each logit scale `s`, the worst gap between `softmax(s q.k)` attention
/// and its first-order expansion over `trials` random normalised draws.
pub fn taylor_error_sweep(scales: &[f64], trials: usize, seed: u64) -> Result<SweepReport> {
    if scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter("scales must be finite and non-negative".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, SWEEP_TOKENS, SWEEP_HEAD_DIM];
    let draws: Vec<AttentionInput> = (0..trials)
        .map(|_| {
            let mut g = || DenseArray::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
            let q = l2_normalize_rows(&g());
            let k = l2_normalize_rows(&g());
            let v = g();
            AttentionInput::new(q, k, v, (1, SWEEP_TOKENS))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut worst: f64 = 0.0;
        for input in &draws {
            let t = taylor_attention_scaled(input, s)?;
            let sm = softmax_attention(input, s);
            worst = worst.max(t.max_abs_diff(&sm));
        }
        points.push((s, worst));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(s, e)| *s > 0.0 && *e > 0.0)
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    Ok(SweepReport {
        points,
        slope: fit_slope(&logs),
    })
}

fn fit_slope(xy: &[(f64, f64)]) -> f64 {
    if xy.len() < 2 {
        return f64::NAN;
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xy.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Clean sine mixture plus white noise at a fixed SNR.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub clean: Waveform,
    pub noisy: Waveform,
}

impl SyntheticTask {
    /// A 0.25 s, 16 kHz clip at 0 dB SNR.
    pub fn toy(seed: u64) -> Result<Self> {
        Self::generate(seed, 0.25, crate::signal::DEFAULT_SAMPLE_RATE, 0.0)
    }

    pub fn generate(seed: u64, duration_s: f64, sample_rate: u32, snr_db: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration_s * sample_rate as f64).round() as usize;
        let tones: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(200.0..2000.0),
                    rng.random_range(0.1..0.3),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let clean: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                tones
                    .iter()
                    .map(|(fr, a, ph)| a * (std::f64::consts::TAU * fr * t + ph).sin())
                    .sum()
            })
            .collect();
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ps = clean.iter().map(|v| v * v).sum::<f64>();
        let pn = noise.iter().map(|v| v * v).sum::<f64>();
        let g = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
        let noisy = clean.iter().zip(&noise).map(|(c, z)| c + g * z).collect();
        Ok(Self {
            clean: Waveform::new(clean, sample_rate)?,
            noisy: Waveform::new(noisy, sample_rate)?,
        })
    }
}

/// SPSA gains `a_k = a / (k + 1 + A)^alpha`, `c_k = c / (k + 1)^gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsaConfig {
    pub iterations: usize,
    pub a: f64,
    pub c: f64,
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            a: 1e-3,
            c: 1e-3,
            stability: 0.0,
            alpha: 0.602,
            gamma: 0.101,
            seed: 7,
        }
    }
}

impl SpsaConfig {
    /// Gains fixed by a sweep on the synthetic micro task: 200 iterations
    /// with seed 7 bring the smoothed loss to about 0.65 of its start.
    pub fn toy() -> Self {
        Self {
            a: 0.3,
            c: 1e-2,
            stability: 20.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || !(self.c > 0.0) || !(self.a >= 0.0) || self.stability < 0.0 {
            return Err(Error::InvalidParameter(format!("invalid SPSA config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpsaRun {
    /// Total loss at the start of each iteration and after the last one.
    pub losses: Vec<f64>,
    pub weights: WeightStore,
}

impl SpsaRun {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{}", objectives::format_sig6(*l));
        }
        s
    }
}

/// Trailing window used to smooth loss trajectories.
pub const SMOOTHING_WINDOW: usize = 10;

/// Mean of the first and of the last `window` losses.
pub fn smoothed_endpoints(losses: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, losses.len().max(1));
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&losses[..w]), mean(&losses[losses.len() - w..]))
}

/// Moving average over a trailing window, shortened at the start.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Objective for the toy trainer: the weighted total loss of the model's
/// estimate against the clean clip, with a frozen random discriminator.
pub struct ToyObjective<'a> {
    pub cfg: &'a ModelConfig,
    pub task: &'a SyntheticTask,
    pub clean_spec: ComplexSpec,
    pub discriminator: WeightStore,
}

impl<'a> ToyObjective<'a> {
    pub fn new(cfg: &'a ModelConfig, task: &'a SyntheticTask, seed: u64) -> Result<Self> {
        let clean_spec = crate::signal::stft_with(&task.clean.samples, &cfg.stft)?;
        let mut b = SpecBuilder::new();
        objectives::discriminator_specs(&mut b, "disc");
        let discriminator = WeightStore::initialize(&b.build(), seed ^ 0x5eed);
        Ok(Self {
            cfg,
            task,
            clean_spec,
            discriminator,
        })
    }

    pub fn evaluate(&self, weights: &WeightStore) -> Result<f64> {
        let out = network::forward(&self.task.noisy, weights, self.cfg)?;
        let est = decompose(&out.spec);
        let reference = decompose(&self.clean_spec);
        let score = discriminate(&reference.mag, &est.mag, &self.discriminator.scope("disc"))?;
        let terms = LossTerms {
            ri: loss_ri(&out.spec, &self.clean_spec)?,
            mag: loss_mag(&est.mag, &reference.mag)?,
            phase: loss_phase(&est.phase, &reference.phase)?,
            con: loss_consistency(&out.spec)?,
            g: loss_g(score),
        };
        Ok(total_loss(&terms, &self.cfg.loss_weights).total)
    }
}

/// Simultaneous-perturbation descent on the toy objective starting from
/// weights initialised with `spsa.seed`.
pub fn spsa_train(cfg: &ModelConfig, spsa: &SpsaConfig, task: &SyntheticTask) -> Result<SpsaRun> {
    cfg.validate()?;
    spsa.validate()?;
    let specs = network::param_specs(cfg);
    let weights = WeightStore::initialize(&specs, spsa.seed);
    let objective = ToyObjective::new(cfg, task, spsa.seed)?;
    spsa_minimize(|w| objective.evaluate(w), weights, spsa)
}

/// Generic SPSA loop over the flattened parameters of `weights`.
pub fn spsa_minimize(
    objective: impl Fn(&WeightStore) -> Result<f64>,
    mut weights: WeightStore,
    spsa: &SpsaConfig,
) -> Result<SpsaRun> {
    spsa.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spsa.seed.wrapping_add(1));
    let mut theta = weights.flatten();
    let mut probe = weights.clone();
    let eval = |x: &[f64], store: &mut WeightStore| -> Result<f64> {
        store.unflatten(x)?;
        objective(store)
    };
    let mut losses = Vec::with_capacity(spsa.iterations + 1);
    let initial = eval(&theta, &mut probe)?;
    losses.push(initial);
    let mut delta = vec![0.0; theta.len()];
    let mut plus = vec![0.0; theta.len()];
    let mut minus = vec![0.0; theta.len()];
    for k in 0..spsa.iterations {
        let ak = spsa.a / (k as f64 + 1.0 + spsa.stability).powf(spsa.alpha);
        let ck = spsa.c / (k as f64 + 1.0).powf(spsa.gamma);
        for d in delta.iter_mut() {
            *d = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for i in 0..theta.len() {
            plus[i] = theta[i] + ck * delta[i];
            minus[i] = theta[i] - ck * delta[i];
        }
        let lp = eval(&plus, &mut probe)?;
        let lm = eval(&minus, &mut probe)?;
        let scale = ak * (lp - lm) / (2.0 * ck);
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t -= scale / d;
        }
        let l = eval(&theta, &mut probe)?;
        if !l.is_finite() || l > 10.0 * initial {
            return Err(Error::Diverged {
                iteration: k,
                loss: l,
                initial,
            });
        }
        losses.push(l);
    }
    weights.unflatten(&theta)?;
    Ok(SpsaRun { losses, weights })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendRow {
    pub n_blocks: usize,
    pub channels: usize,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
    /// Published figures for the same configuration, when listed.
    pub reference_params: Option<f64>,
    pub reference_flops: Option<f64>,
}

/// Published `(N, C, params, FLOPs)` for a 2 s, 16 kHz clip.
pub const REFERENCE_TABLE: [(usize, usize, f64, f64); 7] = [
    (1, 16, 0.56e6, 13.44e9),
    (2, 16, 0.69e6, 14.57e9),
    (3, 16, 0.82e6, 15.70e9),
    (4, 16, 0.96e6, 16.83e9),
    (5, 16, 1.09e6, 17.96e9),
    (4, 8, 0.33e6, 5.82e9),
    (4, 24, 1.89e6, 33.04e9),
];

pub const TREND_DURATION_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
}

/// The published configurations: N = 1..5 at C = 16, then C = 8 and 24 at N = 4.
pub fn reference_configs() -> Vec<ModelConfig> {
    REFERENCE_TABLE
        .iter()
        .map(|&(n, c, _, _)| ModelConfig {
            n_blocks: n,
            channels: c,
            ..ModelConfig::default()
        })
        .collect()
}

pub fn table2_trend(cfgs: &[ModelConfig]) -> TrendReport {
    let rows = cfgs
        .iter()
        .map(|cfg| {
            let est = estimate_flops(cfg, TREND_DURATION_S);
            let reference = REFERENCE_TABLE
                .iter()
                .find(|r| r.0 == cfg.n_blocks && r.1 == cfg.channels);
            TrendRow {
                n_blocks: cfg.n_blocks,
                channels: cfg.channels,
                params: count_params(cfg),
                macs: est.macs,
                flops: est.flops,
                reference_params: reference.map(|r| r.2),
                reference_flops: reference.map(|r| r.3),
            }
        })
        .collect();
    TrendReport { rows }
}

impl TrendReport {
    /// Consecutive `(params, macs)` increments between rows sharing `C` whose
    /// `N` differ by one.
    pub fn block_increments(&self, channels: usize) -> Vec<(i64, i64)> {
        let mut rows: Vec<&TrendRow> = self.rows.iter().filter(|r| r.channels == channels).collect();
        rows.sort_by_key(|r| r.n_blocks);
        rows.windows(2)
            .filter(|w| w[1].n_blocks == w[0].n_blocks + 1)
            .map(|w| {
                (
                    w[1].params as i64 - w[0].params as i64,
                    w[1].macs as i64 - w[0].macs as i64,
                )
            })
            .collect()
    }

    /// Largest relative deviation of the increments from their mean.
    pub fn increment_spread(increments: &[i64]) -> f64 {
        if increments.is_empty() {
            return 0.0;
        }
        let mean = increments.iter().sum::<i64>() as f64 / increments.len() as f64;
        increments
            .iter()
            .map(|&d| (d as f64 - mean).abs() / mean.abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n_blocks,channels,params,macs,flops,ref_params,ref_flops\n");
        let opt = |v: Option<f64>| v.map(objectives::format_sig6).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.n_blocks,
                r.channels,
                r.params,
                r.macs,
                r.flops,
                opt(r.reference_params),
                opt(r.reference_flops)
            );
        }
        s
    }
}
