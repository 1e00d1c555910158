//! Command-line front end. Every subcommand writes its report to stdout and
//! a single `error: ...` line to stderr on failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::DenseArray;
use crate::attention::{count_ops, softmax_attention, taylor_attention, AttentionInput};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::{self, count_params, param_specs};
use crate::objectives::{format_sig6, waveform_report, SegSnrProxy};
use crate::signal::{read_wav, write_wav};
use crate::verify::{self, SpsaConfig, SyntheticTask};
use crate::weights::WeightStore;

/// Gradient check tolerance on the worst relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "lort", version, about = "Speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance a 16-bit mono WAV file.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Operation counts and wall time of softmax and Taylor attention.
    Bench {
        #[arg(long, default_value_t = 32)]
        t: usize,
        #[arg(long, default_value_t = 64)]
        f: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Taylor-vs-softmax error across logit scales.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// SPSA descent of the micro model on a synthetic denoising task.
    TrainToy {
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        /// Write the trained weights here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and operation counts for the published configurations.
    Trend,
    /// Loss report of an estimate against a reference recording.
    Losses {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Write freshly initialised weights.
    InitWeights {
        /// `default`, `micro` or a JSON model configuration file.
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
}

/// Overrides of the model configuration.
#[derive(Debug, Args, Default)]
struct ModelArgs {
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    fft_len: Option<usize>,
    #[arg(long)]
    win_len: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    mag_compression: Option<f64>,
}

impl ModelArgs {
    fn apply(&self, mut cfg: ModelConfig) -> Result<ModelConfig> {
        if let Some(v) = self.n_blocks {
            cfg.n_blocks = v;
        }
        if let Some(v) = self.channels {
            cfg.channels = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.fft_len {
            cfg.stft.fft_len = v;
        }
        if let Some(v) = self.win_len {
            cfg.stft.win_len = v;
        }
        if let Some(v) = self.hop {
            cfg.stft.hop = v;
        }
        if let Some(v) = self.mag_compression {
            cfg.mag_compression = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn is_empty(&self) -> bool {
        self.n_blocks.is_none()
            && self.channels.is_none()
            && self.heads.is_none()
            && self.fft_len.is_none()
            && self.win_len.is_none()
            && self.hop.is_none()
            && self.mag_compression.is_none()
    }
}

/// Run with the process's stdout and stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Parse `argv` (program name first) and execute, returning the exit code.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            let line = line.strip_prefix("error: ").unwrap_or(line);
            let _ = writeln!(err, "error: {line}");
            return 2;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        // Downstream closed early (`| head`); nothing left to report.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} file not found: {}",
            path.display()
        )))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Error::InvalidInput(format!(
            "output directory does not exist: {}",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn load_config(spec: &str) -> Result<ModelConfig> {
    match spec {
        "default" => Ok(ModelConfig::default()),
        "micro" => Ok(ModelConfig::micro()),
        path => {
            let p = Path::new(path);
            require_file(p, "config")?;
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("config {path}: {e}")))
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Enhance {
            input,
            weights,
            out: dest,
            model,
        } => {
            require_file(&input, "input")?;
            require_file(&weights, "weights")?;
            require_parent(&dest)?;
            let noisy = read_wav(&std::fs::read(&input)?)?;
            let (store, stored) = WeightStore::load(&weights)?;
            let cfg = match stored {
                Some(c) if model.is_empty() => c,
                Some(c) => model.apply(c)?,
                None => model.apply(ModelConfig::default())?,
            };
            let result = network::forward(&noisy, &store, &cfg)?;
            std::fs::write(&dest, write_wav(&result.enhanced))?;
            let (lo, hi) = min_max(result.mask.data());
            writeln!(
                out,
                "samples={} mask_min={} mask_max={}",
                result.enhanced.len(),
                format_sig6(lo),
                format_sig6(hi)
            )?;
        }
        Command::Bench {
            t,
            f,
            d,
            trials,
            seed,
        } => bench(out, t, f, d, trials, seed)?,
        Command::Gradcheck { seed } => {
            let r = verify::gradcheck_losses(seed)?;
            writeln!(
                out,
                "max_rel_err={} location={}[{}] n_checked={}",
                format_sig6(r.max_rel_err),
                r.argmax_location.0,
                r.argmax_location.1,
                r.n_checked
            )?;
            if !(r.max_rel_err <= GRADCHECK_TOLERANCE) {
                return Err(Error::InvalidInput(format!(
                    "gradient check failed: max_rel_err {} exceeds {GRADCHECK_TOLERANCE}",
                    format_sig6(r.max_rel_err)
                )));
            }
        }
        Command::Sweep {
            scales,
            trials,
            seed,
        } => {
            let r = verify::taylor_error_sweep(&scales, trials, seed)?;
            writeln!(out, "slope={}", format_sig6(r.slope))?;
            write!(out, "{}", r.to_csv())?;
        }
        Command::TrainToy {
            iterations,
            seed,
            a,
            c,
            out: dest,
        } => {
            if let Some(p) = &dest {
                require_parent(p)?;
            }
            let base = SpsaConfig::toy();
            let spsa = SpsaConfig {
                iterations,
                seed,
                a: a.unwrap_or(base.a),
                c: c.unwrap_or(base.c),
                ..base
            };
            let cfg = ModelConfig::micro();
            let task = SyntheticTask::toy(seed)?;
            let run = verify::spsa_train(&cfg, &spsa, &task)?;
            let (first, last) =
                verify::smoothed_endpoints(&run.losses, verify::SMOOTHING_WINDOW);
            writeln!(
                out,
                "initial_smoothed={} final_smoothed={} ratio={}",
                format_sig6(first),
                format_sig6(last),
                format_sig6(last / first)
            )?;
            write!(out, "{}", run.to_csv())?;
            if let Some(p) = dest {
                run.weights.save(&p, Some(&cfg))?;
            }
        }
        Command::Trend => {
            let report = verify::table2_trend(&verify::reference_configs());
            let default_params = count_params(&ModelConfig::default());
            writeln!(
                out,
                "default_params={} reference_params=960000 ratio={}",
                default_params,
                format_sig6(default_params as f64 / 0.96e6)
            )?;
            write!(out, "{}", report.to_csv())?;
        }
        Command::Losses {
            reference,
            est,
            model,
        } => {
            require_file(&reference, "reference")?;
            require_file(&est, "estimate")?;
            let cfg = model.apply(ModelConfig::default())?;
            let r = read_wav(&std::fs::read(&reference)?)?;
            let e = read_wav(&std::fs::read(&est)?)?;
            let report = waveform_report(
                &r,
                &e,
                &cfg.stft,
                &cfg.loss_weights,
                &SegSnrProxy::default(),
            )?;
            writeln!(out, "{report}")?;
        }
        Command::InitWeights {
            config,
            seed,
            out: dest,
            model,
        } => {
            require_parent(&dest)?;
            let cfg = model.apply(load_config(&config)?)?;
            let store = WeightStore::initialize(&param_specs(&cfg), seed);
            store.save(&dest, Some(&cfg))?;
            writeln!(
                out,
                "params={} tensors={} path={}",
                store.total_params(),
                store.len(),
                dest.display()
            )?;
        }
    }
    Ok(())
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

fn bench(out: &mut dyn Write, t: usize, f: usize, d: usize, trials: usize, seed: u64) -> Result<()> {
    if t == 0 || f == 0 || d == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "t, f, d and trials must be positive".into(),
        ));
    }
    let ops = count_ops(t as u64, f as u64, d as u64);
    writeln!(out, "mhsa_ops={} tmsa_ops={}", ops.mhsa_ops, ops.tmsa_ops)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, t * f, d];
    let mut draw = || DenseArray::from_fn(&shape, |_| StandardNormal.sample(&mut rng));
    let input = AttentionInput::new(draw(), draw(), draw(), (t, f))?;
    let scale = 1.0 / (d as f64).sqrt();
    writeln!(out, "kernel,trial,seconds")?;
    for trial in 0..trials {
        let start = Instant::now();
        std::hint::black_box(softmax_attention(&input, scale));
        let soft = start.elapsed().as_secs_f64();
        let start = Instant::now();
        std::hint::black_box(taylor_attention(&input)?);
        let taylor = start.elapsed().as_secs_f64();
        writeln!(out, "softmax,{trial},{}", format_sig6(soft))?;
        writeln!(out, "taylor,{trial},{}", format_sig6(taylor))?;
    }
    Ok(())
}
