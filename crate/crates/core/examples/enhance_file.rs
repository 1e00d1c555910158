//! Enhance a WAV file with freshly initialised (untrained) weights, or with a
//! weight file when one is given.
//!
//!     cargo run --release --example enhance_file -- noisy.wav out.wav [weights.bin]
//!
//! Without arguments a two-second synthetic clip is enhanced in memory.

use std::path::Path;

use lort::network::{forward, param_specs};
use lort::signal::{read_wav, write_wav};
use lort::verify::SyntheticTask;
use lort::weights::WeightStore;
use lort::ModelConfig;

fn main() -> lort::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (store, cfg) = match args.get(2) {
        Some(p) => {
            let (store, cfg) = WeightStore::load(Path::new(p))?;
            (store, cfg.unwrap_or_default())
        }
        None => {
            let cfg = ModelConfig::default();
            (WeightStore::initialize(&param_specs(&cfg), 0), cfg)
        }
    };
    let noisy = match args.first() {
        Some(p) => read_wav(&std::fs::read(p)?)?,
        None => SyntheticTask::generate(1, 2.0, cfg.sample_rate, 5.0)?.noisy,
    };

    let t0 = std::time::Instant::now();
    let out = forward(&noisy, &store, &cfg)?;
    let (lo, hi) = out
        .mask
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "{} samples, {} frames x {} bins, mask [{lo:.3}, {hi:.3}], {:.2?}",
        out.enhanced.len(),
        out.spec.frames(),
        out.spec.bins(),
        t0.elapsed()
    );
    if let Some(dst) = args.get(1) {
        std::fs::write(dst, write_wav(&out.enhanced))?;
        println!("wrote {dst}");
    }
    Ok(())
}
