//! SPSA on the micro model against a synthetic 0 dB denoising clip.
//!
//!     cargo run --release --example train_toy -- [iterations]

use lort::network::count_params;
use lort::verify::{smooth, smoothed_endpoints, spsa_train, SpsaConfig, SyntheticTask, SMOOTHING_WINDOW};
use lort::ModelConfig;

fn main() -> lort::Result<()> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let cfg = ModelConfig::micro();
    let spsa = SpsaConfig {
        iterations,
        ..SpsaConfig::toy()
    };
    let task = SyntheticTask::toy(spsa.seed)?;
    println!("{} parameters, {} iterations", count_params(&cfg), iterations);

    let t0 = std::time::Instant::now();
    let run = spsa_train(&cfg, &spsa, &task)?;
    let curve = smooth(&run.losses, SMOOTHING_WINDOW);
    for (i, l) in curve.iter().enumerate().step_by((iterations / 10).max(1)) {
        println!("iter {i:>4}  smoothed loss {l:.4}");
    }
    let (first, last) = smoothed_endpoints(&run.losses, SMOOTHING_WINDOW);
    println!("{first:.4} -> {last:.4} (ratio {:.3}) in {:.1?}", last / first, t0.elapsed());
    Ok(())
}
