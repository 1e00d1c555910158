//! Every loss term for a clean clip against its noisy and half-gain versions,
//! with the segmental-SNR proxy standing in for the critic.

use lort::objectives::{waveform_report, LossWeights, SegSnrProxy};
use lort::signal::{StftConfig, Waveform};
use lort::verify::SyntheticTask;

fn main() -> lort::Result<()> {
    let task = SyntheticTask::generate(4, 1.0, 16000, 5.0)?;
    let half = Waveform::new(task.clean.samples.iter().map(|v| 0.5 * v).collect(), 16000)?;
    let (cfg, w, oracle) = (StftConfig::default(), LossWeights::default(), SegSnrProxy::default());
    for (name, est) in [("clean", &task.clean), ("noisy", &task.noisy), ("half", &half)] {
        let r = waveform_report(&task.clean, est, &cfg, &w, &oracle)?;
        println!("{name:>5}: {r}");
    }
    Ok(())
}
