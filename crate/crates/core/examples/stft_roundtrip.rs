//! Analysis/synthesis roundtrip and the consistency of random spectrograms.

use lort::array::DenseArray;
use lort::objectives::loss_consistency;
use lort::signal::{istft, stft, ComplexSpec, StftConfig};
use lort::verify::SyntheticTask;

fn main() -> lort::Result<()> {
    let x = SyntheticTask::generate(2, 1.0, 16000, 10.0)?.noisy;
    for hop in [100, 120, 150, 255] {
        let spec = stft(&x, 510, 510, hop)?;
        let y = istft(&spec, x.len())?;
        let err: f64 = x.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        println!(
            "hop {hop:>3}: {} frames, SNR {:.1} dB, consistency {:.2e}",
            spec.frames(),
            10.0 * (x.energy() / err).log10(),
            loss_consistency(&spec)?
        );
    }

    let cfg = StftConfig::default();
    let frames = cfg.frames(x.len());
    let mut k = 0u64;
    let mut noise = |_| {
        k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (k >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let re = DenseArray::from_fn(&[frames, cfg.bins()], &mut noise);
    let im = DenseArray::from_fn(&[frames, cfg.bins()], &mut noise);
    let random = ComplexSpec::from_planes(re, im, cfg)?;
    println!("random spectrogram consistency {:.4}", loss_consistency(&random)?);
    Ok(())
}
