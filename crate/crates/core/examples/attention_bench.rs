//! Operation counts and wall time of exact softmax attention against the
//! first-order Taylor kernel on random inputs of growing length.

use std::time::Instant;

use lort::array::DenseArray;
use lort::attention::{count_ops, softmax_attention, taylor_attention, AttentionInput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> lort::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = 16;
    println!("{:>6} {:>14} {:>14} {:>10} {:>10}", "tokens", "mhsa_ops", "tmsa_ops", "softmax", "taylor");
    for (t, f) in [(8, 8), (16, 16), (32, 32), (32, 64)] {
        let n = t * f;
        let mut draw = || DenseArray::from_fn(&[1, n, d], |_| StandardNormal.sample(&mut rng));
        let input = AttentionInput::new(draw(), draw(), draw(), (t, f))?;

        let t0 = Instant::now();
        let exact = softmax_attention(&input, 1.0 / (d as f64).sqrt());
        let soft = t0.elapsed();
        let t0 = Instant::now();
        let approx = taylor_attention(&input)?;
        let taylor = t0.elapsed();
        assert_eq!(exact.shape(), approx.shape());

        let ops = count_ops(t as u64, f as u64, d as u64);
        println!(
            "{n:>6} {:>14} {:>14} {:>10.2?} {:>10.2?}",
            ops.mhsa_ops, ops.tmsa_ops, soft, taylor
        );
    }
    Ok(())
}
