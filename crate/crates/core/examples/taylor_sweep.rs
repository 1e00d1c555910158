//! How far the first-order kernel drifts from softmax as the logit scale
//! shrinks. The log-log slope should sit near 2.

use lort::verify::taylor_error_sweep;

fn main() -> lort::Result<()> {
    let scales = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.001, 0.0];
    let report = taylor_error_sweep(&scales, 20, 0)?;
    for (s, e) in &report.points {
        println!("scale {s:<8} max err {e:.3e}");
    }
    println!("slope {:.4}", report.slope);
    Ok(())
}
