//! Check the analytic gradients of every loss term against central
//! differences, then show that a corrupted gradient is caught.

use lort::verify::{gradcheck_losses, gradcheck_losses_with, GRADCHECK_INSTANCES, GRADCHECK_TERMS};

fn main() -> lort::Result<()> {
    let ok = gradcheck_losses(0)?;
    println!(
        "terms {:?}, {} instances, {} coordinates",
        GRADCHECK_TERMS, GRADCHECK_INSTANCES, ok.n_checked
    );
    println!(
        "max relative error {:.3e} at {}[{}]",
        ok.max_rel_err, ok.argmax_location.0, ok.argmax_location.1
    );

    // Halve the consistency gradient and watch the error jump.
    let bad = gradcheck_losses_with(0, &|term, g| {
        if term == "con" {
            g.iter_mut().for_each(|v| *v *= 0.5);
        }
    })?;
    println!(
        "with a halved consistency gradient: {:.3e} at {}[{}]",
        bad.max_rel_err, bad.argmax_location.0, bad.argmax_location.1
    );
    Ok(())
}
