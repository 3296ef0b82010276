//! Validate the analytic backward pass against central finite differences
//! for every attention variant.
//!
//! Run with: cargo run --example check_gradients

use gmaflow::gma::GmaVariant;
use gmaflow::gradcheck::{check_gma, finite_diff, DEFAULT_STEP, DEFAULT_THRESHOLD};

fn main() -> gmaflow::Result<()> {
    // the oracle itself: central differences on a simple quadratic
    let grad = finite_diff(|p| Ok(p.iter().map(|x| x * x).sum()), &[1.0, 2.0], DEFAULT_STEP)?;
    println!("d/dp sum(p^2) at (1, 2) = ({:.6}, {:.6})\n", grad[0], grad[1]);

    for variant in [
        GmaVariant::ContentOnly,
        GmaVariant::ContentPlusPosition,
        GmaVariant::PositionOnly,
    ] {
        let report = check_gma(3, 3, 4, variant, 0, DEFAULT_STEP, DEFAULT_THRESHOLD)?;
        print!("{}", report.text_table());
        println!();
        assert!(report.passed);
    }
    println!("all variants agree with the finite-difference oracle");
    Ok(())
}
