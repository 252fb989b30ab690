//! Run the finite-difference gradient suite and print the worst case.
//!
//! `cargo run --release --example gradient_check`

use divpatch::gradcheck::{finite_diff_check, run_suite};
use divpatch::{Tape, Tensor};

fn main() -> divpatch::Result<()> {
    // A single check on a hand-written function.
    let x = Tensor::<f64>::from_f64([3], &[0.5, -1.0, 2.0])?;
    let err = finite_diff_check(
        |t: &mut Tape<f64>, v| {
            let g = t.gelu(v);
            let p = t.mul(g, v)?;
            Ok(t.sum(p))
        },
        &x,
        1e-3,
    )?;
    println!("gelu(x)*x: rel err {err:.2e}");

    let results = run_suite(2)?;
    let worst = results
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .expect("suite is non-empty");
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} checks, {failed} failed; worst {} at {:.2e}",
        results.len(),
        worst.name,
        worst.rel_err
    );
    Ok(())
}
