//! Central finite-difference gradient checking.
//!
//! The function under test is always evaluated on an `f64` tape, so the
//! oracle's round-off stays far below the tolerances it is compared against.

mod suite;

pub use suite::{
    contrastive_reference_grad, loss_cases, objective_cases, op_cases, run_suite, small_model,
    Case, CaseFn, CheckResult, TOLERANCE,
};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Denominator floor for the relative error.
const REL_FLOOR: f64 = 1e-8;

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    tape.value(out).item()
}

/// Analytic gradient of `f` at `x`.
pub fn analytic_grad<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    Ok(tape
        .grad(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, 1e-8)` between the
/// analytic gradient `a` and the central difference `b`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite-difference step {eps} outside [1e-4, 1e-2]"
        )));
    }
    let x = x.cast::<f64>();
    let base = eval(&f, &x)?;
    if eval(&f, &x)?.to_bits() != base.to_bits() {
        return Err(Error::Contract(
            "function is not deterministic; fix its RNG seed".into(),
        ));
    }
    let analytic = analytic_grad(&f, &x)?;
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::<f64>::from_f64([3], &[0.3, -1.2, 2.0]).unwrap();
        let err = finite_diff_check(
            |t: &mut Tape<f64>, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_step_outside_range() {
        let x = Tensor::<f64>::ones([2]);
        let f = |t: &mut Tape<f64>, v| Ok(t.sum(v));
        assert!(finite_diff_check(f, &x, 1e-6).is_err());
        assert!(finite_diff_check(f, &x, 0.1).is_err());
    }

    #[test]
    fn rejects_nondeterministic_function() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::<f64>::ones([2]);
        let f = |t: &mut Tape<f64>, v| {
            calls.set(calls.get() + 1.0);
            let s = t.sum(v);
            Ok(t.scale(s, calls.get()))
        };
        assert!(matches!(
            finite_diff_check(f, &x, 1e-3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn suite_passes() {
        let results = run_suite(2).unwrap();
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        assert!(results
            .iter()
            .any(|r| r.name.starts_with("combined_objective/")));
    }

    #[test]
    fn broken_backward_rule_is_caught() {
        // sin with a derivative that is off by a factor of two.
        let x = Tensor::<f64>::from_f64([4], &[0.1, 0.7, -0.4, 1.3]).unwrap();
        let err = finite_diff_check(
            |t: &mut Tape<f64>, v| {
                let y = t.map(v, f64::sin, |z| 2.0 * z.cos());
                Ok(t.sum(y))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }
}
