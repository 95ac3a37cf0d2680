use crate::error::{Error, Result};

use super::tape::Tape;
use super::Tensor;

/// Central-difference gradient check for a scalar-valued tensor function.
///
/// Runs `f` once on a tape to get the analytic gradient of its output with
/// respect to `x`, then probes every coordinate with `(f(x+h*e) - f(x-h*e)) /
/// 2h` and returns the worst relative disagreement
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` receives `None` for the probe evaluations, so it must compute the
/// same value whether or not it is recording.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(Option<&mut Tape>, &Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(Error::argument(
            "finite_difference_check",
            format!("step {step} must be positive"),
        ));
    }
    let mut tape = Tape::new();
    let mut tracked = x.detached();
    tape.watch(&mut tracked);
    let loss = f(Some(&mut tape), &tracked)?;
    if loss.numel() != 1 {
        return Err(Error::argument(
            "finite_difference_check",
            format!("function must return a scalar, got shape {:?}", loss.shape()),
        ));
    }
    let grads = tape.backward(&loss)?;
    let analytic = grads
        .of(&tracked)
        .ok_or_else(|| Error::Invariant("watched tensor missing from gradient map".into()))?
        .to_vec();

    let mut max_rel: f64 = 0.0;
    for i in 0..x.numel() {
        let plus = f(None, &x.perturbed(i, step))?.item()?;
        let minus = f(None, &x.perturbed(i, -step))?.item()?;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::super::ops;
    use super::*;

    #[test]
    fn sum_of_squares_gradient_matches() {
        // f(x) = sum(x*x), grad = 2x; at x=[1,2] the analytic gradient is [2,4].
        let f = |tape: Option<&mut Tape>, x: &Tensor| {
            let mut tape = tape;
            let sq = ops::mul(tape.as_deref_mut(), x, x)?;
            ops::sum(tape, &sq)
        };
        let x = Tensor::vector(&[1.0, 2.0]);

        let mut tape = Tape::new();
        let mut tracked = x.detached();
        tape.watch(&mut tracked);
        let loss = f(Some(&mut tape), &tracked).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.of(&tracked).unwrap(), &[2.0, 4.0]);

        let err = finite_difference_check(f, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn relu_sum_gradient_away_from_kink() {
        let f = |tape: Option<&mut Tape>, x: &Tensor| {
            let mut tape = tape;
            let r = ops::relu(tape.as_deref_mut(), x)?;
            ops::sum(tape, &r)
        };
        let x = Tensor::vector(&[1.5, -2.0, 0.75, -0.4]);
        let err = finite_difference_check(f, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let f = |tape: Option<&mut Tape>, x: &Tensor| ops::sum(tape, x);
        let x = Tensor::vector(&[1.0]);
        assert!(finite_difference_check(f, &x, 0.0).is_err());
    }
}
