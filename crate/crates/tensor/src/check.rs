//! Central finite-difference oracles for gradient checks.

use crate::error::Result;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-8)` maximised over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares the tape gradient of `f` at `point` with central differences
/// and returns the maximum relative error. `f` builds a scalar from the
/// leaf it is given.
pub fn finite_difference_check<F>(f: F, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let analytic = tape.backward(y, &[x])?.remove(0);

    let shape = point.shape().to_vec();
    let eval = |v: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_parts(shape.clone(), v.to_vec()));
        match f(&mut tape, x) {
            Ok(y) => tape.value(y).item(),
            Err(_) => f64::NAN,
        }
    };
    let numeric = numeric_gradient(eval, point.data(), h);
    let err = max_relative_error(analytic.data(), &numeric);
    Ok(if err.is_nan() { f64::INFINITY } else { err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_difference_check(
            |t, x| {
                let y = t.square(x)?;
                t.sum(y)
            },
            &Tensor::scalar(3.0),
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6, "err {err}");
    }

    #[test]
    fn abs_in_smooth_region() {
        let err = finite_difference_check(
            |t, x| {
                let y = t.abs(x)?;
                t.sum(y)
            },
            &Tensor::scalar(1.0),
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6, "err {err}");
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0f64));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let g = tape.backward(y, &[x]).unwrap();
        assert!((g[0].item() - 0.2).abs() < 1e-15);
        let err = finite_difference_check(|t, x| t.leaky_relu(x, 0.2), &Tensor::scalar(-1.0), 1e-4).unwrap();
        assert!(err <= 1e-9, "err {err}");
    }

    #[test]
    fn reports_large_error_instead_of_failing() {
        // A wrong "gradient" cannot be injected through the tape, so check
        // the reporting helper directly.
        assert!(max_relative_error(&[1.0], &[2.0]) > 0.4);
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
    }
}
