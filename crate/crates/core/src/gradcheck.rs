//! Central-difference gradient verification.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`finite_difference_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and one trainable variable per entry of
/// `params` and must return a scalar node. It is evaluated once for the
/// analytic gradient and twice per parameter element for the numeric one,
/// so it has to be deterministic.
pub fn finite_difference_check<T, F>(mut f: F, params: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            msg: format!("eps {eps} outside [1e-7, 1e-3]"),
        });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    check_finite(tape.value(loss).item())?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.or_zeros(v, p))
        .collect();

    let mut eval = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        check_finite(tape.value(out).item())
    };

    let h = T::lit(eps);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            // The perturbation actually applied, after rounding.
            let step = ((orig + h) - (orig - h)).as_f64();
            let numeric = (plus - minus) / step;
            let a = analytic[pi].data()[ei].as_f64();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite<T: Scalar>(v: T) -> Result<f64> {
    let v = v.as_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TensorError::NonFinite(format!("objective evaluated to {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_essentially_exact() {
        // f(x) = xᵀ A x with a fixed non-symmetric A.
        let a = Tensor::<f64>::from_rows(&[vec![2.0, -1.0, 0.5], vec![0.3, 1.0, 0.0], vec![1.5, 0.2, 3.0]]);
        let x = Tensor::<f64>::from_rows(&[vec![0.7], vec![-1.3], vec![2.1]]);
        let report = finite_difference_check(
            |tape, v| {
                let am = tape.constant(a.clone());
                let ax = tape.matmul(am, v[0])?;
                let prod = tape.mul(v[0], ax)?;
                Ok(tape.sum(prod))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::<f64>::from_f64([1], &[-1.0]).unwrap();
        let err = finite_difference_check(|tape, v| Ok(tape.sqrt(v[0])), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite(_)));
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let x = Tensor::<f64>::zeros([1]);
        assert!(finite_difference_check(|tape, v| Ok(tape.sum(v[0])), &[x], 1e-2).is_err());
    }
}
