//! Central finite-difference gradient checking in 64-bit precision.

use std::fmt;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const STEP: f64 = 1e-4;

/// Magnitude below which gradient errors are measured absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)` seen.
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max rel error {:.3e} over {} elements",
            self.max_rel_error, self.checked
        )?;
        if let Some((i, j)) = self.worst {
            write!(
                f,
                " (input {i}, element {j}: analytic {:.6e}, numeric {:.6e})",
                self.analytic_at_worst, self.numeric_at_worst
            )?;
        }
        Ok(())
    }
}

/// A value or gradient was NaN or infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct NonFiniteAt {
    pub what: &'static str,
    pub input: usize,
    pub element: usize,
}

impl fmt::Display for NonFiniteAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "non-finite {} at input {}, element {}",
            self.what, self.input, self.element
        )
    }
}

impl std::error::Error for NonFiniteAt {}

/// Compares `gradient(point)` against central differences of `value` around `point`.
pub fn check_with<V, G>(
    value: V,
    gradient: G,
    point: &[Tensor<f64>],
    step: f64,
) -> Result<GradCheckReport, NonFiniteAt>
where
    V: Fn(&[Tensor<f64>]) -> f64,
    G: Fn(&[Tensor<f64>]) -> Vec<Tensor<f64>>,
{
    let analytic = gradient(point);
    assert_eq!(analytic.len(), point.len(), "one gradient per input");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = point.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..point[i].numel() {
            let orig = point[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let up = value(&probe);
            probe[i].data_mut()[j] = orig - step;
            let down = value(&probe);
            probe[i].data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NonFiniteAt {
                    what: "value",
                    input: i,
                    element: j,
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[j];
            if !a.is_finite() {
                return Err(NonFiniteAt {
                    what: "gradient",
                    input: i,
                    element: j,
                });
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient check of a scalar function built on a [`Graph`]; analytic gradients come from
/// reverse-mode differentiation.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], step: f64) -> Result<GradCheckReport, NonFiniteAt>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor<f64>], with_grad: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        let v = g.value(out).data()[0];
        let grads = with_grad.then(|| {
            g.backward(out);
            vars.iter()
                .zip(inputs)
                .map(|(&var, t)| {
                    g.grad(var)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(t.shape()))
                })
                .collect::<Vec<_>>()
        });
        (v, grads)
    };
    check_with(
        |p| eval(p, false).0,
        |p| eval(p, true).1.unwrap(),
        point,
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = grad_check(
            |g, v| {
                let s = g.square(v[0]);
                g.sum_all(s)
            },
            &[x],
            STEP,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::from_vec(&[3], vec![0.5, 1.0, -2.0]).unwrap();
        let r = check_with(
            |p| p[0].data().iter().map(|v| v * v * v).sum(),
            // true derivative is 3x^2; report 2x^2
            |p| vec![p[0].map(|v| 2.0 * v * v)],
            &[x],
            STEP,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-1, "{r}");
    }

    #[test]
    fn non_finite_is_located() {
        let x = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let err = check_with(
            |p| p[0].data().iter().map(|v| v.abs().sqrt()).sum(),
            |p| vec![p[0].map(|v| 0.5 / v.sqrt())],
            &[x],
            STEP,
        )
        .unwrap_err();
        assert_eq!(err.input, 0);
        assert_eq!(err.element, 1);
    }
}
