use super::HasParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Denominator floor for the relative error. Central differences at
/// h = 1e-5 carry roundoff near 1e-10 on O(1) losses, so gradients below
/// this size are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences.
///
/// `loss_fn(model, backward)` must be deterministic; with `backward = true`
/// it also accumulates gradients into the model's params. Relative error per
/// coordinate is `|a - n| / max(|a|, |n|, GRAD_FLOOR)`. `max_per_param` limits the
/// coordinates visited per tensor (evenly strided) for large parameters.
pub fn grad_check<M, F>(
    model: &mut M,
    mut loss_fn: F,
    h: f64,
    tolerance: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    M: HasParams,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grad();
    let base = loss_fn(model, true)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    model.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tolerance,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = match max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = model.params()[pi].value.data()[idx];
            model.params_mut()[pi].value.data_mut()[idx] = orig + h;
            let plus = loss_fn(model, false)?;
            model.params_mut()[pi].value.data_mut()[idx] = orig - h;
            let minus = loss_fn(model, false)?;
            model.params_mut()[pi].value.data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("loss not finite near {}[{idx}]", names[pi])));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((names[pi].clone(), idx));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Param, Tensor};

    struct Scalar(Param);

    impl HasParams for Scalar {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn square_at_three() {
        let mut m = Scalar(Param::new("w", Tensor::from_vec(&[1], vec![3.0]).unwrap()));
        let report = grad_check(
            &mut m,
            |m, backward| {
                let w = m.0.value.data()[0];
                if backward {
                    m.0.grad.data_mut()[0] += 2.0 * w;
                }
                Ok(w * w)
            },
            1e-3,
            1e-6,
            None,
        )
        .unwrap();
        assert!((report.analytic_at_worst - 6.0).abs() < 1e-12);
        assert!((report.numeric_at_worst - 6.0).abs() < 1e-6);
        assert!(report.passed());
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut m = Scalar(Param::new("w", Tensor::from_vec(&[1], vec![3.0]).unwrap()));
        let report = grad_check(
            &mut m,
            |m, backward| {
                let w = m.0.value.data()[0];
                if backward {
                    m.0.grad.data_mut()[0] += 2.1 * w;
                }
                Ok(w * w)
            },
            1e-3,
            1e-3,
            None,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut m = Scalar(Param::new("w", Tensor::from_vec(&[1], vec![0.0]).unwrap()));
        let err = grad_check(&mut m, |_, _| Ok(f64::NAN), 1e-3, 1e-3, None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
