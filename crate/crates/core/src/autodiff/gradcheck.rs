use std::fmt;

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Values at the entry with the largest relative error.
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub eps: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_abs_error).fold(0.0, f64::max)
    }

    pub fn scalars(&self) -> usize {
        self.params.iter().map(|p| p.scalars).sum()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.params.iter().map(|p| p.name.len()).max().unwrap_or(4).max(9);
        writeln!(
            f,
            "{:<width$}  {:>7}  {:>10}  {:>10}  {:>14}  {:>14}",
            "parameter", "scalars", "max_abs", "max_rel", "analytic", "numeric"
        )?;
        for p in &self.params {
            writeln!(
                f,
                "{:<width$}  {:>7}  {:>10.3e}  {:>10.3e}  {:>14.6e}  {:>14.6e}",
                p.name, p.scalars, p.max_abs_error, p.max_rel_error, p.analytic, p.numeric
            )?;
        }
        write!(
            f,
            "eps={:e}  scalars={}  max_abs={:.3e}  max_rel={:.3e}",
            self.eps,
            self.scalars(),
            self.max_abs_error(),
            self.max_rel_error()
        )
    }
}

/// Compares `analytic` against central differences of `loss` taken at
/// every scalar of every named tensor.
pub fn grad_check(
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    eps: f64,
    mut loss: impl FnMut(&[Tensor]) -> Result<f64>,
) -> Result<GradReport> {
    if params.len() != analytic.len() {
        return dim_err(format!("{} tensors but {} gradients", params.len(), analytic.len()));
    }
    let mut current: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (k, (name, value)) in params.iter().enumerate() {
        if analytic[k].shape() != value.shape() {
            return dim_err(format!("{name}: gradient shape {:?} vs {:?}", analytic[k].shape(), value.shape()));
        }
        let mut check = ParamCheck {
            name: name.clone(),
            scalars: value.len(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..value.len() {
            let at = |delta: f64| {
                let mut d = value.data().to_vec();
                d[i] += delta;
                Tensor::new(value.shape().to_vec(), d)
            };
            current[k] = at(eps)?;
            let up = loss(&current)?;
            current[k] = at(-eps)?;
            let down = loss(&current)?;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k].data()[i];
            let rel = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if rel >= check.max_rel_error {
                check.max_rel_error = rel;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        current[k] = value.clone();
        checks.push(check);
    }
    Ok(GradReport { eps, params: checks })
}
