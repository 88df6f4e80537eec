//! Nonlinearities read as Bayes posteriors.
//!
//! The sigmoid is the posterior of a two-class problem whose likelihood
//! ratio is exponential-family in the input; the softmax is its multi-class
//! counterpart. [`gaussian_to_affine`] and [`beta_to_affine`] produce the
//! weights and biases that make those identities exact, which the tests
//! check against direct density evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{p} is not in the open interval (0, 1)")))
    }
}

pub fn logit(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok((p / (1.0 - p)).ln())
}

pub fn odds(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(p / (1.0 - p))
}

/// `d/dp logit(p) = 1 / (p (1 - p))`, minimal (4) at `p = 0.5`.
pub fn logit_slope(p: f64) -> Result<f64> {
    check_probability(p)?;
    Ok(1.0 / (p * (1.0 - p)))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Linear surrogate `logit(h) ≈ alpha * h + beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitApprox {
    alpha: f64,
    beta: f64,
}

impl LogitApprox {
    pub const MIN_ALPHA: f64 = 4.0;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= Self::MIN_ALPHA) || !beta.is_finite() || !alpha.is_finite() {
            return Err(Error::Domain(format!(
                "logit slope must be finite and >= 4, got {alpha}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.alpha * h + self.beta
    }
}

const FIT_GRID_STEP: f64 = 1e-4;
const FIT_MIN_POINTS: usize = 101;

/// Least-squares line through `logit` sampled on a uniform grid over
/// `[lo, hi]`.
pub fn logit_linear_approx(lo: f64, hi: f64) -> Result<LogitApprox> {
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::Domain(format!("fit range ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    let n = (((hi - lo) / FIT_GRID_STEP).round() as usize + 1).max(FIT_MIN_POINTS);
    let step = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| (x / (1.0 - x)).ln()).collect();
    let mean_x = xs.iter().sum::<f64>() / n as f64;
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    let alpha = sxy / sxx;
    let beta = mean_y - alpha * mean_x;
    // The slope of logit never drops below 4, so neither can the fit; guard
    // only against the last ulp on vanishing ranges.
    LogitApprox::new(alpha.max(LogitApprox::MIN_ALPHA), beta)
}

/// Classes with Gaussian likelihoods sharing one covariance.
#[derive(Debug, Clone)]
pub struct GaussianClassModel {
    means: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
    priors: Vec<f64>,
}

impl GaussianClassModel {
    pub fn new(means: Vec<Vec<f64>>, covariance: Vec<Vec<f64>>, priors: Vec<f64>) -> Result<Self> {
        let c = means.len();
        if c < 2 || priors.len() != c {
            return Err(Error::Domain("need at least two classes with one prior each".into()));
        }
        let p = means[0].len();
        if p == 0 || means.iter().any(|m| m.len() != p) {
            return Err(Error::Dimension("class means must share one positive dimension".into()));
        }
        if covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension(format!("covariance must be {p}x{p}")));
        }
        if priors.iter().any(|&q| !(q > 0.0 && q <= 1.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("priors must be positive and sum to 1".into()));
        }
        for (i, row) in covariance.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if (c - covariance[j][i]).abs() > 1e-12 {
                    return Err(Error::Domain("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self {
            means,
            covariance,
            priors,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Output link of an [`AffineClassifier`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// One weight row; posterior of class 1 is `sigmoid(w·x + b)`.
    Sigmoid,
    /// One weight row per class.
    Softmax,
}

#[derive(Debug, Clone)]
pub struct AffineClassifier {
    pub link: Link,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl AffineClassifier {
    /// Posterior over classes for an input already in feature space.
    pub fn posterior(&self, features: &[f64]) -> Result<Vec<f64>> {
        let dim = self.weights[0].len();
        if features.len() != dim {
            return Err(Error::Dimension(format!("expected {dim} inputs, got {}", features.len())));
        }
        let act: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, features) + b)
            .collect();
        Ok(match self.link {
            Link::Sigmoid => {
                let p = sigmoid(act[0]);
                vec![p, 1.0 - p]
            }
            Link::Softmax => softmax(&act),
        })
    }
}

/// Weights and biases whose sigmoid (two classes) or softmax (more) equals
/// the Bayes posterior of the Gaussian model.
pub fn gaussian_to_affine(model: &GaussianClassModel) -> Result<AffineClassifier> {
    let p = model.dim();
    let cov = DMatrix::from_fn(p, p, |i, j| model.covariance[i][j]);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let solved: Vec<DVector<f64>> = model
        .means
        .iter()
        .map(|m| chol.solve(&DVector::from_column_slice(m)))
        .collect();
    // mu^T Sigma^-1 mu
    let quad: Vec<f64> = model
        .means
        .iter()
        .zip(&solved)
        .map(|(m, s)| dot(m, s.as_slice()))
        .collect();

    if model.means.len() == 2 {
        let w: Vec<f64> = solved[0].iter().zip(solved[1].iter()).map(|(a, b)| a - b).collect();
        let b = model.priors[0].ln() - model.priors[1].ln() - 0.5 * (quad[0] - quad[1]);
        Ok(AffineClassifier {
            link: Link::Sigmoid,
            weights: vec![w],
            biases: vec![b],
        })
    } else {
        let weights = solved.iter().map(|s| s.as_slice().to_vec()).collect();
        let biases = model
            .priors
            .iter()
            .zip(&quad)
            .map(|(pr, q)| pr.ln() - 0.5 * q)
            .collect();
        Ok(AffineClassifier {
            link: Link::Softmax,
            weights,
            biases,
        })
    }
}

/// Two-class posterior for inputs in `(0,1)^P` with independent
/// `Beta(alpha, 1)` likelihoods: sigmoid of an affine function of `ln x`.
#[derive(Debug, Clone)]
pub struct BetaAffine {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BetaAffine {
    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "expected {} inputs, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        if let Some(bad) = x.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Domain(format!("beta input {bad} outside (0, 1)")));
        }
        let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        Ok(sigmoid(dot(&self.weights, &logs) + self.bias))
    }
}

pub fn beta_to_affine(alpha1: &[f64], alpha2: &[f64], priors: (f64, f64)) -> Result<BetaAffine> {
    if alpha1.is_empty() || alpha1.len() != alpha2.len() {
        return Err(Error::Dimension("alpha vectors must be non-empty and equal length".into()));
    }
    if alpha1.iter().chain(alpha2).any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Domain("beta shape parameters must be positive".into()));
    }
    if !(priors.0 > 0.0 && priors.1 > 0.0) {
        return Err(Error::Domain("priors must be positive".into()));
    }
    // ln B(a, 1) = -ln a
    let weights = alpha1.iter().zip(alpha2).map(|(a, b)| a - b).collect();
    let bias = priors.0.ln() - priors.1.ln() + alpha1.iter().zip(alpha2).map(|(a, b)| a.ln() - b.ln()).sum::<f64>();
    Ok(BetaAffine { weights, bias })
}

/// Sigmoid unit whose precision is scaled by `rho`; `rho = 0` gives 0.5.
pub fn variance_scaled_sigmoid(x: &[f64], rho: f64, weights: &[f64], bias: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} outside [0, 1]")));
    }
    if x.len() != weights.len() {
        return Err(Error::Dimension(format!("expected {} inputs, got {}", weights.len(), x.len())));
    }
    Ok(sigmoid(rho * (dot(weights, x) + bias)))
}
