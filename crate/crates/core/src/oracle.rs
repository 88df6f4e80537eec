//! Exact inference for a single binary feature whose presence persists
//! through context-relevance events.
//!
//! Generative model, per feature: `phi_1 ~ Bernoulli(p)`; for each
//! transition `t -> t+1` an independent `zeta_t ~ Bernoulli(z_t)` decides
//! whether context carries over (`phi_{t+1} = phi_t`) or resets
//! (`phi_{t+1} ~ Bernoulli(p)`). Observations enter only through the
//! likelihood ratio `lambda_t = L(x_t | not phi) / L(x_t | phi)`.
//!
//! Three routes to the posteriors live here: the closed-form recursive
//! filter, a two-state forward-backward pass, and brute-force enumeration of
//! every `(phi, zeta)` trajectory. They cross-check each other.

use serde::{Deserialize, Serialize};

use crate::activations::{logit, sigmoid};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Longest sequence [`enumerate_posteriors`] accepts (`2^(2T-1)` paths).
pub const MAX_ENUMERATION_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleModel {
    /// Prior probability of the feature.
    pub p: f64,
    /// `z[t]` gates the transition from step `t` to `t + 1`; length `T - 1`.
    pub z: Vec<f64>,
    /// Likelihood ratios, one per step; length `T`.
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `P(phi_t | x_1..x_t)`
    pub filtered: Vec<f64>,
    /// `P(phi_t | x_1..x_T)`
    pub smoothed: Vec<f64>,
}

impl OracleModel {
    pub fn new(p: f64, z: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        let model = Self { p, z, lambda };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_empty() {
            return Err(Error::Domain("empty observation sequence".into()));
        }
        if self.z.len() + 1 != self.lambda.len() {
            return Err(Error::Dimension(format!(
                "{} gates for {} steps (need T - 1)",
                self.z.len(),
                self.lambda.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.p) || self.z.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::Domain("p and z must lie in [0, 1]".into()));
        }
        if self.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("likelihood ratios must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Transition kernel `P(phi_{t+1} = to | phi_t = from)`.
    fn kernel(&self, t: usize, from: bool, to: bool) -> f64 {
        let z = self.z[t];
        let reset = if to { self.p } else { 1.0 - self.p };
        z * f64::from(from == to) + (1.0 - z) * reset
    }

    fn emission(&self, t: usize, present: bool) -> f64 {
        if present {
            1.0
        } else {
            self.lambda[t]
        }
    }

    /// Random model with `T` uniform on `1..=t_max`, ratios log-uniform on
    /// `[e^-3, e^3]`, and gates either fractional or in `{0, 1}`.
    pub fn random(rng: &mut Rng, t_max: usize, binary_gates: bool) -> Self {
        let t = 1 + rng.below(t_max.max(1));
        let p = rng.uniform(0.05, 0.95);
        let z = (0..t - 1)
            .map(|_| {
                if binary_gates {
                    f64::from(u8::from(rng.bernoulli(0.5)))
                } else {
                    rng.uniform(0.0, 1.0)
                }
            })
            .collect();
        let lambda = (0..t).map(|_| rng.uniform(-3.0, 3.0).exp()).collect();
        Self { p, z, lambda }
    }

    /// Same model with each gate replaced by a `{0, 1}` draw from it.
    pub fn binarized(&self, rng: &mut Rng) -> Self {
        Self {
            z: self.z.iter().map(|&z| f64::from(u8::from(rng.bernoulli(z)))).collect(),
            ..self.clone()
        }
    }
}

/// Recursive filter: predictor `rho_t = (1 - z_{t-1}) p + z_{t-1} h_{t-1}`
/// (with `rho_1 = p`), then the Bayes update
/// `h_t = 1 / (1 + lambda_t (1 - rho_t) / rho_t)`.
pub fn bayes_filter(model: &OracleModel) -> Result<Vec<f64>> {
    model.validate()?;
    let mut out = Vec::with_capacity(model.len());
    let mut prev = model.p;
    for (t, &lambda) in model.lambda.iter().enumerate() {
        let rho = if t == 0 {
            model.p
        } else {
            let z = model.z[t - 1];
            (1.0 - z) * model.p + z * prev
        };
        let denom = rho + lambda * (1.0 - rho);
        if !(denom > 0.0) {
            return Err(Error::Numeric(format!("degenerate predictor {rho} at step {t}")));
        }
        let h = rho / denom;
        out.push(h);
        prev = h;
    }
    Ok(out)
}

/// The same filter written as a sigmoid with additive logit feedback:
/// `h_t = sigmoid(-ln lambda_t + logit(rho_t))`. Requires `rho_t` in (0,1).
pub fn logit_feedback_filter(model: &OracleModel) -> Result<Vec<f64>> {
    model.validate()?;
    let mut out = Vec::with_capacity(model.len());
    let mut prev = model.p;
    for (t, &lambda) in model.lambda.iter().enumerate() {
        let rho = if t == 0 {
            model.p
        } else {
            let z = model.z[t - 1];
            (1.0 - z) * model.p + z * prev
        };
        let h = sigmoid(-lambda.ln() + logit(rho)?);
        out.push(h);
        prev = h;
    }
    Ok(out)
}

/// Exact filtered and smoothed posteriors by scaled two-state
/// forward-backward over the mixture transition kernel.
pub fn forward_backward(model: &OracleModel) -> Result<Posteriors> {
    model.validate()?;
    let n = model.len();
    let mut alpha = vec![[0.0f64; 2]; n];
    let normalize = |v: [f64; 2], t: usize| -> Result<[f64; 2]> {
        let s = v[0] + v[1];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numeric(format!("zero evidence at step {t}")));
        }
        Ok([v[0] / s, v[1] / s])
    };
    alpha[0] = normalize(
        [(1.0 - model.p) * model.emission(0, false), model.p * model.emission(0, true)],
        0,
    )?;
    for t in 1..n {
        let mut next = [0.0; 2];
        for (to, slot) in next.iter_mut().enumerate() {
            let to = to == 1;
            let pred = alpha[t - 1][0] * model.kernel(t - 1, false, to)
                + alpha[t - 1][1] * model.kernel(t - 1, true, to);
            *slot = pred * model.emission(t, to);
        }
        alpha[t] = normalize(next, t)?;
    }
    let mut beta = vec![[1.0f64; 2]; n];
    for t in (0..n.saturating_sub(1)).rev() {
        let mut cur = [0.0; 2];
        for (from, slot) in cur.iter_mut().enumerate() {
            let from = from == 1;
            *slot = (0..2)
                .map(|to| {
                    let to_b = to == 1;
                    model.kernel(t, from, to_b) * model.emission(t + 1, to_b) * beta[t + 1][to]
                })
                .sum();
        }
        beta[t] = normalize(cur, t)?;
    }
    let filtered = alpha.iter().map(|a| a[1]).collect();
    let smoothed = alpha
        .iter()
        .zip(&beta)
        .enumerate()
        .map(|(t, (a, b))| normalize([a[0] * b[0], a[1] * b[1]], t).map(|v| v[1]))
        .collect::<Result<_>>()?;
    Ok(Posteriors { filtered, smoothed })
}

/// Brute-force marginals over all `2^T` feature paths and `2^(T-1)` gate
/// paths.
pub fn enumerate_posteriors(model: &OracleModel) -> Result<Posteriors> {
    model.validate()?;
    let n = model.len();
    if n > MAX_ENUMERATION_LEN {
        return Err(Error::Capacity(format!(
            "enumeration limited to T <= {MAX_ENUMERATION_LEN}, got {n}"
        )));
    }
    let reset = |to: bool| if to { model.p } else { 1.0 - model.p };
    let mut num = vec![0.0f64; n];
    let mut den = vec![0.0f64; n];
    let mut smooth_num = vec![0.0f64; n];
    let mut smooth_den = 0.0f64;
    let mut prefix = vec![0.0f64; n];
    for phi in 0u32..(1 << n) {
        let bit = |t: usize| phi >> t & 1 == 1;
        let mut lik = 1.0;
        for (t, slot) in prefix.iter_mut().enumerate() {
            lik *= model.emission(t, bit(t));
            *slot = lik;
        }
        for zeta in 0u32..(1 << (n - 1)) {
            let mut w = reset(bit(0));
            for t in 0..n - 1 {
                let carry = zeta >> t & 1 == 1;
                let (from, to) = (bit(t), bit(t + 1));
                w *= if carry {
                    model.z[t] * f64::from(from == to)
                } else {
                    (1.0 - model.z[t]) * reset(to)
                };
            }
            // Filtering at t sums out the future, so it weighs each path by
            // the likelihood of the prefix only.
            for t in 0..n {
                let wt = w * prefix[t];
                den[t] += wt;
                if bit(t) {
                    num[t] += wt;
                }
            }
            let full = w * prefix[n - 1];
            smooth_den += full;
            for (t, slot) in smooth_num.iter_mut().enumerate() {
                if bit(t) {
                    *slot += full;
                }
            }
        }
    }
    if den.iter().chain(std::iter::once(&smooth_den)).any(|d| !(*d > 0.0)) {
        return Err(Error::Numeric("zero evidence".into()));
    }
    Ok(Posteriors {
        filtered: num.iter().zip(&den).map(|(a, b)| a / b).collect(),
        smoothed: smooth_num.iter().map(|a| a / smooth_den).collect(),
    })
}

/// Unit-wise backward recursion in its derived form:
/// `h'_T = h_T`, `h'_{t-1} = (1 - z_{t-1}) h_{t-1} + z_{t-1} h'_t`, where
/// `z_{t-1}` is the gate of the transition into step `t`.
pub fn ubru_smoother_reference(model: &OracleModel, filtered: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    if filtered.len() != model.len() {
        return Err(Error::Dimension(format!(
            "{} filtered posteriors for {} steps",
            filtered.len(),
            model.len()
        )));
    }
    let mut out = filtered.to_vec();
    for k in (0..model.len().saturating_sub(1)).rev() {
        let z = model.z[k];
        out[k] = (1.0 - z) * filtered[k] + z * out[k + 1];
    }
    Ok(out)
}

/// Expected prize from independent lotteries with win probabilities
/// `probs` and prizes `weights`, by listing every outcome. Equals
/// `weights · probs`.
pub fn lottery_expectation(weights: &[f64], probs: &[f64]) -> Result<f64> {
    const MAX_FEATURES: usize = 3;
    if weights.len() != probs.len() {
        return Err(Error::Dimension("weights and probabilities differ in length".into()));
    }
    if weights.len() > MAX_FEATURES {
        return Err(Error::Capacity(format!("enumeration limited to {MAX_FEATURES} features")));
    }
    let n = weights.len();
    let mut total = 0.0;
    for outcome in 0u32..(1 << n) {
        let mut prob = 1.0;
        let mut prize = 0.0;
        for j in 0..n {
            if outcome >> j & 1 == 1 {
                prob *= probs[j];
                prize += weights[j];
            } else {
                prob *= 1.0 - probs[j];
            }
        }
        total += prob * prize;
    }
    Ok(total)
}

/// Errors found when checking one model against the enumeration oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAudit {
    /// Max |filter - enumeration| over both the fractional and the binary
    /// gate model.
    pub filter_error: f64,
    /// Max |smoother - enumeration| on the binary-gate model.
    pub smoother_error: f64,
    /// Max |smoother - enumeration| on the fractional-gate model. Logged,
    /// not bounded.
    pub smoother_gap: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compare `filter` against enumeration on `fractional` and `binary`, and
/// the unit-wise smoother against enumeration on both.
pub fn audit_models<F>(fractional: &OracleModel, binary: &OracleModel, filter: F) -> Result<OracleAudit>
where
    F: Fn(&OracleModel) -> Result<Vec<f64>>,
{
    let exact_frac = enumerate_posteriors(fractional)?;
    let exact_bin = enumerate_posteriors(binary)?;
    let filt_frac = filter(fractional)?;
    let filt_bin = filter(binary)?;
    let filter_error = max_abs_diff(&filt_frac, &exact_frac.filtered).max(max_abs_diff(&filt_bin, &exact_bin.filtered));
    let smooth_bin = ubru_smoother_reference(binary, &filt_bin)?;
    let smooth_frac = ubru_smoother_reference(fractional, &filt_frac)?;
    Ok(OracleAudit {
        filter_error,
        smoother_error: max_abs_diff(&smooth_bin, &exact_bin.smoothed),
        smoother_gap: max_abs_diff(&smooth_frac, &exact_frac.smoothed),
    })
}
