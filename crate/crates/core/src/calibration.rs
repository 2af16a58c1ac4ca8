//! Affine log-likelihood-ratio calibration trained by prior-weighted logistic
//! regression.
//!
//! A calibrator maps a score vector `x` to `f(x) = a0 + a1 x1 + ... + aM xM`.
//! Training minimizes the prior-weighted cross-entropy
//!
//! ```text
//! C = P  / N_tg * sum_tg  log(1 + exp(-(f + l)))
//!   + (1 - P) / N_ti * sum_ti  log(1 + exp(+(f + l)))
//! ```
//!
//! with `l = logit(P)`. Because the prior offset sits inside the loss, the
//! trained affine map is itself the LLR and nothing is subtracted when applying it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    /// a0.
    pub intercept: f64,
    /// a1..aM.
    pub weights: Vec<f64>,
    /// logit of the target prior used during training.
    pub prior_log_odds: f64,
}

impl Calibrator {
    pub fn zeros(dim: usize, prior_log_odds: f64) -> Self {
        Calibrator {
            intercept: 0.0,
            weights: vec![0.0; dim],
            prior_log_odds,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Parameters as `[a0, a1, ..., aM]`.
    pub fn params(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.weights.iter().copied())
            .collect()
    }

    pub fn from_params(params: &[f64], prior_log_odds: f64) -> Self {
        Calibrator {
            intercept: params[0],
            weights: params[1..].to_vec(),
            prior_log_odds,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<f64> {
        apply_calibration(self, x)
    }

    fn affine(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// P(target), strictly inside (0, 1).
    pub prior: f64,
    /// Stop once the gradient infinity-norm is at or below this.
    pub convergence_tol: f64,
    pub max_iters: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            prior: 0.5,
            convergence_tol: 1e-8,
            max_iters: 200,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_prior(prior: f64) -> Result<()> {
    if prior > 0.0 && prior < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "prior {prior} must lie strictly inside (0, 1)"
        )))
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_classes<V: AsRef<[f64]>>(cal: &Calibrator, targets: &[V], nontargets: &[V]) -> Result<()> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::insufficient(
            "calibration needs at least one target and one nontarget score vector",
        ));
    }
    for v in targets.iter().chain(nontargets) {
        if v.as_ref().len() != cal.dim() {
            return Err(Error::DimensionMismatch {
                expected: cal.dim(),
                got: v.as_ref().len(),
            });
        }
    }
    Ok(())
}

pub fn clr_objective<V: AsRef<[f64]>>(
    cal: &Calibrator,
    targets: &[V],
    nontargets: &[V],
    prior: f64,
) -> Result<f64> {
    check_prior(prior)?;
    check_classes(cal, targets, nontargets)?;
    Ok(objective_unchecked(cal, targets, nontargets, prior))
}

fn objective_unchecked<V: AsRef<[f64]>>(
    cal: &Calibrator,
    targets: &[V],
    nontargets: &[V],
    prior: f64,
) -> f64 {
    let lambda = logit(prior);
    let tg: f64 = targets
        .iter()
        .map(|x| softplus(-(cal.affine(x.as_ref()) + lambda)))
        .sum::<f64>()
        / targets.len() as f64;
    let ti: f64 = nontargets
        .iter()
        .map(|x| softplus(cal.affine(x.as_ref()) + lambda))
        .sum::<f64>()
        / nontargets.len() as f64;
    prior * tg + (1.0 - prior) * ti
}

/// Gradient over `[a0, a1, ..., aM]`.
pub fn clr_gradient<V: AsRef<[f64]>>(
    cal: &Calibrator,
    targets: &[V],
    nontargets: &[V],
    prior: f64,
) -> Result<Vec<f64>> {
    check_prior(prior)?;
    check_classes(cal, targets, nontargets)?;
    Ok(derivatives(cal, targets, nontargets, prior, false).0)
}

/// Gradient, and the Hessian when requested.
fn derivatives<V: AsRef<[f64]>>(
    cal: &Calibrator,
    targets: &[V],
    nontargets: &[V],
    prior: f64,
    with_hessian: bool,
) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let lambda = logit(prior);
    let p = cal.dim() + 1;
    let mut grad = vec![0.0; p];
    let mut hess = with_hessian.then(|| DMatrix::<f64>::zeros(p, p));

    let mut accumulate = |vectors: &[V], class_weight: f64, is_target: bool| {
        let mut g = vec![0.0; p];
        let mut h = with_hessian.then(|| DMatrix::<f64>::zeros(p, p));
        for x in vectors {
            let x = x.as_ref();
            let z = cal.affine(x) + lambda;
            // d/dz softplus(-z) = -sigmoid(-z); d/dz softplus(z) = sigmoid(z).
            let dz = if is_target { -sigmoid(-z) } else { sigmoid(z) };
            g[0] += dz;
            for (gi, xi) in g[1..].iter_mut().zip(x) {
                *gi += dz * xi;
            }
            if let Some(h) = h.as_mut() {
                let w = sigmoid(z) * sigmoid(-z);
                for r in 0..p {
                    let xr = if r == 0 { 1.0 } else { x[r - 1] };
                    for c in 0..=r {
                        let xc = if c == 0 { 1.0 } else { x[c - 1] };
                        h[(r, c)] += w * xr * xc;
                    }
                }
            }
        }
        let scale = class_weight / vectors.len() as f64;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += scale * gi;
        }
        if let (Some(acc), Some(h)) = (hess.as_mut(), h) {
            *acc += h * scale;
        }
    };
    accumulate(targets, prior, true);
    accumulate(nontargets, 1.0 - prior, false);

    if let Some(h) = hess.as_mut() {
        for r in 0..p {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
    }
    (grad, hess)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits the calibrator minimizing [`clr_objective`] by Newton's method with
/// step halving. Deterministic: no randomness, fixed evaluation order.
pub fn train_calibrator<V: AsRef<[f64]>>(
    targets: &[V],
    nontargets: &[V],
    cfg: &TrainingConfig,
) -> Result<Calibrator> {
    check_prior(cfg.prior)?;
    let dim = targets
        .first()
        .or(nontargets.first())
        .map(|v| v.as_ref().len())
        .unwrap_or(0);
    if dim == 0 {
        return Err(Error::invalid(
            "calibration input dimension must be at least 1",
        ));
    }
    let lambda = logit(cfg.prior);
    let mut cal = Calibrator::zeros(dim, lambda);
    check_classes(&cal, targets, nontargets)?;

    for i in 0..dim {
        let first = targets[0].as_ref()[i];
        if targets
            .iter()
            .chain(nontargets)
            .all(|v| v.as_ref()[i] == first)
        {
            return Err(Error::DegenerateFeature { index: i + 1 });
        }
    }

    let mut objective = objective_unchecked(&cal, targets, nontargets, cfg.prior);
    for _ in 0..cfg.max_iters {
        let (grad, hess) = derivatives(&cal, targets, nontargets, cfg.prior, true);
        if inf_norm(&grad) <= cfg.convergence_tol {
            return Ok(cal);
        }
        let step = newton_direction(hess.expect("hessian requested"), &grad);
        // -g.d, the squared Newton decrement.
        let decrement: f64 = -grad.iter().zip(&step).map(|(g, d)| g * d).sum::<f64>();

        let params = cal.params();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&step).map(|(p, d)| p + t * d).collect();
            let trial_cal = Calibrator::from_params(&trial, lambda);
            let value = objective_unchecked(&trial_cal, targets, nontargets, cfg.prior);
            // Inside the quadratic region the decrease is below rounding noise,
            // so the full step is taken without the sufficient-decrease test.
            if decrement < 1e-12 || value <= objective - 1e-4 * t * decrement {
                accepted = Some((trial_cal, value));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((next, value)) => {
                cal = next;
                objective = value;
            }
            None => break,
        }
    }

    let grad = derivatives(&cal, targets, nontargets, cfg.prior, false).0;
    let gradient_norm = inf_norm(&grad);
    if gradient_norm <= cfg.convergence_tol {
        return Ok(cal);
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        gradient_norm,
        last: Box::new(cal),
    })
}

fn newton_direction(hess: DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let p = grad.len();
    let rhs = -DVector::from_column_slice(grad);
    let mut ridge = 0.0;
    loop {
        let h = &hess + DMatrix::<f64>::identity(p, p) * ridge;
        if let Some(chol) = h.cholesky() {
            return chol.solve(&rhs).iter().copied().collect();
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
        if ridge > 1e6 {
            // Hessian hopeless; fall back to steepest descent.
            return rhs.iter().copied().collect();
        }
    }
}

/// Calibrated LLR `a0 + sum(ai xi)`.
pub fn apply_calibration(cal: &Calibrator, x: &[f64]) -> Result<f64> {
    if x.len() != cal.dim() {
        return Err(Error::DimensionMismatch {
            expected: cal.dim(),
            got: x.len(),
        });
    }
    Ok(cal.affine(x))
}
