//! Loss kernels with analytic gradients, plus a central-difference checker.
//!
//! All kernels are pure scalar/vector functions. Classification losses use
//! mean reduction; the regression loss sums elementwise terms and divides by
//! the element count. Probabilities are clamped to `[1e-7, 1 - 1e-7]` before
//! taking logs, and gradients are evaluated at the clamped values.
//!
//! Both classification heads are provided: [`bce_loss`] for per-class
//! sigmoid supervision and [`ce_loss`] for softmax supervision. Consumers
//! that supervise an augmented view against merged targets default to the
//! softmax kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_EPS: f64 = 1e-7;

/// Weights combining the individual terms: `lambda_reg` scales the
/// regression part of a supervised loss, `det_weight` scales the two
/// detection-head terms of the total loss (default 0.5).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub det_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_reg: 1.0,
            det_weight: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_reg: f64, det_weight: f64) -> Result<Self> {
        if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
            return Err(Error::domain(format!(
                "lambda_reg = {lambda_reg} must be positive and finite"
            )));
        }
        if !det_weight.is_finite() {
            return Err(Error::domain("det_weight must be finite"));
        }
        Ok(LossWeights {
            lambda_reg,
            det_weight,
        })
    }
}

/// Two feature vectors of equal dimension, one per view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePair {
    pub f_a: Vec<f64>,
    pub f_o: Vec<f64>,
}

impl FeaturePair {
    pub fn new(f_a: Vec<f64>, f_o: Vec<f64>) -> Result<Self> {
        if f_a.len() != f_o.len() {
            return Err(Error::domain(format!(
                "feature dimensions differ: {} vs {}",
                f_a.len(),
                f_o.len()
            )));
        }
        if f_a.iter().chain(f_o.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("feature vectors must be finite"));
        }
        Ok(FeaturePair { f_a, f_o })
    }
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::domain("empty input"));
    }
    Ok(())
}

/// Mean binary cross-entropy over foreground probabilities.
///
/// Returns the loss and its gradient with respect to `pred`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_same_len(pred, target)?;
    if target.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::domain("bce targets must be 0 or 1"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push(-(t / p - (1.0 - t) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Softmax cross-entropy over unnormalized scores, stabilized by max-shift.
pub fn ce_loss(scores: &[f64], target_class: usize) -> Result<(f64, Vec<f64>)> {
    if target_class >= scores.len() {
        return Err(Error::domain(format!(
            "target class {target_class} out of range for {} scores",
            scores.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    let loss = sum_exp.ln() - (scores[target_class] - max);
    let grad = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (s - max).exp() / sum_exp - f64::from(u8::from(i == target_class)))
        .collect();
    Ok((loss, grad))
}

/// Smooth-L1 regression loss with mean reduction: elementwise
/// `0.5 d^2 / beta` for `|d| < beta`, else `|d| - 0.5 beta`, where
/// `d = pred - target`.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    check_same_len(pred, target)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta = {beta} must be positive")));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        if d.abs() < beta {
            loss += 0.5 * d * d / beta;
            grad.push(d / beta / n);
        } else {
            loss += d.abs() - 0.5 * beta;
            grad.push(d.signum() / n);
        }
    }
    Ok((loss / n, grad))
}

/// Squared Euclidean distance between the two views' features.
///
/// Returns the loss and the gradients with respect to `f_a` and `f_o`.
pub fn ssl_consistency(pair: &FeaturePair) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_same_len(&pair.f_a, &pair.f_o)?;
    let mut loss = 0.0;
    let mut grad_a = Vec::with_capacity(pair.f_a.len());
    let mut grad_o = Vec::with_capacity(pair.f_o.len());
    for (&a, &o) in pair.f_a.iter().zip(&pair.f_o) {
        let d = a - o;
        loss += d * d;
        grad_a.push(2.0 * d);
        grad_o.push(-2.0 * d);
    }
    Ok((loss, grad_a, grad_o))
}

/// Total training objective:
/// `det_weight * (det_o + det_a) + rpn + ssl`.
pub fn total_loss(det_o: f64, det_a: f64, rpn: f64, ssl: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("det_o", det_o),
        ("det_a", det_a),
        ("rpn", rpn),
        ("ssl", ssl),
    ] {
        if !v.is_finite() {
            return Err(Error::domain(format!("{name} = {v} is not finite")));
        }
    }
    Ok(w.det_weight * (det_o + det_a) + rpn + ssl)
}

/// Classification plus weighted regression: `cls + lambda_reg * reg`.
pub fn supervised_loss(cls: f64, reg: f64, w: &LossWeights) -> f64 {
    cls + w.lambda_reg * reg
}

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over checked coordinates (0.0 if none checked).
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates excluded from the comparison (known non-smooth points).
    pub skipped: Vec<usize>,
}

/// Compare an analytic gradient against central differences.
///
/// `f` evaluates the loss and its gradient at a point. Coordinates listed in
/// `skip` are reported as skipped instead of checked; pass the kink locations
/// of piecewise losses there. The relative error per coordinate is
/// `|fd - g| / max(1, |fd|, |g|)`.
pub fn finite_diff_check<F>(f: F, point: &[f64], epsilon: f64, skip: &[usize]) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    let (_, grad) = f(point)?;
    if grad.len() != point.len() {
        return Err(Error::domain(format!(
            "gradient length {} does not match point length {}",
            grad.len(),
            point.len()
        )));
    }
    let mut check = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: skip.iter().copied().filter(|&i| i < point.len()).collect(),
    };
    check.skipped.sort_unstable();
    check.skipped.dedup();
    let mut x = point.to_vec();
    for i in 0..point.len() {
        if check.skipped.binary_search(&i).is_ok() {
            continue;
        }
        x[i] = point[i] + epsilon;
        let (fp, _) = f(&x)?;
        x[i] = point[i] - epsilon;
        let (fm, _) = f(&x)?;
        x[i] = point[i];
        let fd = (fp - fm) / (2.0 * epsilon);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1.0);
        check.max_rel_error = check.max_rel_error.max(rel);
        check.checked += 1;
    }
    Ok(check)
}
