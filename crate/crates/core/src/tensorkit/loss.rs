use serde::{Deserialize, Serialize};

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    (loss, grad)
}

/// Cross-entropy of probabilities against a target distribution, with the
/// gradient with respect to the probabilities.
pub fn cross_entropy_loss(probs: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(probs.len(), target.len());
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(target) {
        let pf = p.max(LOG_FLOOR);
        loss -= t * pf.ln();
        grad.push(if p > LOG_FLOOR { -t / p } else { 0.0 });
    }
    (loss, grad)
}

/// Softmax followed by cross-entropy against a class index. Returns the
/// loss, the probabilities and the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -probs[class].max(LOG_FLOOR).ln();
    let mut grad = probs.clone();
    grad[class] -= 1.0;
    (loss, probs, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn evaluate(self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossKind::Mse => mse_loss(pred, target),
            LossKind::CrossEntropy => cross_entropy_loss(pred, target),
        }
    }
}
