use crate::error::{Error, Result};
use crate::maps::{BinaryMask, SaliencyMap};

/// Clamp applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Fraction of background pixels, weighting the salient term.
    pub beta: f64,
    pub pixels: usize,
    pub salient: usize,
    pub background: usize,
    /// `dL/dS` per pixel.
    pub grad: Vec<f64>,
}

/// Class-balanced cross-entropy summed over pixels, with
/// `β = |background| / |pixels|`.
pub fn balanced_cross_entropy(s: &SaliencyMap, gt: &BinaryMask) -> Result<LossReport> {
    if !s.same_dims(gt.width, gt.height) {
        return Err(Error::shape("balanced_cross_entropy", "pixels", gt.len(), s.len()));
    }
    let pixels = gt.len();
    let salient = gt.salient_count();
    let background = pixels - salient;
    let beta = background as f64 / pixels as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pixels);
    for (&v, &g) in s.data.iter().zip(&gt.data) {
        let p = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
        if !p.is_finite() {
            return Err(Error::NonFinite("saliency map in loss".into()));
        }
        if g {
            loss -= beta * p.ln();
            grad.push(-beta / p);
        } else {
            loss -= (1.0 - beta) * (1.0 - p).ln();
            grad.push((1.0 - beta) / (1.0 - p));
        }
    }
    Ok(LossReport {
        loss,
        beta,
        pixels,
        salient,
        background,
        grad,
    })
}

/// Mean squared error and its gradient `2(s − l)/N`.
pub fn stream2_loss(scores: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("stream2_loss", "segments", labels.len(), scores.len()));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no segments".into()));
    }
    let n = scores.len() as f64;
    let loss = scores.iter().zip(labels).map(|(s, l)| (s - l).powi(2)).sum::<f64>() / n;
    let grad = scores.iter().zip(labels).map(|(s, l)| 2.0 * (s - l) / n).collect();
    Ok((loss, grad))
}
