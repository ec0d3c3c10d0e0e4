//! Precision/recall curves, F-measure and MAE for saliency maps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{BinaryMask, SaliencyMap};
use crate::par;

/// Weight of precision in the F-measure.
pub const BETA2: f64 = 0.3;
pub const NUM_THRESHOLDS: usize = 256;
const ADAPTIVE_EPS: f64 = 1e-8;

pub fn threshold(k: usize) -> f64 {
    k as f64 / NUM_THRESHOLDS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub beta2: f64,
    /// Curve thresholds are `k / thresholds` for `k` in `0..thresholds`.
    pub thresholds: usize,
    /// 8-bit level at or above which a ground-truth pixel is salient.
    pub gt_threshold: u8,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            beta2: BETA2,
            thresholds: NUM_THRESHOLDS,
            gt_threshold: crate::maps::GT_THRESHOLD_U8,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta2 > 0.0 && self.beta2.is_finite()) || self.thresholds == 0 {
            return Err(Error::InvalidConfig("beta2 and the threshold count must be positive".into()));
        }
        Ok(())
    }
}

fn check(map: &SaliencyMap, gt: &BinaryMask) -> Result<()> {
    if map.width != gt.width {
        return Err(Error::shape("map vs ground truth", "width", gt.width, map.width));
    }
    if map.height != gt.height {
        return Err(Error::shape("map vs ground truth", "height", gt.height, map.height));
    }
    Ok(())
}

fn counts_at(map: &SaliencyMap, gt: &BinaryMask, t: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut pred = 0;
    for (&v, &g) in map.data.iter().zip(&gt.data) {
        if v > t {
            pred += 1;
            tp += g as usize;
        }
    }
    (tp, pred)
}

fn pr_from_counts(tp: usize, pred: usize, pos: usize) -> (f64, f64) {
    let p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    let r = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    (p, r)
}

/// Precision and recall of `map > t`. An empty prediction scores (0, 0).
pub fn pr_at_threshold(map: &SaliencyMap, gt: &BinaryMask, t: f64) -> Result<(f64, f64)> {
    check(map, gt)?;
    let (tp, pred) = counts_at(map, gt, t);
    Ok(pr_from_counts(tp, pred, gt.salient_count()))
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    f_measure_beta(precision, recall, BETA2)
}

pub fn f_measure_beta(precision: f64, recall: f64, beta2: f64) -> f64 {
    let d = beta2 * precision + recall;
    if d == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn max_f(&self) -> f64 {
        self.points.iter().map(|p| p.f).fold(0.0, f64::max)
    }
}

/// Precision and recall of one image at every threshold.
fn image_curve(map: &SaliencyMap, gt: &BinaryMask, n: usize) -> Vec<(f64, f64)> {
    // Pixel value v is predicted at threshold k/n exactly when k < n·v.
    let mut pred_hist = vec![0usize; n + 1];
    let mut tp_hist = vec![0usize; n + 1];
    for (&v, &g) in map.data.iter().zip(&gt.data) {
        let m = (v * n as f64).ceil().clamp(0.0, n as f64) as usize;
        pred_hist[m] += 1;
        tp_hist[m] += g as usize;
    }
    let pos = gt.salient_count();
    let (mut pred, mut tp) = (0, 0);
    let mut out = vec![(0.0, 0.0); n];
    for k in (0..n).rev() {
        pred += pred_hist[k + 1];
        tp += tp_hist[k + 1];
        out[k] = pr_from_counts(tp, pred, pos);
    }
    out
}

/// Dataset curve from per-threshold precision and recall averaged over the
/// images whose ground truth has at least one salient pixel.
pub fn pr_curve(maps: &[SaliencyMap], gts: &[BinaryMask]) -> Result<PrCurve> {
    pr_curve_with(maps, gts, &EvalParams::default())
}

pub fn pr_curve_with(maps: &[SaliencyMap], gts: &[BinaryMask], params: &EvalParams) -> Result<PrCurve> {
    params.validate()?;
    let nt = params.thresholds;
    if maps.is_empty() {
        return Err(Error::InvalidArgument("no maps to evaluate".into()));
    }
    if maps.len() != gts.len() {
        return Err(Error::shape("pr_curve", "images", gts.len(), maps.len()));
    }
    for (m, g) in maps.iter().zip(gts) {
        check(m, g)?;
    }
    let idx: Vec<usize> = (0..maps.len()).filter(|&i| gts[i].salient_count() > 0).collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("every ground truth is empty".into()));
    }
    let curves = par::map_slice(&idx, |&i| image_curve(&maps[i], &gts[i], nt));
    let n = idx.len() as f64;
    let points = (0..nt)
        .map(|k| {
            let (sp, sr) = curves.iter().fold((0.0, 0.0), |(a, b), c| (a + c[k].0, b + c[k].1));
            let (p, r) = (sp / n, sr / n);
            PrPoint {
                threshold: k as f64 / nt as f64,
                precision: p,
                recall: r,
                f: f_measure_beta(p, r, params.beta2),
            }
        })
        .collect();
    Ok(PrCurve { points })
}

pub fn max_f_measure(maps: &[SaliencyMap], gts: &[BinaryMask]) -> Result<f64> {
    pr_curve(maps, gts).map(|c| c.max_f())
}

/// Precision, recall and F at twice the map mean (clamped just below 1).
pub fn adaptive_prf(map: &SaliencyMap, gt: &BinaryMask) -> Result<(f64, f64, f64)> {
    adaptive_prf_beta(map, gt, BETA2)
}

fn adaptive_prf_beta(map: &SaliencyMap, gt: &BinaryMask, beta2: f64) -> Result<(f64, f64, f64)> {
    let t = (2.0 * map.mean()).min(1.0 - ADAPTIVE_EPS);
    let (p, r) = pr_at_threshold(map, gt, t)?;
    Ok((p, r, f_measure_beta(p, r, beta2)))
}

pub fn mae(map: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check(map, gt)?;
    let s: f64 = map
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(s / map.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    /// `None` when the ground truth has no salient pixel.
    pub max_f: Option<f64>,
    pub adaptive: Option<(f64, f64, f64)>,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub curve: PrCurve,
    pub max_f: f64,
    /// Per-image adaptive precision, recall and F averaged over images.
    pub adaptive: (f64, f64, f64),
    pub mae: f64,
    pub per_image: Vec<ImageMetrics>,
    /// Images left out of curve and adaptive averages.
    pub excluded: usize,
}

pub fn evaluate(maps: &[SaliencyMap], gts: &[BinaryMask]) -> Result<EvalReport> {
    evaluate_with(maps, gts, &EvalParams::default())
}

pub fn evaluate_with(maps: &[SaliencyMap], gts: &[BinaryMask], params: &EvalParams) -> Result<EvalReport> {
    let curve = pr_curve_with(maps, gts, params)?;
    let (nt, beta2) = (params.thresholds, params.beta2);
    let per_image = par::map_range(maps.len(), |i| -> Result<ImageMetrics> {
        let (m, g) = (&maps[i], &gts[i]);
        let has_pos = g.salient_count() > 0;
        Ok(ImageMetrics {
            max_f: has_pos.then(|| {
                image_curve(m, g, nt)
                    .iter()
                    .map(|&(p, r)| f_measure_beta(p, r, beta2))
                    .fold(0.0, f64::max)
            }),
            adaptive: if has_pos { Some(adaptive_prf_beta(m, g, beta2)?) } else { None },
            mae: mae(m, g)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let valid: Vec<_> = per_image.iter().filter_map(|m| m.adaptive).collect();
    let nv = valid.len() as f64;
    let adaptive = valid
        .iter()
        .fold((0.0, 0.0, 0.0), |a, v| (a.0 + v.0 / nv, a.1 + v.1 / nv, a.2 + v.2 / nv));
    let mae = per_image.iter().map(|m| m.mae).sum::<f64>() / per_image.len() as f64;
    Ok(EvalReport {
        max_f: curve.max_f(),
        excluded: per_image.len() - valid.len(),
        curve,
        adaptive,
        mae,
        per_image,
    })
}

impl EvalReport {
    /// One `curve` row per threshold, then an `adaptive` summary row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,threshold,precision,recall,f_measure,max_f,mae\n");
        for p in &self.curve.points {
            let _ = writeln!(s, "curve,{},{},{},{},,", p.threshold, p.precision, p.recall, p.f);
        }
        let (p, r, f) = self.adaptive;
        let _ = writeln!(s, "adaptive,,{p},{r},{f},{},{}", self.max_f, self.mae);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Fixed-width table with one row per named result: maxF and MAE.
pub fn summary_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<width$}  {:>6}  {:>6}\n", "dataset", "maxF", "MAE");
    for (name, r) in rows {
        let _ = writeln!(s, "{:<width$}  {:>6.4}  {:>6.4}", name, r.max_f, r.mae);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(data: Vec<f64>, w: usize) -> SaliencyMap {
        SaliencyMap::new(w, data.len() / w, data).unwrap()
    }

    fn mask(data: Vec<bool>, w: usize) -> BinaryMask {
        BinaryMask::new(w, data.len() / w, data).unwrap()
    }

    #[test]
    fn f_measure_values() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
        assert!((f_measure(0.8, 0.6) - 0.742857).abs() < 1e-5);
    }

    #[test]
    fn threshold_conventions() {
        let g = mask(vec![true, true, false, false], 2);
        assert_eq!(pr_at_threshold(&map(vec![1.0; 4], 2), &g, 0.5).unwrap(), (0.5, 1.0));
        assert_eq!(pr_at_threshold(&map(vec![0.0; 4], 2), &g, 0.3).unwrap(), (0.0, 0.0));
        assert_eq!(pr_at_threshold(&g.to_map(), &g, 0.5).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn histogram_curve_matches_direct_counts() {
        let m = map(vec![0.0, 0.5, 1.0 / 256.0, 0.9, 1.0, 0.25, 0.7, 0.1], 4);
        let g = mask(vec![false, true, true, true, false, false, true, false], 4);
        let c = image_curve(&m, &g, NUM_THRESHOLDS);
        for (k, &pr) in c.iter().enumerate() {
            assert_eq!(pr, pr_at_threshold(&m, &g, threshold(k)).unwrap(), "k={k}");
        }
    }

    #[test]
    fn adaptive_cases() {
        let g = mask(vec![true, false, false, false], 2);
        assert_eq!(adaptive_prf(&map(vec![0.4; 4], 2), &g).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(adaptive_prf(&g.to_map(), &g).unwrap(), (1.0, 1.0, 1.0));
        let (p, r, _) = adaptive_prf(&map(vec![1.0; 4], 2), &g).unwrap();
        assert_eq!((p, r), (0.25, 1.0));
    }

    #[test]
    fn mae_values() {
        let g = mask((0..10).map(|i| i < 3).collect(), 5);
        assert!((mae(&map(vec![0.2; 10], 5), &g).unwrap() - 0.38).abs() < 1e-12);
        assert_eq!(mae(&g.to_map(), &g).unwrap(), 0.0);
        assert_eq!(mae(&map(vec![0.5; 10], 5), &g).unwrap(), 0.5);
    }

    #[test]
    fn empty_ground_truth_excluded() {
        let g1 = mask(vec![true, false], 2);
        let g2 = mask(vec![false, false], 2);
        let r = evaluate(&[g1.to_map(), map(vec![0.3, 0.3], 2)], &[g1, g2]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.max_f, 1.0);
        assert!((r.mae - 0.15).abs() < 1e-12);
        assert!(r.to_csv().lines().count() == 258);
    }

    #[test]
    fn dimension_mismatch() {
        let g = mask(vec![true, false], 2);
        assert!(mae(&map(vec![0.0; 4], 2), &g).is_err());
    }
}
