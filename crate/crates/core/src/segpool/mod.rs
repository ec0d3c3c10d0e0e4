//! Segment-wise feature pooling and the segment regressor.

mod mask;
mod pooling;
mod regressor;

use std::io::Write;
use std::path::Path;

pub use mask::{backproject_mask, cell_coverage, FeatureGeometry, SegmentMask};
pub use pooling::{cell_range, segment_feature, segment_features, spatial_pool, Window};
pub use regressor::{RegressorCache, SegmentRegressor};

use crate::error::{Error, Result};
use crate::maps::SaliencyMap;
use crate::superpix::Segmentation;

/// Per-pixel mean over scales of the score of the enclosing segment.
pub fn render_s2(scores: &[Vec<f64>], segs: &[Segmentation]) -> Result<SaliencyMap> {
    let first = segs.first().ok_or_else(|| Error::InvalidArgument("no segmentations".into()))?;
    if scores.len() != segs.len() {
        return Err(Error::shape("render_s2", "scales", segs.len(), scores.len()));
    }
    let (w, h) = (first.width, first.height);
    let mut acc = vec![0.0; w * h];
    for (sc, seg) in scores.iter().zip(segs) {
        if seg.width != w || seg.height != h {
            return Err(Error::shape("render_s2 segmentation", "pixels", w * h, seg.labels.len()));
        }
        if sc.len() != seg.k {
            return Err(Error::InvalidArgument(format!(
                "missing scores: {} segments but {} scores",
                seg.k,
                sc.len()
            )));
        }
        for (a, &l) in acc.iter_mut().zip(&seg.labels) {
            *a += sc[l as usize];
        }
    }
    let n = segs.len() as f64;
    SaliencyMap::new(w, h, acc.into_iter().map(|v| v / n).collect())
}

/// Per-segment label: 1 when more than half of its pixels are salient.
pub fn segment_labels(seg: &Segmentation, gt: &[bool]) -> Result<Vec<f64>> {
    if gt.len() != seg.labels.len() {
        return Err(Error::shape("segment labels", "pixels", seg.labels.len(), gt.len()));
    }
    let mut pos = vec![0usize; seg.k];
    for (&l, &g) in seg.labels.iter().zip(gt) {
        pos[l as usize] += g as usize;
    }
    Ok(pos
        .iter()
        .zip(&seg.sizes)
        .map(|(&p, &n)| if 2 * p > n { 1.0 } else { 0.0 })
        .collect())
}

/// Binary rows: little-endian `u32` segment id followed by the feature as `f64`s.
pub fn write_feature_rows<W: Write>(mut w: W, features: &[f64], len: usize) -> std::io::Result<()> {
    for (id, row) in features.chunks(len).enumerate() {
        w.write_all(&(id as u32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_feature_rows(path: &Path, features: &[f64], len: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_rows(std::io::BufWriter::new(f), features, len).map_err(|e| Error::io(path, e))
}
