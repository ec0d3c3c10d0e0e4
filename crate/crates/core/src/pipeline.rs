//! Whole-image prediction and refinement.

use crate::config::RunConfig;
use crate::crf::mean_field_infer;
use crate::error::Result;
use crate::maps::{RgbImage, SaliencyMap};
use crate::network::{Network, Prediction};
use crate::superpix::{multiscale, Segmentation};

pub fn segment(image: &RgbImage, run: &RunConfig) -> Result<Vec<Segmentation>> {
    multiscale(image, &run.scales, &run.slic)
}

/// Predicts at the configured input size and resizes every map back to the
/// image's own dimensions.
pub fn predict_image(net: &Network, image: &RgbImage, run: &RunConfig) -> Result<Prediction> {
    let work = match run.train.input_size {
        Some(s) => image.resize(s, s),
        None => image.clone(),
    };
    let segs = segment(&work, run)?;
    let p = net.predict(&work, &segs)?;
    let (w, h) = (image.width, image.height);
    Ok(Prediction {
        s1: p.s1.resize(w, h),
        s2: p.s2.resize(w, h),
        fused: p.fused.resize(w, h),
    })
}

/// Fused map refined by the dense CRF.
pub fn refine(map: &SaliencyMap, image: &RgbImage, run: &RunConfig) -> Result<SaliencyMap> {
    mean_field_infer(map, image, &run.crf)
}
