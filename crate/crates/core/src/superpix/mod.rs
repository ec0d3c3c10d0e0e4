//! Geodesic SLIC superpixels.

mod lab;
mod segmentation;
mod slic;

pub use lab::{rgb_to_cielab, srgb_pixel_to_lab, LabImage};
pub use segmentation::{segment_neighbors, BBox, Segmentation};
pub use slic::{slic_geodesic, slic_geodesic_with, SlicParams};

use crate::error::Result;
use crate::maps::RgbImage;

/// Segmentation counts used for the three scales of the segment stream.
pub const DEFAULT_SCALES: [usize; 3] = [200, 150, 50];

/// One segmentation per requested scale.
pub fn multiscale(image: &RgbImage, scales: &[usize], params: &SlicParams) -> Result<Vec<Segmentation>> {
    let lab = rgb_to_cielab(image);
    scales.iter().map(|&k| slic_geodesic_with(&lab, k.min(lab.len()), params)).collect()
}
