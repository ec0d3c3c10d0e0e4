//! Receptive-field arithmetic along one spatial axis (applied to both).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PoolSpec};

/// Kernel/stride/pad/dilation of one layer, square in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub ceil_mode: bool,
}

impl LayerGeometry {
    pub fn conv(spec: &ConvSpec) -> Self {
        LayerGeometry {
            kernel: spec.kernel.0,
            stride: spec.stride.0,
            pad: spec.pad.0,
            dilation: spec.dilation.0,
            ceil_mode: false,
        }
    }

    pub fn pool(spec: &PoolSpec) -> Self {
        LayerGeometry {
            kernel: spec.window.0,
            stride: spec.stride.0,
            pad: spec.pad.0,
            dilation: 1,
            ceil_mode: spec.ceil_mode,
        }
    }

    pub fn effective_kernel(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    /// Output length for an input of `len`, with the same rounding the layer uses.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        if self.ceil_mode {
            let spec = PoolSpec {
                window: (self.kernel, self.kernel),
                stride: (self.stride, self.stride),
                pad: (self.pad, self.pad),
                ceil_mode: true,
            };
            spec.output_dims(len, 1).ok().map(|d| d.0)
        } else {
            let padded = len + 2 * self.pad;
            let ek = self.effective_kernel();
            (padded >= ek).then(|| (padded - ek) / self.stride + 1)
        }
    }
}

/// Spatial extent after applying `geometry` to an input of `len` pixels.
pub fn extent(geometry: &[LayerGeometry], len: usize) -> Option<usize> {
    geometry.iter().try_fold(len, |l, g| g.output_len(l))
}

/// Product of strides.
pub fn cumulative_stride(geometry: &[LayerGeometry]) -> usize {
    geometry.iter().map(|g| g.stride).product()
}

/// Centre of the receptive field of position `pos` of the last layer, in
/// input-pixel coordinates: walking from the top layer down,
/// `c ← stride·c + ((k_eff − 1)/2 − pad)`.
pub fn center_1d(geometry: &[LayerGeometry], pos: usize) -> f64 {
    geometry.iter().rev().fold(pos as f64, |c, g| {
        g.stride as f64 * c + ((g.effective_kernel() as f64 - 1.0) / 2.0 - g.pad as f64)
    })
}

/// Receptive-field centre `(row, col)` of activation `pos` of the last layer
/// for an input of `input_dims = (height, width)`.
pub fn receptive_field_center(
    geometry: &[LayerGeometry],
    input_dims: (usize, usize),
    pos: (usize, usize),
) -> Result<(f64, f64)> {
    let h = extent(geometry, input_dims.0)
        .ok_or_else(|| Error::InvalidArgument(format!("input height {} too small", input_dims.0)))?;
    let w = extent(geometry, input_dims.1)
        .ok_or_else(|| Error::InvalidArgument(format!("input width {} too small", input_dims.1)))?;
    if pos.0 >= h || pos.1 >= w {
        return Err(Error::InvalidArgument(format!(
            "position {pos:?} outside the {h}x{w} feature map"
        )));
    }
    Ok((center_1d(geometry, pos.0), center_1d(geometry, pos.1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_centered_conv_maps_to_itself() {
        let g = [LayerGeometry::conv(&ConvSpec::new(1, 1, 3, 1, 1))];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(receptive_field_center(&g, (5, 5), (i, j)).unwrap(), (i as f64, j as f64));
            }
        }
    }

    #[test]
    fn two_by_two_pool_centers_on_window_midpoint() {
        let g = [LayerGeometry::pool(&PoolSpec::new(2, 2, 0))];
        assert_eq!(receptive_field_center(&g, (4, 4), (0, 0)).unwrap(), (0.5, 0.5));
        assert_eq!(receptive_field_center(&g, (4, 4), (1, 0)).unwrap(), (2.5, 0.5));
    }

    #[test]
    fn dilated_kernel_extent_enters_offset() {
        // 3x3 dilation 2, no pad: window covers 0..=4, centre 2.
        let g = [LayerGeometry::conv(&ConvSpec::new(1, 1, 3, 1, 0).dilated(2))];
        assert_eq!(receptive_field_center(&g, (7, 7), (0, 0)).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn out_of_range_position_is_an_error() {
        let g = [LayerGeometry::pool(&PoolSpec::new(2, 2, 0))];
        assert!(receptive_field_center(&g, (4, 4), (2, 0)).is_err());
    }
}
