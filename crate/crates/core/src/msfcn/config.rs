use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// VGG16-style backbone description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Number of 3×3 convolutions per stage (each stage ends in a max pool).
    pub stage_convs: Vec<usize>,
    /// Unscaled channel width per stage.
    pub stage_widths: Vec<usize>,
    /// Unscaled width of the first converted 1×1 layer (`fc6`).
    pub top_width: usize,
    /// Keep the last two pools at stride 1 (8-pixel output stride).
    pub skip_subsampling: bool,
    /// Dilation of the convolutions after the penultimate pool.
    pub post_pool4_dilation: usize,
    /// Dilation of the converted top layers.
    pub top_dilation: usize,
    /// Multiplier applied to every channel count.
    pub width_scale: f64,
    /// Per-channel mean subtracted from `[0, 1]` inputs.
    pub input_mean: [f64; 3],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_convs: vec![2, 2, 3, 3, 3],
            stage_widths: vec![64, 128, 256, 512, 512],
            top_width: 4096,
            skip_subsampling: true,
            post_pool4_dilation: 2,
            top_dilation: 4,
            width_scale: 1.0,
            input_mean: [0.5; 3],
        }
    }
}

impl BackboneConfig {
    pub fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.scaled(self.stage_widths[stage])
    }
}

/// Three extra layers hanging off one of the first four pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleBranchConfig {
    /// Index of the pooling stage the branch reads from.
    pub attach_point: usize,
    /// Stride of the first (3×3) branch layer.
    pub first_stride: usize,
    /// Unscaled width of the first two branch layers.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    pub branches: Vec<ScaleBranchConfig>,
    /// Initial weight of each channel in the 5→1 stacking layer.
    pub stack_init: f64,
    /// Width of the two hidden layers of the segment regressor.
    pub regressor_hidden: usize,
    /// Spatial pooling grid (rows, cols) for segment features.
    pub pool_grid: (usize, usize),
    /// Initial fusion layer `(w_s1, w_s2, bias)`.
    pub fusion_init: [f64; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            backbone: BackboneConfig::default(),
            branches: [4, 2, 1, 1]
                .iter()
                .enumerate()
                .map(|(i, &s)| ScaleBranchConfig {
                    attach_point: i,
                    first_stride: s,
                    width: 128,
                })
                .collect(),
            stack_init: 0.2,
            regressor_hidden: 300,
            pool_grid: (2, 2),
            fusion_init: [2.0, 2.0, -2.0],
        }
    }
}

impl NetworkConfig {
    pub fn with_width_scale(mut self, scale: f64) -> Self {
        self.backbone.width_scale = scale;
        self
    }

    /// Channels of the last backbone convolution.
    pub fn feature_channels(&self) -> usize {
        let last = self.backbone.stage_widths.len() - 1;
        self.backbone.stage_width(last)
    }

    /// Length of one segment feature: three windows × grid cells × channels.
    pub fn segment_feature_len(&self) -> usize {
        3 * self.pool_grid.0 * self.pool_grid.1 * self.feature_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.stage_convs.len() != b.stage_widths.len() || b.stage_convs.len() < 2 {
            return Err(Error::InvalidConfig(
                "stage_convs and stage_widths must have the same length (at least 2)".into(),
            ));
        }
        if b.stage_convs.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("every stage needs at least one convolution".into()));
        }
        if !(b.width_scale > 0.0 && b.width_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("width_scale must be positive, got {}", b.width_scale)));
        }
        if b.post_pool4_dilation == 0 || b.top_dilation == 0 {
            return Err(Error::InvalidConfig("dilations must be at least 1".into()));
        }
        for br in &self.branches {
            if br.attach_point + 1 >= b.stage_convs.len() {
                return Err(Error::InvalidConfig(format!(
                    "branch attach point {} must precede the last pool",
                    br.attach_point
                )));
            }
            if br.first_stride == 0 || br.width == 0 {
                return Err(Error::InvalidConfig("branch stride and width must be positive".into()));
            }
        }
        if self.pool_grid.0 == 0 || self.pool_grid.1 == 0 || self.regressor_hidden == 0 {
            return Err(Error::InvalidConfig("pool grid and regressor width must be positive".into()));
        }
        if !self.stack_init.is_finite() || self.fusion_init.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("initial weights must be finite".into()));
        }
        Ok(())
    }
}
