use crate::error::{Error, Result};
use crate::msfcn::{center_1d, LayerGeometry, MsFcn};
use crate::superpix::Segmentation;

/// Receptive-field centres of a feature map in input-pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGeometry {
    pub channels: usize,
    pub hf: usize,
    pub wf: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub centers_y: Vec<f64>,
    pub centers_x: Vec<f64>,
    /// Activation index owning each input row / column (nearest centre).
    row_cell: Vec<usize>,
    col_cell: Vec<usize>,
}

fn nearest_cells(centers: &[f64], len: usize) -> Vec<usize> {
    (0..len)
        .map(|p| {
            let p = p as f64;
            let mut best = 0;
            for (i, c) in centers.iter().enumerate() {
                if (c - p).abs() < (centers[best] - p).abs() {
                    best = i;
                }
            }
            best
        })
        .collect()
}

impl FeatureGeometry {
    pub fn new(
        channels: usize,
        (hf, wf): (usize, usize),
        (input_h, input_w): (usize, usize),
        centers_y: Vec<f64>,
        centers_x: Vec<f64>,
    ) -> Result<Self> {
        if centers_y.len() != hf || centers_x.len() != wf || hf == 0 || wf == 0 {
            return Err(Error::shape("feature geometry", "centres", hf * wf, centers_y.len() * centers_x.len()));
        }
        Ok(FeatureGeometry {
            channels,
            hf,
            wf,
            input_h,
            input_w,
            row_cell: nearest_cells(&centers_y, input_h),
            col_cell: nearest_cells(&centers_x, input_w),
            centers_y,
            centers_x,
        })
    }

    /// Geometry from a layer list (such as the path to the last backbone conv).
    pub fn from_layers(
        layers: &[LayerGeometry],
        channels: usize,
        feature_dims: (usize, usize),
        input_dims: (usize, usize),
    ) -> Result<Self> {
        let cy = (0..feature_dims.0).map(|i| center_1d(layers, i)).collect();
        let cx = (0..feature_dims.1).map(|j| center_1d(layers, j)).collect();
        Self::new(channels, feature_dims, input_dims, cy, cx)
    }

    pub fn for_network(net: &MsFcn, input_h: usize, input_w: usize) -> Result<Self> {
        let shapes = net.output_shapes(input_h, input_w)?;
        Self::from_layers(
            &net.conv5_3_geometry(),
            net.config.feature_channels(),
            shapes.conv5_3,
            (input_h, input_w),
        )
    }

    pub fn cells(&self) -> usize {
        self.hf * self.wf
    }

    #[inline]
    pub fn cell_of_pixel(&self, y: usize, x: usize) -> (usize, usize) {
        (self.row_cell[y], self.col_cell[x])
    }

    /// Number of input pixels owned by every activation.
    pub fn cell_pixel_counts(&self) -> Vec<usize> {
        let mut ry = vec![0usize; self.hf];
        let mut rx = vec![0usize; self.wf];
        self.row_cell.iter().for_each(|&i| ry[i] += 1);
        self.col_cell.iter().for_each(|&j| rx[j] += 1);
        ry.iter().flat_map(|&a| rx.iter().map(move |&b| a * b)).collect()
    }

    /// Activation whose centre is closest to `(y, x)`; ties to the smaller index.
    pub fn nearest_activation(&self, y: f64, x: f64) -> (usize, usize) {
        let pick = |cs: &[f64], v: f64| {
            let mut best = 0;
            for (i, c) in cs.iter().enumerate() {
                if (c - v).abs() < (cs[best] - v).abs() {
                    best = i;
                }
            }
            best
        };
        (pick(&self.centers_y, y), pick(&self.centers_x, x))
    }

    fn check(&self, seg: &Segmentation) -> Result<()> {
        if seg.width != self.input_w || seg.height != self.input_h {
            return Err(Error::shape(
                "segmentation vs feature geometry",
                "pixels",
                self.input_h * self.input_w,
                seg.labels.len(),
            ));
        }
        Ok(())
    }
}

/// Binary mask over the feature grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    pub hf: usize,
    pub wf: usize,
    pub data: Vec<bool>,
}

impl SegmentMask {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.wf + j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight `[i0, i1) × [j0, j1)` box of the set cells.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for i in 0..self.hf {
            for j in 0..self.wf {
                if self.get(i, j) {
                    b = Some(match b {
                        None => (i, j, i + 1, j + 1),
                        Some((a, c, d, e)) => (a.min(i), c.min(j), d.max(i + 1), e.max(j + 1)),
                    });
                }
            }
        }
        b
    }
}

/// Fraction of every activation's pixels that belong to segment `id`.
pub fn cell_coverage(seg: &Segmentation, id: usize, geom: &FeatureGeometry) -> Result<Vec<f64>> {
    geom.check(seg)?;
    if id >= seg.k {
        return Err(Error::InvalidArgument(format!("segment {id} out of range (k = {})", seg.k)));
    }
    let mut hits = vec![0usize; geom.cells()];
    let b = seg.bboxes[id];
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            if seg.label(y, x) == id {
                let (i, j) = geom.cell_of_pixel(y, x);
                hits[i * geom.wf + j] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .zip(geom.cell_pixel_counts())
        .map(|(&h, t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect())
}

/// Average-then-threshold mask; an empty result falls back to the activation
/// nearest the segment centroid.
pub fn backproject_mask(seg: &Segmentation, id: usize, geom: &FeatureGeometry) -> Result<SegmentMask> {
    let cov = cell_coverage(seg, id, geom)?;
    let mut data: Vec<bool> = cov.iter().map(|&c| c > 0.5).collect();
    if !data.iter().any(|&b| b) {
        let (cy, cx) = seg.centroid(id);
        let (i, j) = geom.nearest_activation(cy, cx);
        data[i * geom.wf + j] = true;
    }
    Ok(SegmentMask {
        hf: geom.hf,
        wf: geom.wf,
        data,
    })
}
