use super::mask::{backproject_mask, FeatureGeometry, SegmentMask};
use crate::error::{Error, Result};
use crate::par;
use crate::superpix::{segment_neighbors, BBox, Segmentation};
use crate::tensor::Tensor;

/// Half-open window `[i0, i1) × [j0, j1)` on the feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

impl Window {
    pub fn full(hf: usize, wf: usize) -> Self {
        Window { i0: 0, j0: 0, i1: hf, j1: wf }
    }

    /// Feature cells covered by a pixel box.
    pub fn from_pixels(b: &BBox, geom: &FeatureGeometry) -> Self {
        let (i0, j0) = geom.cell_of_pixel(b.y0, b.x0);
        let (i1, j1) = geom.cell_of_pixel(b.y1 - 1, b.x1 - 1);
        Window { i0, j0, i1: i1 + 1, j1: j1 + 1 }
    }

    fn is_empty(&self) -> bool {
        self.i1 <= self.i0 || self.j1 <= self.j0
    }
}

/// `[start, end)` of cell `k` when `len` items are split into `parts`:
/// ceil-sized cells, the last one absorbing the remainder, and never empty.
pub fn cell_range(len: usize, parts: usize, k: usize) -> (usize, usize) {
    let c = len.div_ceil(parts);
    let start = (k * c).min(len - 1);
    let end = if k + 1 == parts { len } else { ((k + 1) * c).min(len) };
    (start, end.max(start + 1))
}

#[derive(Clone, Copy)]
enum MaskMode<'a> {
    None,
    /// Only set activations take part; a cell without any yields 0.
    Keep(&'a SegmentMask),
    /// Set activations read as 0.
    Zero(&'a SegmentMask),
}

fn pool_into(
    feat: &Tensor,
    win: Window,
    grid: (usize, usize),
    mode: MaskMode<'_>,
    out: &mut Vec<f64>,
) {
    let s = feat.shape();
    let (wh, ww) = (win.i1 - win.i0, win.j1 - win.j0);
    for gy in 0..grid.0 {
        let (ys, ye) = cell_range(wh, grid.0, gy);
        for gx in 0..grid.1 {
            let (xs, xe) = cell_range(ww, grid.1, gx);
            for c in 0..s.c {
                let plane = feat.plane(0, c);
                let mut best = f64::NEG_INFINITY;
                for i in win.i0 + ys..win.i0 + ye {
                    for j in win.j0 + xs..win.j0 + xe {
                        let v = match mode {
                            MaskMode::None => plane[i * s.w + j],
                            MaskMode::Keep(m) if m.get(i, j) => plane[i * s.w + j],
                            MaskMode::Keep(_) => continue,
                            MaskMode::Zero(m) if m.get(i, j) => 0.0,
                            MaskMode::Zero(_) => plane[i * s.w + j],
                        };
                        best = best.max(v);
                    }
                }
                out.push(if best == f64::NEG_INFINITY { 0.0 } else { best });
            }
        }
    }
}

fn check_window(feat: &Tensor, win: &Window) -> Result<()> {
    let s = feat.shape();
    if s.n != 1 {
        return Err(Error::shape("spatial_pool", "batch", 1, s.n));
    }
    if win.is_empty() {
        return Err(Error::InvalidArgument(format!("empty pooling window {win:?}")));
    }
    if win.i1 > s.h || win.j1 > s.w {
        return Err(Error::InvalidArgument(format!("window {win:?} exceeds the {}x{} feature map", s.h, s.w)));
    }
    Ok(())
}

/// Max-pools every channel over a `grid` of cells within `window`, laid out
/// cell-major (`(gy·gw + gx)·C + c`). With a mask, activations outside it are
/// excluded; cells left empty give 0.
pub fn spatial_pool(
    feat: &Tensor,
    window: Window,
    grid: (usize, usize),
    mask: Option<&SegmentMask>,
) -> Result<Vec<f64>> {
    check_window(feat, &window)?;
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::InvalidArgument("pooling grid must be at least 1x1".into()));
    }
    let mut out = Vec::with_capacity(grid.0 * grid.1 * feat.shape().c);
    pool_into(feat, window, grid, mask.map_or(MaskMode::None, MaskMode::Keep), &mut out);
    Ok(out)
}

/// Segment feature given precomputed masks for every segment of `seg`.
fn feature_from_masks(
    conv5_3: &Tensor,
    seg: &Segmentation,
    id: usize,
    geom: &FeatureGeometry,
    grid: (usize, usize),
    masks: &[SegmentMask],
) -> Result<Vec<f64>> {
    let s = conv5_3.shape();
    if s.c != geom.channels || s.h != geom.hf || s.w != geom.wf {
        return Err(Error::shape("segment_feature conv5_3", "channels", geom.channels, s.c));
    }
    let mask = &masks[id];
    let own = Window::from_pixels(&seg.bboxes[id], geom);
    let mut ctx = seg.bboxes[id];
    for &n in segment_neighbors(seg, id)? {
        ctx = ctx.union(&seg.bboxes[n]);
    }
    let ctx = Window::from_pixels(&ctx, geom);
    let full = Window::full(geom.hf, geom.wf);
    for w in [&own, &ctx] {
        check_window(conv5_3, w)?;
    }
    let mut out = Vec::with_capacity(3 * grid.0 * grid.1 * s.c);
    pool_into(conv5_3, own, grid, MaskMode::Keep(mask), &mut out);
    pool_into(conv5_3, ctx, grid, MaskMode::None, &mut out);
    pool_into(conv5_3, full, grid, MaskMode::Zero(mask), &mut out);
    Ok(out)
}

/// Concatenated pooling over the segment box (masked), the box of the segment
/// and its neighbours, and the whole map with the segment zeroed.
pub fn segment_feature(
    conv5_3: &Tensor,
    seg: &Segmentation,
    id: usize,
    geom: &FeatureGeometry,
    grid: (usize, usize),
) -> Result<Vec<f64>> {
    let masks = (0..seg.k)
        .map(|i| if i == id { backproject_mask(seg, i, geom) } else { Ok(empty_mask(geom)) })
        .collect::<Result<Vec<_>>>()?;
    feature_from_masks(conv5_3, seg, id, geom, grid, &masks)
}

fn empty_mask(geom: &FeatureGeometry) -> SegmentMask {
    SegmentMask {
        hf: geom.hf,
        wf: geom.wf,
        data: vec![false; geom.cells()],
    }
}

/// Features of every segment, row-major `k × len`.
pub fn segment_features(
    conv5_3: &Tensor,
    seg: &Segmentation,
    geom: &FeatureGeometry,
    grid: (usize, usize),
) -> Result<Vec<f64>> {
    let masks = par::map_range(seg.k, |i| backproject_mask(seg, i, geom)).into_iter().collect::<Result<Vec<_>>>()?;
    let rows = par::map_range(seg.k, |i| feature_from_masks(conv5_3, seg, i, geom, grid, &masks));
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}
