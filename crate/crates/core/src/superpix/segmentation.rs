use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::maps::RgbImage;

/// Half-open pixel box `[y0, y1) × [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            y0: self.y0.min(o.y0),
            x0: self.x0.min(o.x0),
            y1: self.y1.max(o.y1),
            x1: self.x1.max(o.x1),
        }
    }
}

/// Superpixel label map with per-segment boxes, sizes and 4-adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub k: usize,
    pub bboxes: Vec<BBox>,
    pub sizes: Vec<usize>,
    /// Sorted neighbour ids per segment.
    pub adjacency: Vec<Vec<usize>>,
}

impl Segmentation {
    /// Builds the derived tables from a label map whose ids are `0..k` with
    /// every id present.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::shape("segmentation", "pixels", width * height, labels.len()));
        }
        let k = *labels.iter().max().expect("nonempty") as usize + 1;
        let mut sizes = vec![0usize; k];
        let mut bboxes = vec![
            BBox {
                y0: usize::MAX,
                x0: usize::MAX,
                y1: 0,
                x1: 0
            };
            k
        ];
        let mut adj = vec![Vec::new(); k];
        for y in 0..height {
            for x in 0..width {
                let l = labels[y * width + x] as usize;
                sizes[l] += 1;
                let b = &mut bboxes[l];
                b.y0 = b.y0.min(y);
                b.x0 = b.x0.min(x);
                b.y1 = b.y1.max(y + 1);
                b.x1 = b.x1.max(x + 1);
                if x + 1 < width {
                    let r = labels[y * width + x + 1] as usize;
                    if r != l {
                        adj[l].push(r);
                        adj[r].push(l);
                    }
                }
                if y + 1 < height {
                    let d = labels[(y + 1) * width + x] as usize;
                    if d != l {
                        adj[l].push(d);
                        adj[d].push(l);
                    }
                }
            }
        }
        if let Some(missing) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("label {missing} is unused; labels must be compact")));
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Ok(Segmentation {
            width,
            height,
            labels,
            k,
            bboxes,
            sizes,
            adjacency: adj,
        })
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Pixel-count-weighted centroid `(y, x)` of a segment.
    pub fn centroid(&self, id: usize) -> (f64, f64) {
        let b = self.bboxes[id];
        let (mut sy, mut sx) = (0.0, 0.0);
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                if self.label(y, x) == id {
                    sy += y as f64;
                    sx += x as f64;
                }
            }
        }
        let n = self.sizes[id] as f64;
        (sy / n, sx / n)
    }

    /// True when every segment forms a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.labels.len()];
        let mut reached = vec![false; self.k];
        let mut stack = Vec::new();
        for start in 0..self.labels.len() {
            if seen[start] {
                continue;
            }
            let l = self.labels[start];
            if reached[l as usize] {
                return false;
            }
            reached[l as usize] = true;
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                for q in neighbors4(p, self.width, self.height).into_iter().flatten() {
                    if !seen[q] && self.labels[q] == l {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        true
    }

    /// Writes labels as a 16-bit grayscale PNG.
    pub fn save_label_png(&self, path: &Path) -> Result<()> {
        if self.k > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!("{} segments do not fit 16-bit labels", self.k)));
        }
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
        .expect("sized");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a label PNG written by [`Segmentation::save_label_png`].
    pub fn load_label_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let g = img.to_luma16();
        let (w, h) = g.dimensions();
        Self::from_labels(w as usize, h as usize, g.into_raw().into_iter().map(u32::from).collect())
    }

    /// Text summary: count, then one line per segment with box, size and neighbours.
    pub fn sidecar(&self) -> String {
        let mut s = format!("segments {}\nsize {} {}\n", self.k, self.width, self.height);
        for id in 0..self.k {
            let b = self.bboxes[id];
            let n: Vec<String> = self.adjacency[id].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "{id} bbox {} {} {} {} pixels {} neighbors {}",
                b.y0,
                b.x0,
                b.y1,
                b.x1,
                self.sizes[id],
                n.join(",")
            );
        }
        s
    }

    /// Copy of `image` with segment borders painted red.
    pub fn boundary_overlay(&self, image: &RgbImage) -> Result<RgbImage> {
        if image.width != self.width || image.height != self.height {
            return Err(Error::shape("boundary overlay", "pixels", self.labels.len(), image.len()));
        }
        let mut out = image.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.label(y, x);
                let edge = (x + 1 < self.width && self.label(y, x + 1) != l)
                    || (y + 1 < self.height && self.label(y + 1, x) != l);
                if edge {
                    out.set_pixel(y * self.width + x, [1.0, 0.0, 0.0]);
                }
            }
        }
        Ok(out)
    }
}

/// Ids of segments sharing a 4-connected border with `id`.
pub fn segment_neighbors(seg: &Segmentation, id: usize) -> Result<&[usize]> {
    seg.adjacency
        .get(id)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::InvalidArgument(format!("segment {id} out of range (k = {})", seg.k)))
}

#[inline]
pub(crate) fn neighbors4(p: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (y, x) = (p / w, p % w);
    [
        (y > 0).then(|| p - w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y + 1 < h).then(|| p + w),
    ]
}
