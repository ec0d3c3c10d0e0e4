//! Images, saliency maps, binary masks and their file formats.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage as Rgb8Image};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Ground truth is salient where the 8-bit value is at least this.
pub const GT_THRESHOLD_U8: u8 = 128;

/// Interleaved RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("RgbImage", "length", width * height * 3, data.len()));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, rgb: [f64; 3]) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
    }

    /// Planar `1 × 3 × H × W` tensor with `mean` subtracted per channel.
    pub fn to_tensor(&self, mean: [f64; 3]) -> Tensor {
        let p = self.len();
        let mut data = vec![0.0; 3 * p];
        for i in 0..p {
            for c in 0..3 {
                data[c * p + i] = self.data[3 * i + c] - mean[c];
            }
        }
        Tensor::from_vec(Shape::new(1, 3, self.height, self.width), data).expect("sized above")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        RgbImage::new(w as usize, h as usize, data)
    }

    pub fn to_rgb8(&self) -> Rgb8Image {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("sized buffer")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resize.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("sized buffer");
        let out = image::imageops::resize(
            &src,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        RgbImage {
            width,
            height,
            data: out.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect(),
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel map in `[0, 1]` (S1, S2, fused S and refined maps).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("SaliencyMap", "length", width * height, data.len()));
        }
        Ok(SaliencyMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        SaliencyMap {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn same_dims(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    /// First plane of a `1 × 1 × H × W` tensor.
    pub fn from_tensor(t: &Tensor) -> Self {
        let s = t.shape();
        SaliencyMap {
            width: s.w,
            height: s.h,
            data: t.plane(0, 0).to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.data.clone())
            .expect("sized map")
    }

    pub fn to_gray8(&self) -> GrayImage {
        let raw = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("sized buffer")
    }

    /// 8-bit grayscale PNG (or PGM by extension).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads an 8- or 16-bit grayscale (or RGB, luma-converted) map scaled to `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let g = img.to_luma16();
        let (w, h) = g.dimensions();
        let data = g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
        SaliencyMap::new(w as usize, h as usize, data)
    }

    pub fn save_blob(&self, path: &Path) -> Result<()> {
        self.to_tensor().save(path)
    }

    /// Bilinear resize.
    pub fn resize(&self, width: usize, height: usize) -> SaliencyMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let src: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("sized buffer");
        let out = image::imageops::resize(&src, width as u32, height as u32, image::imageops::FilterType::Triangle);
        SaliencyMap {
            width,
            height,
            data: out.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Binary ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("BinaryMask", "length", width * height, data.len()));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn salient_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Thresholds a continuous mask at 0.5.
    pub fn from_map(map: &SaliencyMap) -> Self {
        BinaryMask {
            width: map.width,
            height: map.height,
            data: map.data.iter().map(|&v| v >= 0.5).collect(),
        }
    }

    pub fn to_map(&self) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Loads an 8-bit grayscale mask, salient where the value is ≥ 128.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_threshold(path, GT_THRESHOLD_U8)
    }

    pub fn load_with_threshold(path: &Path, threshold: u8) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        let data = g.as_raw().iter().map(|&v| v >= threshold).collect();
        BinaryMask::new(w as usize, h as usize, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_map().save(path)
    }

    /// Nearest-neighbour resize.
    pub fn resize(&self, width: usize, height: usize) -> BinaryMask {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                data.push(self.data[sy.min(self.height - 1) * self.width + sx.min(self.width - 1)]);
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }
}
