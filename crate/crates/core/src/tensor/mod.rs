//! Dense NCHW tensors and the fixed set of layers the saliency network uses.
//!
//! Everything is `f64`. Convolutions are cross-correlations (no kernel flip)
//! and dilation is realised inside [`im2col_atrous`] by sampling the input
//! with gaps, so the kernel itself is never expanded.

mod activation;
mod affine;
mod conv;
pub mod gradcheck;
mod pool;
mod upsample;

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use activation::{relu_backward, relu_inplace, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use affine::{affine_backward, affine_forward, AffineParams};
pub(crate) use conv::conv2d_backward_opt;
pub use conv::{
    col2im_atrous, conv2d_backward, conv2d_forward, im2col_atrous, ConvSpec, LayerParams,
    PatchMatrix,
};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamBlock};
pub use pool::{maxpool_backward, maxpool_forward, PoolSpec};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};

/// Shape of a tensor: (batch, channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
            grad: None,
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape("Tensor::from_vec", "length", shape.len(), data.len()));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    /// One (image, channel) plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of one image.
    pub fn image(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    /// Copies channel range `[c0, c0 + count)` of every image into a new tensor.
    pub fn channels(&self, c0: usize, count: usize) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(Shape::new(s.n, count, s.h, s.w));
        let p = s.plane();
        for n in 0..s.n {
            let src = &self.data[(n * s.c + c0) * p..(n * s.c + c0 + count) * p];
            out.data[n * count * p..(n + 1) * count * p].copy_from_slice(src);
        }
        out
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
            .shape;
        for t in parts {
            if t.shape.n != first.n {
                return Err(Error::shape("concat_channels", "batch", first.n, t.shape.n));
            }
            if t.shape.h != first.h {
                return Err(Error::shape("concat_channels", "height", first.h, t.shape.h));
            }
            if t.shape.w != first.w {
                return Err(Error::shape("concat_channels", "width", first.w, t.shape.w));
            }
        }
        let c: usize = parts.iter().map(|t| t.shape.c).sum();
        let mut data = Vec::with_capacity(first.n * c * first.plane());
        for n in 0..first.n {
            for t in parts {
                data.extend_from_slice(t.image(n));
            }
        }
        Tensor::from_vec(Shape::new(first.n, c, first.h, first.w), data)
    }

    /// Writes the tensor blob: four little-endian `u32` dims then row-major `f64`s.
    pub fn write_blob<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for d in self.shape.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(mut r: R) -> std::io::Result<Tensor> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let dim = |i: usize| {
            u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize
        };
        let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
        let mut bytes = vec![0u8; shape.len() * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_blob(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_blob(std::io::BufReader::new(f)).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blob_header_is_sixteen_bytes() {
        let t = Tensor::filled(Shape::new(1, 2, 3, 4), 1.5);
        let mut buf = Vec::new();
        t.write_blob(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 24 * 8);
        assert_eq!(&buf[..4], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &4u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
    }

    #[test]
    fn grad_matches_shape() {
        let mut t = Tensor::zeros(Shape::new(2, 3, 4, 5));
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), t.data().len());
    }

    #[test]
    fn concat_rejects_mismatched_planes() {
        let a = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::zeros(Shape::new(1, 1, 4, 5));
        assert!(matches!(
            Tensor::concat_channels(&[&a, &b]),
            Err(Error::ShapeMismatch { dim: "width", .. })
        ));
    }

    proptest! {
        #[test]
        fn blob_roundtrip(n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6,
                          seed in any::<u64>()) {
            let shape = Shape::new(n, c, h, w);
            let data: Vec<f64> = (0..shape.len())
                .map(|i| ((seed as f64) * 1e-9 + i as f64).sin() * 1e3)
                .collect();
            let t = Tensor::from_vec(shape, data).unwrap();
            let mut buf = Vec::new();
            t.write_blob(&mut buf).unwrap();
            let back = Tensor::read_blob(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
