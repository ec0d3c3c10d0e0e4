use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::par;

/// Output-channel rows handled per task in the GEMM fan-out.
const ROW_BLOCK: usize = 16;

/// Geometry of a 2-D convolution. Dilation `d` samples the input every `d`
/// pixels, i.e. `d - 1` implicit zeros between kernel taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square kernel, unit dilation.
    pub fn new(in_channels: usize, out_channels: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (stride, stride),
            pad: (pad, pad),
            dilation: (1, 1),
        }
    }

    pub fn dilated(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels >= 1
            && self.out_channels >= 1
            && self.kernel.0 >= 1
            && self.kernel.1 >= 1
            && self.stride.0 >= 1
            && self.stride.1 >= 1
            && self.dilation.0 >= 1
            && self.dilation.1 >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("degenerate conv spec {self:?}")))
        }
    }

    /// Dilated kernel extent `(k - 1)·d + 1` along (height, width).
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation.0 + 1,
            (self.kernel.1 - 1) * self.dilation.1 + 1,
        )
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (eh, ew) = self.effective_kernel();
        let oh = out_len(h, self.pad.0, eh, self.stride.0)
            .ok_or(Error::shape("conv2d output", "height", eh, h + 2 * self.pad.0))?;
        let ow = out_len(w, self.pad.1, ew, self.stride.1)
            .ok_or(Error::shape("conv2d output", "width", ew, w + 2 * self.pad.1))?;
        Ok((oh, ow))
    }

    pub fn patch_rows(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel.0, self.kernel.1)
    }
}

fn out_len(len: usize, pad: usize, extent: usize, stride: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= extent).then(|| (padded - extent) / stride + 1)
}

/// Weights, bias and their gradient/velocity buffers for one conv or affine layer.
///
/// Weights are stored `(out, in, kh, kw)`; affine layers use `kh = kw = 1`.
/// The weight gradient lives in the weight tensor's grad buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub bias_grad: Vec<f64>,
    pub weight_velocity: Vec<f64>,
    pub bias_velocity: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(weight_shape: Shape) -> Self {
        let out = weight_shape.n;
        let mut weight = Tensor::zeros(weight_shape);
        weight.grad_mut();
        LayerParams {
            weight,
            bias: vec![0.0; out],
            bias_grad: vec![0.0; out],
            weight_velocity: vec![0.0; weight_shape.len()],
            bias_velocity: vec![0.0; out],
        }
    }

    pub fn for_conv(spec: &ConvSpec) -> Self {
        Self::zeros(spec.weight_shape())
    }

    pub fn affine(inputs: usize, outputs: usize) -> Self {
        Self::zeros(Shape::new(outputs, inputs, 1, 1))
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape().n
    }

    /// Fan-in of one output unit.
    pub fn fan_in(&self) -> usize {
        let s = self.weight.shape();
        s.c * s.h * s.w
    }

    pub fn weight_grad(&self) -> &[f64] {
        self.weight.grad().expect("layer weights always carry a grad buffer")
    }

    pub fn weight_grad_mut(&mut self) -> &mut [f64] {
        self.weight.grad_mut()
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias_grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn num_params(&self) -> usize {
        self.weight.data().len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Column matrix produced by [`im2col_atrous`]: `rows = in_channels·kh·kw`,
/// `cols = batch·out_h·out_w`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub rows: usize,
    pub cols: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub data: Vec<f64>,
}

impl PatchMatrix {
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + j]).collect()
    }
}

fn check_input(input: &Tensor, spec: &ConvSpec, context: &'static str) -> Result<(usize, usize)> {
    spec.validate()?;
    let s = input.shape();
    if s.c != spec.in_channels {
        return Err(Error::shape(context, "channels", spec.in_channels, s.c));
    }
    spec.output_dims(s.h, s.w)
}

/// Fills `cols` (row-major `patch_rows × out_h·out_w`) with the dilated
/// receptive fields of image `n`. Each row is written by one task.
fn im2col_image(input: &Tensor, n: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [f64]) {
    let s = input.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.pad;
    let (dh, dw) = spec.dilation;
    let p = oh * ow;
    let img = input.image(n);
    par::for_each_chunk_mut(cols, p, |row, out| {
        let ci = row / (kh * kw);
        let ky = (row / kw) % kh;
        let kx = row % kw;
        let plane = &img[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for oy in 0..oh {
            let y = (oy * sh + ky * dh) as isize - ph as isize;
            let dst = &mut out[oy * ow..(oy + 1) * ow];
            if y < 0 || y >= s.h as isize {
                dst.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let src = &plane[y as usize * s.w..(y as usize + 1) * s.w];
            for (ox, v) in dst.iter_mut().enumerate() {
                let x = (ox * sw + kx * dw) as isize - pw as isize;
                *v = if x < 0 || x >= s.w as isize {
                    0.0
                } else {
                    src[x as usize]
                };
            }
        }
    });
}

/// Scatter-adds a column matrix of image-sized patches back onto `grad`
/// (`in_channels × h × w`). Parallel over input channels.
fn col2im_image(
    cols: &[f64],
    spec: &ConvSpec,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad: &mut [f64],
) {
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.pad;
    let (dh, dw) = spec.dilation;
    let p = oh * ow;
    par::for_each_chunk_mut(grad, h * w, |ci, plane| {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let y = (oy * sh + ky * dh) as isize - ph as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for ox in 0..ow {
                        let x = (ox * sw + kx * dw) as isize - pw as isize;
                        if x >= 0 && x < w as isize {
                            dst[x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    });
}

/// Unrolls every dilated receptive field of `input` into a column.
///
/// Column `j = (n·out_h + oy)·out_w + ox`; row `(ci·kh + ky)·kw + kx` holds
/// `input[n, ci, oy·sh − ph + ky·dh, ox·sw − pw + kx·dw]` (zero outside).
pub fn im2col_atrous(input: &Tensor, spec: &ConvSpec) -> Result<PatchMatrix> {
    let (oh, ow) = check_input(input, spec, "im2col_atrous")?;
    let s = input.shape();
    let rows = spec.patch_rows();
    let p = oh * ow;
    let cols = s.n * p;
    let mut data = vec![0.0; rows * cols];
    let mut buf = vec![0.0; rows * p];
    for n in 0..s.n {
        im2col_image(input, n, spec, oh, ow, &mut buf);
        for r in 0..rows {
            data[r * cols + n * p..r * cols + (n + 1) * p].copy_from_slice(&buf[r * p..(r + 1) * p]);
        }
    }
    Ok(PatchMatrix {
        rows,
        cols,
        out_h: oh,
        out_w: ow,
        data,
    })
}

/// Adjoint of [`im2col_atrous`]: accumulates a patch matrix back into an
/// input-shaped tensor.
pub fn col2im_atrous(patches: &PatchMatrix, spec: &ConvSpec, input_shape: Shape) -> Result<Tensor> {
    spec.validate()?;
    let (oh, ow) = spec.output_dims(input_shape.h, input_shape.w)?;
    let p = oh * ow;
    if patches.rows != spec.patch_rows() {
        return Err(Error::shape("col2im_atrous", "rows", spec.patch_rows(), patches.rows));
    }
    if patches.cols != input_shape.n * p {
        return Err(Error::shape("col2im_atrous", "cols", input_shape.n * p, patches.cols));
    }
    let mut out = Tensor::zeros(input_shape);
    let per_image = input_shape.c * input_shape.plane();
    let mut buf = vec![0.0; patches.rows * p];
    for n in 0..input_shape.n {
        for r in 0..patches.rows {
            buf[r * p..(r + 1) * p]
                .copy_from_slice(&patches.data[r * patches.cols + n * p..r * patches.cols + (n + 1) * p]);
        }
        col2im_image(
            &buf,
            spec,
            input_shape.h,
            input_shape.w,
            oh,
            ow,
            &mut out.data_mut()[n * per_image..(n + 1) * per_image],
        );
    }
    Ok(out)
}

fn check_params(params: &LayerParams, spec: &ConvSpec, context: &'static str) -> Result<()> {
    let ws = params.weight.shape();
    let want = spec.weight_shape();
    if ws.n != want.n {
        return Err(Error::shape(context, "weight out_channels", want.n, ws.n));
    }
    if ws.c != want.c {
        return Err(Error::shape(context, "weight in_channels", want.c, ws.c));
    }
    if ws.h != want.h || ws.w != want.w {
        return Err(Error::shape(context, "weight kernel", want.h * want.w, ws.h * ws.w));
    }
    if params.bias.len() != spec.out_channels {
        return Err(Error::shape(context, "bias", spec.out_channels, params.bias.len()));
    }
    Ok(())
}

/// Dilated cross-correlation plus bias.
pub fn conv2d_forward(input: &Tensor, params: &LayerParams, spec: &ConvSpec) -> Result<Tensor> {
    let (oh, ow) = check_input(input, spec, "conv2d_forward")?;
    check_params(params, spec, "conv2d_forward")?;
    input.check_finite("conv2d_forward input")?;
    let s = input.shape();
    let k = spec.patch_rows();
    let p = oh * ow;
    let cout = spec.out_channels;
    let mut out = Tensor::zeros(Shape::new(s.n, cout, oh, ow));
    let mut cols = vec![0.0; k * p];
    let w = MatRef::row_major(params.weight.data(), cout, k);
    for n in 0..s.n {
        im2col_image(input, n, spec, oh, ow, &mut cols);
        let colm = MatRef::row_major(&cols, k, p);
        let dst = &mut out.data_mut()[n * cout * p..(n + 1) * cout * p];
        par::for_each_chunk_mut(dst, ROW_BLOCK * p, |blk, chunk| {
            let r0 = blk * ROW_BLOCK;
            let rows = chunk.len() / p;
            for (i, row) in chunk.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = params.bias[r0 + i]);
            }
            gemm(w.rows(r0, rows), colm, 1.0, chunk);
        });
    }
    Ok(out)
}

/// Gradient w.r.t. the input; accumulates weight and bias gradients into `params`.
pub fn conv2d_backward(
    input: &Tensor,
    output_grad: &Tensor,
    params: &mut LayerParams,
    spec: &ConvSpec,
) -> Result<Tensor> {
    conv2d_backward_opt(input, output_grad, params, spec, true)
        .map(|g| g.expect("input grad requested"))
}

pub(crate) fn conv2d_backward_opt(
    input: &Tensor,
    output_grad: &Tensor,
    params: &mut LayerParams,
    spec: &ConvSpec,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (oh, ow) = check_input(input, spec, "conv2d_backward")?;
    check_params(params, spec, "conv2d_backward")?;
    let s = input.shape();
    let gs = output_grad.shape();
    let want = Shape::new(s.n, spec.out_channels, oh, ow);
    if gs != want {
        let (dim, e, f) = if gs.n != want.n {
            ("batch", want.n, gs.n)
        } else if gs.c != want.c {
            ("channels", want.c, gs.c)
        } else if gs.h != want.h {
            ("height", want.h, gs.h)
        } else {
            ("width", want.w, gs.w)
        };
        return Err(Error::shape("conv2d_backward output_grad", dim, e, f));
    }
    let k = spec.patch_rows();
    let p = oh * ow;
    let cout = spec.out_channels;
    let mut input_grad = want_input_grad.then(|| Tensor::zeros(s));
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let per_image = s.c * s.plane();

    for n in 0..s.n {
        let dout = output_grad.image(n);
        if dout.iter().all(|&g| g == 0.0) {
            continue;
        }
        for (co, g) in params.bias_grad.iter_mut().enumerate() {
            *g += dout[co * p..(co + 1) * p].iter().sum::<f64>();
        }
        im2col_image(input, n, spec, oh, ow, &mut cols);
        let colt = MatRef::row_major(&cols, k, p).t();
        let doutm = MatRef::row_major(dout, cout, p);
        // dW (cout × k) += dout (cout × p) · colsᵀ (p × k)
        par::for_each_chunk_mut(params.weight.grad_mut(), ROW_BLOCK * k, |blk, chunk| {
            let r0 = blk * ROW_BLOCK;
            gemm(doutm.rows(r0, chunk.len() / k), colt, 1.0, chunk);
        });
        if let Some(ig) = input_grad.as_mut() {
            // dcols (k × p) = Wᵀ (k × cout) · dout (cout × p)
            let wt = MatRef::row_major(params.weight.data(), cout, k).t();
            par::for_each_chunk_mut(&mut dcols, ROW_BLOCK * p, |blk, chunk| {
                let r0 = blk * ROW_BLOCK;
                gemm(wt.rows(r0, chunk.len() / p), doutm, 0.0, chunk);
            });
            col2im_image(
                &dcols,
                spec,
                s.h,
                s.w,
                oh,
                ow,
                &mut ig.data_mut()[n * per_image..(n + 1) * per_image],
            );
        }
    }
    Ok(input_grad)
}
