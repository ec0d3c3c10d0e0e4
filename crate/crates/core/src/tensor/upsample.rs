use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Source coordinate and interpolation weight for one output index under the
/// align-corners mapping `src = dst·(in − 1)/(out − 1)`.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|d| {
            if input == 1 || output == 1 {
                return (0, 0, 0.0);
            }
            let src = d as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn check(s: Shape, target_h: usize, target_w: usize) -> Result<()> {
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("bilinear_upsample", "height", 1, 0));
    }
    if target_h < s.h {
        return Err(Error::shape("bilinear_upsample target", "height", s.h, target_h));
    }
    if target_w < s.w {
        return Err(Error::shape("bilinear_upsample target", "width", s.w, target_w));
    }
    Ok(())
}

/// Align-corners bilinear interpolation of every plane to `target_h × target_w`.
/// A 1×1 plane becomes a constant fill.
pub fn bilinear_upsample(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let s = input.shape();
    check(s, target_h, target_w)?;
    let ty = taps(s.h, target_h);
    let tx = taps(s.w, target_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, target_h, target_w));
    let plane_out = target_h * target_w;
    for nc in 0..s.n * s.c {
        let src = &input.data()[nc * s.plane()..(nc + 1) * s.plane()];
        let dst = &mut out.data_mut()[nc * plane_out..(nc + 1) * plane_out];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * s.w + x0] * (1.0 - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (1.0 - fx) + src[y1 * s.w + x1] * fx;
                dst[y * target_w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_upsample`].
pub fn bilinear_upsample_backward(input_shape: Shape, output_grad: &Tensor) -> Result<Tensor> {
    let gs = output_grad.shape();
    check(input_shape, gs.h, gs.w)?;
    let ty = taps(input_shape.h, gs.h);
    let tx = taps(input_shape.w, gs.w);
    let mut g = Tensor::zeros(input_shape);
    let w = input_shape.w;
    for nc in 0..gs.n * gs.c {
        let src = &output_grad.data()[nc * gs.plane()..(nc + 1) * gs.plane()];
        let dst = &mut g.data_mut()[nc * input_shape.plane()..(nc + 1) * input_shape.plane()];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = src[y * gs.w + x];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Ok(g)
}
