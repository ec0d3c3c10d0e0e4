use serde::{Deserialize, Serialize};

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Max-pooling geometry. `ceil_mode` rounds the output size up (windows that
/// run off the bottom/right edge are clipped), but the last window always
/// starts inside the padded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub ceil_mode: bool,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize, pad: usize) -> Self {
        PoolSpec {
            window: (window, window),
            stride: (stride, stride),
            pad: (pad, pad),
            ceil_mode: false,
        }
    }

    pub fn ceil(mut self) -> Self {
        self.ceil_mode = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.0 == 0 || self.window.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidConfig(format!("degenerate pool spec {self:?}")));
        }
        if self.pad.0 >= self.window.0 || self.pad.1 >= self.window.1 {
            return Err(Error::InvalidConfig(format!("pool padding must be smaller than the window: {self:?}")));
        }
        Ok(())
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = pool_len(h, self.pad.0, self.window.0, self.stride.0, self.ceil_mode)
            .ok_or(Error::shape("maxpool output", "height", self.window.0, h + 2 * self.pad.0))?;
        let ow = pool_len(w, self.pad.1, self.window.1, self.stride.1, self.ceil_mode)
            .ok_or(Error::shape("maxpool output", "width", self.window.1, w + 2 * self.pad.1))?;
        Ok((oh, ow))
    }
}

fn pool_len(len: usize, pad: usize, window: usize, stride: usize, ceil: bool) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < window {
        // Ceil mode still covers a short input with one clipped window.
        return (ceil && len > 0).then_some(1);
    }
    let span = padded - window;
    let mut out = if ceil {
        span.div_ceil(stride) + 1
    } else {
        span / stride + 1
    };
    if ceil && pad > 0 && (out - 1) * stride >= len + pad {
        out -= 1;
    }
    Some(out)
}

/// Max over each window. Returns the pooled tensor and, per output element,
/// the flat index into `input.data()` of the winning element. Ties go to the
/// first element in row-major scan order.
pub fn maxpool_forward(input: &Tensor, spec: &PoolSpec) -> Result<(Tensor, Vec<usize>)> {
    spec.validate()?;
    let s = input.shape();
    let (oh, ow) = spec.output_dims(s.h, s.w)?;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0usize; out_shape.len()];
    let plane = oh * ow;
    let values = par::map_range(s.n * s.c, |nc| {
        let base = nc * s.plane();
        let src = &input.data()[base..base + s.plane()];
        let mut vals = Vec::with_capacity(plane);
        let mut idx = Vec::with_capacity(plane);
        for oy in 0..oh {
            let y0 = (oy * spec.stride.0) as isize - spec.pad.0 as isize;
            let ys = y0.max(0) as usize;
            let ye = ((y0 + spec.window.0 as isize).min(s.h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * spec.stride.1) as isize - spec.pad.1 as isize;
                let xs = x0.max(0) as usize;
                let xe = ((x0 + spec.window.1 as isize).min(s.w as isize)) as usize;
                let mut best = f64::NEG_INFINITY;
                let mut best_i = ys * s.w + xs;
                for y in ys..ye {
                    for x in xs..xe {
                        let v = src[y * s.w + x];
                        if v > best {
                            best = v;
                            best_i = y * s.w + x;
                        }
                    }
                }
                vals.push(best);
                idx.push(base + best_i);
            }
        }
        (vals, idx)
    });
    for (nc, (vals, idx)) in values.into_iter().enumerate() {
        out.data_mut()[nc * plane..(nc + 1) * plane].copy_from_slice(&vals);
        arg[nc * plane..(nc + 1) * plane].copy_from_slice(&idx);
    }
    Ok((out, arg))
}

/// Routes each output gradient to its argmax position.
pub fn maxpool_backward(input_shape: Shape, output_grad: &Tensor, argmax: &[usize]) -> Result<Tensor> {
    if output_grad.data().len() != argmax.len() {
        return Err(Error::shape("maxpool_backward", "argmax", output_grad.data().len(), argmax.len()));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(output_grad.data()) {
        gd[i] += v;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_takes_max() {
        let t = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let (o, a) = maxpool_forward(&t, &PoolSpec::new(2, 2, 0)).unwrap();
        assert_eq!(o.data(), &[4.0]);
        assert_eq!(a, vec![3]);
    }

    #[test]
    fn stride_one_padded_pool_preserves_constant_map() {
        let t = Tensor::filled(Shape::new(1, 2, 5, 4), 0.3);
        let (o, _) = maxpool_forward(&t, &PoolSpec::new(3, 1, 1)).unwrap();
        assert_eq!(o, t);
    }

    #[test]
    fn ties_go_to_first_in_scan_order() {
        let t = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let (_, a) = maxpool_forward(&t, &PoolSpec::new(2, 2, 0)).unwrap();
        assert_eq!(a, vec![0]);
    }

    #[test]
    fn ceil_mode_geometry() {
        let ceil = PoolSpec::new(2, 2, 0).ceil();
        assert_eq!(ceil.output_dims(321, 321).unwrap(), (161, 161));
        assert_eq!(ceil.output_dims(81, 80).unwrap(), (41, 40));
        assert_eq!(PoolSpec::new(2, 2, 0).output_dims(321, 321).unwrap(), (160, 160));
    }

    #[test]
    fn ceil_mode_clips_partial_window() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1., 5., 9.]).unwrap();
        let (o, a) = maxpool_forward(&t, &PoolSpec::new(2, 2, 0).ceil()).unwrap();
        assert_eq!(o.data(), &[5.0, 9.0]);
        assert_eq!(a, vec![1, 2]);
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let t = Tensor::from_vec(Shape::new(1, 1, 2, 4), vec![1., 7., 2., 0., 3., 4., 8., 6.]).unwrap();
        let (o, a) = maxpool_forward(&t, &PoolSpec::new(2, 2, 0)).unwrap();
        assert_eq!(o.data(), &[7.0, 8.0]);
        let g = Tensor::from_vec(o.shape(), vec![0.5, -2.0]).unwrap();
        let back = maxpool_backward(t.shape(), &g, &a).unwrap();
        assert_eq!(back.data(), &[0., 0.5, 0., 0., 0., 0., -2.0, 0.]);
    }
}
