use super::LayerParams;
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

/// Parameters of a fully connected layer (weights stored `out × in × 1 × 1`).
pub type AffineParams = LayerParams;

fn check(params: &LayerParams, input_len: usize, batch: usize) -> Result<usize> {
    let ws = params.weight.shape();
    if ws.h != 1 || ws.w != 1 {
        return Err(Error::shape("affine", "kernel", 1, ws.h * ws.w));
    }
    if batch == 0 || input_len % batch != 0 || input_len / batch != ws.c {
        return Err(Error::shape("affine input", "features", ws.c * batch.max(1), input_len));
    }
    Ok(ws.c)
}

/// `out[b] = W · in[b] + bias` for each row `b` of a row-major `batch × in` input.
pub fn affine_forward(input: &[f64], batch: usize, params: &LayerParams) -> Result<Vec<f64>> {
    let din = check(params, input.len(), batch)?;
    let dout = params.outputs();
    let mut out = Vec::with_capacity(batch * dout);
    for _ in 0..batch {
        out.extend_from_slice(&params.bias);
    }
    gemm(
        MatRef::row_major(input, batch, din),
        MatRef::row_major(params.weight.data(), dout, din).t(),
        1.0,
        &mut out,
    );
    Ok(out)
}

/// Returns the input gradient and accumulates weight/bias gradients.
pub fn affine_backward(
    input: &[f64],
    batch: usize,
    output_grad: &[f64],
    params: &mut LayerParams,
) -> Result<Vec<f64>> {
    let din = check(params, input.len(), batch)?;
    let dout = params.outputs();
    if output_grad.len() != batch * dout {
        return Err(Error::shape("affine_backward output_grad", "length", batch * dout, output_grad.len()));
    }
    let g = MatRef::row_major(output_grad, batch, dout);
    for b in 0..batch {
        for (bg, og) in params.bias_grad.iter_mut().zip(&output_grad[b * dout..(b + 1) * dout]) {
            *bg += og;
        }
    }
    // dW (out × in) += gᵀ (out × batch) · x (batch × in)
    gemm(g.t(), MatRef::row_major(input, batch, din), 1.0, params.weight.grad_mut());
    let mut dx = vec![0.0; batch * din];
    gemm(g, MatRef::row_major(params.weight.data(), dout, din), 0.0, &mut dx);
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut p = LayerParams::affine(3, 3);
        for i in 0..3 {
            p.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = [0.5, -1.0, 2.0];
        assert_eq!(affine_forward(&x, 1, &p).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut p = LayerParams::affine(4, 2);
        p.bias = vec![0.25, -3.0];
        assert_eq!(affine_forward(&[1., 2., 3., 4.], 1, &p).unwrap(), vec![0.25, -3.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LayerParams::affine(4, 2);
        assert!(matches!(
            affine_forward(&[1.0, 2.0, 3.0], 1, &p),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batched_rows_are_independent() {
        let mut p = LayerParams::affine(2, 2);
        p.weight.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        p.bias = vec![0.5, 0.0];
        let out = affine_forward(&[1.0, 0.0, 0.0, 1.0], 2, &p).unwrap();
        assert_eq!(out, vec![1.5, 3.0, 2.5, 4.0]);
    }
}
