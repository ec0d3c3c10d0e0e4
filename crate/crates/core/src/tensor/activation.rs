use super::Tensor;
use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// `grad · out · (1 − out)`, given the forward output.
pub fn sigmoid_backward(output: &Tensor, output_grad: &Tensor) -> Result<Tensor> {
    if output.shape() != output_grad.shape() {
        return Err(Error::shape("sigmoid_backward", "length", output.data().len(), output_grad.data().len()));
    }
    let mut g = output_grad.clone();
    for (gi, &o) in g.data_mut().iter_mut().zip(output.data()) {
        *gi *= o * (1.0 - o);
    }
    Ok(g)
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes the gradient wherever the forward output was not positive.
pub fn relu_backward(output: &Tensor, output_grad: &mut Tensor) {
    for (g, &o) in output_grad.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for &x in &[0.1, 1.0, 5.0, 30.0, 700.0, 1e308] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-15, "x={x}");
            assert!(sigmoid_scalar(-x).is_finite());
        }
        assert!(sigmoid_scalar(-800.0) >= 0.0);
        assert!(sigmoid_scalar(3.0) > 0.0 && sigmoid_scalar(3.0) < 1.0);
    }

    #[test]
    fn relu_masks_gradient() {
        let mut t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        relu_inplace(&mut t);
        let mut g = Tensor::filled(t.shape(), 1.0);
        relu_backward(&t, &mut g);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }
}
