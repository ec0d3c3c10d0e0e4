use crate::error::{Error, Result};
use crate::maps::SaliencyMap;
use crate::tensor::{sigmoid_scalar, LayerParams};

/// 1×1 convolution over the two stream maps: weights `(w_s1, w_s2)`, one bias.
pub type FusionLayer = LayerParams;

pub fn fusion_layer(init: [f64; 3]) -> FusionLayer {
    let mut l = LayerParams::affine(2, 1);
    l.weight.data_mut().copy_from_slice(&init[..2]);
    l.bias[0] = init[2];
    l
}

fn check(s1: &SaliencyMap, s2: &SaliencyMap) -> Result<()> {
    if !s1.same_dims(s2.width, s2.height) {
        return Err(Error::shape("fuse", "pixels", s1.len(), s2.len()));
    }
    Ok(())
}

/// `S = σ(w1·s1 + w2·s2 + b)` per pixel.
pub fn fuse(s1: &SaliencyMap, s2: &SaliencyMap, layer: &FusionLayer) -> Result<SaliencyMap> {
    check(s1, s2)?;
    let w = layer.weight.data();
    let b = layer.bias[0];
    let data = s1
        .data
        .iter()
        .zip(&s2.data)
        .map(|(&a, &c)| sigmoid_scalar(w[0] * a + w[1] * c + b))
        .collect();
    SaliencyMap::new(s1.width, s1.height, data)
}

/// Given `dL/dS`, accumulates the layer gradients and returns `(dL/ds1, dL/ds2)`.
pub fn fuse_backward(
    s1: &SaliencyMap,
    s2: &SaliencyMap,
    fused: &SaliencyMap,
    grad: &[f64],
    layer: &mut FusionLayer,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(s1, s2)?;
    check(s1, fused)?;
    if grad.len() != s1.len() {
        return Err(Error::shape("fuse_backward", "pixels", s1.len(), grad.len()));
    }
    let (w1, w2) = (layer.weight.data()[0], layer.weight.data()[1]);
    let (mut gw1, mut gw2, mut gb) = (0.0, 0.0, 0.0);
    let mut d1 = Vec::with_capacity(grad.len());
    let mut d2 = Vec::with_capacity(grad.len());
    for i in 0..grad.len() {
        let s = fused.data[i];
        let dz = grad[i] * s * (1.0 - s);
        gw1 += dz * s1.data[i];
        gw2 += dz * s2.data[i];
        gb += dz;
        d1.push(dz * w1);
        d2.push(dz * w2);
    }
    let g = layer.weight_grad_mut();
    g[0] += gw1;
    g[1] += gw2;
    layer.bias_grad[0] += gb;
    Ok((d1, d2))
}
