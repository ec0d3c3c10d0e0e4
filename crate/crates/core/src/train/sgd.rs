use serde::{Deserialize, Serialize};

use crate::tensor::LayerParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v ← μv − lr·(g + λw); w ← w + v`. Biases get no decay.
pub fn sgd_step(params: &mut LayerParams, opt: &SgdParams) {
    let SgdParams { lr, momentum, weight_decay } = *opt;
    let LayerParams {
        weight,
        bias,
        bias_grad,
        weight_velocity,
        bias_velocity,
    } = params;
    let grad = weight.grad().expect("layer weights always carry a grad buffer").to_vec();
    for ((w, v), g) in weight.data_mut().iter_mut().zip(weight_velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * (g + weight_decay * *w);
        *w += *v;
    }
    for ((b, v), g) in bias.iter_mut().zip(bias_velocity.iter_mut()).zip(bias_grad.iter()) {
        *v = momentum * *v - lr * g;
        *b += *v;
    }
}
