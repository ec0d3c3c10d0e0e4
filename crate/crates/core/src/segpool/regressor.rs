use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::msfcn::he_uniform;
use crate::tensor::{affine_backward, affine_forward, sigmoid_scalar, LayerParams};

/// Two rectified hidden layers and a logistic output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRegressor {
    pub hidden1: LayerParams,
    pub hidden2: LayerParams,
    pub output: LayerParams,
}

/// Activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct RegressorCache {
    batch: usize,
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    scores: Vec<f64>,
}

impl RegressorCache {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl SegmentRegressor {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = SegmentRegressor {
            hidden1: LayerParams::affine(input_dim, hidden),
            hidden2: LayerParams::affine(hidden, hidden),
            output: LayerParams::affine(hidden, 1),
        };
        for l in r.layers_mut() {
            he_uniform(l, &mut rng);
        }
        r
    }

    pub fn input_dim(&self) -> usize {
        self.hidden1.fan_in()
    }

    pub fn layers(&self) -> [&LayerParams; 3] {
        [&self.hidden1, &self.hidden2, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut LayerParams; 3] {
        [&mut self.hidden1, &mut self.hidden2, &mut self.output]
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().into_iter().for_each(|l| l.zero_grad());
    }

    /// Scores in `(0, 1)` for a row-major `batch × input_dim` feature block.
    pub fn forward(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.forward_train(features, batch).map(|c| c.scores)
    }

    pub fn forward_train(&self, features: &[f64], batch: usize) -> Result<RegressorCache> {
        if batch == 0 || features.len() != batch * self.input_dim() {
            return Err(Error::shape(
                "segment regressor input",
                "features",
                batch.max(1) * self.input_dim(),
                features.len(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segment features".into()));
        }
        let mut h1 = affine_forward(features, batch, &self.hidden1)?;
        h1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut h2 = affine_forward(&h1, batch, &self.hidden2)?;
        h2.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = affine_forward(&h2, batch, &self.output)?;
        Ok(RegressorCache {
            batch,
            input: features.to_vec(),
            h1,
            h2,
            scores: logits.into_iter().map(sigmoid_scalar).collect(),
        })
    }

    /// Accumulates parameter gradients from `d loss / d score`; returns the
    /// gradient with respect to the features.
    pub fn backward(&mut self, cache: &RegressorCache, dscores: &[f64]) -> Result<Vec<f64>> {
        if dscores.len() != cache.batch {
            return Err(Error::shape("segment regressor backward", "scores", cache.batch, dscores.len()));
        }
        let dlogit: Vec<f64> = dscores.iter().zip(&cache.scores).map(|(g, s)| g * s * (1.0 - s)).collect();
        let mut dh2 = affine_backward(&cache.h2, cache.batch, &dlogit, &mut self.output)?;
        mask_relu(&cache.h2, &mut dh2);
        let mut dh1 = affine_backward(&cache.h1, cache.batch, &dh2, &mut self.hidden2)?;
        mask_relu(&cache.h1, &mut dh1);
        affine_backward(&cache.input, cache.batch, &dh1, &mut self.hidden1)
    }
}

fn mask_relu(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
