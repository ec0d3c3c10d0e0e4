//! Multi-scale fully convolutional stream.

mod config;
mod geometry;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{BackboneConfig, NetworkConfig, ScaleBranchConfig};
pub use geometry::{center_1d, cumulative_stride, extent, receptive_field_center, LayerGeometry};

use crate::error::{Error, Result};
use crate::maps::{RgbImage, SaliencyMap};
use crate::tensor::{
    bilinear_upsample, bilinear_upsample_backward, conv2d_backward_opt, conv2d_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_inplace, sigmoid, sigmoid_backward, ConvSpec,
    LayerParams, PoolSpec, Shape, Tensor,
};

/// One convolution with its parameters and optional rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
    pub params: LayerParams,
    pub relu: bool,
}

impl ConvLayer {
    fn new(name: impl Into<String>, spec: ConvSpec, relu: bool) -> Self {
        ConvLayer {
            name: name.into(),
            params: LayerParams::for_conv(&spec),
            spec,
            relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub convs: Vec<ConvLayer>,
    pub pool: PoolSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub attach_point: usize,
    pub layers: Vec<ConvLayer>,
}

/// Draws weights from `U(−√(6/fan_in), √(6/fan_in))`; biases are zeroed.
pub(crate) fn he_uniform(params: &mut LayerParams, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / params.fan_in() as f64).sqrt();
    for w in params.weight.data_mut() {
        *w = rng.gen_range(-bound..bound);
    }
    params.bias.iter_mut().for_each(|b| *b = 0.0);
}

#[derive(Debug)]
pub struct MsFcn {
    pub config: NetworkConfig,
    pub stages: Vec<Stage>,
    /// Converted 1×1 layers after the last pool; the final one has a single output.
    pub top: Vec<ConvLayer>,
    pub branches: Vec<Branch>,
    /// 5→1 layer over the stacked branch and top maps.
    pub stack: ConvLayer,
    conv_calls: AtomicUsize,
}

impl Clone for MsFcn {
    fn clone(&self) -> Self {
        MsFcn {
            config: self.config.clone(),
            stages: self.stages.clone(),
            top: self.top.clone(),
            branches: self.branches.clone(),
            stack: self.stack.clone(),
            conv_calls: AtomicUsize::new(self.conv_calls()),
        }
    }
}

impl PartialEq for MsFcn {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stages == other.stages
            && self.top == other.top
            && self.branches == other.branches
            && self.stack == other.stack
    }
}

/// Spatial sizes produced by the stream for one input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsFcnShapes {
    /// Output of every pool, in order.
    pub pools: [(usize, usize); 8],
    pub num_pools: usize,
    pub conv5_3: (usize, usize),
    pub branch: (usize, usize),
    pub top: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct MsFcnOutput {
    pub s1: SaliencyMap,
    /// Sigmoid output at feature resolution, `1 × 1 × h × w`.
    pub raw_s1: Tensor,
    pub conv5_3: Tensor,
    pub branch_maps: Vec<Tensor>,
    pub top_map: Tensor,
}

/// Activations kept by [`MsFcn::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    /// Per stage: conv outputs (post-activation), pooled output, argmax.
    stage_acts: Vec<Vec<Tensor>>,
    pooled: Vec<(Tensor, Vec<usize>)>,
    top_acts: Vec<Tensor>,
    branch_acts: Vec<Vec<Tensor>>,
    stacked: Tensor,
    raw_s1: Tensor,
}

pub fn build_msfcn(config: &NetworkConfig, seed: u64) -> Result<MsFcn> {
    config.validate()?;
    let b = &config.backbone;
    let nstages = b.stage_convs.len();
    let mut stages = Vec::with_capacity(nstages);
    let mut cin = 3;
    for s in 0..nstages {
        let width = b.stage_width(s);
        let dilation = if s + 1 == nstages { b.post_pool4_dilation } else { 1 };
        let convs = (0..b.stage_convs[s])
            .map(|k| {
                let spec = ConvSpec::new(if k == 0 { cin } else { width }, width, 3, 1, dilation)
                    .dilated(dilation);
                ConvLayer::new(format!("conv{}_{}", s + 1, k + 1), spec, true)
            })
            .collect();
        cin = width;
        let pool = if b.skip_subsampling && s + 2 >= nstages {
            PoolSpec::new(3, 1, 1)
        } else {
            PoolSpec::new(2, 2, 0).ceil()
        };
        stages.push(Stage { convs, pool });
    }
    let top_width = b.scaled(b.top_width);
    let top = vec![
        ConvLayer::new("fc6", ConvSpec::new(cin, top_width, 1, 1, 0).dilated(b.top_dilation), true),
        ConvLayer::new("fc7", ConvSpec::new(top_width, 1, 1, 1, 0).dilated(b.top_dilation), false),
    ];
    let branches = config
        .branches
        .iter()
        .enumerate()
        .map(|(i, br)| {
            let c_in = b.stage_width(br.attach_point);
            let w = b.scaled(br.width);
            Branch {
                attach_point: br.attach_point,
                layers: vec![
                    ConvLayer::new(format!("branch{}_1", i + 1), ConvSpec::new(c_in, w, 3, br.first_stride, 1), true),
                    ConvLayer::new(format!("branch{}_2", i + 1), ConvSpec::new(w, w, 1, 1, 0), true),
                    ConvLayer::new(format!("branch{}_3", i + 1), ConvSpec::new(w, 1, 1, 1, 0), false),
                ],
            }
        })
        .collect::<Vec<_>>();
    let mut stack = ConvLayer::new("stack", ConvSpec::new(branches.len() + 1, 1, 1, 1, 0), false);
    stack.params.weight.data_mut().iter_mut().for_each(|w| *w = config.stack_init);

    let mut net = MsFcn {
        config: config.clone(),
        stages,
        top,
        branches,
        stack,
        conv_calls: AtomicUsize::new(0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        if layer.name != "stack" {
            he_uniform(&mut layer.params, &mut rng);
        }
    }
    net.check_alignment()?;
    Ok(net)
}

impl MsFcn {
    /// Every layer in a fixed order: backbone, top, branches, stack.
    pub fn layers(&self) -> Vec<&ConvLayer> {
        let mut v: Vec<&ConvLayer> = self.stages.iter().flat_map(|s| s.convs.iter()).collect();
        v.extend(self.top.iter());
        v.extend(self.branches.iter().flat_map(|b| b.layers.iter()));
        v.push(&self.stack);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        let mut v: Vec<&mut ConvLayer> = self.stages.iter_mut().flat_map(|s| s.convs.iter_mut()).collect();
        v.extend(self.top.iter_mut());
        v.extend(self.branches.iter_mut().flat_map(|b| b.layers.iter_mut()));
        v.push(&mut self.stack);
        v
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.params.num_params()).sum()
    }

    pub fn backbone_params(&self) -> usize {
        self.stages
            .iter()
            .flat_map(|s| s.convs.iter())
            .map(|l| l.params.num_params())
            .sum()
    }

    /// Number of convolutions evaluated since construction.
    pub fn conv_calls(&self) -> usize {
        self.conv_calls.load(Ordering::Relaxed)
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.params.zero_grad();
        }
    }

    fn conv(&self, layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
        self.conv_calls.fetch_add(1, Ordering::Relaxed);
        let mut out = conv2d_forward(input, &layer.params, &layer.spec)
            .map_err(|e| annotate(e, &layer.name))?;
        if layer.relu {
            relu_inplace(&mut out);
        }
        Ok(out)
    }

    /// Geometry from the input up to the last backbone convolution.
    pub fn conv5_3_geometry(&self) -> Vec<LayerGeometry> {
        let mut g = Vec::new();
        let last = self.stages.len() - 1;
        for (s, stage) in self.stages.iter().enumerate() {
            g.extend(stage.convs.iter().map(|c| LayerGeometry::conv(&c.spec)));
            if s < last {
                g.push(LayerGeometry::pool(&stage.pool));
            }
        }
        g
    }

    /// Spatial sizes for an `h × w` input; errors when the image is too small
    /// for a feature map of at least 2×2.
    pub fn output_shapes(&self, h: usize, w: usize) -> Result<MsFcnShapes> {
        let too_small = || Error::InvalidArgument(format!("image {w}x{h} too small for the network"));
        let mut pools = [(0, 0); 8];
        let mut cur = (h, w);
        let mut conv5_3 = cur;
        for (s, stage) in self.stages.iter().enumerate() {
            for c in &stage.convs {
                cur = c.spec.output_dims(cur.0, cur.1).map_err(|_| too_small())?;
            }
            if s + 1 == self.stages.len() {
                conv5_3 = cur;
            }
            cur = stage.pool.output_dims(cur.0, cur.1).map_err(|_| too_small())?;
            pools[s.min(7)] = cur;
        }
        let top = cur;
        if conv5_3.0 < 2 || conv5_3.1 < 2 {
            return Err(too_small());
        }
        let mut branch = top;
        for b in &self.branches {
            let mut d = pools[b.attach_point];
            for l in &b.layers {
                d = l.spec.output_dims(d.0, d.1).map_err(|_| too_small())?;
            }
            if d != top {
                return Err(Error::InvalidConfig(format!(
                    "branch at pool {} yields {}x{} but the top map is {}x{} for a {w}x{h} input",
                    b.attach_point + 1,
                    d.1,
                    d.0,
                    top.1,
                    top.0
                )));
            }
            branch = d;
        }
        Ok(MsFcnShapes {
            pools,
            num_pools: self.stages.len(),
            conv5_3,
            branch,
            top,
        })
    }

    fn check_alignment(&self) -> Result<()> {
        let mut any = false;
        for probe in [64, 81, 100, 321] {
            match self.output_shapes(probe, probe) {
                Ok(_) => any = true,
                Err(e @ Error::InvalidConfig(_)) => return Err(e),
                Err(_) => {}
            }
        }
        if !any {
            return Err(Error::InvalidConfig("network accepts none of the probe sizes".into()));
        }
        Ok(())
    }

    pub fn forward(&self, image: &RgbImage) -> Result<MsFcnOutput> {
        self.forward_train(image).map(|(o, _)| o)
    }

    /// Forward pass that also returns the activations needed by [`MsFcn::backward`].
    pub fn forward_train(&self, image: &RgbImage) -> Result<(MsFcnOutput, ForwardCache)> {
        self.output_shapes(image.height, image.width)?;
        let input = image.to_tensor(self.config.backbone.input_mean);
        input.check_finite("image")?;
        let mut stage_acts = Vec::with_capacity(self.stages.len());
        let mut pooled = Vec::with_capacity(self.stages.len());
        let mut x = input.clone();
        for stage in &self.stages {
            let mut acts = Vec::with_capacity(stage.convs.len());
            for c in &stage.convs {
                x = self.conv(c, &x)?;
                acts.push(x.clone());
            }
            let (p, arg) = maxpool_forward(&x, &stage.pool)?;
            stage_acts.push(acts);
            x = p.clone();
            pooled.push((p, arg));
        }
        let mut top_acts = Vec::with_capacity(self.top.len());
        for l in &self.top {
            x = self.conv(l, &x)?;
            top_acts.push(x.clone());
        }
        let mut branch_acts = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut y = pooled[b.attach_point].0.clone();
            let mut acts = Vec::with_capacity(b.layers.len());
            for l in &b.layers {
                y = self.conv(l, &y)?;
                acts.push(y.clone());
            }
            branch_acts.push(acts);
        }
        let top_map = top_acts.last().cloned().unwrap_or_else(|| x.clone());
        let mut parts: Vec<&Tensor> = branch_acts.iter().map(|a| a.last().expect("branch layers")).collect();
        parts.push(&top_map);
        let stacked = Tensor::concat_channels(&parts)?;
        let logits = self.conv(&self.stack, &stacked)?;
        let raw_s1 = sigmoid(&logits);
        raw_s1.check_finite("raw_s1")?;
        let up = bilinear_upsample(&raw_s1, image.height, image.width)?;
        let s1 = SaliencyMap::from_tensor(&up);
        let conv5_3 = stage_acts.last().and_then(|a| a.last()).cloned().expect("stages");
        let out = MsFcnOutput {
            s1,
            raw_s1: raw_s1.clone(),
            conv5_3,
            branch_maps: branch_acts.iter().map(|a| a.last().cloned().expect("branch")).collect(),
            top_map,
        };
        let cache = ForwardCache {
            input,
            stage_acts,
            pooled,
            top_acts,
            branch_acts,
            stacked,
            raw_s1,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients given `ds1`, the loss gradient with
    /// respect to the full-resolution map (row-major, `H·W` values).
    pub fn backward(&mut self, cache: &ForwardCache, ds1: &[f64]) -> Result<()> {
        let is = cache.input.shape();
        if ds1.len() != is.h * is.w {
            return Err(Error::shape("msfcn backward", "pixels", is.h * is.w, ds1.len()));
        }
        let g_up = Tensor::from_vec(Shape::new(1, 1, is.h, is.w), ds1.to_vec())?;
        let g_raw = bilinear_upsample_backward(cache.raw_s1.shape(), &g_up)?;
        let g_logit = sigmoid_backward(&cache.raw_s1, &g_raw)?;
        let g_stack = layer_backward(&mut self.stack, &cache.stacked, &cache.raw_s1, g_logit, true)?
            .expect("input grad");

        // Gradients flowing into each pool output.
        let mut g_pool: Vec<Option<Tensor>> = vec![None; self.stages.len()];
        let nb = self.branches.len();
        for (bi, branch) in self.branches.iter_mut().enumerate() {
            let mut g = g_stack.channels(bi, 1);
            let acts = &cache.branch_acts[bi];
            for li in (0..branch.layers.len()).rev() {
                let input = if li == 0 { &cache.pooled[branch.attach_point].0 } else { &acts[li - 1] };
                g = layer_backward(&mut branch.layers[li], input, &acts[li], g, true)?.expect("input grad");
            }
            add_into(&mut g_pool[branch.attach_point], g);
        }
        let mut g = g_stack.channels(nb, 1);
        for li in (0..self.top.len()).rev() {
            let input = if li == 0 { &cache.pooled.last().expect("stages").0 } else { &cache.top_acts[li - 1] };
            g = layer_backward(&mut self.top[li], input, &cache.top_acts[li], g, true)?.expect("input grad");
        }
        let last = self.stages.len() - 1;
        add_into(&mut g_pool[last], g);

        for s in (0..self.stages.len()).rev() {
            let Some(gp) = g_pool[s].take() else { continue };
            let acts = &cache.stage_acts[s];
            let pre_pool = acts.last().expect("stage convs");
            let mut g = Some(maxpool_backward(pre_pool.shape(), &gp, &cache.pooled[s].1)?);
            let stage = &mut self.stages[s];
            for li in (0..stage.convs.len()).rev() {
                let input = if li > 0 {
                    &acts[li - 1]
                } else if s > 0 {
                    &cache.pooled[s - 1].0
                } else {
                    &cache.input
                };
                let grad = g.take().expect("gradient present above the first layer");
                g = layer_backward(&mut stage.convs[li], input, &acts[li], grad, s > 0 || li > 0)?;
            }
            if let Some(g) = g {
                add_into(&mut g_pool[s - 1], g);
            }
        }
        Ok(())
    }
}

fn annotate(e: Error, layer: &str) -> Error {
    match e {
        Error::ShapeMismatch { context, dim, expected, found } => Error::ShapeMismatch {
            context: format!("{layer}: {context}"),
            dim,
            expected,
            found,
        },
        Error::NonFinite(m) => Error::NonFinite(format!("{layer}: {m}")),
        other => other,
    }
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Backward through an optional rectifier then the convolution.
fn layer_backward(
    layer: &mut ConvLayer,
    input: &Tensor,
    output: &Tensor,
    mut grad: Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    if layer.relu {
        relu_backward(output, &mut grad);
    }
    conv2d_backward_opt(input, &grad, &mut layer.params, &layer.spec, want_input_grad)
        .map_err(|e| annotate(e, &layer.name))
}
