//! Finite-difference checks of every differentiable piece of the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::maps::{BinaryMask, RgbImage, SaliencyMap};
use crate::msfcn::{build_msfcn, NetworkConfig};
use crate::segpool::SegmentRegressor;
use crate::tensor::{
    affine_backward, affine_forward, bilinear_upsample, bilinear_upsample_backward, conv2d_backward,
    conv2d_forward, grad_check, maxpool_backward, maxpool_forward, relu_backward, relu_inplace, sigmoid,
    sigmoid_backward, ConvSpec, GradCheckOptions, GradCheckReport, LayerParams, ParamBlock, PoolSpec, Shape,
    Tensor,
};
use crate::train::{balanced_cross_entropy, fuse, fuse_backward, fusion_layer, stream2_loss};

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, s: Shape) -> Tensor {
    Tensor::from_vec(s, rand_vec(rng, s.len())).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn opts(abs_floor: f64) -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-5,
        abs_floor,
    }
}

fn random_conv(rng: &mut ChaCha8Rng, spec: &ConvSpec) -> LayerParams {
    let mut p = LayerParams::for_conv(spec);
    p.weight.data_mut().copy_from_slice(&rand_vec(rng, spec.weight_shape().len()));
    p.bias = rand_vec(rng, spec.out_channels);
    p
}

/// Loss `Σ r ⊙ conv(x)` with respect to input, weights and bias.
pub fn check_conv(spec: &ConvSpec, input: Shape, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, input);
    let mut p = random_conv(&mut rng, spec);
    let out = conv2d_forward(&x, &p, spec)?;
    let r = rand_tensor(&mut rng, out.shape());
    let dx = conv2d_backward(&x, &r, &mut p, spec)?;
    let blocks = vec![
        ParamBlock::new("input", x.data().to_vec(), dx.data().to_vec()),
        ParamBlock::new("weight", p.weight.data().to_vec(), p.weight_grad().to_vec()),
        ParamBlock::new("bias", p.bias.clone(), p.bias_grad.clone()),
    ];
    Ok(grad_check(blocks, opts(1e-8), |v| {
        let xi = Tensor::from_vec(input, v[0].clone()).expect("sized");
        let mut q = LayerParams::for_conv(spec);
        q.weight.data_mut().copy_from_slice(&v[1]);
        q.bias = v[2].clone();
        dot(conv2d_forward(&xi, &q, spec).expect("valid").data(), r.data())
    }))
}

pub fn check_maxpool(spec: &PoolSpec, input: Shape, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, input);
    let (out, arg) = maxpool_forward(&x, spec)?;
    let r = rand_tensor(&mut rng, out.shape());
    let dx = maxpool_backward(input, &r, &arg)?;
    Ok(grad_check(
        vec![ParamBlock::new("input", x.data().to_vec(), dx.data().to_vec())],
        opts(1e-8),
        |v| {
            let xi = Tensor::from_vec(input, v[0].clone()).expect("sized");
            dot(maxpool_forward(&xi, spec).expect("valid").0.data(), r.data())
        },
    ))
}

pub fn check_sigmoid(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(2, 2, 3, 3);
    let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(-4.0..4.0)).collect())?;
    let r = rand_tensor(&mut rng, s);
    let dx = sigmoid_backward(&sigmoid(&x), &r)?;
    Ok(grad_check(
        vec![ParamBlock::new("input", x.data().to_vec(), dx.data().to_vec())],
        opts(1e-8),
        |v| dot(sigmoid(&Tensor::from_vec(s, v[0].clone()).expect("sized")).data(), r.data()),
    ))
}

pub fn check_upsample(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(1, 2, 4, 5);
    let x = rand_tensor(&mut rng, s);
    let r = rand_tensor(&mut rng, Shape::new(1, 2, 13, 17));
    let dx = bilinear_upsample_backward(s, &r)?;
    Ok(grad_check(
        vec![ParamBlock::new("input", x.data().to_vec(), dx.data().to_vec())],
        opts(1e-8),
        |v| {
            let xi = Tensor::from_vec(s, v[0].clone()).expect("sized");
            dot(bilinear_upsample(&xi, 13, 17).expect("valid").data(), r.data())
        },
    ))
}

/// Affine layer; every input and bias coordinate plus `weight_samples`
/// randomly chosen weights are perturbed.
pub fn check_affine(inputs: usize, outputs: usize, weight_samples: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_vec(&mut rng, inputs);
    let mut p = LayerParams::affine(inputs, outputs);
    let scale = (inputs as f64).sqrt().recip();
    let w: Vec<f64> = rand_vec(&mut rng, inputs * outputs).iter().map(|w| w * scale).collect();
    p.weight.data_mut().copy_from_slice(&w);
    p.bias = rand_vec(&mut rng, outputs);
    let r = rand_vec(&mut rng, outputs);
    let dx = affine_backward(&x, 1, &r, &mut p)?;
    let n = inputs * outputs;
    let picks: Vec<usize> = if weight_samples >= n {
        (0..n).collect()
    } else {
        (0..weight_samples).map(|_| rng.gen_range(0..n)).collect()
    };
    let wsel = picks.iter().map(|&i| p.weight.data()[i]).collect();
    let gsel = picks.iter().map(|&i| p.weight_grad()[i]).collect();
    let mut q = p.clone();
    Ok(grad_check(
        vec![
            ParamBlock::new("input", x.clone(), dx),
            ParamBlock::new("weight", wsel, gsel),
            ParamBlock::new("bias", p.bias.clone(), p.bias_grad.clone()),
        ],
        opts(1e-3),
        |v| {
            for (&i, &w) in picks.iter().zip(&v[1]) {
                q.weight.data_mut()[i] = w;
            }
            q.bias.copy_from_slice(&v[2]);
            dot(&affine_forward(&v[0], 1, &q).expect("valid"), &r)
        },
    ))
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SaliencyMap {
    SaliencyMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.05..0.95)).collect()).expect("sized")
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let mut d: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.4)).collect();
    d[0] = true;
    d[1] = false;
    BinaryMask::new(w, h, d).expect("sized")
}

/// `Σ r ⊙ fuse(s1, s2)` with respect to both maps and the layer.
pub fn check_fusion(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s1, s2) = (random_map(&mut rng, 4, 3), random_map(&mut rng, 4, 3));
    let mut layer = fusion_layer([rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)]);
    let r = rand_vec(&mut rng, 12);
    let fused = fuse(&s1, &s2, &layer)?;
    let (d1, d2) = fuse_backward(&s1, &s2, &fused, &r, &mut layer)?;
    let params = [layer.weight.data().to_vec(), layer.bias.clone()].concat();
    let pgrad = [layer.weight_grad().to_vec(), layer.bias_grad.clone()].concat();
    Ok(grad_check(
        vec![
            ParamBlock::new("s1", s1.data.clone(), d1),
            ParamBlock::new("s2", s2.data.clone(), d2),
            ParamBlock::new("layer", params, pgrad),
        ],
        opts(1e-8),
        |v| {
            let a = SaliencyMap::new(4, 3, v[0].clone()).expect("sized");
            let b = SaliencyMap::new(4, 3, v[1].clone()).expect("sized");
            let l = fusion_layer([v[2][0], v[2][1], v[2][2]]);
            dot(&fuse(&a, &b, &l).expect("valid").data, &r)
        },
    ))
}

/// Balanced cross-entropy composed with the fusion layer.
pub fn check_balanced_loss(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (5, 4);
    let (s1, s2) = (random_map(&mut rng, w, h), random_map(&mut rng, w, h));
    let gt = random_mask(&mut rng, w, h);
    let mut layer = fusion_layer([1.5, -0.7, 0.2]);
    let fused = fuse(&s1, &s2, &layer)?;
    let rep = balanced_cross_entropy(&fused, &gt)?;
    let (d1, d2) = fuse_backward(&s1, &s2, &fused, &rep.grad, &mut layer)?;
    let params = [layer.weight.data().to_vec(), layer.bias.clone()].concat();
    let pgrad = [layer.weight_grad().to_vec(), layer.bias_grad.clone()].concat();
    Ok(grad_check(
        vec![
            ParamBlock::new("s1", s1.data.clone(), d1),
            ParamBlock::new("s2", s2.data.clone(), d2),
            ParamBlock::new("fusion", params, pgrad),
        ],
        opts(1e-8),
        |v| {
            let a = SaliencyMap::new(w, h, v[0].clone()).expect("sized");
            let b = SaliencyMap::new(w, h, v[1].clone()).expect("sized");
            let l = fusion_layer([v[2][0], v[2][1], v[2][2]]);
            balanced_cross_entropy(&fuse(&a, &b, &l).expect("valid"), &gt).expect("valid").loss
        },
    ))
}

pub fn check_stream2_loss(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<f64> = (0..9).map(|_| rng.gen_range(0..2) as f64).collect();
    let (_, g) = stream2_loss(&scores, &labels)?;
    Ok(grad_check(vec![ParamBlock::new("scores", scores, g)], opts(1e-8), |v| {
        stream2_loss(&v[0], &labels).expect("valid").0
    }))
}

/// Squared error through the whole segment regressor on a small batch.
pub fn check_regressor(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (din, hidden, batch) = (24, 12, 4);
    let mut reg = SegmentRegressor::new(din, hidden, seed);
    for l in reg.layers_mut() {
        l.bias = rand_vec(&mut rng, l.outputs()).iter().map(|b| 0.1 * b).collect();
    }
    let x: Vec<f64> = (0..din * batch).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let cache = reg.forward_train(&x, batch)?;
    let (_, g) = stream2_loss(cache.scores(), &labels)?;
    let dx = reg.backward(&cache, &g)?;
    let mut blocks = vec![ParamBlock::new("features", x, dx)];
    for (i, l) in reg.layers().into_iter().enumerate() {
        blocks.push(ParamBlock::new(format!("layer{}.weight", i + 1), l.weight.data().to_vec(), l.weight_grad().to_vec()));
        blocks.push(ParamBlock::new(format!("layer{}.bias", i + 1), l.bias.clone(), l.bias_grad.clone()));
    }
    let base = reg.clone();
    Ok(grad_check(blocks, opts(1e-8), |v| {
        let mut r = base.clone();
        for (i, l) in r.layers_mut().into_iter().enumerate() {
            l.weight.data_mut().copy_from_slice(&v[1 + 2 * i]);
            l.bias = v[2 + 2 * i].clone();
        }
        let s = r.forward(&v[0], batch).expect("valid");
        stream2_loss(&s, &labels).expect("valid").0
    }))
}

/// conv → ReLU → max-pool → conv → sigmoid, loss `Σ r ⊙ out`.
pub fn check_stack(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Shape::new(1, 2, 9, 9);
    let c1 = ConvSpec::new(2, 3, 3, 1, 1);
    let pool = PoolSpec::new(2, 2, 0).ceil();
    let c2 = ConvSpec::new(3, 2, 3, 1, 2).dilated(2);
    let x = rand_tensor(&mut rng, input);
    let mut p1 = random_conv(&mut rng, &c1);
    let mut p2 = random_conv(&mut rng, &c2);
    let forward = |x: &Tensor, p1: &LayerParams, p2: &LayerParams| -> Result<_> {
        let mut a = conv2d_forward(x, p1, &c1)?;
        relu_inplace(&mut a);
        let (b, arg) = maxpool_forward(&a, &pool)?;
        let c = conv2d_forward(&b, p2, &c2)?;
        let o = sigmoid(&c);
        Ok((a, b, arg, o))
    };
    let (a, b, arg, o) = forward(&x, &p1, &p2)?;
    let r = rand_tensor(&mut rng, o.shape());
    let dc = sigmoid_backward(&o, &r)?;
    let db = conv2d_backward(&b, &dc, &mut p2, &c2)?;
    let mut da = maxpool_backward(a.shape(), &db, &arg)?;
    relu_backward(&a, &mut da);
    let dx = conv2d_backward(&x, &da, &mut p1, &c1)?;
    let blocks = vec![
        ParamBlock::new("input", x.data().to_vec(), dx.data().to_vec()),
        ParamBlock::new("conv1.weight", p1.weight.data().to_vec(), p1.weight_grad().to_vec()),
        ParamBlock::new("conv1.bias", p1.bias.clone(), p1.bias_grad.clone()),
        ParamBlock::new("conv2.weight", p2.weight.data().to_vec(), p2.weight_grad().to_vec()),
        ParamBlock::new("conv2.bias", p2.bias.clone(), p2.bias_grad.clone()),
    ];
    Ok(grad_check(blocks, opts(1e-8), |v| {
        let xi = Tensor::from_vec(input, v[0].clone()).expect("sized");
        let mut q1 = p1.clone();
        q1.weight.data_mut().copy_from_slice(&v[1]);
        q1.bias = v[2].clone();
        let mut q2 = p2.clone();
        q2.weight.data_mut().copy_from_slice(&v[3]);
        q2.bias = v[4].clone();
        dot(forward(&xi, &q1, &q2).expect("valid").3.data(), r.data())
    }))
}

fn sample_indices(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, max).into_vec()
    }
}

/// The balanced loss of the fused map with respect to a narrow multi-scale
/// stream and the fusion layer (the segment map is held fixed). Biases are
/// randomised so no rectifier sits exactly on its kink, and at most
/// `per_layer` weights of each layer are perturbed.
pub fn check_msfcn(side: usize, width_scale: f64, per_layer: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig::default().with_width_scale(width_scale);
    let mut net = build_msfcn(&cfg, seed)?;
    for l in net.layers_mut() {
        l.params.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
    }
    let mut img = RgbImage::filled(side, side, [0.0; 3]);
    img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    let s2 = random_map(&mut rng, side, side);
    let gt = random_mask(&mut rng, side, side);
    let mut fusion = fusion_layer([2.0, 2.0, -2.0]);

    let (out, cache) = net.forward_train(&img)?;
    let fused = fuse(&out.s1, &s2, &fusion)?;
    let rep = balanced_cross_entropy(&fused, &gt)?;
    let (d1, _) = fuse_backward(&out.s1, &s2, &fused, &rep.grad, &mut fusion)?;
    net.backward(&cache, &d1)?;

    let mut picks = Vec::new();
    let mut blocks = Vec::new();
    for l in net.layers() {
        let idx = sample_indices(&mut rng, l.params.weight.data().len(), per_layer);
        let w = l.params.weight.data();
        let g = l.params.weight_grad();
        blocks.push(ParamBlock::new(
            format!("{}.weight", l.name),
            idx.iter().map(|&i| w[i]).collect(),
            idx.iter().map(|&i| g[i]).collect(),
        ));
        blocks.push(ParamBlock::new(format!("{}.bias", l.name), l.params.bias.clone(), l.params.bias_grad.clone()));
        picks.push(idx);
    }
    let fparams = [fusion.weight.data().to_vec(), fusion.bias.clone()].concat();
    blocks.push(ParamBlock::new("fusion", fparams, [fusion.weight_grad().to_vec(), fusion.bias_grad.clone()].concat()));
    let base = net.clone();
    // The loss is a sum over pixels, so rounding in the central difference
    // grows with it; gradients below the floor are compared absolutely.
    let o = GradCheckOptions {
        eps: 1e-6,
        abs_floor: 1e-2,
    };
    Ok(grad_check(blocks, o, |v| {
        let mut n = base.clone();
        for (i, l) in n.layers_mut().into_iter().enumerate() {
            let w = l.params.weight.data_mut();
            for (&k, &x) in picks[i].iter().zip(&v[2 * i]) {
                w[k] = x;
            }
            l.params.bias = v[2 * i + 1].clone();
        }
        let f = v.last().expect("fusion block");
        let o = n.forward(&img).expect("valid");
        let s = fuse(&o.s1, &s2, &fusion_layer([f[0], f[1], f[2]])).expect("valid");
        balanced_cross_entropy(&s, &gt).expect("valid").loss
    }))
}

/// Every check with its tolerance. `conv_instances` random convolution
/// specs are drawn.
pub fn run_suite(seed: u64, conv_instances: usize) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    let mut push = |name: String, tolerance: f64, report: GradCheckReport| {
        out.push(SuiteEntry { name, tolerance, report });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..conv_instances {
        let k = rng.gen_range(1..=3);
        let d = rng.gen_range(1..=2);
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k, rng.gen_range(1..=2), rng.gen_range(0..=2))
            .dilated(d);
        let side = (spec.effective_kernel().0 + rng.gen_range(0..4)).max(2);
        let input = Shape::new(rng.gen_range(1..=2), spec.in_channels, side, side + rng.gen_range(0..3));
        let r = check_conv(&spec, input, seed.wrapping_add(i as u64))?;
        push(format!("conv #{i} k{k} d{d} s{}", spec.stride.0), 1e-6, r);
    }
    push("maxpool 2x2 s2 ceil".into(), 1e-6, check_maxpool(&PoolSpec::new(2, 2, 0).ceil(), Shape::new(1, 2, 7, 5), seed)?);
    push("maxpool 3x3 s1 p1".into(), 1e-6, check_maxpool(&PoolSpec::new(3, 1, 1), Shape::new(2, 1, 5, 6), seed)?);
    push("sigmoid".into(), 1e-6, check_sigmoid(seed)?);
    push("bilinear upsample".into(), 1e-6, check_upsample(seed)?);
    push("affine 6144->300".into(), 1e-6, check_affine(6144, 300, 500, seed)?);
    push("fusion".into(), 1e-6, check_fusion(seed)?);
    push("balanced cross-entropy".into(), 1e-6, check_balanced_loss(seed)?);
    push("squared error".into(), 1e-6, check_stream2_loss(seed)?);
    push("segment regressor".into(), 1e-6, check_regressor(seed)?);
    push("conv-pool-conv-sigmoid".into(), 1e-5, check_stack(seed)?);
    push("multi-scale stream".into(), 1e-4, check_msfcn(17, 1.0 / 32.0, usize::MAX, seed)?);
    Ok(out)
}
