//! Sequential versus parallel timings of the hot kernels. The sequential
//! side runs inside a one-thread rayon pool, so both sides share code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

use deepcontrast::crf::{messages, CrfParams, QField};
use deepcontrast::eval::evaluate;
use deepcontrast::superpix::{rgb_to_cielab, slic_geodesic};
use deepcontrast::synth::{synth_corpus, synth_image};
use deepcontrast::tensor::{conv2d_forward, ConvSpec, LayerParams, Shape, Tensor};
use deepcontrast::SaliencyMap;

fn pools() -> [(&'static str, ThreadPool); 2] {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    [
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().num_threads(n).build().unwrap()),
    ]
}

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = ConvSpec::new(64, 64, 3, 1, 2).dilated(2);
    let input = random(&mut rng, Shape::new(1, 64, 41, 41));
    let mut p = LayerParams::for_conv(&spec);
    p.weight = random(&mut rng, spec.weight_shape());
    let mut g = c.benchmark_group("atrous_conv_64x41x41");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| conv2d_forward(&input, &p, &spec).unwrap()))
        });
    }
    g.finish();
}

fn crf(c: &mut Criterion) {
    let (img, gt) = synth_image(96, 96, 3);
    let q = QField::from_saliency(&SaliencyMap::new(96, 96, gt.data.iter().map(|&b| if b { 0.8 } else { 0.3 }).collect()).unwrap());
    let params = CrfParams::default();
    let mut g = c.benchmark_group("crf_messages_96x96");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| messages(&q, &img, &params).unwrap()))
        });
    }
    g.finish();
}

fn slic(c: &mut Criterion) {
    let (img, _) = synth_image(128, 128, 5);
    let lab = rgb_to_cielab(&img);
    let mut g = c.benchmark_group("slic_k200_128x128");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| slic_geodesic(&lab, 200, 10).unwrap()))
        });
    }
    g.finish();
}

fn eval(c: &mut Criterion) {
    let corpus = synth_corpus(16, 128, 128, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let maps: Vec<SaliencyMap> = corpus
        .iter()
        .map(|(_, g)| SaliencyMap::new(128, 128, g.data.iter().map(|&b| if b { rng.gen_range(0.4..1.0) } else { rng.gen_range(0.0..0.6) }).collect()).unwrap())
        .collect();
    let gts: Vec<_> = corpus.into_iter().map(|(_, g)| g).collect();
    let mut g = c.benchmark_group("evaluate_16x128x128");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| pool.install(|| b.iter(|| evaluate(&maps, &gts).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, conv, crf, slic, eval);
criterion_main!(benches);
