use deepcontrast::msfcn::{build_msfcn, NetworkConfig};
use deepcontrast::segpool::*;
use deepcontrast::superpix::{multiscale, SlicParams};
use deepcontrast::synth::synth_image;
use deepcontrast::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn channel_max(t: &Tensor, c: usize, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let s = t.shape();
    let mut m = f64::NEG_INFINITY;
    for i in 0..s.h {
        for j in 0..s.w {
            if keep(i, j) {
                m = m.max(t.at(0, c, i, j));
            }
        }
    }
    m
}

/// Maximum over the grid cells of one channel inside one of the three blocks.
fn block_max(row: &[f64], block: usize, cells: usize, channels: usize, c: usize) -> f64 {
    let base = block * cells * channels;
    (0..cells).map(|g| row[base + g * channels + c]).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn paper_sized_features_and_block_maxima() {
    let cfg = NetworkConfig::default();
    let net = build_msfcn(&cfg, 0).unwrap();
    let geom = FeatureGeometry::for_network(&net, 321, 321).unwrap();
    assert_eq!((geom.hf, geom.wf, geom.channels), (41, 41, 512));
    let (img, _) = synth_image(321, 321, 4);
    let seg = multiscale(&img, &[50], &SlicParams::default()).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = Shape::new(1, 512, 41, 41);
    let feat = Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(0.01..1.0)).collect()).unwrap();
    let rows = segment_features(&feat, &seg, &geom, cfg.pool_grid).unwrap();
    let len = cfg.segment_feature_len();
    assert_eq!(len, 6144);
    assert_eq!(rows.len(), seg.k * len);
    for id in [0, seg.k / 2, seg.k - 1] {
        let row = &rows[id * len..(id + 1) * len];
        let mask = backproject_mask(&seg, id, &geom).unwrap();
        assert!(mask.count() > 0);
        for c in [0, 101, 511] {
            let inside = channel_max(&feat, c, |i, j| mask.get(i, j));
            let outside = channel_max(&feat, c, |i, j| !mask.get(i, j));
            assert_eq!(block_max(row, 0, 4, 512, c), inside);
            assert!(block_max(row, 1, 4, 512, c) >= inside);
            assert!(block_max(row, 1, 4, 512, c) <= channel_max(&feat, c, |_, _| true));
            assert_eq!(block_max(row, 2, 4, 512, c), outside);
        }
        assert_eq!(row, segment_feature(&feat, &seg, id, &geom, cfg.pool_grid).unwrap());
    }
}

#[test]
fn constant_map_pools_to_the_constant() {
    let cfg = NetworkConfig::default().with_width_scale(1.0 / 64.0);
    let net = build_msfcn(&cfg, 0).unwrap();
    let geom = FeatureGeometry::for_network(&net, 81, 81).unwrap();
    let (img, _) = synth_image(81, 81, 5);
    let seg = multiscale(&img, &[30], &SlicParams::default()).unwrap().remove(0);
    let ch = geom.channels;
    let feat = Tensor::filled(Shape::new(1, ch, geom.hf, geom.wf), 0.5);
    let rows = segment_features(&feat, &seg, &geom, (2, 2)).unwrap();
    let len = cfg.segment_feature_len();
    for id in 0..seg.k {
        let row = &rows[id * len..(id + 1) * len];
        // Context block never masks; the other two hold the constant or 0.
        assert!(row[4 * ch..8 * ch].iter().all(|&v| v == 0.5));
        assert!(row.iter().all(|&v| v == 0.5 || v == 0.0));
    }
}

#[test]
fn pooling_does_not_run_the_network() {
    let cfg = NetworkConfig::default().with_width_scale(1.0 / 32.0);
    let net = deepcontrast::build_network(&cfg, 1).unwrap();
    let (img, _) = synth_image(81, 81, 6);
    let segs = multiscale(&img, &[40, 20, 10], &SlicParams::default()).unwrap();
    let out = net.msfcn.forward(&img).unwrap();
    let after_forward = net.msfcn.conv_calls();
    let scores = net.segment_scores(&out, &segs).unwrap();
    assert_eq!(net.msfcn.conv_calls(), after_forward);
    assert_eq!(scores.iter().map(Vec::len).collect::<Vec<_>>(), segs.iter().map(|s| s.k).collect::<Vec<_>>());
    let s2 = render_s2(&scores, &segs).unwrap();
    assert!(s2.same_dims(81, 81));
    assert!(s2.data.iter().all(|v| (0.0..=1.0).contains(v)));
}
