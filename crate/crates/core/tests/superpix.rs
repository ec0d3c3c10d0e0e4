use deepcontrast::superpix::*;
use deepcontrast::synth::synth_image;
use deepcontrast::RgbImage;
use proptest::prelude::*;

#[test]
fn one_segment_when_k_is_one() {
    let (img, _) = synth_image(30, 20, 1);
    let s = multiscale(&img, &[1], &SlicParams::default()).unwrap().remove(0);
    assert_eq!(s.k, 1);
    assert!(s.labels.iter().all(|&l| l == 0));
}

#[test]
fn deterministic() {
    let (img, _) = synth_image(64, 48, 2);
    let a = multiscale(&img, &[60, 20], &SlicParams::default()).unwrap();
    let b = multiscale(&img, &[60, 20], &SlicParams::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn segments_respect_a_strong_edge() {
    let mut img = RgbImage::filled(40, 40, [0.05, 0.05, 0.05]);
    for i in 0..img.len() {
        if i % 40 >= 20 {
            img.set_pixel(i, [0.95, 0.9, 0.1]);
        }
    }
    let s = multiscale(&img, &[16], &SlicParams::default()).unwrap().remove(0);
    let mut side = vec![None; s.k];
    for y in 0..40 {
        for x in 0..40 {
            let l = s.label(y, x);
            let right = x >= 20;
            assert_eq!(*side[l].get_or_insert(right), right, "segment {l} straddles the edge");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn partition_properties(seed in any::<u64>(), w in 12usize..40, h in 12usize..40, k in 2usize..30) {
        let (img, _) = synth_image(w, h, seed);
        let s = multiscale(&img, &[k], &SlicParams::default()).unwrap().remove(0);
        prop_assert!(s.is_connected());
        prop_assert_eq!(s.sizes.iter().sum::<usize>(), w * h);
        prop_assert!(s.sizes.iter().all(|&n| n > 0));
        for a in 0..s.k {
            for &b in &s.adjacency[a] {
                prop_assert!(b != a);
                prop_assert!(s.adjacency[b].contains(&a));
            }
            let bb = s.bboxes[a];
            for y in 0..h {
                for x in 0..w {
                    if s.label(y, x) == a {
                        prop_assert!((bb.y0..bb.y1).contains(&y) && (bb.x0..bb.x1).contains(&x));
                    }
                }
            }
        }
    }
}
