use deepcontrast::crf::*;
use deepcontrast::{RgbImage, SaliencyMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::new(w, h, (0..3 * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SaliencyMap {
    SaliencyMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Left half coloured and salient, right half background; `flip` pixels of the
/// map are inverted. A straight boundary is a fixed point of the smoothing
/// kernel, unlike a convex corner.
fn corrupted_block(seed: u64, side: usize, flip: usize) -> (RgbImage, SaliencyMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = |i: usize| i % side < side / 2;
    let mut img = RgbImage::filled(side, side, [0.1, 0.2, 0.15]);
    let mut s = SaliencyMap::filled(side, side, 0.2);
    for i in 0..side * side {
        if inside(i) {
            img.set_pixel(i, [0.9, 0.8, 0.2]);
            s.data[i] = 0.8;
        }
    }
    for _ in 0..flip {
        let i = rng.gen_range(0..side * side);
        s.data[i] = 1.0 - s.data[i];
    }
    (img, s)
}

fn max_diff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()])
        .fold(0.0, f64::max)
}

#[test]
fn messages_match_oracle_every_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = CrfParams::default();
    for _ in 0..6 {
        let (w, h) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let img = random_image(&mut rng, w, h);
        let s = random_map(&mut rng, w, h);
        let mut mf = MeanField::new(&s, &img, &p).unwrap();
        for _ in 0..3 {
            let oracle = exact_message_oracle(mf.q(), &img, &p).unwrap();
            mf.step().unwrap();
            assert!(max_diff(mf.messages(), &oracle) < 1e-10, "{w}x{h}");
            assert!(mf.q().normalization_error() < 1e-12);
        }
    }
}

#[test]
fn eight_by_eight_fast_path_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_image(&mut rng, 8, 8);
    let q = QField::from_saliency(&random_map(&mut rng, 8, 8));
    let p = CrfParams::default();
    let a = messages(&q, &img, &p).unwrap();
    let b = exact_message_oracle(&q, &img, &p).unwrap();
    assert!(max_diff(&a, &b) < 1e-10);
}

#[test]
fn uniform_field_messages_are_centre_symmetric() {
    let img = RgbImage::filled(7, 5, [0.3, 0.3, 0.3]);
    let q = QField::from_saliency(&SaliencyMap::filled(7, 5, 0.5));
    let m = exact_message_oracle(&q, &img, &CrfParams::default()).unwrap();
    let n = m.len();
    for i in 0..n {
        assert!(max_diff(&[m[i]], &[m[n - 1 - i]]) < 1e-12);
        assert!((m[i][0] - m[i][1]).abs() < 1e-12);
    }
}

fn brute_energy(labels: &[bool], s: &SaliencyMap, img: &RgbImage, p: &CrfParams) -> f64 {
    let n = labels.len();
    let mut unary = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let v = s.data[i].clamp(1e-8, 1.0 - 1e-8);
        unary -= if l { v.ln() } else { (1.0 - v).ln() };
    }
    let mut pair = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pair += pairwise_theta(img, p, i, j, labels[i], labels[j]).unwrap();
        }
    }
    unary + pair
}

#[test]
fn three_by_three_energy_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let p = CrfParams::default();
    for _ in 0..10 {
        let img = random_image(&mut rng, 3, 3);
        let s = random_map(&mut rng, 3, 3);
        let u = UnaryField::from_saliency(&s).unwrap();
        for code in 0..512u32 {
            let labels: Vec<bool> = (0..9).map(|b| code >> b & 1 == 1).collect();
            let e = crf_energy(&labels, &u, &img, &p).unwrap();
            assert!((e - brute_energy(&labels, &s, &img, &p)).abs() < 1e-9);
        }
    }
}

#[test]
fn uniform_labelling_has_only_unary_energy() {
    let img = RgbImage::filled(2, 2, [0.4, 0.1, 0.7]);
    let s = SaliencyMap::new(2, 2, vec![0.9, 0.6, 0.3, 0.7]).unwrap();
    let u = UnaryField::from_saliency(&s).unwrap();
    let e = crf_energy(&[true; 4], &u, &img, &CrfParams::default()).unwrap();
    let want: f64 = s.data.iter().map(|v| -v.ln()).sum();
    assert!((e - want).abs() < 1e-12);
}

#[test]
fn mean_field_map_agrees_with_enumeration_on_high_contrast() {
    // Left column dark and weakly background, the rest bright and salient.
    let mut img = RgbImage::filled(3, 3, [0.95, 0.95, 0.9]);
    let mut s = SaliencyMap::filled(3, 3, 0.8);
    for y in 0..3 {
        img.set_pixel(3 * y, [0.05, 0.05, 0.1]);
        s.data[3 * y] = 0.02;
    }
    s.data[4] = 0.45;
    let p = CrfParams {
        w_appearance: 1.0,
        w_smoothness: 0.2,
        ..CrfParams::default()
    };
    let u = UnaryField::from_saliency(&s).unwrap();
    let best = (0..512u32)
        .map(|code| {
            let labels: Vec<bool> = (0..9).map(|b| code >> b & 1 == 1).collect();
            (crf_energy(&labels, &u, &img, &p).unwrap(), labels)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
        .1;
    let out = mean_field_infer(&s, &img, &p).unwrap();
    let map: Vec<bool> = out.data.iter().map(|&v| v > 0.5).collect();
    assert_eq!(map, best);
}

fn majority_disagreements(s: &SaliencyMap) -> usize {
    let (w, h) = (s.width as isize, s.height as isize);
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let me = s.data[(y * w + x) as usize] > 0.5;
            let (mut same, mut total) = (0, 0);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if (dy, dx) != (0, 0) && (0..h).contains(&yy) && (0..w).contains(&xx) {
                        total += 1;
                        same += ((s.data[(yy * w + xx) as usize] > 0.5) == me) as usize;
                    }
                }
            }
            n += (2 * same < total) as usize;
        }
    }
    n
}

#[test]
fn corrupted_block_is_cleaned() {
    for seed in 0..4 {
        let (img, s) = corrupted_block(seed, 16, 20);
        let p = CrfParams::default();
        let mut mf = MeanField::new(&s, &img, &p).unwrap();
        let mut prev = majority_disagreements(&mf.q().to_map());
        assert!(prev > 0);
        for _ in 0..p.iterations {
            let oracle = exact_message_oracle(mf.q(), &img, &p).unwrap();
            mf.step().unwrap();
            assert!(max_diff(mf.messages(), &oracle) < 1e-10);
            let now = majority_disagreements(&mf.q().to_map());
            assert!(now <= prev, "seed {seed}: {prev} -> {now}");
            prev = now;
        }
        let (_, clean) = corrupted_block(seed, 16, 0);
        let out = mf.q().to_map();
        for (i, (&o, &c)) in out.data.iter().zip(&clean.data).enumerate() {
            if (s.data[i] > 0.5) != (c > 0.5) {
                assert!((o > 0.5) == (c > 0.5), "seed {seed}: flipped pixel {i} not restored");
            }
        }
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let img = RgbImage::filled(4, 4, [0.0; 3]);
    let s = SaliencyMap::filled(4, 3, 0.5);
    assert!(mean_field_infer(&s, &img, &CrfParams::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_a_normalised_probability(seed in any::<u64>(), w in 1usize..9, h in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, w, h);
        let s = random_map(&mut rng, w, h);
        let p = CrfParams { iterations: 3, ..CrfParams::default() };
        let mut mf = MeanField::new(&s, &img, &p).unwrap();
        for _ in 0..3 {
            mf.step().unwrap();
            prop_assert!(mf.q().normalization_error() < 1e-12);
        }
        prop_assert!(mf.q().q.iter().all(|q| (0.0..=1.0).contains(&q[1])));
    }
}
