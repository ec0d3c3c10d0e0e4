//! Seeded synthetic corpus: coloured shapes on textured backgrounds.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::{BinaryMask, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        match self.kind {
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
            ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            // Apex up, base along dy = 1.
            ShapeKind::Triangle => (-1.0..=1.0).contains(&dy) && dx.abs() <= (dy + 1.0) / 2.0,
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn color_gap(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
}

/// One image and its exact mask; the same seed always gives the same pair.
pub fn synth_image(width: usize, height: usize, seed: u64) -> (RgbImage, BinaryMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = random_color(&mut rng);
    let mut fg = random_color(&mut rng);
    while color_gap(fg, bg) < 0.9 {
        fg = random_color(&mut rng);
    }
    let (h, w) = (height as f64, width as f64);
    let kind = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle][rng.gen_range(0..3)];
    let shape = Shape {
        kind,
        cy: h * rng.gen_range(0.35..0.65),
        cx: w * rng.gen_range(0.35..0.65),
        ry: h * rng.gen_range(0.15..0.3),
        rx: w * rng.gen_range(0.15..0.3),
    };
    let freq = [rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)];
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut img = RgbImage::filled(width, height, bg);
    let mut mask = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let inside = shape.contains(y as f64 + 0.5, x as f64 + 0.5);
            mask[i] = inside;
            let noise = rng.gen_range(-0.04..0.04);
            let rgb = if inside {
                fg.map(|c| (c + noise * 0.5).clamp(0.0, 1.0))
            } else {
                let stripe = 0.08 * (freq[0] * y as f64 + freq[1] * x as f64 + phase).sin();
                bg.map(|c| (c + stripe + noise).clamp(0.0, 1.0))
            };
            img.set_pixel(i, rgb);
        }
    }
    (img, BinaryMask::new(width, height, mask).expect("sized"))
}

/// `n` images seeded from `seed`, `seed + 1`, ...
pub fn synth_corpus(n: usize, width: usize, height: usize, seed: u64) -> Vec<(RgbImage, BinaryMask)> {
    (0..n).map(|i| synth_image(width, height, seed.wrapping_add(i as u64))).collect()
}

/// Writes `images/NNN.png`, `gts/NNN.png` and a `manifest.txt` of
/// `train <image> <gt>` lines; returns the manifest path.
pub fn write_corpus(dir: &Path, n: usize, width: usize, height: usize, seed: u64) -> Result<PathBuf> {
    let (idir, gdir) = (dir.join("images"), dir.join("gts"));
    for d in [&idir, &gdir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = String::new();
    for (i, (img, gt)) in synth_corpus(n, width, height, seed).into_iter().enumerate() {
        let name = format!("{i:03}.png");
        img.save(&idir.join(&name))?;
        gt.save(&gdir.join(&name))?;
        manifest.push_str(&format!("train images/{name} gts/{name}\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
