//! Fully connected binary CRF over pixels, refined by mean-field inference.
//!
//! The pairwise term is a Potts model with an appearance kernel (position and
//! colour) and a smoothness kernel (position only). Colours are compared on
//! the `[0, 255]` scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{RgbImage, SaliencyMap};
use crate::par;
use crate::train::PROB_EPS;

/// Largest image the exact pairwise evaluations accept.
pub const EXACT_MAX_PIXELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// ω₁, weight of the appearance kernel.
    pub w_appearance: f64,
    /// ω₂, weight of the smoothness kernel.
    pub w_smoothness: f64,
    /// σ_α, spatial bandwidth of the appearance kernel (pixels).
    pub sigma_alpha: f64,
    /// σ_β, colour bandwidth of the appearance kernel (0–255 units).
    pub sigma_beta: f64,
    /// σ_γ, bandwidth of the smoothness kernel (pixels).
    pub sigma_gamma: f64,
    pub iterations: usize,
    /// Pixel pairs whose spatial factor falls below this value are skipped.
    pub cutoff: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            w_appearance: 3.0,
            w_smoothness: 5.0,
            sigma_alpha: 3.0,
            sigma_beta: 50.0,
            sigma_gamma: 3.0,
            iterations: 10,
            cutoff: 1e-15,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_appearance, self.w_smoothness];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("CRF kernel weights must be finite and non-negative".into()));
        }
        let sigmas = [self.sigma_alpha, self.sigma_beta, self.sigma_gamma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("CRF bandwidths must be positive".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(Error::InvalidConfig(format!("CRF cutoff must be in (0, 1), got {}", self.cutoff)));
        }
        Ok(())
    }

    /// Half-width of the square window of pixel offsets that are summed.
    pub fn radius(&self) -> usize {
        let reach = (2.0 * (1.0 / self.cutoff).ln()).sqrt();
        let sigma = match (self.w_appearance > 0.0, self.w_smoothness > 0.0) {
            (true, true) => self.sigma_alpha.max(self.sigma_gamma),
            (true, false) => self.sigma_alpha,
            (false, true) => self.sigma_gamma,
            (false, false) => 0.0,
        };
        (sigma * reach).floor() as usize
    }

    fn coefficients(&self) -> Coefficients {
        Coefficients {
            w_a: self.w_appearance,
            w_s: self.w_smoothness,
            inv_a: 1.0 / (2.0 * self.sigma_alpha * self.sigma_alpha),
            inv_b: 1.0 / (2.0 * self.sigma_beta * self.sigma_beta),
            inv_g: 1.0 / (2.0 * self.sigma_gamma * self.sigma_gamma),
        }
    }
}

#[derive(Clone, Copy)]
struct Coefficients {
    w_a: f64,
    w_s: f64,
    inv_a: f64,
    inv_b: f64,
    inv_g: f64,
}

impl Coefficients {
    fn kernel(&self, d2: f64, c2: f64) -> f64 {
        self.w_a * (-d2 * self.inv_a - c2 * self.inv_b).exp() + self.w_s * (-d2 * self.inv_g).exp()
    }
}

fn colour255(image: &RgbImage, i: usize) -> [f64; 3] {
    image.pixel(i).map(|c| c * 255.0)
}

fn colour_dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_between(image: &RgbImage, c: &Coefficients, i: usize, j: usize) -> f64 {
    let w = image.width;
    let (dy, dx) = ((i / w) as f64 - (j / w) as f64, (i % w) as f64 - (j % w) as f64);
    c.kernel(dy * dy + dx * dx, colour_dist2(colour255(image, i), colour255(image, j)))
}

/// θ between pixels `i` and `j` (raster indices) carrying labels `li`, `lj`.
pub fn pairwise_theta(image: &RgbImage, params: &CrfParams, i: usize, j: usize, li: bool, lj: bool) -> Result<f64> {
    let n = image.len();
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("pixel index out of range for {n} pixels")));
    }
    if li == lj {
        return Ok(0.0);
    }
    Ok(kernel_between(image, &params.coefficients(), i, j))
}

/// Per-pixel `[u(0), u(1)]`, the negative log-probabilities of each label.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<[f64; 2]>,
}

impl UnaryField {
    pub fn from_saliency(s: &SaliencyMap) -> Result<Self> {
        let mut u = Vec::with_capacity(s.len());
        for &v in &s.data {
            if !v.is_finite() {
                return Err(Error::NonFinite("saliency map given to the CRF".into()));
            }
            let p = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
            u.push([-(1.0 - p).ln(), -p.ln()]);
        }
        Ok(UnaryField {
            width: s.width,
            height: s.height,
            u,
        })
    }
}

/// Per-pixel marginals `[q(0), q(1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    pub width: usize,
    pub height: usize,
    pub q: Vec<[f64; 2]>,
}

impl QField {
    /// `q(1) = S` clamped away from 0 and 1.
    pub fn from_saliency(s: &SaliencyMap) -> Self {
        let q = s
            .data
            .iter()
            .map(|&v| {
                let p = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
                [1.0 - p, p]
            })
            .collect();
        QField {
            width: s.width,
            height: s.height,
            q,
        }
    }

    pub fn to_map(&self) -> SaliencyMap {
        SaliencyMap {
            width: self.width,
            height: self.height,
            data: self.q.iter().map(|q| q[1]).collect(),
        }
    }

    /// Largest `|q(0) + q(1) − 1|` over pixels.
    pub fn normalization_error(&self) -> f64 {
        self.q.iter().map(|q| (q[0] + q[1] - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_dims(image: &RgbImage, width: usize, height: usize, what: &str) -> Result<()> {
    if image.width != width || image.height != height {
        return Err(Error::shape(format!("CRF {what}"), "pixels", image.len(), width * height));
    }
    Ok(())
}

fn exact_guard(n: usize, what: &str) -> Result<()> {
    if n > EXACT_MAX_PIXELS {
        return Err(Error::InvalidArgument(format!(
            "{what} is limited to {EXACT_MAX_PIXELS} pixels, image has {n}"
        )));
    }
    Ok(())
}

/// Unary sum plus θ over every unordered pixel pair. `labels[i]` is true
/// for salient.
pub fn crf_energy(labels: &[bool], unary: &UnaryField, image: &RgbImage, params: &CrfParams) -> Result<f64> {
    check_dims(image, unary.width, unary.height, "energy")?;
    let n = image.len();
    if labels.len() != n {
        return Err(Error::shape("crf_energy", "labels", n, labels.len()));
    }
    exact_guard(n, "exact energy")?;
    let c = params.coefficients();
    let mut e: f64 = labels.iter().zip(&unary.u).map(|(&l, u)| u[l as usize]).sum();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] != labels[j] {
                e += kernel_between(image, &c, i, j);
            }
        }
    }
    Ok(e)
}

/// Messages `m_i(l) = Σ_{j≠i} k(i, j)·q_j(1 − l)` by literal double sum.
pub fn exact_message_oracle(q: &QField, image: &RgbImage, params: &CrfParams) -> Result<Vec<[f64; 2]>> {
    check_dims(image, q.width, q.height, "message oracle")?;
    let n = image.len();
    exact_guard(n, "exact message evaluation")?;
    let c = params.coefficients();
    let mut m = vec![[0.0; 2]; n];
    for (i, mi) in m.iter_mut().enumerate() {
        for j in 0..n {
            if j != i {
                let k = kernel_between(image, &c, i, j);
                mi[0] += k * q.q[j][1];
                mi[1] += k * q.q[j][0];
            }
        }
    }
    Ok(m)
}

/// Spatial factors of both kernels for every offset in the window.
struct OffsetTable {
    radius: isize,
    appearance: Vec<f64>,
    smoothness: Vec<f64>,
}

impl OffsetTable {
    fn new(params: &CrfParams, width: usize, height: usize) -> Self {
        let c = params.coefficients();
        let radius = params.radius().min(width.max(height).saturating_sub(1)) as isize;
        let side = (2 * radius + 1) as usize;
        let mut appearance = Vec::with_capacity(side * side);
        let mut smoothness = Vec::with_capacity(side * side);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let d2 = (dy * dy + dx * dx) as f64;
                appearance.push(c.w_a * (-d2 * c.inv_a).exp());
                smoothness.push(c.w_s * (-d2 * c.inv_g).exp());
            }
        }
        OffsetTable {
            radius,
            appearance,
            smoothness,
        }
    }
}

/// Windowed message computation used by inference; matches the oracle up to
/// the kernel cutoff.
pub fn messages(q: &QField, image: &RgbImage, params: &CrfParams) -> Result<Vec<[f64; 2]>> {
    check_dims(image, q.width, q.height, "messages")?;
    let (w, h) = (image.width, image.height);
    let table = OffsetTable::new(params, w, h);
    let inv_b = params.coefficients().inv_b;
    let colours: Vec<[f64; 3]> = (0..image.len()).map(|i| colour255(image, i)).collect();
    let r = table.radius;
    let side = (2 * r + 1) as usize;
    let rows = par::map_range(h, |y| {
        let mut row = vec![[0.0; 2]; w];
        for (x, out) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let ci = colours[i];
            let (mut m0, mut m1) = (0.0, 0.0);
            let y0 = (y as isize - r).max(0);
            let y1 = (y as isize + r).min(h as isize - 1);
            let x0 = (x as isize - r).max(0);
            let x1 = (x as isize + r).min(w as isize - 1);
            for yy in y0..=y1 {
                let trow = (yy - y as isize + r) as usize * side;
                for xx in x0..=x1 {
                    let j = yy as usize * w + xx as usize;
                    if j == i {
                        continue;
                    }
                    let t = trow + (xx - x as isize + r) as usize;
                    let mut k = table.smoothness[t];
                    let a = table.appearance[t];
                    if a != 0.0 {
                        k += a * (-colour_dist2(ci, colours[j]) * inv_b).exp();
                    }
                    m0 += k * q.q[j][1];
                    m1 += k * q.q[j][0];
                }
            }
            *out = [m0, m1];
        }
        row
    });
    Ok(rows.concat())
}

/// Mean-field state that can be advanced one iteration at a time.
#[derive(Debug, Clone)]
pub struct MeanField<'a> {
    image: &'a RgbImage,
    params: CrfParams,
    unary: UnaryField,
    q: QField,
    messages: Vec<[f64; 2]>,
    iteration: usize,
}

impl<'a> MeanField<'a> {
    pub fn new(s: &SaliencyMap, image: &'a RgbImage, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        check_dims(image, s.width, s.height, "inference")?;
        Ok(MeanField {
            image,
            params: *params,
            unary: UnaryField::from_saliency(s)?,
            q: QField::from_saliency(s),
            messages: vec![[0.0; 2]; s.len()],
            iteration: 0,
        })
    }

    pub fn q(&self) -> &QField {
        &self.q
    }

    /// Messages computed by the last [`MeanField::step`].
    pub fn messages(&self) -> &[[f64; 2]] {
        &self.messages
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Computes messages from the current marginals and replaces them with
    /// `q(l) ∝ exp(−u(l) − m(l))`.
    pub fn step(&mut self) -> Result<()> {
        let m = messages(&self.q, self.image, &self.params)?;
        let mut next = Vec::with_capacity(m.len());
        for (i, (u, mi)) in self.unary.u.iter().zip(&m).enumerate() {
            let e0 = -u[0] - mi[0];
            let e1 = -u[1] - mi[1];
            let top = e0.max(e1);
            let (a, b) = ((e0 - top).exp(), (e1 - top).exp());
            let z = a + b;
            let q = [a / z, b / z];
            if !(q[0].is_finite() && q[1].is_finite()) {
                return Err(Error::NonFinite(format!(
                    "CRF marginal at pixel {i}, iteration {}: unary {u:?}, message {mi:?}",
                    self.iteration
                )));
            }
            next.push(q);
        }
        self.q.q = next;
        self.messages = m;
        self.iteration += 1;
        Ok(())
    }
}

/// Refined map `q(1)` after the configured number of iterations. With both
/// kernel weights zero the unary-only fixed point, the clamped input, is
/// returned directly.
pub fn mean_field_infer(s: &SaliencyMap, image: &RgbImage, params: &CrfParams) -> Result<SaliencyMap> {
    let mut mf = MeanField::new(s, image, params)?;
    if params.w_appearance == 0.0 && params.w_smoothness == 0.0 {
        return Ok(mf.q.to_map());
    }
    for _ in 0..params.iterations {
        mf.step()?;
    }
    Ok(mf.q.to_map())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        let img = RgbImage::filled(3, 1, [0.2, 0.4, 0.6]);
        let p = CrfParams::default();
        assert_eq!(pairwise_theta(&img, &p, 0, 1, true, true).unwrap(), 0.0);
        assert_eq!(pairwise_theta(&img, &p, 1, 1, true, false).unwrap(), 8.0);
        let t = pairwise_theta(&img, &p, 0, 1, false, true).unwrap();
        assert!((t - 8.0 * (-1.0f64 / 18.0).exp()).abs() < 1e-12);
        assert!((t - 7.567).abs() < 1e-3);
    }

    #[test]
    fn default_radius_reaches_the_cutoff() {
        let p = CrfParams::default();
        let r = p.radius() as f64;
        assert!((-(r * r) / 18.0).exp() >= p.cutoff);
        assert!((-((r + 1.0) * (r + 1.0)) / 18.0).exp() < p.cutoff);
    }

    #[test]
    fn single_pixel_has_no_message() {
        let img = RgbImage::filled(1, 1, [0.5; 3]);
        let q = QField::from_saliency(&SaliencyMap::filled(1, 1, 0.3));
        assert_eq!(exact_message_oracle(&q, &img, &CrfParams::default()).unwrap(), vec![[0.0, 0.0]]);
        assert_eq!(messages(&q, &img, &CrfParams::default()).unwrap(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn zero_weights_return_the_clamped_map() {
        let img = RgbImage::filled(4, 2, [0.1, 0.9, 0.3]);
        let s = SaliencyMap::new(4, 2, vec![0.0, 1.0, 0.25, 0.5, 0.75, 0.1, 0.9, 0.33]).unwrap();
        let p = CrfParams {
            w_appearance: 0.0,
            w_smoothness: 0.0,
            ..CrfParams::default()
        };
        let out = mean_field_infer(&s, &img, &p).unwrap();
        let want: Vec<f64> = s.data.iter().map(|v| v.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect();
        assert_eq!(out.data, want);
    }

    #[test]
    fn zero_iterations_return_the_input() {
        let img = RgbImage::filled(3, 3, [0.5; 3]);
        let s = SaliencyMap::new(3, 3, (0..9).map(|i| 0.05 + i as f64 / 10.0).collect()).unwrap();
        let p = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        assert_eq!(mean_field_infer(&s, &img, &p).unwrap(), s);
    }

    #[test]
    fn energy_guard_and_one_pixel() {
        let img = RgbImage::filled(1, 1, [0.0; 3]);
        let s = SaliencyMap::filled(1, 1, 0.8);
        let u = UnaryField::from_saliency(&s).unwrap();
        let e = crf_energy(&[true], &u, &img, &CrfParams::default()).unwrap();
        assert_eq!(e, -(0.8f64).ln());
        let big = RgbImage::filled(65, 64, [0.0; 3]);
        let ub = UnaryField::from_saliency(&SaliencyMap::filled(65, 64, 0.5)).unwrap();
        assert!(crf_energy(&vec![false; 65 * 64], &ub, &big, &CrfParams::default()).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = CrfParams {
            sigma_beta: 0.0,
            ..CrfParams::default()
        };
        assert!(p.validate().is_err());
        assert!(CrfParams { w_smoothness: -1.0, ..CrfParams::default() }.validate().is_err());
    }
}
