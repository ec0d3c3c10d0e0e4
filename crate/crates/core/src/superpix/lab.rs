use crate::maps::RgbImage;

/// Per-pixel CIELab values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        self.data[i]
    }
}

const M: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

// D65 white as the image of sRGB white, so neutral grays land on a* = b* = 0.
const XN: f64 = M[0][0] + M[0][1] + M[0][2];
const YN: f64 = M[1][0] + M[1][1] + M[1][2];
const ZN: f64 = M[2][0] + M[2][1] + M[2][2];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELab.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c.clamp(0.0, 1.0)));
    let [x, y, z] = M.map(|row| row[0] * r + row[1] * g + row[2] * b);
    let (fx, fy, fz) = (lab_f(x / XN), lab_f(y / YN), lab_f(z / ZN));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_cielab(image: &RgbImage) -> LabImage {
    LabImage {
        width: image.width,
        height: image.height,
        data: (0..image.len()).map(|i| srgb_pixel_to_lab(image.pixel(i))).collect(),
    }
}

#[inline]
pub(crate) fn lab_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
