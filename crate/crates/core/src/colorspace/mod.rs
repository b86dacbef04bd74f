//! CIE Lab image representation and sRGB (D65) conversions.
//!
//! A color image is split into a lightness plane ([`GrayImage`]) and a
//! chrominance plane ([`AbImage`]). Conversions run in `f64`; planes are stored
//! as `f32`.

mod encode;
mod gamut;
mod resize;

pub use encode::{decode_expectation, soft_encode, soft_encode_color, ColorDistribution, SoftEncodeConfig};
pub use gamut::{build_gamut, GamutFile, GamutSampling, QuantizedGamut, GAMUT_FORMAT};
pub use resize::{resize_bilinear, resize_gray, resize_ab};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Largest chrominance magnitude accepted on either channel.
pub const AB_LIMIT: f32 = 110.0;

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// Lightness plane, values in `[0, 100]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub l: Vec<f32>,
}

/// Chrominance plane, one `[a, b]` pair per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbImage {
    pub height: usize,
    pub width: usize,
    pub ab: Vec<[f32; 2]>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, l: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if l.len() != height * width {
            return Err(Error::BufferLength { width, height, channels: 1, got: l.len() });
        }
        Ok(Self { height, width, l: l.into_iter().map(|v| v.clamp(0.0, 100.0)).collect() })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, l: vec![value.clamp(0.0, 100.0); height * width] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.l[row * self.width + col]
    }
}

impl AbImage {
    pub fn new(height: usize, width: usize, ab: Vec<[f32; 2]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if ab.len() != height * width {
            return Err(Error::BufferLength { width, height, channels: 2, got: ab.len() });
        }
        let ab = ab.into_iter().map(clamp_ab).collect();
        Ok(Self { height, width, ab })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, ab: vec![[0.0, 0.0]; height * width] }
    }

    pub fn filled(height: usize, width: usize, ab: [f32; 2]) -> Self {
        Self { height, width, ab: vec![clamp_ab(ab); height * width] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 2] {
        self.ab[row * self.width + col]
    }
}

#[inline]
pub(crate) fn clamp_ab(ab: [f32; 2]) -> [f32; 2] {
    [ab[0].clamp(-AB_LIMIT, AB_LIMIT), ab[1].clamp(-AB_LIMIT, AB_LIMIT)]
}

fn srgb_decode_table() -> &'static [f64; 256] {
    static TABLE: std::sync::OnceLock<[f64; 256]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 256];
        for (i, v) in t.iter_mut().enumerate() {
            *v = srgb_to_linear(i as f64 / 255.0);
        }
        t
    })
}

#[inline]
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Linear-light RGB in `[0, 1]` to Lab.
pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let mut xyz = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        xyz[i] = (row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]) / WHITE[i];
    }
    let fx = lab_f(xyz[0]);
    let fy = lab_f(xyz[1]);
    let fz = lab_f(xyz[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn srgb8_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let t = srgb_decode_table();
    linear_rgb_to_lab([t[rgb[0] as usize], t[rgb[1] as usize], t[rgb[2] as usize]])
}

/// Lab to linear-light RGB without any clipping; components outside `[0, 1]`
/// mean the color is outside the sRGB gamut.
pub fn lab_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let y = if lab[0] > KAPPA * EPSILON { fy * fy * fy } else { lab[0] / KAPPA };
    let xyz = [lab_f_inv(fx) * WHITE[0], y * WHITE[1], lab_f_inv(fz) * WHITE[2]];
    let mut rgb = [0.0; 3];
    for (i, row) in XYZ_TO_RGB.iter().enumerate() {
        rgb[i] = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
    }
    rgb
}

/// Lab to 8-bit sRGB, clipping each channel independently.
pub fn lab_to_srgb8(lab: [f64; 3]) -> [u8; 3] {
    let lin = lab_to_linear_rgb(lab);
    let mut out = [0u8; 3];
    for (o, c) in out.iter_mut().zip(lin) {
        let s = linear_to_srgb(c.clamp(0.0, 1.0));
        *o = (s * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Converts a raw interleaved 8-bit buffer. Only 3-channel input is accepted.
pub fn rgb_to_lab_raw(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<(GrayImage, AbImage)> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    if channels != 3 {
        return Err(Error::ChannelCount(channels));
    }
    if data.len() != width * height * 3 {
        return Err(Error::BufferLength { width, height, channels, got: data.len() });
    }
    let mut l = Vec::with_capacity(width * height);
    let mut ab = Vec::with_capacity(width * height);
    for px in data.chunks_exact(3) {
        let lab = srgb8_to_lab([px[0], px[1], px[2]]);
        l.push(lab[0].clamp(0.0, 100.0) as f32);
        ab.push(clamp_ab([lab[1] as f32, lab[2] as f32]));
    }
    Ok((GrayImage { height, width, l }, AbImage { height, width, ab }))
}

pub fn rgb_to_lab(rgb: &RgbImage) -> Result<(GrayImage, AbImage)> {
    rgb_to_lab_raw(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw())
}

pub fn lab_to_rgb(gray: &GrayImage, ab: &AbImage) -> Result<RgbImage> {
    check_dims(gray.dims(), ab.dims())?;
    let mut buf = Vec::with_capacity(gray.l.len() * 3);
    for (&l, &[a, b]) in gray.l.iter().zip(&ab.ab) {
        buf.extend_from_slice(&lab_to_srgb8([l as f64, a as f64, b as f64]));
    }
    Ok(RgbImage::from_raw(gray.width as u32, gray.height as u32, buf).expect("buffer sized from dims"))
}

/// Lightness of an arbitrary decoded image; color inputs are converted, gray
/// inputs map their luma through the sRGB curve.
pub fn gray_from_dynamic(img: &image::DynamicImage) -> Result<GrayImage> {
    let rgb = img.to_rgb8();
    let (gray, _) = rgb_to_lab(&rgb)?;
    Ok(gray)
}

/// Spatial mean of the HSV saturation channel, in `[0, 1]`.
pub fn mean_saturation(rgb: &RgbImage) -> f64 {
    let n = (rgb.width() as usize) * (rgb.height() as usize);
    if n == 0 {
        return 0.0;
    }
    let total: f64 = rgb
        .pixels()
        .map(|p| {
            let max = p.0.iter().copied().max().unwrap_or(0);
            let min = p.0.iter().copied().min().unwrap_or(0);
            if max == 0 {
                0.0
            } else {
                (max - min) as f64 / max as f64
            }
        })
        .sum();
    total / n as f64
}

/// True when every pixel has equal R, G and B.
pub fn is_grayscale(rgb: &RgbImage) -> bool {
    rgb.pixels().all(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2])
}
