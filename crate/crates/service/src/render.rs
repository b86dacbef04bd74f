//! Full-resolution rendering around a fixed-size working copy: inference
//! runs on a downscaled lightness plane, the predicted chrominance is
//! upsampled and fused with the original lightness.

use std::io::Cursor;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageFormat, RgbImage};

use chromahint_core::colorspace::{lab_to_rgb, resize_ab, rgb_to_lab, AbImage, GrayImage, QuantizedGamut};
use chromahint_core::hints::{hints_from_edits, validate_edits, GlobalHints, PointEdit};
use chromahint_core::model::Network;
use chromahint_core::palette::{suggest_colors, PaletteConfig, PaletteSuggestion};
use chromahint_core::Result;

pub const DEFAULT_WORKING_SIDE: u32 = 256;

/// An input image at original and working resolution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub gray: GrayImage,
    pub work: GrayImage,
    /// The working-resolution color input, used for self-reference hints.
    pub work_rgb: RgbImage,
}

impl Prepared {
    pub fn new(img: &DynamicImage, working_side: u32) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (gray, _) = rgb_to_lab(&rgb)?;
        let (w, h) = rgb.dimensions();
        let long = w.max(h);
        let (ww, wh) = if long == working_side {
            (w, h)
        } else {
            let s = working_side as f64 / long as f64;
            (((w as f64 * s).round() as u32).max(1), ((h as f64 * s).round() as u32).max(1))
        };
        let work_rgb = if (ww, wh) == (w, h) { rgb } else { imageops::resize(&rgb, ww, wh, FilterType::Triangle) };
        let (work, _) = rgb_to_lab(&work_rgb)?;
        Ok(Self { gray, work, work_rgb })
    }

    pub fn width(&self) -> usize {
        self.gray.width
    }

    pub fn height(&self) -> usize {
        self.gray.height
    }

    fn to_work(&self, x: i64, y: i64) -> (i64, i64) {
        let sx = self.work.width as f64 / self.gray.width as f64;
        let sy = self.work.height as f64 / self.gray.height as f64;
        let wx = (((x as f64 + 0.5) * sx).floor() as i64).clamp(0, self.work.width as i64 - 1);
        let wy = (((y as f64 + 0.5) * sy).floor() as i64).clamp(0, self.work.height as i64 - 1);
        (wx, wy)
    }

    /// Validates edits in original coordinates and maps them, including
    /// their patch size, onto the working grid.
    pub fn working_edits(&self, edits: &[PointEdit]) -> Result<Vec<PointEdit>> {
        validate_edits(edits, self.height(), self.width())?;
        let scale = self.work.width as f64 / self.gray.width as f64;
        Ok(edits
            .iter()
            .map(|e| {
                let (x, y) = self.to_work(e.x, e.y);
                let size = ((e.size as f64 * scale).round() as usize).max(1);
                PointEdit { x, y, size, ..*e }
            })
            .collect())
    }

    fn fuse(&self, ab: &AbImage) -> Result<RgbImage> {
        lab_to_rgb(&self.gray, &resize_ab(ab, self.gray.height, self.gray.width))
    }

    pub fn colorize_local(&self, net: &Network, edits: &[PointEdit]) -> Result<RgbImage> {
        let hints = hints_from_edits(&self.working_edits(edits)?, self.work.height, self.work.width)?;
        self.fuse(&net.forward_local(&self.work, &hints)?)
    }

    pub fn colorize_global(&self, net: &Network, hints: &GlobalHints) -> Result<RgbImage> {
        self.fuse(&net.forward_global(&self.work, hints)?)
    }

    /// Suggestions for original-resolution pixel `(x, y)` given the edits.
    pub fn palette(&self, net: &Network, gamut: &QuantizedGamut, x: i64, y: i64, edits: &[PointEdit], cfg: &PaletteConfig) -> Result<PaletteSuggestion> {
        validate_edits(&[PointEdit::new(x, y, [0.0, 0.0])], self.height(), self.width())?;
        let hints = hints_from_edits(&self.working_edits(edits)?, self.work.height, self.work.width)?;
        let dist = net.forward_distribution(&self.work, &hints)?;
        let (wx, wy) = self.to_work(x, y);
        let l = self.gray.get(y as usize, x as usize) as f64;
        suggest_colors(&dist, wy as usize, wx as usize, l, gamut, cfg)
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
