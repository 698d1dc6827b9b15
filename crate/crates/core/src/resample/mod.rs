//! Image containers, PNG/PPM codecs and the three resamplers the pipeline
//! needs: bicubic image downscale, nearest-neighbor label downscale and
//! bilinear domination upscale.

mod codec;
mod scale;

pub use codec::{
    decode_gray, decode_image, decode_labelmap, encode_gray_png, encode_labelmap, encode_rgb_png,
    CLASS_PALETTE,
};
pub use scale::{downscale_bicubic, downscale_nearest, scaled_dim, upscale_bilinear, DOWNSCALE};

use crate::error::{Error, Result};

/// RGB image with channels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dim(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::param(format!("pixel {i} has a channel outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    /// Builds an image from 8-bit channel values.
    pub fn from_rgb8(width: usize, height: usize, data: &[[u8; 3]]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter()
                .map(|p| p.map(|c| f64::from(c) / 255.0))
                .collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Channel values quantized back to 8 bits.
    pub fn to_rgb8(&self) -> Vec<[u8; 3]> {
        self.pixels
            .iter()
            .map(|p| p.map(|c| (c * 255.0).round() as u8))
            .collect()
    }
}

/// Single-channel 8-bit image (trimaps and ground-truth masks).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Per-pixel class ids: `0` is unlabeled, `1..=num_classes` are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u16>,
    num_classes: usize,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::dim(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| usize::from(l) > num_classes) {
            return Err(Error::param(format!(
                "label {} at index {i} exceeds class count {num_classes}",
                labels[i]
            )));
        }
        Ok(Self { width, height, labels, num_classes })
    }

    /// An all-unlabeled map.
    pub fn empty(width: usize, height: usize, num_classes: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            num_classes,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, index: usize, class: u16) {
        debug_assert!(usize::from(class) <= self.num_classes);
        self.labels[index] = class;
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Pixel count per class, index `c - 1` for class `c`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            if l != 0 {
                counts[usize::from(l) - 1] += 1;
            }
        }
        counts
    }

    pub fn into_labels(self) -> Vec<u16> {
        self.labels
    }
}
