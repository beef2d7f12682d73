//! Value types shared by every stage of the pipeline.
//!
//! Images and latents are stored channel-planar (`[C, H, W]`), which is the
//! layout the convolution kernels consume. Accessors take `(y, x, c)` so
//! callers can think in the usual `H x W x C` terms.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};
use crate::tensor::Tensor;

/// Spatial stride of the latent encoder.
pub const LATENT_STRIDE: usize = 8;

/// Label value for unannotated pixels.
pub const IGNORE_VALUE: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Depth,
    Infrared,
    Event,
    Synthetic,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Image => "image",
            Modality::Depth => "depth",
            Modality::Infrared => "infrared",
            Modality::Event => "event",
            Modality::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// An RGB sample with values in `[0, 1]` and sides divisible by 8.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pixels: Tensor,
    pub modality: Modality,
    pub id: String,
}

impl ImageSample {
    /// Wraps a `[3, H, W]` tensor, checking the range and stride invariants.
    pub fn new(pixels: Tensor, modality: Modality, id: impl Into<String>) -> Result<Self> {
        let shape = pixels.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(MadmError::Shape(format!(
                "image must be [3, H, W], got {shape:?}"
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        if h == 0 || w == 0 || h % LATENT_STRIDE != 0 || w % LATENT_STRIDE != 0 {
            return Err(MadmError::Shape(format!(
                "image sides must be positive multiples of {LATENT_STRIDE}, got {h}x{w}"
            )));
        }
        if let Some(v) = pixels
            .data()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(MadmError::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            pixels,
            modality,
            id: id.into(),
        })
    }

    /// Builds an image from interleaved 8-bit RGB bytes.
    pub fn from_rgb8(
        rgb: &[u8],
        height: usize,
        width: usize,
        modality: Modality,
        id: impl Into<String>,
    ) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(MadmError::Shape(format!(
                "{} bytes for a {height}x{width} RGB image",
                rgb.len()
            )));
        }
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for (p, px) in rgb.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * hw + p] = px[c] as f64 / 255.0;
            }
        }
        Self::new(Tensor::from_vec(&[3, height, width], data)?, modality, id)
    }

    /// Interleaved 8-bit RGB bytes (values rounded to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let hw = h * w;
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * hw);
        for p in 0..hw {
            for c in 0..3 {
                out.push((d[c * hw + p] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        self.pixels.data()[(c * h + y) * w + x]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width() as u32,
            self.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| MadmError::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Per-pixel class ids; `ignore_value` marks unannotated pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    classes: Vec<u8>,
    height: usize,
    width: usize,
    pub ignore_value: u8,
    pub num_classes: usize,
}

impl LabelMap {
    pub fn new(classes: Vec<u8>, height: usize, width: usize, num_classes: usize) -> Result<Self> {
        Self::with_ignore(classes, height, width, num_classes, IGNORE_VALUE)
    }

    pub fn with_ignore(
        classes: Vec<u8>,
        height: usize,
        width: usize,
        num_classes: usize,
        ignore_value: u8,
    ) -> Result<Self> {
        if classes.len() != height * width {
            return Err(MadmError::Shape(format!(
                "{} labels for a {height}x{width} map",
                classes.len()
            )));
        }
        if num_classes == 0 || num_classes > ignore_value as usize {
            return Err(MadmError::Shape(format!(
                "class count {num_classes} incompatible with ignore value {ignore_value}"
            )));
        }
        if let Some(&bad) = classes
            .iter()
            .find(|&&c| c != ignore_value && c as usize >= num_classes)
        {
            return Err(MadmError::ClassCount {
                expected: num_classes,
                found: bad as usize + 1,
            });
        }
        Ok(Self {
            classes,
            height,
            width,
            ignore_value,
            num_classes,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, value: u8) -> Result<Self> {
        Self::new(vec![value; height * width], height, width, num_classes)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    pub fn is_ignored(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == self.ignore_value
    }

    /// Sorted list of class ids that occur at least once.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &c in &self.classes {
            if c != self.ignore_value {
                seen[c as usize] = true;
            }
        }
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &c in &self.classes {
            if c != self.ignore_value {
                h[c as usize] += 1;
            }
        }
        h
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.classes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| MadmError::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Backbone latent, `[C_lat, H/8, W/8]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    values: Tensor,
}

impl LatentTensor {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(MadmError::Shape(format!(
                "latent must be [C, h, w], got {:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(MadmError::Shape("latent holds non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            values: Tensor::zeros(&[channels, height, width]),
        }
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.values.shape() == other.values.shape()
    }
}

/// Backbone feature taps at 1/8, 1/16 and 1/32 of the input resolution,
/// each `[C_i, h_i, w_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleFeatures {
    pub f8: Tensor,
    pub f16: Tensor,
    pub f32: Tensor,
}

impl MultiScaleFeatures {
    pub fn spatial(&self) -> [(usize, usize); 3] {
        let hw = |t: &Tensor| (t.shape()[1], t.shape()[2]);
        [hw(&self.f8), hw(&self.f16), hw(&self.f32)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_shapes_and_values() {
        assert!(ImageSample::new(Tensor::zeros(&[3, 12, 16]), Modality::Image, "a").is_err());
        assert!(ImageSample::new(Tensor::zeros(&[1, 8, 8]), Modality::Image, "a").is_err());
        assert!(ImageSample::new(Tensor::full(&[3, 8, 8], 1.5), Modality::Image, "a").is_err());
        assert!(ImageSample::new(Tensor::full(&[3, 8, 8], f64::NAN), Modality::Image, "a").is_err());
        assert!(ImageSample::new(Tensor::zeros(&[3, 8, 16]), Modality::Depth, "a").is_ok());
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..8 * 8 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = ImageSample::from_rgb8(&bytes, 8, 8, Modality::Image, "x").unwrap();
        assert_eq!(img.to_rgb8(), bytes);
        assert_eq!(img.get(0, 1, 2), bytes[5] as f64 / 255.0);
    }

    #[test]
    fn label_map_validates_range() {
        assert!(LabelMap::new(vec![0, 1, 255, 2], 2, 2, 3).is_ok());
        assert!(LabelMap::new(vec![0, 3, 0, 0], 2, 2, 3).is_err());
        assert!(LabelMap::new(vec![0; 3], 2, 2, 3).is_err());
        let m = LabelMap::new(vec![2, 0, 255, 2], 2, 2, 3).unwrap();
        assert_eq!(m.present_classes(), vec![0, 2]);
        assert_eq!(m.histogram(), vec![1, 0, 2]);
    }
}
