//! Label palette and latent regression.
//!
//! Labels are rendered as RGB through a [`Palette`], pushed through the
//! frozen encoder, and used as an L1 regression target for the UNet output
//! `o`. Decoding `o` then yields a full-resolution feature that the
//! segmentation head consumes alongside the multi-scale taps.

use crate::backbone::BackboneInterface;
use crate::domain::{ImageSample, LabelMap, LatentTensor, Modality, LATENT_STRIDE};
use crate::error::{MadmError, Result};
use crate::model::SegModel;
use crate::palette::Palette;
use crate::tensor::Tensor;

/// Encoded palette image plus the latent cells that carry supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRegressionTarget {
    pub target: LatentTensor,
    /// `h * w`, row-major; true where the cell's 8x8 pixel block holds at
    /// least one non-ignored pixel.
    pub valid_mask: Vec<bool>,
}

/// Renders labels as an RGB image; ignored pixels get the ignore color.
pub fn palette_encode(y: &LabelMap, p: &Palette) -> Result<ImageSample> {
    let (h, w) = (y.height(), y.width());
    let mut rgb = Vec::with_capacity(h * w * 3);
    for &c in y.classes() {
        let color = if c == y.ignore_value {
            p.ignore_color()
        } else {
            *p.colors().get(c as usize).ok_or(MadmError::Codec {
                class: c as u32,
                colors: p.len(),
            })?
        };
        rgb.extend_from_slice(&color);
    }
    ImageSample::from_rgb8(&rgb, h, w, Modality::Synthetic, "palette")
}

/// Nearest palette entry per pixel (Euclidean in RGB). Ties go to the
/// lowest class id, and class colors win ties against the ignore color.
pub fn palette_decode(img: &ImageSample, p: &Palette) -> LabelMap {
    let (h, w) = (img.height(), img.width());
    let hw = h * w;
    let px = img.pixels().data();
    let colors: Vec<[f64; 3]> = p
        .colors()
        .iter()
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    let ig = p.ignore_color();
    let ignore = [ig[0] as f64 / 255.0, ig[1] as f64 / 255.0, ig[2] as f64 / 255.0];
    let dist = |c: &[f64; 3], q: usize| -> f64 {
        (0..3).map(|ch| (px[ch * hw + q] - c[ch]).powi(2)).sum()
    };
    let mut out = Vec::with_capacity(hw);
    for q in 0..hw {
        let (mut best, mut best_d) = (0usize, f64::INFINITY);
        for (k, c) in colors.iter().enumerate() {
            let d = dist(c, q);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        out.push(if dist(&ignore, q) < best_d {
            crate::domain::IGNORE_VALUE
        } else {
            best as u8
        });
    }
    LabelMap::new(out, h, w, p.len()).expect("decoded ids are in range")
}

/// Latent-resolution mask of 8x8 blocks containing any annotated pixel.
pub fn block_mask(y: &LabelMap) -> Vec<bool> {
    let (h, w) = (y.height() / LATENT_STRIDE, y.width() / LATENT_STRIDE);
    let mut mask = vec![false; h * w];
    for py in 0..h * LATENT_STRIDE {
        for px in 0..w * LATENT_STRIDE {
            if !y.is_ignored(py, px) {
                mask[(py / LATENT_STRIDE) * w + px / LATENT_STRIDE] = true;
            }
        }
    }
    mask
}

/// `encode(palette_encode(y))` with its supervision mask.
pub fn regression_target<B: BackboneInterface>(
    y: &LabelMap,
    p: &Palette,
    backbone: &B,
) -> Result<LatentRegressionTarget> {
    let img = palette_encode(y, p)?;
    Ok(LatentRegressionTarget {
        target: backbone.encode(&img)?,
        valid_mask: block_mask(y),
    })
}

/// Batched targets for training: `[N, C, h, w]` plus the concatenated masks.
pub fn regression_targets_batch(
    labels: &[&LabelMap],
    p: &Palette,
    model: &SegModel,
) -> Result<(Tensor, Vec<bool>)> {
    let mut imgs = Vec::with_capacity(labels.len());
    let mut mask = Vec::new();
    for y in labels {
        imgs.push(palette_encode(y, p)?.into_pixels());
        mask.extend(block_mask(y));
    }
    let refs: Vec<&Tensor> = imgs.iter().collect();
    let batch = Tensor::stack(&refs)?;
    Ok((model.encode_batch(&batch), mask))
}

/// Mean absolute difference over channels and masked cells; zero for an
/// empty mask.
pub fn latent_regression_loss(o: &LatentTensor, tgt: &LatentRegressionTarget) -> Result<f64> {
    if !o.same_shape(&tgt.target) {
        return Err(MadmError::Shape(format!(
            "output {:?} vs target {:?}",
            o.values().shape(),
            tgt.target.values().shape()
        )));
    }
    let (c, h, w) = (o.channels(), o.height(), o.width());
    if tgt.valid_mask.len() != h * w {
        return Err(MadmError::Shape(format!(
            "mask of {} cells for a {h}x{w} latent",
            tgt.valid_mask.len()
        )));
    }
    let mut g = crate::autograd::Graph::new();
    let ov = g.constant(o.values().clone().reshape(&[1, c, h, w])?);
    let t = tgt.target.values().clone().reshape(&[1, c, h, w])?;
    let loss = g.masked_l1(ov, &t, &tgt.valid_mask, &[1.0]);
    Ok(g.value(loss).item())
}

/// Decoder output `D(o)` at full input resolution, `[3, 8h, 8w]`.
pub fn highres_feature<B: BackboneInterface>(o: &LatentTensor, backbone: &B) -> Result<Tensor> {
    backbone.decode(o)
}
