//! ClassMix-style mixing plus photometric jitter and blur.

use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap};
use crate::dplg::PseudoLabel;
use crate::error::{MadmError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSettings {
    pub mix: bool,
    pub jitter_p: f64,
    /// Brightness, contrast and saturation factors are drawn from
    /// `1 ± jitter_strength`.
    pub jitter_strength: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            mix: true,
            jitter_p: 0.8,
            jitter_strength: 0.25,
            blur_p: 0.5,
            blur_sigma: (0.15, 1.15),
        }
    }
}

impl AugmentSettings {
    pub fn disabled() -> Self {
        Self {
            mix: false,
            jitter_p: 0.0,
            jitter_strength: 0.0,
            blur_p: 0.0,
            blur_sigma: (0.15, 1.15),
        }
    }
}

/// Picks half of `classes`. With an odd count a fair coin decides whether
/// the half is rounded up or down.
pub fn choose_half(classes: &[u8], rng: &mut SeededRng) -> Vec<u8> {
    let n = classes.len();
    let take = if n % 2 == 1 && rng.coin(0.5) {
        n / 2 + 1
    } else {
        n / 2
    };
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut out: Vec<u8> = idx[..take].iter().map(|&i| classes[i]).collect();
    out.sort_unstable();
    out
}

/// Pastes half of the source classes onto `x_t`, then jitters and blurs
/// the pixels. Labels are source labels on pasted pixels and pseudo-labels
/// elsewhere.
pub fn strong_augment(
    x_t: &ImageSample,
    src: (&ImageSample, &LabelMap),
    pl: &PseudoLabel,
    settings: &AugmentSettings,
    rng: &mut SeededRng,
) -> Result<(ImageSample, LabelMap)> {
    let (x_s, y_s) = src;
    let (h, w) = (x_t.height(), x_t.width());
    for (what, dims) in [
        ("source image", (x_s.height(), x_s.width())),
        ("source labels", (y_s.height(), y_s.width())),
        ("pseudo-labels", (pl.labels.height(), pl.labels.width())),
    ] {
        if dims != (h, w) {
            return Err(MadmError::Shape(format!(
                "{what} {}x{} vs target {h}x{w}",
                dims.0, dims.1
            )));
        }
    }
    let hw = h * w;
    let mut pixels = x_t.pixels().data().to_vec();
    let mut labels = pl.labels.classes().to_vec();
    if settings.mix {
        let chosen = choose_half(&y_s.present_classes(), rng);
        let mut paste = [false; 256];
        chosen.iter().for_each(|&c| paste[c as usize] = true);
        let sp = x_s.pixels().data();
        for (q, &c) in y_s.classes().iter().enumerate() {
            if c != y_s.ignore_value && paste[c as usize] {
                labels[q] = c;
                for ch in 0..3 {
                    pixels[ch * hw + q] = sp[ch * hw + q];
                }
            }
        }
    }
    if rng.coin(settings.jitter_p) {
        let s = settings.jitter_strength;
        let b = rng.uniform_in(1.0 - s, 1.0 + s);
        let c = rng.uniform_in(1.0 - s, 1.0 + s);
        let sat = rng.uniform_in(1.0 - s, 1.0 + s);
        color_jitter(&mut pixels, hw, b, c, sat);
    }
    if rng.coin(settings.blur_p) {
        let sigma = rng.uniform_in(settings.blur_sigma.0, settings.blur_sigma.1);
        gaussian_blur(&mut pixels, h, w, sigma);
    }
    let img = ImageSample::new(
        Tensor::from_vec(&[3, h, w], pixels)?,
        x_t.modality,
        format!("{}+mix", x_t.id),
    )?;
    let y = LabelMap::with_ignore(labels, h, w, pl.labels.num_classes, pl.labels.ignore_value)?;
    Ok((img, y))
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, then contrast about the mean gray level, then saturation
/// about the per-pixel gray level; clamped to `[0, 1]` after each stage.
pub fn color_jitter(px: &mut [f64], hw: usize, brightness: f64, contrast: f64, saturation: f64) {
    px.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    let mean = (0..hw)
        .map(|q| gray(px[q], px[hw + q], px[2 * hw + q]))
        .sum::<f64>()
        / hw as f64;
    px.iter_mut()
        .for_each(|v| *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0));
    for q in 0..hw {
        let g = gray(px[q], px[hw + q], px[2 * hw + q]);
        for ch in 0..3 {
            let v = &mut px[ch * hw + q];
            *v = ((*v - g) * saturation + g).clamp(0.0, 1.0);
        }
    }
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and clamped edges.
/// Output is clamped to `[0, 1]` against rounding past the bounds.
pub fn gaussian_blur(px: &mut [f64], h: usize, w: usize, sigma: f64) {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let mut tmp = vec![0.0; h * w];
    for plane in px.chunks_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| {
                        let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                        kv * plane[y * w + xx]
                    })
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| {
                        let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                        kv * tmp[yy * w + x]
                    })
                    .sum::<f64>()
                    .clamp(0.0, 1.0);
            }
        }
    }
}
