use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::domain::{LabelMap, MultiScaleFeatures};
use crate::error::{MadmError, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Common channel width of the fusion grid.
    pub width: usize,
    pub num_classes: usize,
    /// Whether the head consumes the decoder's high-resolution feature.
    pub use_hr: bool,
}

impl HeadConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            width: 64,
            num_classes,
            use_hr: true,
        }
    }
}

/// Per-pixel class scores, `[K, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegLogits {
    values: Tensor,
}

impl SegLogits {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(MadmError::Shape(format!(
                "logits must be [K, H, W], got {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    /// Per-pixel argmax (lowest class id on ties) and max softmax probability.
    pub fn argmax_with_confidence(&self) -> (LabelMap, Vec<f64>) {
        let (k, h, w) = (self.num_classes(), self.height(), self.width());
        let hw = h * w;
        let v = self.values.data();
        let mut labels = Vec::with_capacity(hw);
        let mut conf = Vec::with_capacity(hw);
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if v[c * hw + p] > v[best * hw + p] {
                    best = c;
                }
            }
            let mx = v[best * hw + p];
            let z: f64 = (0..k).map(|c| (v[c * hw + p] - mx).exp()).sum();
            labels.push(best as u8);
            conf.push(1.0 / z);
        }
        let map = LabelMap::new(labels, h, w, k).expect("argmax labels are in range");
        (map, conf)
    }

    pub fn argmax(&self) -> LabelMap {
        self.argmax_with_confidence().0
    }
}

/// Builds the fusion head.
///
/// Each tap is projected to `width` channels by a 1x1 convolution and
/// bilinearly resized to 1/4 of the image resolution. When `hr` is given
/// it is average-pooled by 4 onto the same grid and projected from 3 to
/// `width` channels. The concatenation is fused by a 1x1 convolution,
/// passed through SiLU, classified by another 1x1 convolution and
/// bilinearly upsampled to `out_hw`.
pub fn seg_head_graph(
    g: &mut Graph,
    p: &Bound,
    taps: [Var; 3],
    hr: Option<Var>,
    out_hw: (usize, usize),
) -> Var {
    let (gh, gw) = (out_hw.0 / 4, out_hw.1 / 4);
    let mut parts = Vec::with_capacity(4);
    for (tap, name) in taps.into_iter().zip(["head.p8", "head.p16", "head.p32"]) {
        let y = p.conv(g, name, tap, 1, 0);
        parts.push(g.resize(y, gh, gw));
    }
    if let Some(hr) = hr {
        let pooled = g.avg_pool(hr, 4);
        parts.push(p.conv(g, "head.hr", pooled, 1, 0));
    }
    let cat = g.concat(&parts);
    let fused = p.conv(g, "head.fuse", cat, 1, 0);
    let fused = g.silu(fused);
    let logits = p.conv(g, "head.cls", fused, 1, 0);
    g.resize(logits, out_hw.0, out_hw.1)
}

/// Head parameters (`head.*`) with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SegHead {
    config: HeadConfig,
    params: ParamStore,
}

impl SegHead {
    pub fn new(config: HeadConfig, tap_channels: [usize; 3], rng: &mut SeededRng) -> Self {
        let mut p = ParamStore::new();
        let w = config.width;
        for (name, c) in ["head.p8", "head.p16", "head.p32"].into_iter().zip(tap_channels) {
            p.init_conv(rng, name, c, w, 1);
        }
        let mut fuse_in = 3 * w;
        if config.use_hr {
            p.init_conv(rng, "head.hr", 3, w, 1);
            fuse_in += w;
        }
        p.init_conv(rng, "head.fuse", fuse_in, w, 1);
        p.init_conv(rng, "head.cls", w, config.num_classes, 1);
        Self { config, params: p }
    }

    pub fn from_params(config: HeadConfig, tap_channels: [usize; 3], params: &ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), tap_channels, &mut SeededRng::new(0));
        let own = params.filter_prefix(&["head."]);
        reference.params.check_congruent(&own)?;
        Ok(Self { config, params: own })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Logits at the input resolution (8x the `f8` tap). `hr` is the
    /// `[3, H, W]` decoder feature and is required iff the head was built
    /// with `use_hr`.
    pub fn seg_head(&self, f: &MultiScaleFeatures, hr: Option<&Tensor>) -> Result<SegLogits> {
        if hr.is_some() != self.config.use_hr {
            return Err(MadmError::Shape(format!(
                "head built with use_hr={} but hr feature {}",
                self.config.use_hr,
                if hr.is_some() { "given" } else { "missing" }
            )));
        }
        let [(h8, w8), _, _] = f.spatial();
        let out_hw = (h8 * 8, w8 * 8);
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let mut taps = Vec::with_capacity(3);
        for t in [&f.f8, &f.f16, &f.f32] {
            taps.push(g.constant(Tensor::stack(&[t])?));
        }
        let hr = match hr {
            Some(t) => {
                if t.shape() != [3, out_hw.0, out_hw.1] {
                    return Err(MadmError::Shape(format!(
                        "hr feature {:?} does not match {out_hw:?}",
                        t.shape()
                    )));
                }
                Some(g.constant(Tensor::stack(&[t])?))
            }
            None => None,
        };
        let logits = seg_head_graph(&mut g, &p, [taps[0], taps[1], taps[2]], hr, out_hw);
        let t = g.value(logits).clone();
        let (_, k, h, w) = t.dims4();
        SegLogits::new(t.reshape(&[k, h, w])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(seed: u64, scale: f64) -> MultiScaleFeatures {
        let mut r = SeededRng::new(seed);
        let mut t = |c: usize, s: usize| {
            let d = (0..c * s * s).map(|_| r.normal() * scale).collect();
            Tensor::from_vec(&[c, s, s], d).unwrap()
        };
        MultiScaleFeatures {
            f8: t(32, 8),
            f16: t(48, 4),
            f32: t(64, 2),
        }
    }

    #[test]
    fn head_without_hr_still_emits_full_resolution_logits() {
        let cfg = HeadConfig {
            use_hr: false,
            ..HeadConfig::new(6)
        };
        let head = SegHead::new(cfg, [32, 48, 64], &mut SeededRng::new(0));
        let out = head.seg_head(&feats(1, 1.0), None).unwrap();
        assert_eq!(out.values().shape(), &[6, 64, 64]);
        assert!(head.seg_head(&feats(1, 1.0), Some(&Tensor::zeros(&[3, 64, 64]))).is_err());
    }

    #[test]
    fn head_is_deterministic_and_not_degenerate() {
        let head = SegHead::new(HeadConfig::new(6), [32, 48, 64], &mut SeededRng::new(0));
        let hr = Tensor::full(&[3, 64, 64], 0.3);
        let a = head.seg_head(&feats(1, 1.0), Some(&hr)).unwrap();
        let b = head.seg_head(&feats(1, 1.0), Some(&hr)).unwrap();
        assert_eq!(a, b);
        let doubled = head.seg_head(&feats(1, 2.0), Some(&hr)).unwrap();
        let diff: f64 = a
            .values()
            .data()
            .iter()
            .zip(doubled.values().data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let t = Tensor::from_vec(&[3, 1, 2], vec![1.0, 0.0, 1.0, 5.0, 0.0, 5.0]).unwrap();
        let (labels, conf) = SegLogits::new(t).unwrap().argmax_with_confidence();
        assert_eq!(labels.classes(), &[0, 1]);
        assert!((conf[0] - 1.0 / (2.0 + (-1.0f64).exp())).abs() < 1e-15);
    }
}
