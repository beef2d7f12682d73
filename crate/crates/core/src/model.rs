//! Backbone plus segmentation head as one trainable unit.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::{decoder_graph, encoder_graph, unet_graph, BackboneConfig, DeskBackbone, COND};
use crate::domain::{ImageSample, LabelMap};
use crate::error::{MadmError, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::segmentation::{seg_head_graph, HeadConfig, SegHead, SegLogits};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl ModelSpec {
    pub fn desk(num_classes: usize) -> Self {
        Self {
            backbone: BackboneConfig::default(),
            head: HeadConfig::new(num_classes),
        }
    }

    /// A narrower network for distillation students.
    pub fn compact(num_classes: usize) -> Self {
        Self {
            backbone: BackboneConfig {
                unet_widths: [16, 24, 32],
                ..BackboneConfig::default()
            },
            head: HeadConfig {
                width: 32,
                num_classes,
                use_hr: false,
            },
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub taps: [Var; 3],
    pub o: Var,
    pub hr: Option<Var>,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    spec: ModelSpec,
    params: ParamStore,
}

impl SegModel {
    pub fn new(spec: ModelSpec, rng: &mut SeededRng) -> Self {
        let backbone = DeskBackbone::new(spec.backbone.clone(), rng);
        Self::from_backbone(&backbone, spec.head, rng)
    }

    /// Attaches a freshly initialised head to an existing backbone.
    pub fn from_backbone(backbone: &DeskBackbone, head: HeadConfig, rng: &mut SeededRng) -> Self {
        let h = SegHead::new(head.clone(), backbone.config().tap_channels(), rng);
        let mut params = backbone.params().clone();
        params.merge(h.params());
        Self {
            spec: ModelSpec {
                backbone: backbone.config().clone(),
                head,
            },
            params,
        }
    }

    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let reference = Self::new(spec.clone(), &mut SeededRng::new(0));
        reference.params.check_congruent(&params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.head.num_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn backbone(&self) -> DeskBackbone {
        DeskBackbone::from_params(self.spec.backbone.clone(), self.params.clone())
            .expect("model holds a congruent backbone")
    }

    pub fn head(&self) -> SegHead {
        SegHead::from_params(
            self.spec.head.clone(),
            self.spec.backbone.tap_channels(),
            &self.params,
        )
        .expect("model holds a congruent head")
    }

    /// Encodes a `[N, 3, H, W]` batch with the (frozen) encoder.
    pub fn encode_batch(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = encoder_graph(&mut g, &p, xv);
        g.value(z).clone()
    }

    /// UNet, optional decoder feature and head on a latent batch.
    pub fn forward_latent(&self, g: &mut Graph, p: &Bound, z: Var) -> ModelVars {
        let (_, _, h, w) = g.value(z).dims4();
        let out_hw = (h * 8, w * 8);
        let c = p.var(COND);
        let u = unet_graph(g, p, z, c);
        let hr = self.spec.head.use_hr.then(|| decoder_graph(g, p, u.o));
        let logits = seg_head_graph(g, p, [u.f8, u.f16, u.f32], hr, out_hw);
        ModelVars {
            taps: [u.f8, u.f16, u.f32],
            o: u.o,
            hr,
            logits,
        }
    }

    /// Full forward from pixels, optionally tracking encoder gradients.
    pub fn forward_pixels(&self, g: &mut Graph, p: &Bound, x: Var) -> ModelVars {
        let z = encoder_graph(g, p, x);
        self.forward_latent(g, p, z)
    }

    /// Logits `[N, K, H, W]` for a pixel batch.
    pub fn predict_logits(&self, x: &Tensor) -> Tensor {
        let z = self.encode_batch(x);
        self.logits_from_latent(&z)
    }

    pub fn logits_from_latent(&self, z: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let zv = g.constant(z.clone());
        let out = self.forward_latent(&mut g, &p, zv);
        g.value(out.logits).clone()
    }

    pub fn predict(&self, x: &ImageSample) -> Result<SegLogits> {
        let batch = Tensor::stack(&[x.pixels()])?;
        let t = self.predict_logits(&batch);
        let (_, k, h, w) = t.dims4();
        SegLogits::new(t.reshape(&[k, h, w])?)
    }

    pub fn predict_labels(&self, x: &ImageSample) -> Result<LabelMap> {
        Ok(self.predict(x)?.argmax())
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        if num_classes != self.num_classes() {
            return Err(MadmError::ClassCount {
                expected: self.num_classes(),
                found: num_classes,
            });
        }
        Ok(())
    }
}

/// Splits a `[N, K, H, W]` logit batch into per-sample [`SegLogits`].
pub fn split_logits(t: &Tensor) -> Vec<SegLogits> {
    t.unstack()
        .into_iter()
        .map(|l| SegLogits::new(l).expect("3-D slice"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneInterface;
    use crate::domain::Modality;

    #[test]
    fn model_parts_round_trip() {
        let m = SegModel::new(ModelSpec::desk(6), &mut SeededRng::new(4));
        let b = m.backbone();
        let h = m.head();
        assert_eq!(b.params().len() + h.params().len(), m.params().len());
        let again = SegModel::from_params(m.spec().clone(), m.params().clone()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn composed_prediction_matches_interface_path() {
        let m = SegModel::new(ModelSpec::desk(6), &mut SeededRng::new(4));
        let mut r = SeededRng::new(9);
        let data = (0..3 * 32 * 32).map(|_| r.uniform()).collect();
        let x = ImageSample::new(Tensor::from_vec(&[3, 32, 32], data).unwrap(), Modality::Image, "x")
            .unwrap();
        let direct = m.predict(&x).unwrap();

        let b = m.backbone();
        let z = b.encode(&x).unwrap();
        let (f, o) = b.unet_forward(&z, b.condition_embedding()).unwrap();
        let hr = b.decode(&o).unwrap();
        let via_parts = m.head().seg_head(&f, Some(&hr)).unwrap();
        assert_eq!(direct, via_parts);
    }
}
