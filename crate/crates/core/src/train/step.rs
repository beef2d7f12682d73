//! One self-training iteration, split so the student objective can be
//! re-evaluated on frozen inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backbone::COND;
use crate::domain::{ImageSample, LabelMap};
use crate::dplg::{pseudo_label_batch, NoiseSchedule, PseudoLabelSettings};
use crate::error::Result;
use crate::lplr::regression_targets_batch;
use crate::model::SegModel;
use crate::palette::Palette;
use crate::params::Bound;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::augment::{strong_augment, AugmentSettings};

/// Stream tags for [`SeededRng::keyed`].
pub(crate) const STREAM_NOISE: u64 = 1;
pub(crate) const STREAM_AUGMENT: u64 = 2;
pub(crate) const STREAM_BATCH: u64 = 3;
pub(crate) const STREAM_INIT: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_t: f64,
    pub l_s_reg: f64,
    pub l_t_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `l_s + l_t + lambda * (l_s_reg + l_t_reg)`.
    pub fn combine(&self, lambda_reg: f64) -> f64 {
        self.l_s + self.l_t + lambda_reg * (self.l_s_reg + self.l_t_reg)
    }

    pub fn is_finite(&self) -> bool {
        [self.l_s, self.l_t, self.l_s_reg, self.l_t_reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Paired source samples and unlabeled target samples for one step.
pub struct Batch<'a> {
    pub source: Vec<(&'a ImageSample, &'a LabelMap)>,
    pub target: Vec<&'a ImageSample>,
}

/// Regression targets for the source half and the target half.
#[derive(Clone, Debug)]
pub struct RegInputs {
    pub target_s: Tensor,
    pub mask_s: Vec<bool>,
    pub target_t: Tensor,
    pub mask_t: Vec<bool>,
}

/// Everything the student objective consumes, fixed for the step.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub n: usize,
    /// `[2N, 3, H, W]`: source images, then augmented target images.
    pub x: Tensor,
    /// Labels in the same order as `x`.
    pub labels: Vec<u8>,
    pub ignore: u8,
    /// Per-sample pseudo-label confidence of the target half.
    pub q: Vec<f64>,
    pub k: usize,
    pub reg: Option<RegInputs>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSettings {
    pub lambda_reg: f64,
    pub apply_q_to_reg: bool,
    pub train_autoencoder: bool,
}

impl ObjectiveSettings {
    /// Names of parameters that receive gradients.
    pub fn trainable(&self, name: &str) -> bool {
        name.starts_with("unet.")
            || name.starts_with("head.")
            || name == COND
            || (self.train_autoencoder && (name.starts_with("enc.") || name.starts_with("dec.")))
    }
}

/// Settings for [`prepare_step`].
pub struct PrepareSettings<'a> {
    pub schedule: &'a NoiseSchedule,
    pub pseudo: PseudoLabelSettings,
    pub augment: Option<AugmentSettings>,
    /// Regression targets are built only when present.
    pub palette: Option<&'a Palette>,
    pub seed: u64,
}

/// Teacher pseudo-labels on the clean target batch, strong augmentation,
/// and regression targets encoded with `encoder`'s (frozen) encoder.
pub fn prepare_step(
    teacher: &SegModel,
    encoder: &SegModel,
    batch: &Batch,
    i: usize,
    s: &PrepareSettings,
) -> Result<StepInputs> {
    let n = batch.source.len();
    let xt: Vec<&Tensor> = batch.target.iter().map(|x| x.pixels()).collect();
    let xt = Tensor::stack(&xt)?;
    let mut noise_rng = SeededRng::keyed(s.seed, &[STREAM_NOISE, i as u64]);
    let (pls, k) = pseudo_label_batch(teacher, &xt, i, s.schedule, &s.pseudo, &mut noise_rng)?;

    let mut mixed = Vec::with_capacity(n);
    for (j, ((x_t, pl), (x_s, y_s))) in batch.target.iter().zip(&pls).zip(&batch.source).enumerate() {
        mixed.push(match &s.augment {
            Some(a) => {
                let mut rng = SeededRng::keyed(s.seed, &[STREAM_AUGMENT, i as u64, j as u64]);
                strong_augment(x_t, (x_s, y_s), pl, a, &mut rng)?
            }
            None => ((*x_t).clone(), pl.labels.clone()),
        });
    }

    let mut images: Vec<&Tensor> = batch.source.iter().map(|(x, _)| x.pixels()).collect();
    images.extend(mixed.iter().map(|(x, _)| x.pixels()));
    let mut labels = Vec::new();
    for (_, y) in &batch.source {
        labels.extend_from_slice(y.classes());
    }
    for (_, y) in &mixed {
        labels.extend_from_slice(y.classes());
    }
    let reg = match s.palette {
        Some(p) => {
            let ys: Vec<&LabelMap> = batch.source.iter().map(|(_, y)| *y).collect();
            let yt: Vec<&LabelMap> = mixed.iter().map(|(_, y)| y).collect();
            let (target_s, mask_s) = regression_targets_batch(&ys, p, encoder)?;
            let (target_t, mask_t) = regression_targets_batch(&yt, p, encoder)?;
            Some(RegInputs {
                target_s,
                mask_s,
                target_t,
                mask_t,
            })
        }
        None => None,
    };
    Ok(StepInputs {
        n,
        x: Tensor::stack(&images)?,
        labels,
        ignore: batch.source[0].1.ignore_value,
        q: pls.iter().map(|p| p.confidence_q).collect(),
        k,
        reg,
    })
}

struct Objective {
    graph: Graph,
    bound: Bound,
    parts: [Var; 4],
    total: Var,
}

fn build_objective(
    model: &SegModel,
    inputs: &StepInputs,
    s: &ObjectiveSettings,
    trainable: &dyn Fn(&str) -> bool,
) -> Objective {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, trainable);
    let vars = if s.train_autoencoder {
        let xv = g.constant(inputs.x.clone());
        model.forward_pixels(&mut g, &p, xv)
    } else {
        let z = g.constant(model.encode_batch(&inputs.x));
        model.forward_latent(&mut g, &p, z)
    };
    let n = inputs.n;
    let half = inputs.labels.len() / 2;
    let ones = vec![1.0; n];
    let ls = g.narrow(vars.logits, 0, n);
    let lt = g.narrow(vars.logits, n, n);
    let l_s = g.cross_entropy(ls, &inputs.labels[..half], inputs.ignore, &ones);
    let l_t = g.cross_entropy(lt, &inputs.labels[half..], inputs.ignore, &inputs.q);
    let (l_s_reg, l_t_reg, total) = match &inputs.reg {
        Some(r) => {
            let os = g.narrow(vars.o, 0, n);
            let ot = g.narrow(vars.o, n, n);
            let a = g.masked_l1(os, &r.target_s, &r.mask_s, &ones);
            let wt = if s.apply_q_to_reg { &inputs.q } else { &ones };
            let b = g.masked_l1(ot, &r.target_t, &r.mask_t, wt);
            let ce = g.add(l_s, l_t);
            let reg = g.add(a, b);
            let reg = g.scale(reg, s.lambda_reg);
            (a, b, g.add(ce, reg))
        }
        None => {
            let zero = g.constant(Tensor::scalar(0.0));
            (zero, zero, g.add(l_s, l_t))
        }
    };
    Objective {
        graph: g,
        bound: p,
        parts: [l_s, l_t, l_s_reg, l_t_reg],
        total,
    }
}

impl Objective {
    fn breakdown(&self) -> LossBreakdown {
        let v = |x: Var| self.graph.value(x).item();
        LossBreakdown {
            l_s: v(self.parts[0]),
            l_t: v(self.parts[1]),
            l_s_reg: v(self.parts[2]),
            l_t_reg: v(self.parts[3]),
            total: v(self.total),
        }
    }
}

/// Loss components of `model` on fixed inputs, without gradients.
pub fn objective_value(model: &SegModel, inputs: &StepInputs, s: &ObjectiveSettings) -> LossBreakdown {
    build_objective(model, inputs, s, &|_| false).breakdown()
}

/// Loss components and the gradient of the total with respect to every
/// trainable parameter.
pub fn objective_gradients(
    model: &SegModel,
    inputs: &StepInputs,
    s: &ObjectiveSettings,
) -> (LossBreakdown, BTreeMap<String, Vec<f64>>) {
    let mut obj = build_objective(model, inputs, s, &|n| s.trainable(n));
    obj.graph.backward(obj.total);
    let grads = obj.bound.grads(&obj.graph);
    (obj.breakdown(), grads)
}
