use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap};
use crate::dplg::NoiseSchedule;
use crate::error::{MadmError, Result};
use crate::model::SegModel;
use crate::palette::Palette;
use crate::rng::SeededRng;

use super::augment::AugmentSettings;
use super::config::TrainConfig;
use super::optim::AdamW;
use super::step::{
    objective_gradients, prepare_step, Batch, LossBreakdown, ObjectiveSettings, PrepareSettings,
    StepInputs, STREAM_BATCH, STREAM_INIT,
};
use super::{ema_update, ModelPair};

/// Labelled source samples and unlabelled target samples.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub source: Vec<(ImageSample, LabelMap)>,
    pub target: Vec<ImageSample>,
}

impl TrainData {
    /// Keeps the first `ceil(fraction * len)` target samples (at least one).
    pub fn with_target_fraction(mut self, fraction: f64) -> Self {
        let keep = ((self.target.len() as f64 * fraction).ceil() as usize).clamp(1, self.target.len().max(1));
        self.target.truncate(keep);
        self
    }
}

/// Uniform draws with replacement from a stream keyed on `(seed, i)`.
pub fn sample_batch<'a>(data: &'a TrainData, n: usize, seed: u64, i: usize) -> Batch<'a> {
    let mut rng = SeededRng::keyed(seed, &[STREAM_BATCH, i as u64]);
    let source = (0..n)
        .map(|_| {
            let (x, y) = &data.source[rng.below(data.source.len())];
            (x, y)
        })
        .collect();
    let target = (0..n)
        .map(|_| &data.target[rng.below(data.target.len())])
        .collect();
    Batch { source, target }
}

/// One logged iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub losses: LossBreakdown,
    pub q_mean: f64,
    pub k: usize,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "iteration,l_s,l_t,l_s_reg,l_t_reg,total,q_mean,k";

    /// Shortest round-trip float formatting, so equal logs mean equal bits.
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, l.l_s, l.l_t, l.l_s_reg, l.l_t_reg, l.total, self.q_mean, self.k
        )
    }
}

/// Owns every piece of mutable training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub pair: ModelPair,
    pub optimizer: AdamW,
    schedule: NoiseSchedule,
    palette: Palette,
    augment: AugmentSettings,
    /// The teacher is an EMA of the student; off for distillation.
    ema: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig, student: SegModel, palette: Palette) -> Result<Self> {
        Self::with_pair(config, ModelPair::new(student), palette, true)
    }

    /// A trainer whose teacher never changes.
    pub fn with_fixed_teacher(
        config: TrainConfig,
        student: SegModel,
        teacher: SegModel,
        palette: Palette,
    ) -> Result<Self> {
        Self::with_pair(config, ModelPair { student, teacher }, palette, false)
    }

    fn with_pair(config: TrainConfig, pair: ModelPair, palette: Palette, ema: bool) -> Result<Self> {
        config.validate()?;
        pair.student.check_classes(config.num_classes)?;
        pair.teacher.check_classes(config.num_classes)?;
        if palette.len() < config.num_classes {
            return Err(MadmError::Codec {
                class: config.num_classes as u32 - 1,
                colors: palette.len(),
            });
        }
        if config.lplr != pair.student.spec().head.use_hr {
            return Err(MadmError::Config(format!(
                "lplr = {} but the student head has use_hr = {}",
                config.lplr,
                pair.student.spec().head.use_hr
            )));
        }
        Ok(Self {
            optimizer: AdamW::new(
                config.lr,
                config.adam_beta1,
                config.adam_beta2,
                config.adam_eps,
                config.weight_decay,
            ),
            schedule: config.schedule()?,
            augment: if config.augment {
                AugmentSettings::default()
            } else {
                AugmentSettings::disabled()
            },
            config,
            pair,
            palette,
            ema,
        })
    }

    pub fn objective_settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            lambda_reg: self.config.effective_lambda(),
            apply_q_to_reg: self.config.apply_q_to_reg,
            train_autoencoder: self.config.unfreeze_autoencoder,
        }
    }

    /// Inputs for iteration `i` without touching any parameter.
    pub fn prepare(&self, batch: &Batch, i: usize) -> Result<StepInputs> {
        let settings = PrepareSettings {
            schedule: &self.schedule,
            pseudo: self.config.pseudo_label_settings(),
            augment: self.config.augment.then_some(self.augment),
            palette: self.config.lplr.then_some(&self.palette),
            seed: self.config.seed,
        };
        prepare_step(&self.pair.teacher, &self.pair.student, batch, i, &settings)
    }

    /// Pseudo-labels, student update, then EMA.
    pub fn train_step(&mut self, batch: &Batch, i: usize) -> Result<StepReport> {
        let inputs = self.prepare(batch, i)?;
        let (losses, grads) = objective_gradients(&self.pair.student, &inputs, &self.objective_settings());
        if !losses.is_finite() {
            return Err(MadmError::NonFiniteLoss {
                iteration: i,
                l_s: losses.l_s,
                l_t: losses.l_t,
                l_s_reg: losses.l_s_reg,
                l_t_reg: losses.l_t_reg,
            });
        }
        self.optimizer.step(self.pair.student.params_mut(), &grads);
        if self.ema {
            ema_update(&mut self.pair, self.config.ema_alpha_at(i))?;
        }
        Ok(StepReport {
            iteration: i,
            losses,
            q_mean: inputs.q.iter().sum::<f64>() / inputs.q.len() as f64,
            k: inputs.k,
        })
    }

    /// Runs iterations `start..config.iterations`, handing each report to
    /// `observe`, which may write logs or checkpoints.
    pub fn run(
        &mut self,
        data: &TrainData,
        start: usize,
        observe: &mut dyn FnMut(&StepReport, &Trainer) -> Result<()>,
    ) -> Result<()> {
        if data.source.is_empty() || data.target.is_empty() {
            return Err(MadmError::Config("training needs source and target samples".into()));
        }
        for i in start..self.config.iterations {
            let batch = sample_batch(data, self.config.batch_size, self.config.seed, i);
            let report = self.train_step(&batch, i)?;
            observe(&report, self)?;
        }
        Ok(())
    }
}

/// A fresh student for `cfg`: new UNet, condition and head keyed on the
/// seed, encoder and decoder copied from `autoencoder`. The head uses the
/// high-resolution feature exactly when `cfg.lplr` is on.
pub fn fresh_student(cfg: &TrainConfig, autoencoder: &crate::backbone::DeskBackbone) -> SegModel {
    let mut spec = crate::model::ModelSpec::desk(cfg.num_classes);
    spec.backbone = autoencoder.config().clone();
    spec.head.use_hr = cfg.lplr;
    let backbone = crate::backbone::DeskBackbone::new(
        spec.backbone.clone(),
        &mut SeededRng::keyed(cfg.seed, &[STREAM_INIT, 0]),
    )
    .with_autoencoder(autoencoder);
    SegModel::from_backbone(&backbone, spec.head, &mut SeededRng::keyed(cfg.seed, &[STREAM_INIT, 1]))
}
