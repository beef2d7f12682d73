use crate::error::Result;
use crate::model::{ModelSpec, SegModel};
use crate::palette::Palette;
use crate::rng::SeededRng;

use super::config::TrainConfig;
use super::run::{StepReport, TrainData, Trainer};

/// Trains a fresh `student_spec` model against a frozen teacher: source
/// cross-entropy plus confidence-weighted pseudo-label loss with `k = 0`.
/// The student inherits the teacher's autoencoder.
pub fn distill(
    teacher: &SegModel,
    student_spec: ModelSpec,
    data: &TrainData,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&StepReport, &Trainer) -> Result<()>,
) -> Result<SegModel> {
    teacher.check_classes(student_spec.head.num_classes)?;
    let cfg = TrainConfig {
        dplg: false,
        lplr: student_spec.head.use_hr,
        lambda_reg: if student_spec.head.use_hr {
            cfg.lambda_reg
        } else {
            0.0
        },
        ..cfg.clone()
    };
    let mut student = SegModel::new(student_spec, &mut SeededRng::keyed(cfg.seed, &[0xd15]));
    student
        .params_mut()
        .merge(&teacher.params().filter_prefix(&["enc.", "dec."]));
    let palette = Palette::cityscapes(cfg.num_classes)?;
    let mut trainer = Trainer::with_fixed_teacher(cfg, student, teacher.clone(), palette)?;
    trainer.run(data, 0, observe)?;
    Ok(trainer.pair.student)
}
