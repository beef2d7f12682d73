//! Teacher-student self-training.

mod augment;
mod config;
mod distill;
mod eval;
mod optim;
mod pretrain;
mod run;
mod step;

pub use augment::{choose_half, color_jitter, gaussian_blur, strong_augment, AugmentSettings};
pub use config::{modality_triple, TrainConfig};
pub use distill::distill;
pub use eval::{evaluate, predict_all, Evaluation};
pub use optim::AdamW;
pub use pretrain::{autoencoder_corpus, desk_autoencoder, pretrain_autoencoder, reconstruction_mae, PretrainReport};
pub use run::{fresh_student, sample_batch, StepReport, TrainData, Trainer};
pub use step::{
    objective_gradients, objective_value, prepare_step, Batch, LossBreakdown, ObjectiveSettings,
    PrepareSettings, RegInputs, StepInputs,
};

use crate::error::{MadmError, Result};
use crate::model::SegModel;

/// Student and its EMA teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair {
    pub student: SegModel,
    pub teacher: SegModel,
}

impl ModelPair {
    /// Teacher starts as an exact copy of the student.
    pub fn new(student: SegModel) -> Self {
        Self {
            teacher: student.clone(),
            student,
        }
    }
}

/// `teacher <- alpha * teacher + (1 - alpha) * student` for every parameter.
pub fn ema_update(pair: &mut ModelPair, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MadmError::Config(format!("ema alpha {alpha} outside [0, 1]")));
    }
    pair.teacher.params().check_congruent(pair.student.params())?;
    let student = pair.student.params();
    for (name, t) in pair.teacher.params_mut().iter_mut() {
        let s = student.get(name).expect("congruent stores");
        for (t, s) in t.data_mut().iter_mut().zip(s.data()) {
            *t = alpha * *t + (1.0 - alpha) * s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::SeededRng;

    fn pair() -> ModelPair {
        let mut p = ModelPair::new(SegModel::new(ModelSpec::compact(3), &mut SeededRng::new(1)));
        p.student = SegModel::new(ModelSpec::compact(3), &mut SeededRng::new(2));
        p
    }

    #[test]
    fn alpha_one_and_zero_are_fixed_points() {
        let mut p = pair();
        let before = p.teacher.clone();
        ema_update(&mut p, 1.0).unwrap();
        assert_eq!(p.teacher, before);
        ema_update(&mut p, 0.0).unwrap();
        assert_eq!(p.teacher.params(), p.student.params());
    }

    #[test]
    fn scalar_case_is_exact() {
        let mut p = pair();
        for (_, t) in p.teacher.params_mut().iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 2.0);
        }
        for (_, s) in p.student.params_mut().iter_mut() {
            s.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        ema_update(&mut p, 0.999).unwrap();
        assert!(p.teacher.params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 1.998)));
    }

    #[test]
    fn incongruent_pair_is_rejected() {
        let mut p = pair();
        p.student = SegModel::new(ModelSpec::desk(3), &mut SeededRng::new(2));
        assert!(ema_update(&mut p, 0.5).is_err());
        assert!(ema_update(&mut pair(), 1.5).is_err());
    }
}
