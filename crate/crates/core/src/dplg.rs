//! Diffusion-based pseudo-label generation.
//!
//! Early in self-training the teacher sees its target latent after a single
//! forward-noising step whose strength anneals to zero:
//!
//! ```text
//! k   = round(beta * max(0, 1 - i / gamma))
//! z'  = sqrt(abar_k) * z + (1 - sqrt(abar_k)) * eps      (NoiseForm::Paper)
//! z'  = sqrt(abar_k) * z + sqrt(1 - abar_k) * eps        (NoiseForm::Standard)
//! ```
//!
//! The pseudo-label is the teacher's per-pixel argmax on `z'`, and the
//! confidence `q` is the fraction of pixels whose top softmax probability
//! exceeds `tau`.

use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap, LatentTensor};
use crate::error::{MadmError, Result};
use crate::model::{split_logits, SegModel};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Which noise coefficient [`q_sample`] applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseForm {
    /// `(1 - sqrt(abar_k))`.
    #[default]
    Paper,
    /// `sqrt(1 - abar_k)`, the usual DDPM forward process.
    Standard,
}

/// Cumulative signal rates `abar_0..=abar_K` plus the annealing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    /// Initial diffusion step.
    pub beta_dplg: usize,
    /// Iterations over which the step anneals to zero.
    pub gamma_dplg: usize,
}

impl NoiseSchedule {
    pub fn new(alpha_bar: Vec<f64>, beta_dplg: usize, gamma_dplg: usize) -> Result<Self> {
        if alpha_bar.first() != Some(&1.0) {
            return Err(MadmError::Schedule("alpha_bar[0] must be exactly 1".into()));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(MadmError::Schedule("alpha_bar values must lie in (0, 1]".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] > w[0]) {
            return Err(MadmError::Schedule("alpha_bar must be non-increasing".into()));
        }
        if gamma_dplg == 0 {
            return Err(MadmError::Schedule("gamma must be positive".into()));
        }
        if beta_dplg > alpha_bar.len() - 1 {
            return Err(MadmError::Schedule(format!(
                "beta {beta_dplg} exceeds K_max {}",
                alpha_bar.len() - 1
            )));
        }
        Ok(Self {
            alpha_bar,
            beta_dplg,
            gamma_dplg,
        })
    }

    /// DDPM linear variance schedule: `beta_t` evenly spaced from
    /// `beta_start` (t = 1) to `beta_end` (t = k_max), `abar_k = prod (1 - beta_t)`.
    pub fn ddpm_linear(
        k_max: usize,
        beta_start: f64,
        beta_end: f64,
        beta_dplg: usize,
        gamma_dplg: usize,
    ) -> Result<Self> {
        if k_max == 0 {
            return Err(MadmError::Schedule("K_max must be positive".into()));
        }
        let mut alpha_bar = Vec::with_capacity(k_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for t in 0..k_max {
            let frac = if k_max == 1 {
                0.0
            } else {
                t as f64 / (k_max - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::new(alpha_bar, beta_dplg, gamma_dplg)
    }

    /// The 1000-step schedule with `beta_t` in `[1e-4, 0.02]`.
    pub fn standard(beta_dplg: usize, gamma_dplg: usize) -> Result<Self> {
        Self::ddpm_linear(1000, 1e-4, 0.02, beta_dplg, gamma_dplg)
    }

    pub fn k_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, k: usize) -> Option<f64> {
        self.alpha_bar.get(k).copied()
    }

    /// Signal and noise coefficients at step `k`.
    pub fn coefficients(&self, k: usize, form: NoiseForm) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(k).ok_or(MadmError::StepOutOfRange {
            k,
            k_max: self.k_max(),
        })?;
        let signal = ab.sqrt();
        let noise = match form {
            NoiseForm::Paper => 1.0 - signal,
            NoiseForm::Standard => (1.0 - ab).sqrt(),
        };
        Ok((signal, noise))
    }
}

/// Annealed diffusion step for iteration `i`.
pub fn diffusion_step(i: usize, schedule: &NoiseSchedule) -> usize {
    let frac = (1.0 - i as f64 / schedule.gamma_dplg as f64).max(0.0);
    (schedule.beta_dplg as f64 * frac).round() as usize
}

/// Noises a latent with the given standard-normal draws.
pub fn q_sample(
    z: &LatentTensor,
    k: usize,
    eps: &LatentTensor,
    schedule: &NoiseSchedule,
    form: NoiseForm,
) -> Result<LatentTensor> {
    if !z.same_shape(eps) {
        return Err(MadmError::Shape(format!(
            "noise {:?} does not match latent {:?}",
            eps.values().shape(),
            z.values().shape()
        )));
    }
    LatentTensor::new(q_sample_tensor(z.values(), k, eps.values(), schedule, form)?)
}

/// [`q_sample`] on raw tensors of any (equal) shape.
pub fn q_sample_tensor(
    z: &Tensor,
    k: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
    form: NoiseForm,
) -> Result<Tensor> {
    if z.shape() != eps.shape() {
        return Err(MadmError::Shape("noise and latent shapes differ".into()));
    }
    let (a, b) = schedule.coefficients(k, form)?;
    if k == 0 {
        return Ok(z.clone());
    }
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(z, e)| a * z + b * e)
        .collect();
    Tensor::from_vec(z.shape(), data)
}

/// Standard-normal noise of the given shape.
pub fn gaussian_like(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).expect("sized")
}

/// A teacher prediction used as supervision, with its confidence weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub labels: LabelMap,
    pub confidence_q: f64,
}

impl PseudoLabel {
    /// Labels from per-pixel argmax and the fraction of pixels whose top
    /// probability exceeds `tau`.
    pub fn from_logits(logits: &crate::segmentation::SegLogits, tau: f64) -> Self {
        let (labels, conf) = logits.argmax_with_confidence();
        let above = conf.iter().filter(|&&p| p > tau).count();
        Self {
            labels,
            confidence_q: above as f64 / conf.len() as f64,
        }
    }
}

/// How the teacher perturbs its input when labelling target samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSettings {
    pub noise_form: NoiseForm,
    /// Confidence threshold on the top softmax probability.
    pub tau: f64,
    /// When false, `k` is forced to 0 (no noise).
    pub enabled: bool,
}

impl Default for PseudoLabelSettings {
    fn default() -> Self {
        Self {
            noise_form: NoiseForm::Paper,
            tau: 0.968,
            enabled: true,
        }
    }
}

/// Teacher pseudo-labels for a `[N, 3, H, W]` target batch at iteration `i`.
/// Returns the labels and the diffusion step that was applied.
pub fn pseudo_label_batch(
    teacher: &SegModel,
    x_t: &Tensor,
    i: usize,
    schedule: &NoiseSchedule,
    settings: &PseudoLabelSettings,
    rng: &mut SeededRng,
) -> Result<(Vec<PseudoLabel>, usize)> {
    let k = if settings.enabled {
        diffusion_step(i, schedule)
    } else {
        0
    };
    let z = teacher.encode_batch(x_t);
    let z = if k > 0 {
        let eps = gaussian_like(z.shape(), rng);
        q_sample_tensor(&z, k, &eps, schedule, settings.noise_form)?
    } else {
        z
    };
    let logits = teacher.logits_from_latent(&z);
    let labels = split_logits(&logits)
        .iter()
        .map(|l| PseudoLabel::from_logits(l, settings.tau))
        .collect();
    Ok((labels, k))
}

/// Single-sample form of [`pseudo_label_batch`].
pub fn generate_pseudo_label(
    teacher: &SegModel,
    x_t: &ImageSample,
    i: usize,
    schedule: &NoiseSchedule,
    settings: &PseudoLabelSettings,
    rng: &mut SeededRng,
) -> Result<PseudoLabel> {
    let batch = Tensor::stack(&[x_t.pixels()])?;
    let (mut labels, _) = pseudo_label_batch(teacher, &batch, i, schedule, settings, rng)?;
    Ok(labels.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Modality;
    use crate::model::ModelSpec;
    use crate::segmentation::SegLogits;

    fn latent(seed: u64) -> LatentTensor {
        let mut r = SeededRng::new(seed);
        LatentTensor::new(gaussian_like(&[4, 8, 8], &mut r)).unwrap()
    }

    #[test]
    fn step_schedule_matches_worked_examples() {
        let s = NoiseSchedule::standard(60, 5000).unwrap();
        assert_eq!(diffusion_step(0, &s), 60);
        assert_eq!(diffusion_step(2500, &s), 30);
        assert_eq!(diffusion_step(5000, &s), 0);
        assert_eq!(diffusion_step(12_000, &s), 0);
    }

    #[test]
    fn standard_schedule_shape() {
        let s = NoiseSchedule::standard(60, 5000).unwrap();
        assert_eq!(s.k_max(), 1000);
        assert_eq!(s.alpha_bar(0), Some(1.0));
        assert!((s.alpha_bar(1).unwrap() - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bar(1000).unwrap() > 0.0);
        assert!(NoiseSchedule::standard(1001, 10).is_err());
        assert!(NoiseSchedule::standard(10, 0).is_err());
        assert!(NoiseSchedule::new(vec![0.9, 0.8], 1, 1).is_err());
        assert!(NoiseSchedule::new(vec![1.0, 0.8, 0.9], 1, 1).is_err());
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = NoiseSchedule::standard(60, 5000).unwrap();
        let z = latent(1);
        let eps = latent(2);
        assert_eq!(q_sample(&z, 0, &eps, &s, NoiseForm::Paper).unwrap(), z);
        let zero = LatentTensor::zeros(4, 8, 8);
        let out = q_sample(&z, 40, &zero, &s, NoiseForm::Paper).unwrap();
        let a = s.alpha_bar(40).unwrap().sqrt();
        for (o, z) in out.values().data().iter().zip(z.values().data()) {
            assert_eq!(*o, a * z);
        }
        assert!(matches!(
            q_sample(&z, 1001, &eps, &s, NoiseForm::Paper),
            Err(MadmError::StepOutOfRange { .. })
        ));
        let standard = q_sample(&zero, 1000, &eps, &s, NoiseForm::Standard).unwrap();
        let b = (1.0 - s.alpha_bar(1000).unwrap()).sqrt();
        assert!((standard.values().data()[0] - b * eps.values().data()[0]).abs() < 1e-15);
    }

    #[test]
    fn confidence_counts_pixels_above_tau() {
        let mut d = vec![0.0; 11 * 4];
        let uniform = SegLogits::new(Tensor::from_vec(&[11, 2, 2], d.clone()).unwrap()).unwrap();
        assert_eq!(PseudoLabel::from_logits(&uniform, 0.968).confidence_q, 0.0);
        for p in 0..4 {
            d[p] = 1e3;
        }
        let sharp = SegLogits::new(Tensor::from_vec(&[11, 2, 2], d).unwrap()).unwrap();
        let pl = PseudoLabel::from_logits(&sharp, 0.968);
        assert_eq!(pl.confidence_q, 1.0);
        assert!(pl.labels.classes().iter().all(|&c| c == 0));
    }

    #[test]
    fn pseudo_labels_are_reproducible_and_leave_teacher_untouched() {
        let teacher = SegModel::new(ModelSpec::desk(6), &mut SeededRng::new(3));
        let before = teacher.params().fingerprint();
        let mut r = SeededRng::new(5);
        let x = ImageSample::new(gaussian_like(&[3, 32, 32], &mut r).map(|v| v.abs().min(1.0)), Modality::Depth, "t")
            .unwrap();
        let s = NoiseSchedule::standard(60, 5000).unwrap();
        let cfg = PseudoLabelSettings::default();
        let a = generate_pseudo_label(&teacher, &x, 0, &s, &cfg, &mut SeededRng::new(8)).unwrap();
        let b = generate_pseudo_label(&teacher, &x, 0, &s, &cfg, &mut SeededRng::new(8)).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.confidence_q));
        assert_eq!(a.labels.num_classes, 6);
        assert_eq!(teacher.params().fingerprint(), before);
    }
}
