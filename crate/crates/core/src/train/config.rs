use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::Modality;
use crate::dplg::{NoiseForm, NoiseSchedule, PseudoLabelSettings};
use crate::error::{MadmError, Result};

/// Every knob of a training run. Serialized as a flat TOML table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub resolution: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ema_alpha: f64,
    /// Use `min(1 - 1/(i + 1), ema_alpha)` so the teacher tracks the
    /// student closely during the first iterations.
    pub ema_warmup: bool,
    pub tau: f64,
    pub noise_form: NoiseForm,
    pub k_max: usize,
    pub beta_dplg: usize,
    pub gamma_dplg: usize,
    pub lambda_reg: f64,
    /// Off forces `k = 0` for every pseudo-label.
    pub dplg: bool,
    /// Off drops the regression losses and the high-resolution feature.
    pub lplr: bool,
    pub apply_q_to_reg: bool,
    pub unfreeze_autoencoder: bool,
    /// ClassMix, color jitter and blur on the student's target input.
    pub augment: bool,
    /// Fraction of the target training split used.
    pub data_fraction: f64,
    pub log_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
}

/// The desk-scale edge benchmark defaults.
impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(Modality::Event)
    }
}

/// `(gamma, beta, lambda_reg)` per target modality at 10k iterations.
pub fn modality_triple(m: Modality) -> (usize, usize, f64) {
    match m {
        Modality::Depth => (5000, 60, 1.0),
        Modality::Infrared => (8000, 50, 1.0),
        _ => (8000, 50, 10.0),
    }
}

const FULL_ITERATIONS: usize = 10_000;

impl TrainConfig {
    /// Full-scale protocol: 512px, batch 2, 10k iterations, lr 5e-6.
    pub fn full_scale(m: Modality) -> Self {
        let (gamma, beta, lambda) = modality_triple(m);
        Self {
            seed: 0,
            num_classes: if m == Modality::Infrared { 9 } else { 11 },
            resolution: 512,
            batch_size: 2,
            iterations: FULL_ITERATIONS,
            lr: 5e-6,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ema_alpha: 0.999,
            ema_warmup: true,
            tau: 0.968,
            noise_form: NoiseForm::Paper,
            k_max: 1000,
            beta_dplg: beta,
            gamma_dplg: gamma,
            lambda_reg: lambda,
            dplg: true,
            lplr: true,
            apply_q_to_reg: true,
            unfreeze_autoencoder: false,
            augment: true,
            data_fraction: 1.0,
            log_every: 1,
            checkpoint_every: 0,
            pretrain_steps: 0,
            pretrain_lr: 0.0,
        }
    }

    /// Desk scale: 64px, 2000 iterations, six classes. The annealing
    /// horizon shrinks with the iteration budget. A backbone trained from
    /// scratch is rarely 96.8% sure of anything on the target, so the
    /// confidence threshold is lowered to keep `q` away from zero.
    pub fn desk(m: Modality) -> Self {
        let iterations = 2000;
        let (gamma, beta, lambda) = modality_triple(m);
        Self {
            num_classes: 6,
            resolution: 64,
            iterations,
            lr: 1e-3,
            gamma_dplg: (gamma * iterations).div_ceil(FULL_ITERATIONS),
            beta_dplg: beta,
            lambda_reg: lambda,
            pretrain_steps: 1500,
            pretrain_lr: 2e-3,
            tau: 0.8,
            ..Self::full_scale(m)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| MadmError::Config(e.message().to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let known = Self::keys();
        let unknown: Vec<&str> = table
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(MadmError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| MadmError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// All recognised keys.
    pub fn keys() -> BTreeSet<&'static str> {
        [
            "seed",
            "num_classes",
            "resolution",
            "batch_size",
            "iterations",
            "lr",
            "weight_decay",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
            "ema_alpha",
            "ema_warmup",
            "tau",
            "noise_form",
            "k_max",
            "beta_dplg",
            "gamma_dplg",
            "lambda_reg",
            "dplg",
            "lplr",
            "apply_q_to_reg",
            "unfreeze_autoencoder",
            "augment",
            "data_fraction",
            "log_every",
            "checkpoint_every",
            "pretrain_steps",
            "pretrain_lr",
        ]
        .into_iter()
        .collect()
    }

    /// Layers `key = value` pairs over this config; the last pair for a key
    /// wins. Values are parsed as TOML literals, falling back to strings.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        let known = Self::keys();
        let unknown: Vec<&str> = pairs
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !known.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(MadmError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        for (k, v) in pairs {
            let parsed = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.clone()));
            table.insert(k.clone(), parsed);
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("resolution", self.resolution),
            ("batch_size", self.batch_size),
            ("iterations", self.iterations),
            ("k_max", self.k_max),
            ("gamma_dplg", self.gamma_dplg),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if self.resolution % crate::backbone::UNET_STRIDE != 0 {
            bad.push(format!(
                "resolution must be a multiple of {}",
                crate::backbone::UNET_STRIDE
            ));
        }
        if self.num_classes > 254 {
            bad.push("num_classes must leave room for the ignore value".into());
        }
        for (name, v) in [("lr", self.lr), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("ema_alpha", self.ema_alpha),
            ("tau", self.tau),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            bad.push("data_fraction must lie in (0, 1]".into());
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            bad.push("lambda_reg must be non-negative".into());
        }
        if !(self.weight_decay >= 0.0) {
            bad.push("weight_decay must be non-negative".into());
        }
        if self.beta_dplg > self.k_max {
            bad.push("beta_dplg cannot exceed k_max".into());
        }
        if self.pretrain_steps > 0 && !(self.pretrain_lr > 0.0) {
            bad.push("pretrain_lr must be positive when pretraining".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(MadmError::Config(bad.join("; ")))
        }
    }

    /// EMA coefficient at iteration `i`.
    pub fn ema_alpha_at(&self, i: usize) -> f64 {
        if self.ema_warmup {
            (1.0 - 1.0 / (i as f64 + 1.0)).min(self.ema_alpha)
        } else {
            self.ema_alpha
        }
    }

    /// Weight on the regression losses after the ablation switch.
    pub fn effective_lambda(&self) -> f64 {
        if self.lplr {
            self.lambda_reg
        } else {
            0.0
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::ddpm_linear(self.k_max, 1e-4, 0.02, self.beta_dplg, self.gamma_dplg)
    }

    pub fn pseudo_label_settings(&self) -> PseudoLabelSettings {
        PseudoLabelSettings {
            noise_form: self.noise_form,
            tau: self.tau,
            enabled: self.dplg,
        }
    }
}
