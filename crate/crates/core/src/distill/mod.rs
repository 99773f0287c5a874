//! Inception distillation: offline distillation of the top-order classifier
//! into every shallower order, then online distillation against an
//! attention-weighted ensemble of the top `r` classifiers.

mod bank;
mod ensemble;
mod offline;
mod online;

pub use bank::{read_bank, write_bank, BankManifest, ClassifierBank};
pub use ensemble::{
    ensemble_teacher, ensemble_teacher_backward, Activation, AttentionScorer, EnsembleOutput,
    TeacherMix,
};
pub use offline::{offline_distill, DistillTargets};
pub use online::{online_distill, online_loss_and_grad, OnlineProblem};

use crate::error::{config, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Weight of the distillation term against the hard-label term.
    pub lambda: f64,
    /// Number of top-order classifiers voting in the ensemble teacher.
    pub ensemble_size: usize,
    pub offline_epochs: usize,
    pub online_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub activation: Activation,
    pub teacher_mix: TeacherMix,
    /// Freeze the teacher-member classifiers during the online phase.
    pub stop_teacher_grad: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 1.2,
            lambda: 0.5,
            ensemble_size: 3,
            offline_epochs: 200,
            online_epochs: 100,
            lr: 0.01,
            weight_decay: 0.0,
            dropout: 0.0,
            seed: 0,
            activation: Activation::Tanh,
            teacher_mix: TeacherMix::Probabilities,
            stop_teacher_grad: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return config(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return config(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.ensemble_size < 2 || self.ensemble_size > k {
            return config(format!(
                "ensemble size r_ens={} must lie in [2, k={k}]",
                self.ensemble_size
            ));
        }
        self.student_config(0).validate()
    }

    /// Optimizer settings for training one student in the offline phase.
    pub fn student_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            batch_size: None,
            seed: self.seed,
        }
    }
}
