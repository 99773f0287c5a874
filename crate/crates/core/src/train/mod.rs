//! Per-order classifiers and the machinery to train them.

mod checkpoint;
mod classifier;
mod fit;
mod gradcheck;
mod loss;
mod optim;

pub use checkpoint::{read_classifier, write_classifier, ClassifierCheckpoint};
pub use classifier::{forward_logits, Classifier, ClassifierKind, ClassifierSpec, Dense};
pub use fit::{
    accuracy, derive_seed, objective_loss_and_grad, train_base, train_classifier, EpochMetrics,
    HardLabels, Objective, TrainConfig, TrainedClassifier, TrainingTask, ValidationSet,
};
pub(crate) use fit::{fit, grad_slices, train_order};
pub use gradcheck::gradient_check;
pub use loss::{
    hard_ce, hard_ce_grad, log_softmax_row, soft_ce, soft_ce_grad, softmax_backward, softmax_rows,
    tempered_softmax,
};
pub use optim::Adam;
