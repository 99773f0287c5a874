use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Result};
use crate::matrix::Matrix;
use crate::train::{
    accuracy, derive_seed, fit, soft_ce_grad, softmax_rows, train_order, Classifier, HardLabels,
    Objective, TrainingTask,
};

use super::bank::ClassifierBank;
use super::DistillConfig;

/// Hard labels mixed with fixed soft targets:
/// `(1 − λ)·CE(labels) + λ·T²·CE(teacher, softmax(z / T))`.
///
/// The hard term averages over the labeled rows of the batch, the soft term
/// over every row of the batch.
pub struct DistillTargets<'a> {
    pub labels: &'a [Option<usize>],
    /// Tempered teacher probabilities, one row per training row.
    pub teacher: &'a Matrix,
    pub temperature: f64,
    pub lambda: f64,
}

impl Objective for DistillTargets<'_> {
    fn loss_grad(&self, logits: &Matrix, rows: &[usize]) -> Result<(f64, Matrix)> {
        let mut loss = 0.0;
        let mut grad = Matrix::zeros(logits.rows(), logits.cols());
        if self.lambda < 1.0 {
            let (l, g) = HardLabels {
                labels: self.labels,
            }
            .loss_grad(logits, rows)?;
            let w = 1.0 - self.lambda;
            loss += w * l;
            for (a, b) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += w * b;
            }
        }
        if self.lambda > 0.0 {
            let teacher = self.teacher.select_rows(rows);
            let all: Vec<usize> = (0..rows.len()).collect();
            let (l, g) = soft_ce_grad(logits, &teacher, self.temperature, &all)?;
            let w = self.lambda * self.temperature * self.temperature;
            loss += w * l;
            for (a, b) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += w * b;
            }
        }
        Ok((loss, grad))
    }
}

/// Distills the top-order classifier into fresh classifiers of orders
/// `1..k`. With `λ = 0` each student is exactly the independently trained
/// classifier of its order.
pub fn offline_distill(
    teacher: &Classifier,
    task: &TrainingTask<'_>,
    cfg: &DistillConfig,
) -> Result<ClassifierBank> {
    let stack = task.stack;
    let k = stack.order();
    cfg.validate(k)?;
    task.check()?;
    let top = stack.order_input(k)?;
    if teacher.input_width() != top.cols() || teacher.classes() != task.num_classes {
        return input(format!(
            "teacher maps {} -> {} but order {k} needs {} -> {}",
            teacher.input_width(),
            teacher.classes(),
            top.cols(),
            task.num_classes
        ));
    }
    let student_cfg = cfg.student_config(cfg.offline_epochs);
    let soft = softmax_rows(&teacher.forward(top)?, cfg.temperature)?;
    let objective = DistillTargets {
        labels: task.labels,
        teacher: &soft,
        temperature: cfg.temperature,
        lambda: cfg.lambda,
    };

    let mut classifiers = Vec::with_capacity(k);
    let mut val_acc = Vec::with_capacity(k);
    for l in 1..k {
        if cfg.lambda == 0.0 {
            let trained = train_order(task, l, &student_cfg)?;
            classifiers.push(trained.classifier);
            val_acc.push(trained.best_val_acc);
            continue;
        }
        let inputs = stack.order_input(l)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, l));
        let mut clf = Classifier::new(task.spec, inputs.cols(), task.num_classes, &mut rng);
        let eval = task.eval_sets(l)?;
        let (_, _, best) = fit(
            &mut clf,
            inputs,
            &task.train_rows(),
            &objective,
            &student_cfg,
            &mut rng,
            &eval,
        )?;
        classifiers.push(clf);
        val_acc.push(best);
    }
    classifiers.push(teacher.clone());
    val_acc.push(match task.validation {
        Some(v) => Some(accuracy(teacher, v.order(k)?, &v.labels)?),
        None => None,
    });
    ClassifierBank::new(stack.backend(), stack.norm(), classifiers, val_acc)
}
