use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config, input, NaiError, Result};
use crate::matrix::{argmax, Matrix};
use crate::propagation::PropagatedStack;

use super::classifier::{Classifier, ClassifierSpec, Dense};
use super::loss::hard_ce_grad;
use super::optim::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Inverted dropout on classifier inputs and hidden layers, in `[0, 0.7]`.
    pub dropout: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            weight_decay: 0.0,
            dropout: 0.0,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return config(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..=0.7).contains(&self.dropout) {
            return config(format!("dropout {} outside [0, 0.7]", self.dropout));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return config(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == Some(0) {
            return config("batch size must be at least 1");
        }
        Ok(())
    }
}

/// Seed of the order-`l` classifier derived from a run seed, so every order
/// trains from its own deterministic stream.
pub fn derive_seed(seed: u64, order: usize) -> u64 {
    seed ^ (order as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Held-out nodes with their per-order classifier inputs.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    /// `inputs[l - 1]` feeds the order-`l` classifier.
    pub inputs: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl ValidationSet {
    pub fn order(&self, l: usize) -> Result<&Matrix> {
        match l.checked_sub(1).and_then(|i| self.inputs.get(i)) {
            Some(m) => Ok(m),
            None => input(format!("validation set has no order {l}")),
        }
    }
}

/// Training-graph features plus supervision.
#[derive(Debug, Clone, Copy)]
pub struct TrainingTask<'a> {
    /// Stack over the training graph; its rows are `V_train`.
    pub stack: &'a PropagatedStack,
    /// Class of each stack row, `None` outside `V_l`.
    pub labels: &'a [Option<usize>],
    pub num_classes: usize,
    pub spec: &'a ClassifierSpec,
    pub validation: Option<&'a ValidationSet>,
}

impl TrainingTask<'_> {
    pub fn labeled_rows(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        (0..self.labels.len()).collect()
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.labels.len() != self.stack.hop(0).rows() {
            return input(format!(
                "{} labels for {} training rows",
                self.labels.len(),
                self.stack.hop(0).rows()
            ));
        }
        if self.num_classes < 2 {
            return input("need at least two classes");
        }
        if let Some(bad) = self
            .labels
            .iter()
            .flatten()
            .find(|&&c| c >= self.num_classes)
        {
            return input(format!(
                "label {bad} exceeds class count {}",
                self.num_classes
            ));
        }
        if self.labels.iter().all(Option::is_none) {
            return input("no labeled training nodes");
        }
        Ok(())
    }

    pub(crate) fn eval_sets(&self, order: usize) -> Result<EvalSets<'_>> {
        let rows = self.labeled_rows();
        let labels = rows.iter().map(|&i| self.labels[i].unwrap_or(0)).collect();
        let val = match self.validation {
            Some(v) => Some((v.order(order)?, v.labels.as_slice())),
            None => None,
        };
        Ok(EvalSets { rows, labels, val })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub order: usize,
    pub trace: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(c: &Classifier, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
    if inputs.rows() != labels.len() {
        return input("accuracy: row and label counts differ");
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let logits = c.forward(inputs)?;
    let hits = (0..logits.rows())
        .filter(|&i| argmax(logits.row(i)) == labels[i])
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Loss over a batch of rows: given the logits of `rows` (in that order),
/// returns the loss and its gradient w.r.t. those logits.
pub trait Objective {
    fn loss_grad(&self, logits: &Matrix, rows: &[usize]) -> Result<(f64, Matrix)>;
}

/// Cross-entropy against hard labels, skipping unlabeled rows.
pub struct HardLabels<'a> {
    pub labels: &'a [Option<usize>],
}

impl Objective for HardLabels<'_> {
    fn loss_grad(&self, logits: &Matrix, rows: &[usize]) -> Result<(f64, Matrix)> {
        let mut local = Vec::with_capacity(rows.len());
        let mut subset = Vec::new();
        for (pos, &r) in rows.iter().enumerate() {
            match self.labels[r] {
                Some(c) => {
                    local.push(c);
                    subset.push(pos);
                }
                None => local.push(0),
            }
        }
        if subset.is_empty() {
            return Ok((0.0, Matrix::zeros(logits.rows(), logits.cols())));
        }
        hard_ce_grad(logits, &local, &subset)
    }
}

/// Loss of `clf` on `inputs[rows]` and its gradient w.r.t. the flattened
/// parameters (in `params_flat` order), without dropout.
pub fn objective_loss_and_grad(
    clf: &Classifier,
    inputs: &Matrix,
    rows: &[usize],
    objective: &dyn Objective,
) -> Result<(f64, Vec<f64>)> {
    let x = inputs.select_rows(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (logits, cache) = clf.forward_train(&x, 0.0, &mut rng);
    let (loss, dlogits) = objective.loss_grad(&logits, rows)?;
    let (grads, _) = clf.backward(&cache, &dlogits);
    Ok((loss, flatten_grads(&grads)))
}

pub(crate) fn flatten_grads(grads: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weights.as_slice());
        out.extend_from_slice(&g.bias);
    }
    out
}

pub(crate) fn grad_slices(grads: &[Dense]) -> Vec<&[f64]> {
    grads
        .iter()
        .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
        .collect()
}

pub(crate) struct EvalSets<'a> {
    pub(crate) rows: Vec<usize>,
    pub(crate) labels: Vec<usize>,
    pub(crate) val: Option<(&'a Matrix, &'a [usize])>,
}

/// Optimizes `clf` on `inputs[active]` and keeps the parameters of the epoch
/// with the best validation accuracy (the last epoch without validation).
pub(crate) fn fit(
    clf: &mut Classifier,
    inputs: &Matrix,
    active: &[usize],
    objective: &dyn Objective,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    eval: &EvalSets<'_>,
) -> Result<(Vec<EpochMetrics>, usize, Option<f64>)> {
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = active.to_vec();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Classifier)> = None;
    let train_inputs = inputs.select_rows(&eval.rows);
    for epoch in 1..=cfg.epochs {
        let batch = cfg.batch_size.unwrap_or(order.len()).max(1);
        if cfg.batch_size.is_some() {
            order.shuffle(rng);
        }
        let mut epoch_loss = 0.0;
        for rows in order.chunks(batch) {
            let x = inputs.select_rows(rows);
            let (logits, cache) = clf.forward_train(&x, cfg.dropout, rng);
            let (loss, dlogits) = objective.loss_grad(&logits, rows)?;
            if !loss.is_finite() {
                return Err(NaiError::Numeric(format!(
                    "loss became {loss} at epoch {epoch}"
                )));
            }
            epoch_loss += loss * rows.len() as f64;
            let (grads, _) = clf.backward(&cache, &dlogits);
            opt.update(&mut clf.param_slices_mut(), &grad_slices(&grads));
        }
        let train_acc = accuracy(clf, &train_inputs, &eval.labels)?;
        let val_acc = match eval.val {
            Some((x, y)) => Some(accuracy(clf, x, y)?),
            None => None,
        };
        trace.push(EpochMetrics {
            epoch,
            loss: epoch_loss / order.len().max(1) as f64,
            train_acc,
            val_acc,
        });
        if let Some(v) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, clf.clone()));
            }
        }
    }
    match best {
        Some((acc, epoch, params)) => {
            *clf = params;
            Ok((trace, epoch, Some(acc)))
        }
        None => Ok((trace, cfg.epochs, None)),
    }
}

/// Trains the order-`l` classifier on hard labels only.
pub(crate) fn train_order(
    task: &TrainingTask<'_>,
    l: usize,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    task.check()?;
    let val = match task.validation {
        Some(v) => Some((v.order(l)?, v.labels.as_slice())),
        None => None,
    };
    let mut trained = train_classifier(
        task.stack.order_input(l)?,
        task.labels,
        task.num_classes,
        task.spec,
        val,
        cfg,
        l,
    )?;
    trained.order = l;
    Ok(trained)
}

/// Trains a classifier on arbitrary per-row inputs with hard labels over the
/// labeled rows. `stream` selects the seed stream (see [`derive_seed`]) and
/// is reported as the order.
pub fn train_classifier(
    inputs: &Matrix,
    labels: &[Option<usize>],
    num_classes: usize,
    spec: &ClassifierSpec,
    validation: Option<(&Matrix, &[usize])>,
    cfg: &TrainConfig,
    stream: usize,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    if inputs.rows() != labels.len() {
        return input(format!(
            "{} labels for {} input rows",
            labels.len(),
            inputs.rows()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
    let mut clf = Classifier::new(spec, inputs.cols(), num_classes, &mut rng);
    let active: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if active.is_empty() {
        return input("no labeled training rows");
    }
    let eval = EvalSets {
        labels: active.iter().map(|&i| labels[i].unwrap_or(0)).collect(),
        rows: active.clone(),
        val: validation,
    };
    let objective = HardLabels { labels };
    let (trace, best_epoch, best_val_acc) =
        fit(&mut clf, inputs, &active, &objective, cfg, &mut rng, &eval)?;
    Ok(TrainedClassifier {
        classifier: clf,
        order: stream,
        trace,
        best_epoch,
        best_val_acc,
    })
}

/// Trains the base classifier `f^(k)` on the top-order features of the stack
/// with cross-entropy over the labeled training nodes.
pub fn train_base(task: &TrainingTask<'_>, cfg: &TrainConfig) -> Result<TrainedClassifier> {
    train_order(task, task.stack.order(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NormKind};
    use crate::propagation::{precompute_stack, Backend};

    /// Two classes whose features are the labels themselves.
    fn separable() -> (PropagatedStack, Vec<Option<usize>>) {
        let n = 12;
        let g = build_graph(&[], n).unwrap();
        let mut x = Matrix::zeros(n, 2);
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x.set(i, c, 1.0);
            labels.push(Some(c));
        }
        (
            precompute_stack(&g, NormKind::SYMMETRIC, &x, 2, Backend::Sgc).unwrap(),
            labels,
        )
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (stack, labels) = separable();
        let spec = ClassifierSpec::linear();
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 2,
            spec: &spec,
            validation: None,
        };
        let cfg = TrainConfig {
            epochs: 100,
            lr: 0.1,
            ..Default::default()
        };
        let trained = train_base(&task, &cfg).unwrap();
        assert_eq!(trained.trace.last().unwrap().train_acc, 1.0);
        assert_eq!(trained.order, 2);
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (stack, labels) = separable();
        let spec = ClassifierSpec::linear();
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 2,
            spec: &spec,
            validation: None,
        };
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..Default::default()
        };
        let trained = train_base(&task, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9, 2));
        let init = Classifier::new(&spec, 2, 2, &mut rng);
        assert_eq!(trained.classifier, init);
        assert!(trained.trace.is_empty());
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let (stack, labels) = separable();
        let spec = ClassifierSpec::mlp(&[6]);
        let val = ValidationSet {
            inputs: vec![
                stack.order_input(1).unwrap().clone(),
                stack.order_input(2).unwrap().clone(),
            ],
            labels: labels.iter().map(|l| l.unwrap()).collect(),
        };
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 2,
            spec: &spec,
            validation: Some(&val),
        };
        let cfg = TrainConfig {
            epochs: 30,
            dropout: 0.3,
            batch_size: Some(5),
            seed: 4,
            ..Default::default()
        };
        let a = train_base(&task, &cfg).unwrap();
        let b = train_base(&task, &cfg).unwrap();
        let bytes = |c: &Classifier| {
            c.params_flat()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bytes(&a.classifier), bytes(&b.classifier));
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn no_labels_is_an_error() {
        let (stack, _) = separable();
        let labels = vec![None; 12];
        let spec = ClassifierSpec::linear();
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 2,
            spec: &spec,
            validation: None,
        };
        assert!(train_base(&task, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 0.8,
                ..Default::default()
            },
            TrainConfig {
                batch_size: Some(0),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
