use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input, NaiError, Result};
use crate::matrix::Matrix;
use crate::train::{
    accuracy, derive_seed, grad_slices, log_softmax_row, soft_ce_grad, Adam, Classifier, Dense,
    HardLabels, Objective, TrainingTask,
};

use super::bank::ClassifierBank;
use super::ensemble::{ensemble_teacher, ensemble_teacher_backward, AttentionScorer, TeacherMix};
use super::DistillConfig;

/// Everything the online loss needs apart from trainable parameters.
pub struct OnlineProblem<'a> {
    /// `inputs[l - 1]` feeds the order-`l` classifier; rows are training rows.
    pub inputs: Vec<&'a Matrix>,
    pub labels: &'a [Option<usize>],
    pub temperature: f64,
    pub lambda: f64,
    pub ensemble_size: usize,
    pub mix: TeacherMix,
    pub stop_teacher_grad: bool,
}

struct StepOutput {
    loss: f64,
    /// Per classifier, `None` when it receives no gradient.
    grads: Vec<Option<Vec<Dense>>>,
    scorer: Option<Vec<f64>>,
}

impl OnlineProblem<'_> {
    fn check(&self, classifiers: &[Classifier], scorer: &AttentionScorer) -> Result<()> {
        let k = classifiers.len();
        if self.inputs.len() != k {
            return input(format!(
                "{} input matrices for {k} classifiers",
                self.inputs.len()
            ));
        }
        if self.ensemble_size < 2 || self.ensemble_size > k {
            return input(format!(
                "ensemble size {} outside [2, {k}]",
                self.ensemble_size
            ));
        }
        let rows = self.labels.len();
        for (i, (x, c)) in self.inputs.iter().zip(classifiers).enumerate() {
            if x.rows() != rows || x.cols() != c.input_width() {
                return input(format!(
                    "order-{} inputs do not match its classifier or the labels",
                    i + 1
                ));
            }
        }
        if scorer.weights.len() != classifiers[0].classes() {
            return input("scorer width differs from the class count");
        }
        Ok(())
    }

    /// Loss of the students `1..k` against hard labels and the ensemble of
    /// the top `ensemble_size` classifiers, and gradients w.r.t. all of it.
    fn step(
        &self,
        classifiers: &[Classifier],
        scorer: &AttentionScorer,
        rows: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepOutput> {
        let k = classifiers.len();
        let t = self.temperature;
        let lambda = self.lambda;
        let first_member = k - self.ensemble_size + 1;
        let distill = lambda > 0.0;
        let mut forwards = Vec::with_capacity(k);
        for l in 1..=k {
            if l < k || (distill && l >= first_member) {
                let x = self.inputs[l - 1].select_rows(rows);
                forwards.push(Some(classifiers[l - 1].forward_train(&x, dropout, rng)));
            } else {
                forwards.push(None);
            }
        }
        let mut dz: Vec<Option<Matrix>> = forwards
            .iter()
            .map(|f| f.as_ref().map(|(z, _)| Matrix::zeros(z.rows(), z.cols())))
            .collect();
        let add = |dst: &mut Matrix, src: &[f64], w: f64| {
            for (a, b) in dst.as_mut_slice().iter_mut().zip(src) {
                *a += w * b;
            }
        };

        let mut loss = 0.0;
        if lambda < 1.0 {
            let hard = HardLabels {
                labels: self.labels,
            };
            for l in 1..k {
                let (z, _) = forwards[l - 1].as_ref().expect("student forward");
                let (lc, g) = hard.loss_grad(z, rows)?;
                loss += (1.0 - lambda) * lc;
                add(
                    dz[l - 1].as_mut().expect("student grad"),
                    g.as_slice(),
                    1.0 - lambda,
                );
            }
        }

        let mut scorer_grad = None;
        if distill {
            let n = rows.len();
            let c = scorer.weights.len();
            let members: Vec<&Matrix> = (first_member..=k)
                .map(|l| &forwards[l - 1].as_ref().expect("member forward").0)
                .collect();
            let mut outs = Vec::with_capacity(n);
            let mut pbar = Matrix::zeros(n, c);
            for i in 0..n {
                let member_rows: Vec<&[f64]> = members.iter().map(|z| z.row(i)).collect();
                let out = ensemble_teacher(scorer, &member_rows, t, self.mix)?;
                pbar.row_mut(i).copy_from_slice(&out.probs);
                outs.push(out);
            }
            let all: Vec<usize> = (0..n).collect();
            let w = lambda * t * t;
            let mut g_pbar = Matrix::zeros(n, c);
            for l in 1..k {
                let (z, _) = forwards[l - 1].as_ref().expect("student forward");
                let (le, g) = soft_ce_grad(z, &pbar, t, &all)?;
                loss += w * le;
                add(dz[l - 1].as_mut().expect("student grad"), g.as_slice(), w);
                for i in 0..n {
                    let logq = log_softmax_row(z.row(i), t);
                    for (gp, lq) in g_pbar.row_mut(i).iter_mut().zip(logq) {
                        *gp -= w * lq / n as f64;
                    }
                }
            }
            let mut gs = vec![0.0; c];
            for (i, out) in outs.iter().enumerate() {
                let member_rows: Vec<&[f64]> = members.iter().map(|z| z.row(i)).collect();
                let (g_s, g_z) = ensemble_teacher_backward(
                    scorer,
                    &member_rows,
                    out,
                    t,
                    self.mix,
                    g_pbar.row(i),
                );
                for (a, b) in gs.iter_mut().zip(&g_s) {
                    *a += b;
                }
                if !self.stop_teacher_grad {
                    for (j, gz) in g_z.iter().enumerate() {
                        let l = first_member + j;
                        let dst = dz[l - 1].as_mut().expect("member grad");
                        for (a, b) in dst.row_mut(i).iter_mut().zip(gz) {
                            *a += b;
                        }
                    }
                }
            }
            scorer_grad = Some(gs);
        }
        if !loss.is_finite() {
            return Err(NaiError::Numeric(format!("online loss became {loss}")));
        }

        let mut grads = Vec::with_capacity(k);
        for l in 1..=k {
            let trainable = l < k || (distill && !self.stop_teacher_grad);
            match (&forwards[l - 1], &dz[l - 1]) {
                (Some((_, cache)), Some(d)) if trainable => {
                    grads.push(Some(classifiers[l - 1].backward(cache, d).0));
                }
                _ => grads.push(None),
            }
        }
        Ok(StepOutput {
            loss,
            grads,
            scorer: scorer_grad,
        })
    }
}

/// Online loss over every training row without dropout, and its gradient
/// w.r.t. all classifier parameters (order 1 first, each in `params_flat`
/// order) followed by the scorer weights. Frozen parts get zero gradient.
pub fn online_loss_and_grad(
    problem: &OnlineProblem<'_>,
    classifiers: &[Classifier],
    scorer: &AttentionScorer,
) -> Result<(f64, Vec<f64>)> {
    problem.check(classifiers, scorer)?;
    let rows: Vec<usize> = (0..problem.labels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = problem.step(classifiers, scorer, &rows, 0.0, &mut rng)?;
    let mut flat = Vec::new();
    for (c, g) in classifiers.iter().zip(&out.grads) {
        match g {
            Some(g) => flat.extend(
                g.iter()
                    .flat_map(|d| d.weights.as_slice().iter().chain(&d.bias)),
            ),
            None => flat.extend(std::iter::repeat_n(0.0, c.param_count())),
        }
    }
    flat.extend(
        out.scorer
            .unwrap_or_else(|| vec![0.0; scorer.weights.len()]),
    );
    Ok((out.loss, flat))
}

/// Jointly refines the bank's classifiers and the ensemble scorer. Each
/// classifier keeps the parameters of its best validation epoch, counting the
/// incoming parameters as epoch 0.
pub fn online_distill(
    bank: &ClassifierBank,
    task: &TrainingTask<'_>,
    cfg: &DistillConfig,
) -> Result<ClassifierBank> {
    let k = task.stack.order();
    cfg.validate(k)?;
    task.check()?;
    if bank.order() != k || bank.backend != task.stack.backend() {
        return input(format!(
            "bank of order {} / {} does not match the stack of order {k} / {}",
            bank.order(),
            bank.backend,
            task.stack.backend()
        ));
    }
    let mut out = bank.clone();
    if cfg.lambda == 0.0 || cfg.online_epochs == 0 {
        return Ok(out);
    }
    let mut scorer = bank
        .scorer
        .clone()
        .unwrap_or_else(|| AttentionScorer::zeros(bank.classes(), cfg.activation));
    let problem = OnlineProblem {
        inputs: (1..=k)
            .map(|l| task.stack.order_input(l))
            .collect::<Result<_>>()?,
        labels: task.labels,
        temperature: cfg.temperature,
        lambda: cfg.lambda,
        ensemble_size: cfg.ensemble_size,
        mix: cfg.teacher_mix,
        stop_teacher_grad: cfg.stop_teacher_grad,
    };
    problem.check(&out.classifiers, &scorer)?;

    let val_acc = |c: &Classifier, l: usize| -> Result<Option<f64>> {
        match task.validation {
            Some(v) => Ok(Some(accuracy(c, v.order(l)?, &v.labels)?)),
            None => Ok(None),
        }
    };
    let mut best: Vec<(Option<f64>, Classifier)> = Vec::with_capacity(k);
    for (i, c) in out.classifiers.iter().enumerate() {
        best.push((val_acc(c, i + 1)?, c.clone()));
    }

    let mut opts: Vec<Adam> = (0..k)
        .map(|_| Adam::new(cfg.lr, cfg.weight_decay))
        .collect();
    let mut scorer_opt = Adam::new(cfg.lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k + 1));
    let rows = task.train_rows();
    for _ in 0..cfg.online_epochs {
        let step = problem.step(&out.classifiers, &scorer, &rows, cfg.dropout, &mut rng)?;
        for ((clf, opt), g) in out.classifiers.iter_mut().zip(&mut opts).zip(&step.grads) {
            if let Some(g) = g {
                opt.update(&mut clf.param_slices_mut(), &grad_slices(g));
            }
        }
        if let Some(gs) = &step.scorer {
            scorer_opt.update(&mut [scorer.weights.as_mut_slice()], &[gs.as_slice()]);
        }
        if task.validation.is_some() {
            for (i, clf) in out.classifiers.iter().enumerate() {
                let acc = val_acc(clf, i + 1)?;
                if acc > best[i].0 {
                    best[i] = (acc, clf.clone());
                }
            }
        }
    }
    if task.validation.is_some() {
        for (i, (acc, clf)) in best.into_iter().enumerate() {
            out.classifiers[i] = clf;
            out.val_acc[i] = acc;
        }
    }
    out.scorer = Some(scorer);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{offline_distill, Activation};
    use crate::graph::{build_graph, NormKind};
    use crate::propagation::{precompute_stack, Backend, PropagatedStack};
    use crate::train::{gradient_check, train_base, ClassifierSpec, TrainConfig, ValidationSet};

    fn cycle_task(backend: Backend) -> (PropagatedStack, Vec<Option<usize>>) {
        let n = 9;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = build_graph(&edges, n).unwrap();
        let mut x = Matrix::zeros(n, 3);
        for i in 0..n {
            x.set(i, i % 3, 1.0 + 0.1 * i as f64);
            x.set(i, (i + 1) % 3, -0.3);
        }
        let labels = (0..n)
            .map(|i| if i == 4 { None } else { Some(i % 3) })
            .collect();
        (
            precompute_stack(&g, NormKind::SYMMETRIC, &x, 3, backend).unwrap(),
            labels,
        )
    }

    fn classifiers(stack: &PropagatedStack, spec: &ClassifierSpec) -> Vec<Classifier> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (1..=3)
            .map(|l| Classifier::new(spec, stack.order_input(l).unwrap().cols(), 3, &mut rng))
            .collect()
    }

    fn flat(cs: &[Classifier], s: &AttentionScorer) -> Vec<f64> {
        let mut p: Vec<f64> = cs.iter().flat_map(|c| c.params_flat()).collect();
        p.extend(&s.weights);
        p
    }

    fn unflat(
        p: &[f64],
        template: &[Classifier],
        act: Activation,
    ) -> Result<(Vec<Classifier>, AttentionScorer)> {
        let mut off = 0;
        let mut cs = Vec::new();
        for c in template {
            let mut c = c.clone();
            c.set_params_flat(&p[off..off + c.param_count()])?;
            off += c.param_count();
            cs.push(c);
        }
        let s = AttentionScorer {
            weights: p[off..].to_vec(),
            activation: act,
        };
        Ok((cs, s))
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        for (backend, mix, lambda) in [
            (Backend::Sgc, TeacherMix::Probabilities, 0.6),
            (Backend::Sign, TeacherMix::Logits, 1.0),
            (Backend::S2gc, TeacherMix::Probabilities, 0.0),
        ] {
            let (stack, labels) = cycle_task(backend);
            let cs = classifiers(&stack, &ClassifierSpec::mlp(&[4]));
            let scorer = AttentionScorer {
                weights: vec![0.5, -0.7, 1.1],
                activation: Activation::Tanh,
            };
            let problem = OnlineProblem {
                inputs: (1..=3).map(|l| stack.order_input(l).unwrap()).collect(),
                labels: &labels,
                temperature: 1.4,
                lambda,
                ensemble_size: 2,
                mix,
                stop_teacher_grad: false,
            };
            let loss = |p: &[f64]| {
                let (c, s) = unflat(p, &cs, Activation::Tanh)?;
                online_loss_and_grad(&problem, &c, &s)
            };
            let params = flat(&cs, &scorer);
            let err = gradient_check(loss, &params, 40, 11).unwrap();
            assert!(err < 1e-5, "{backend:?}/{mix:?}/{lambda}: {err}");
        }
    }

    #[test]
    fn stop_grad_freezes_top_classifier() {
        let (stack, labels) = cycle_task(Backend::Sgc);
        let cs = classifiers(&stack, &ClassifierSpec::linear());
        let scorer = AttentionScorer::zeros(3, Activation::Tanh);
        let problem = OnlineProblem {
            inputs: (1..=3).map(|l| stack.order_input(l).unwrap()).collect(),
            labels: &labels,
            temperature: 1.0,
            lambda: 0.5,
            ensemble_size: 2,
            mix: TeacherMix::Probabilities,
            stop_teacher_grad: true,
        };
        let (_, g) = online_loss_and_grad(&problem, &cs, &scorer).unwrap();
        let top = cs[2].param_count();
        let before = cs[0].param_count() + cs[1].param_count();
        assert!(g[before..before + top].iter().all(|&v| v == 0.0));
        assert!(g[before + top..].iter().any(|&v| v != 0.0));
    }

    fn trained_bank(
        stack: &PropagatedStack,
        labels: &[Option<usize>],
        val: &ValidationSet,
    ) -> (ClassifierBank, ClassifierSpec) {
        let spec = ClassifierSpec::linear();
        let task = TrainingTask {
            stack,
            labels,
            num_classes: 3,
            spec: &spec,
            validation: Some(val),
        };
        let teacher = train_base(
            &task,
            &TrainConfig {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = DistillConfig {
            offline_epochs: 10,
            ensemble_size: 2,
            ..Default::default()
        };
        (
            offline_distill(&teacher.classifier, &task, &cfg).unwrap(),
            spec,
        )
    }

    #[test]
    fn zero_lambda_leaves_bank_untouched() {
        let (stack, labels) = cycle_task(Backend::Sgc);
        let val = ValidationSet {
            inputs: (1..=3)
                .map(|l| stack.order_input(l).unwrap().clone())
                .collect(),
            labels: (0..9).map(|i| i % 3).collect(),
        };
        let (bank, spec) = trained_bank(&stack, &labels, &val);
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 3,
            spec: &spec,
            validation: Some(&val),
        };
        let cfg = DistillConfig {
            lambda: 0.0,
            online_epochs: 10,
            ensemble_size: 2,
            ..Default::default()
        };
        assert_eq!(online_distill(&bank, &task, &cfg).unwrap(), bank);
    }

    #[test]
    fn online_never_lowers_validation_accuracy() {
        let (stack, labels) = cycle_task(Backend::Sgc);
        let val = ValidationSet {
            inputs: (1..=3)
                .map(|l| stack.order_input(l).unwrap().clone())
                .collect(),
            labels: (0..9).map(|i| i % 3).collect(),
        };
        let (bank, spec) = trained_bank(&stack, &labels, &val);
        let task = TrainingTask {
            stack: &stack,
            labels: &labels,
            num_classes: 3,
            spec: &spec,
            validation: Some(&val),
        };
        let cfg = DistillConfig {
            online_epochs: 15,
            ensemble_size: 2,
            ..Default::default()
        };
        let refined = online_distill(&bank, &task, &cfg).unwrap();
        for (a, b) in refined.val_acc.iter().zip(&bank.val_acc) {
            assert!(a.unwrap() >= b.unwrap());
        }
        assert!(refined.scorer.is_some());
    }
}
