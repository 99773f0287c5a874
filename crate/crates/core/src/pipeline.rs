//! The inductive protocol end to end: training graph, graph extension for
//! validation and test nodes, training and distillation of a bank, and
//! calibration of synthetic data.

use crate::data::DatasetBundle;
use crate::distill::{offline_distill, online_distill, ClassifierBank, DistillConfig};
use crate::engine::Engine;
use crate::error::{input, Result};
use crate::graph::{extend_graph, induce_train_graph, Graph, IdMap, NormKind};
use crate::matrix::Matrix;
use crate::propagation::{
    precompute_stack, stationary_summary, target_stack, update_summary, Backend, PropagatedStack,
    StationarySummary,
};
use crate::train::{
    accuracy, train_base, train_classifier, ClassifierSpec, TrainConfig, TrainedClassifier,
    TrainingTask, ValidationSet,
};

/// The graph as known at one stage, with local ids.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub graph: Graph,
    pub features: Matrix,
    pub summary: StationarySummary,
    /// Local id to bundle id.
    pub ids: IdMap,
}

impl GraphView {
    pub fn engine<'a>(&'a self, bank: &'a ClassifierBank) -> Result<Engine<'a>> {
        Engine::new(&self.graph, &self.features, bank, &self.summary)
    }

    /// Local ids of bundle nodes, which must all be in the view.
    pub fn local(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| match self.ids.to_new(v) {
                Some(l) => Ok(l),
                None => input(format!("node {v} is not part of this view")),
            })
            .collect()
    }

    /// Adds bundle nodes `arrivals` with every edge they have to the view or
    /// to each other, and updates the summary incrementally.
    pub fn extend(&self, bundle: &DatasetBundle, arrivals: &[usize]) -> Result<GraphView> {
        let mut ids = self.ids.clone();
        for &v in arrivals {
            if ids.to_new(v).is_some() {
                return input(format!("node {v} is already in the view"));
            }
            ids.push(v);
        }
        let mut edges = Vec::new();
        for &v in arrivals {
            let lv = ids.to_new(v).expect("just added");
            for &w in bundle.graph.neighbors(v) {
                if let Some(lw) = ids.to_new(w) {
                    edges.push((lv.min(lw), lv.max(lw)));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let ext = extend_graph(&self.graph, arrivals.len(), &edges)?;
        let features = bundle.features.select_rows(&ids.new_to_old);
        let summary = update_summary(&self.summary, &ext, &features)?;
        Ok(GraphView {
            graph: ext.graph,
            features,
            summary,
            ids,
        })
    }
}

/// Propagation settings shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSettings {
    pub norm: NormKind,
    pub k: usize,
    pub backend: Backend,
}

/// Everything training and evaluation need from one dataset.
#[derive(Debug, Clone)]
pub struct InductiveData {
    pub settings: PropagationSettings,
    pub num_classes: usize,
    /// Subgraph induced on the training nodes.
    pub train: GraphView,
    pub train_stack: PropagatedStack,
    /// Labels of training rows; only labeled training nodes carry one.
    pub train_labels: Vec<Option<usize>>,
    /// Training view extended with the validation nodes.
    pub val_view: GraphView,
    pub val_nodes: Vec<usize>,
    pub val_labels: Vec<usize>,
    pub validation: ValidationSet,
    /// Validation view extended with every remaining node.
    pub test_view: GraphView,
    pub test_nodes: Vec<usize>,
    pub test_labels: Vec<usize>,
}

/// The three graphs of the inductive protocol, each with a current summary.
#[derive(Debug, Clone)]
pub struct InductiveViews {
    /// Subgraph induced on the training nodes.
    pub train: GraphView,
    /// Training view extended with the validation nodes.
    pub val: GraphView,
    /// Validation view extended with every remaining node.
    pub test: GraphView,
}

pub fn build_views(bundle: &DatasetBundle, norm: NormKind) -> Result<InductiveViews> {
    bundle.validate()?;
    let (graph, ids) = induce_train_graph(&bundle.graph, &bundle.split)?;
    let features = bundle.features.select_rows(&ids.new_to_old);
    let summary = stationary_summary(&graph, norm, &features)?;
    let train = GraphView {
        graph,
        features,
        summary,
        ids,
    };
    let mut arrivals = bundle.split.validation.clone();
    arrivals.sort_unstable();
    let val = train.extend(bundle, &arrivals)?;
    let rest: Vec<usize> = (0..bundle.graph.n())
        .filter(|&v| val.ids.to_new(v).is_none())
        .collect();
    let test = val.extend(bundle, &rest)?;
    Ok(InductiveViews { train, val, test })
}

pub fn prepare(bundle: &DatasetBundle, settings: PropagationSettings) -> Result<InductiveData> {
    let PropagationSettings { norm, k, backend } = settings;
    let InductiveViews {
        train,
        val: val_view,
        test: test_view,
    } = build_views(bundle, norm)?;
    let train_stack = precompute_stack(&train.graph, norm, &train.features, k, backend)?;
    let mut train_labels = vec![None; train.ids.len()];
    for &v in &bundle.split.labeled_train {
        let l = train
            .ids
            .to_new(v)
            .expect("labeled nodes are training nodes");
        train_labels[l] = bundle.labels[v];
    }

    let val_nodes = val_view.local(&bundle.split.validation)?;
    let val_labels = bundle.labels_of(&bundle.split.validation)?;
    let validation = if val_nodes.is_empty() {
        ValidationSet {
            inputs: (1..=k)
                .map(|l| Matrix::zeros(0, backend.input_width(l, bundle.features.cols())))
                .collect(),
            labels: Vec::new(),
        }
    } else {
        let vs = target_stack(
            &val_view.graph,
            norm,
            &val_view.features,
            &val_nodes,
            k,
            backend,
        )?;
        ValidationSet {
            inputs: (1..=k)
                .map(|l| vs.order_input(l).cloned())
                .collect::<Result<_>>()?,
            labels: val_labels.clone(),
        }
    };
    let test_nodes = test_view.local(&bundle.split.test)?;
    let test_labels = bundle.labels_of(&bundle.split.test)?;

    Ok(InductiveData {
        settings,
        num_classes: bundle.num_classes,
        train,
        train_stack,
        train_labels,
        val_view,
        val_nodes,
        val_labels,
        validation,
        test_view,
        test_nodes,
        test_labels,
    })
}

impl InductiveData {
    pub fn task<'a>(&'a self, spec: &'a ClassifierSpec) -> TrainingTask<'a> {
        TrainingTask {
            stack: &self.train_stack,
            labels: &self.train_labels,
            num_classes: self.num_classes,
            spec,
            validation: if self.validation.labels.is_empty() {
                None
            } else {
                Some(&self.validation)
            },
        }
    }

    /// Trains the top-order classifier.
    pub fn train_base(
        &self,
        spec: &ClassifierSpec,
        cfg: &TrainConfig,
    ) -> Result<TrainedClassifier> {
        train_base(&self.task(spec), cfg)
    }

    /// Offline distillation, then online distillation when `online` is set.
    pub fn distill(
        &self,
        spec: &ClassifierSpec,
        teacher: &TrainedClassifier,
        cfg: &DistillConfig,
        online: bool,
    ) -> Result<ClassifierBank> {
        let task = self.task(spec);
        let bank = offline_distill(&teacher.classifier, &task, cfg)?;
        if online {
            online_distill(&bank, &task, cfg)
        } else {
            Ok(bank)
        }
    }

    /// Accuracy of the order-`l` classifier on the test nodes with full
    /// order-`l` propagation.
    pub fn test_accuracy(&self, bank: &ClassifierBank, l: usize) -> Result<f64> {
        let stack = target_stack(
            &self.test_view.graph,
            self.settings.norm,
            &self.test_view.features,
            &self.test_nodes,
            l,
            self.settings.backend,
        )?;
        accuracy(
            bank.classifier(l)?,
            stack.order_input(l)?,
            &self.test_labels,
        )
    }
}

/// Validation accuracies that decide whether synthetic data is usable: a
/// linear model on raw features must do poorly and one on propagated
/// features well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    pub raw_linear_val: f64,
    pub propagated_val: f64,
    pub order: usize,
    pub ok: bool,
}

pub const CALIBRATION_RAW_MAX: f64 = 0.70;
pub const CALIBRATION_PROPAGATED_MIN: f64 = 0.85;
pub const CALIBRATION_ORDER: usize = 5;

/// Trains linear classifiers on raw and order-5 SGC features of the
/// training graph and scores both on validation.
pub fn calibrate(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<CalibrationReport> {
    let settings = PropagationSettings {
        norm: NormKind::SYMMETRIC,
        k: CALIBRATION_ORDER,
        backend: Backend::Sgc,
    };
    let data = prepare(bundle, settings)?;
    let spec = ClassifierSpec::linear();
    let raw_val = bundle.features.select_rows(&bundle.split.validation);
    let raw = train_classifier(
        data.train_stack.hop(0),
        &data.train_labels,
        data.num_classes,
        &spec,
        Some((&raw_val, &data.val_labels)),
        cfg,
        0,
    )?;
    let prop = data.train_base(&spec, cfg)?;
    let raw_linear_val = raw.best_val_acc.unwrap_or(0.0);
    let propagated_val = prop.best_val_acc.unwrap_or(0.0);
    Ok(CalibrationReport {
        raw_linear_val,
        propagated_val,
        order: CALIBRATION_ORDER,
        ok: raw_linear_val < CALIBRATION_RAW_MAX && propagated_val > CALIBRATION_PROPAGATED_MIN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sbm, SbmPreset};
    use crate::engine::{ExecutionMode, NapConfig};
    use crate::propagation::precompute_stack;

    fn settings() -> PropagationSettings {
        PropagationSettings {
            norm: NormKind::SYMMETRIC,
            k: 3,
            backend: Backend::Sgc,
        }
    }

    #[test]
    fn views_match_the_original_graph() {
        let bundle = generate_sbm(&SbmPreset::Small.config(), 1).unwrap();
        let data = prepare(&bundle, settings()).unwrap();
        assert_eq!(data.test_view.graph.n(), bundle.graph.n());
        assert_eq!(data.test_view.graph.m(), bundle.graph.m());
        for (u, v) in data.test_view.graph.edges() {
            assert!(bundle
                .graph
                .has_edge(data.test_view.ids.to_old(u), data.test_view.ids.to_old(v)));
        }
        let scratch = stationary_summary(
            &data.test_view.graph,
            NormKind::SYMMETRIC,
            &data.test_view.features,
        )
        .unwrap();
        assert!(scratch.max_relative_diff(&data.test_view.summary) < 1e-9);
        assert_eq!(
            data.train_labels.iter().flatten().count(),
            bundle.split.labeled_train.len()
        );
        assert_eq!(
            data.validation.inputs[2].rows(),
            bundle.split.validation.len()
        );
    }

    #[test]
    fn validation_inputs_match_full_propagation() {
        let bundle = generate_sbm(&SbmPreset::Small.config(), 2).unwrap();
        let data = prepare(&bundle, settings()).unwrap();
        let full = precompute_stack(
            &data.val_view.graph,
            NormKind::SYMMETRIC,
            &data.val_view.features,
            3,
            Backend::Sgc,
        )
        .unwrap();
        let want = full.order_input(3).unwrap().select_rows(&data.val_nodes);
        assert_eq!(want, data.validation.inputs[2]);
    }

    #[test]
    fn test_inference_uses_the_test_view() {
        let bundle = generate_sbm(&SbmPreset::Small.config(), 3).unwrap();
        let data = prepare(&bundle, settings()).unwrap();
        let spec = ClassifierSpec::linear();
        let cfg = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let teacher = data.train_base(&spec, &cfg).unwrap();
        let dcfg = DistillConfig {
            offline_epochs: 20,
            online_epochs: 5,
            ..Default::default()
        };
        let bank = data.distill(&spec, &teacher, &dcfg, true).unwrap();
        let engine = data.test_view.engine(&bank).unwrap();
        let van = engine
            .infer_vanilla(3, &data.test_nodes, 500, ExecutionMode::Sequential)
            .unwrap();
        let direct = data.test_accuracy(&bank, 3).unwrap();
        assert_eq!(van.accuracy(&data.test_labels).unwrap(), direct);
        let nai = engine
            .infer(
                &NapConfig::new(0.0, 3, 3),
                &data.test_nodes,
                ExecutionMode::Sequential,
            )
            .unwrap();
        assert_eq!(nai.predictions(), van.predictions());
    }
}
