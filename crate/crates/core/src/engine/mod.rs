//! Node-adaptive propagation: each node of an inference batch is propagated
//! hop by hop and handed to the classifier of its current order as soon as
//! it is close enough to its stationary state.

mod batch;
mod sweep;

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::distill::ClassifierBank;
use crate::error::{config, input, Result};
use crate::graph::{Graph, HopCoefficients};
use crate::matrix::Matrix;
use crate::metering::{meter_macs, KernelEvent, MacsBreakdown, MacsTrace};
use crate::propagation::{DistanceMode, StationarySummary};

pub use sweep::{
    auto_ts_grid, pareto_front, rank_candidates, select_within, sweep, sweep_orders, Budget,
    Candidate, SweepGrid, DEFAULT_TS_QUANTILES,
};

pub const DEFAULT_BATCH_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NapConfig {
    /// Exit when the distance to the stationary state is strictly below this.
    pub ts: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub batch_size: usize,
    pub distance: DistanceMode,
}

impl NapConfig {
    pub fn new(ts: f64, t_min: usize, t_max: usize) -> Self {
        Self {
            ts,
            t_min,
            t_max,
            batch_size: DEFAULT_BATCH_SIZE,
            distance: DistanceMode::Raw,
        }
    }

    /// Fixed-order inference with the order-`k` classifier.
    pub fn vanilla(k: usize) -> Self {
        Self::new(0.0, k, k)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.ts.is_nan() || self.ts < 0.0 {
            return config(format!(
                "threshold T_s must be nonnegative, got {}",
                self.ts
            ));
        }
        if self.t_min < 1 || self.t_min > self.t_max {
            return config(format!(
                "need 1 <= T_min <= T_max, got T_min={} T_max={}",
                self.t_min, self.t_max
            ));
        }
        if self.t_max > k {
            return config(format!("T_max={} exceeds the bank order {k}", self.t_max));
        }
        if self.batch_size == 0 {
            return config("batch size must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRecord {
    pub node: usize,
    pub order: usize,
    /// Distance that triggered the exit; `None` for exits forced at `T_max`.
    pub distance: Option<f64>,
    pub predicted: usize,
    /// Largest class probability.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Timings {
    pub total: Duration,
    /// Propagation plus distance time, summed over batches.
    pub feature_processing: Duration,
}

#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    /// One record per requested node, in request order.
    pub records: Vec<ExitRecord>,
    pub macs: MacsBreakdown,
    pub trace: MacsTrace,
    pub timings: Timings,
}

impl InferenceOutcome {
    pub fn predictions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.predicted).collect()
    }

    pub fn histogram(&self, k: usize) -> Vec<usize> {
        exit_histogram(&self.records, k)
    }

    /// Fraction of records whose prediction matches `labels` (request order).
    pub fn accuracy(&self, labels: &[usize]) -> Result<f64> {
        if labels.len() != self.records.len() {
            return input(format!(
                "{} labels for {} predictions",
                labels.len(),
                self.records.len()
            ));
        }
        if labels.is_empty() {
            return Ok(0.0);
        }
        let hits = self
            .records
            .iter()
            .zip(labels)
            .filter(|(r, &y)| r.predicted == y)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Exit counts for orders `1..=k`; records beyond `k` are ignored.
pub fn exit_histogram(records: &[ExitRecord], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for r in records {
        if (1..=k).contains(&r.order) {
            counts[r.order - 1] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// Disjoint batches on the rayon pool. Results match sequential mode.
    Parallel,
}

/// Immutable inference state: the graph with every node that may be
/// queried, its raw features, the classifier bank and a current summary.
pub struct Engine<'a> {
    graph: &'a Graph,
    features: &'a Matrix,
    bank: &'a ClassifierBank,
    summary: &'a StationarySummary,
    coef: HopCoefficients,
}

impl<'a> Engine<'a> {
    pub fn new(
        graph: &'a Graph,
        features: &'a Matrix,
        bank: &'a ClassifierBank,
        summary: &'a StationarySummary,
    ) -> Result<Self> {
        bank.validate()?;
        if features.rows() != graph.n() {
            return input(format!(
                "feature matrix has {} rows but the graph has {} nodes",
                features.rows(),
                graph.n()
            ));
        }
        if features.cols() != bank.feature_width() {
            return config(format!(
                "bank expects {} feature columns for backend {}, data has {}",
                bank.feature_width(),
                bank.backend,
                features.cols()
            ));
        }
        if summary.r() != bank.norm.r() {
            return config(format!(
                "summary uses r={} but the bank was trained with r={}",
                summary.r(),
                bank.norm.r()
            ));
        }
        if summary.n() != graph.n()
            || summary.dim() != features.cols()
            || summary.degrees() != graph.degrees().as_slice()
        {
            return input("stationary summary is not current for this graph");
        }
        Ok(Self {
            graph,
            features,
            bank,
            summary,
            coef: HopCoefficients::new(graph, bank.norm),
        })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn bank(&self) -> &ClassifierBank {
        self.bank
    }

    /// Runs one batch through the adaptive pipeline.
    pub fn infer_batch(&self, cfg: &NapConfig, batch: &[usize]) -> Result<InferenceOutcome> {
        self.infer(
            &NapConfig {
                batch_size: batch.len().max(1),
                ..*cfg
            },
            batch,
            ExecutionMode::Sequential,
        )
    }

    /// Splits `nodes` into batches of `cfg.batch_size` and runs them.
    pub fn infer(
        &self,
        cfg: &NapConfig,
        nodes: &[usize],
        mode: ExecutionMode,
    ) -> Result<InferenceOutcome> {
        cfg.validate(self.bank.order())?;
        if nodes.is_empty() {
            return input("no nodes to infer");
        }
        if let Some(&bad) = nodes.iter().find(|&&v| v >= self.graph.n()) {
            return input(format!(
                "node {bad} is not in the graph ({} nodes)",
                self.graph.n()
            ));
        }
        let mut seen = vec![false; self.graph.n()];
        for &v in nodes {
            if std::mem::replace(&mut seen[v], true) {
                return input(format!("node {v} requested twice"));
            }
        }
        let t0 = Instant::now();
        let chunks: Vec<&[usize]> = nodes.chunks(cfg.batch_size).collect();
        let runs: Vec<Result<batch::BatchRun>> = match mode {
            ExecutionMode::Sequential => chunks
                .iter()
                .map(|b| batch::run(self, cfg, b, false))
                .collect(),
            ExecutionMode::Parallel => chunks
                .par_iter()
                .map(|b| batch::run(self, cfg, b, false))
                .collect(),
        };
        let mut records = Vec::with_capacity(nodes.len());
        let mut trace = MacsTrace::default();
        let mut fp = Duration::ZERO;
        for run in runs {
            let run = run?;
            records.extend(run.records);
            trace.merge(run.trace);
            fp += run.fp_time;
        }
        let total = t0.elapsed();
        trace.push(KernelEvent::Summary {
            nodes: self.summary.n() as u64,
            dim: self.features.cols() as u64,
        });
        let macs = meter_macs(&trace, nodes.len() as u64)?;
        Ok(InferenceOutcome {
            records,
            macs,
            trace,
            timings: Timings {
                total,
                feature_processing: fp,
            },
        })
    }

    /// Fixed-order inference with `f^(k)` over layered supports.
    pub fn infer_vanilla(
        &self,
        k: usize,
        nodes: &[usize],
        batch_size: usize,
        mode: ExecutionMode,
    ) -> Result<InferenceOutcome> {
        let cfg = NapConfig {
            batch_size,
            ..NapConfig::vanilla(k)
        };
        self.infer(&cfg, nodes, mode)
    }

    /// `d^(l)` of every node for `l = 1..=depth`; `out[l - 1][i]` belongs to
    /// `nodes[i]`.
    pub fn distance_profile(
        &self,
        nodes: &[usize],
        depth: usize,
        distance: DistanceMode,
    ) -> Result<Vec<Vec<f64>>> {
        let cfg = NapConfig {
            ts: 0.0,
            t_min: 1,
            t_max: depth,
            batch_size: DEFAULT_BATCH_SIZE,
            distance,
        };
        cfg.validate(self.bank.order())?;
        let mut out = vec![Vec::with_capacity(nodes.len()); depth];
        for b in nodes.chunks(cfg.batch_size) {
            let run = batch::run(self, &cfg, b, true)?;
            for (dst, src) in out.iter_mut().zip(run.profile) {
                dst.extend(src);
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`Engine::infer_batch`].
pub fn infer_batch(
    graph: &Graph,
    features: &Matrix,
    bank: &ClassifierBank,
    summary: &StationarySummary,
    cfg: &NapConfig,
    batch: &[usize],
) -> Result<InferenceOutcome> {
    Engine::new(graph, features, bank, summary)?.infer_batch(cfg, batch)
}
