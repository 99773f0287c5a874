//! MACs accounting and wall-clock benchmarking.
//!
//! Counting rules: one multiply-add is one MAC. A propagation hop over rows
//! `S` costs `Σ_{i∈S} (deg(i)+1)·f`; a stationary row and a distance each
//! cost `f`; classifying a node costs `Σ in·out` over the classifier layers.
//! The one-time stationary summary (`n·f`) is reported on its own line and
//! is not part of the total.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{input, NaiError, Result};

/// One executed kernel, as emitted by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelEvent {
    /// Stationary rows for `nodes` nodes of width `dim`.
    Stationary {
        nodes: u64,
        dim: u64,
    },
    /// One hop over `rows` rows touching `edge_terms = Σ (deg+1)` inputs.
    Propagation {
        rows: u64,
        edge_terms: u64,
        dim: u64,
    },
    Distance {
        comparisons: u64,
        dim: u64,
    },
    Classification {
        nodes: u64,
        macs_per_node: u64,
    },
    /// One-time summary over `nodes` nodes.
    Summary {
        nodes: u64,
        dim: u64,
    },
}

/// Append-only kernel log. Per-thread traces are merged with [`MacsTrace::merge`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacsTrace {
    pub events: Vec<KernelEvent>,
}

impl MacsTrace {
    pub fn push(&mut self, e: KernelEvent) {
        self.events.push(e);
    }

    pub fn merge(&mut self, other: MacsTrace) {
        self.events.extend(other.events);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacsBreakdown {
    pub stationary: u64,
    pub propagation: u64,
    pub distance: u64,
    pub classification: u64,
    /// One-time stationary summary, amortized and excluded from `total`.
    pub summary: u64,
    /// Nodes the counts are averaged over.
    pub nodes: u64,
}

impl MacsBreakdown {
    pub fn total(&self) -> u64 {
        self.stationary + self.propagation + self.distance + self.classification
    }

    /// Propagation plus distance.
    pub fn feature_processing(&self) -> u64 {
        self.propagation + self.distance
    }

    fn per_node(&self, v: u64) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            v as f64 / self.nodes as f64
        }
    }

    pub fn total_per_node(&self) -> f64 {
        self.per_node(self.total())
    }

    pub fn feature_processing_per_node(&self) -> f64 {
        self.per_node(self.feature_processing())
    }

    pub fn add(&mut self, o: &MacsBreakdown) {
        self.stationary += o.stationary;
        self.propagation += o.propagation;
        self.distance += o.distance;
        self.classification += o.classification;
        self.summary += o.summary;
        self.nodes += o.nodes;
    }
}

/// Applies the counting rules to a trace.
pub fn meter_macs(trace: &MacsTrace, nodes: u64) -> Result<MacsBreakdown> {
    let mut b = MacsBreakdown {
        nodes,
        ..Default::default()
    };
    for (i, e) in trace.events.iter().enumerate() {
        match *e {
            KernelEvent::Stationary { nodes, dim } => b.stationary += nodes * dim,
            KernelEvent::Propagation {
                rows,
                edge_terms,
                dim,
            } => {
                if edge_terms < rows {
                    return input(format!(
                        "trace event {i}: {edge_terms} edge terms for {rows} rows (each row has a self term)"
                    ));
                }
                b.propagation += edge_terms * dim;
            }
            KernelEvent::Distance { comparisons, dim } => b.distance += comparisons * dim,
            KernelEvent::Classification {
                nodes,
                macs_per_node,
            } => b.classification += nodes * macs_per_node,
            KernelEvent::Summary { nodes, dim } => b.summary += nodes * dim,
        }
    }
    Ok(b)
}

/// Mean and spread of repeated runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub total_mean: Duration,
    pub total_std: Duration,
    /// Propagation plus distance time.
    pub fp_mean: Duration,
    pub fp_std: Duration,
    pub repetitions: usize,
    pub batch_size: usize,
    pub nodes: usize,
}

impl TimingReport {
    fn per_node_ms(&self, d: Duration) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            d.as_secs_f64() * 1e3 / self.nodes as f64
        }
    }

    pub fn total_ms_per_node(&self) -> f64 {
        self.per_node_ms(self.total_mean)
    }

    pub fn fp_ms_per_node(&self) -> f64 {
        self.per_node_ms(self.fp_mean)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Times `run` on a single-threaded pool. `run` returns the feature
/// processing time it measured itself; the total is measured around it.
pub fn benchmark<F>(
    repetitions: usize,
    warmup: usize,
    batch_size: usize,
    nodes: usize,
    mut run: F,
) -> Result<TimingReport>
where
    F: FnMut() -> Result<Duration> + Send,
{
    if repetitions == 0 {
        return input("benchmark needs at least one repetition");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| NaiError::Config(format!("cannot build benchmark pool: {e}")))?;
    let (totals, fps) = pool.install(|| -> Result<(Vec<f64>, Vec<f64>)> {
        for _ in 0..warmup {
            run()?;
        }
        let mut totals = Vec::with_capacity(repetitions);
        let mut fps = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t0 = Instant::now();
            let fp = run()?;
            let total = t0.elapsed();
            totals.push(total.as_secs_f64());
            fps.push(fp.min(total).as_secs_f64());
        }
        Ok((totals, fps))
    })?;
    let (tm, ts) = mean_std(&totals);
    let (fm, fs) = mean_std(&fps);
    Ok(TimingReport {
        total_mean: Duration::from_secs_f64(tm),
        total_std: Duration::from_secs_f64(ts),
        fp_mean: Duration::from_secs_f64(fm),
        fp_std: Duration::from_secs_f64(fs),
        repetitions,
        batch_size,
        nodes,
    })
}

/// Per-node measurements of one inference method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: String,
    /// Accuracy in percent.
    pub acc: f64,
    /// Millions of MACs per node.
    pub mmacs: f64,
    pub fp_mmacs: f64,
    /// Milliseconds per node.
    pub time_ms: f64,
    pub fp_time_ms: f64,
}

impl MethodResult {
    pub fn new(
        method: impl Into<String>,
        accuracy: f64,
        macs: &MacsBreakdown,
        timing: &TimingReport,
    ) -> Self {
        Self {
            method: method.into(),
            acc: accuracy * 100.0,
            mmacs: macs.total_per_node() / 1e6,
            fp_mmacs: macs.feature_processing_per_node() / 1e6,
            time_ms: timing.total_ms_per_node(),
            fp_time_ms: timing.fp_ms_per_node(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub result: MethodResult,
    /// Vanilla time over this method's time.
    pub ratio_time: f64,
    /// Vanilla FP MACs over this method's FP MACs.
    pub ratio_fp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub const VANILLA: &str = "vanilla";

pub fn comparison_table(results: &[MethodResult]) -> Result<ComparisonTable> {
    let Some(base) = results.iter().find(|r| r.method == VANILLA) else {
        return input("comparison table needs a row named \"vanilla\"");
    };
    let rows = results
        .iter()
        .map(|r| ComparisonRow {
            result: r.clone(),
            ratio_time: base.time_ms / r.time_ms,
            ratio_fp: base.fp_mmacs / r.fp_mmacs,
        })
        .collect();
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub const CSV_HEADER: &'static str =
        "method,acc,mmacs,fp_mmacs,time_ms,fp_time_ms,ratio_time,ratio_fp";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for row in &self.rows {
            let r = &row.result;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.acc,
                r.mmacs,
                r.fp_mmacs,
                r.time_ms,
                r.fp_time_ms,
                row.ratio_time,
                row.ratio_fp
            );
        }
        s
    }

    /// Aligned text with ratios in brackets.
    pub fn render(&self) -> String {
        let header = [
            "method",
            "ACC (%)",
            "mMACs",
            "FP mMACs",
            "Time (ms)",
            "FP Time (ms)",
        ];
        let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
        for row in &self.rows {
            let r = &row.result;
            cells.push([
                r.method.clone(),
                format!("{:.2}", r.acc),
                format!("{:.4}", r.mmacs),
                format!("{:.4} ({:.0})", r.fp_mmacs, row.ratio_fp),
                format!("{:.4} ({:.1})", r.time_ms, row.ratio_time),
                format!("{:.4}", r.fp_time_ms),
            ]);
        }
        let mut widths = [0usize; 6];
        for c in &cells {
            for (w, s) in widths.iter_mut().zip(c) {
                *w = (*w).max(s.chars().count());
            }
        }
        let mut out = String::new();
        for c in &cells {
            let line: Vec<String> = c
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (s, w))| {
                    if i == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_hop() {
        let mut t = MacsTrace::default();
        t.push(KernelEvent::Propagation {
            rows: 2,
            edge_terms: 4,
            dim: 2,
        });
        assert_eq!(meter_macs(&t, 2).unwrap().propagation, 8);
    }

    #[test]
    fn linear_classifier_count() {
        let mut t = MacsTrace::default();
        t.push(KernelEvent::Classification {
            nodes: 10,
            macs_per_node: 12,
        });
        let b = meter_macs(&t, 10).unwrap();
        assert_eq!(b.classification, 120);
        assert_eq!(b.total(), 120);
        assert_eq!(b.total_per_node(), 12.0);
    }

    #[test]
    fn summary_is_not_in_total() {
        let mut t = MacsTrace::default();
        t.push(KernelEvent::Summary { nodes: 100, dim: 8 });
        t.push(KernelEvent::Stationary { nodes: 3, dim: 8 });
        t.push(KernelEvent::Distance {
            comparisons: 5,
            dim: 8,
        });
        let b = meter_macs(&t, 3).unwrap();
        assert_eq!(b.summary, 800);
        assert_eq!(b.total(), 24 + 40);
        assert_eq!(b.feature_processing(), 40);
    }

    #[test]
    fn malformed_trace() {
        let mut t = MacsTrace::default();
        t.push(KernelEvent::Propagation {
            rows: 3,
            edge_terms: 2,
            dim: 1,
        });
        assert!(meter_macs(&t, 3).is_err());
    }

    fn row(method: &str, fp: f64, time: f64) -> MethodResult {
        MethodResult {
            method: method.into(),
            acc: 80.0,
            mmacs: fp + 1.0,
            fp_mmacs: fp,
            time_ms: time,
            fp_time_ms: time / 2.0,
        }
    }

    #[test]
    fn ratios() {
        let t = comparison_table(&[
            row("vanilla", 243.5, 2.0),
            row("nai", 1.3, 0.5),
            row("nai2", 243.5, 2.0),
        ])
        .unwrap();
        assert_eq!(t.rows[0].ratio_fp, 1.0);
        assert_eq!(t.rows[1].ratio_fp.round(), 187.0);
        assert_eq!(t.rows[1].ratio_time, 4.0);
        assert_eq!(t.rows[2].ratio_time, 1.0);
        let csv = t.to_csv();
        assert!(csv.starts_with(ComparisonTable::CSV_HEADER));
        assert!(csv.contains("nai,80,2.3,1.3,0.5,0.25,4,187.30769"), "{csv}");
        assert_eq!(t.render().lines().count(), 4);
    }

    #[test]
    fn missing_vanilla() {
        assert!(comparison_table(&[row("nai", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn sleep_is_timed() {
        let d = Duration::from_millis(20);
        let r = benchmark(3, 1, 1, 1, || {
            std::thread::sleep(d);
            Ok(Duration::ZERO)
        })
        .unwrap();
        let ratio = r.total_mean.as_secs_f64() / d.as_secs_f64();
        assert!((0.8..1.2).contains(&ratio), "{ratio}");
        assert_eq!(r.fp_mean, Duration::ZERO);
    }

    #[test]
    fn noop_is_fast_and_errors_propagate() {
        let r = benchmark(5, 0, 1, 1, || Ok(Duration::ZERO)).unwrap();
        assert!(r.total_mean < Duration::from_millis(1));
        assert!(benchmark(0, 0, 1, 1, || Ok(Duration::ZERO)).is_err());
        assert!(benchmark(2, 0, 1, 1, || input::<Duration>("boom")).is_err());
    }
}
