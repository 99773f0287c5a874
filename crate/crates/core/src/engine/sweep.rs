use std::cmp::Ordering;
use std::time::Duration;

use crate::error::{input, Result};
use crate::metering::MacsBreakdown;
use crate::propagation::DistanceMode;

use super::{Engine, ExecutionMode, NapConfig};

/// Cartesian grid of thresholds and order bounds. Points with
/// `T_min > T_max` are skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub ts: Vec<f64>,
    pub t_min: Vec<usize>,
    pub t_max: Vec<usize>,
}

impl SweepGrid {
    pub fn points(&self, batch_size: usize, distance: DistanceMode) -> Vec<NapConfig> {
        let mut out = Vec::new();
        for &t_max in &self.t_max {
            for &t_min in &self.t_min {
                if t_min > t_max {
                    continue;
                }
                for &ts in &self.ts {
                    out.push(NapConfig {
                        ts,
                        t_min,
                        t_max,
                        batch_size,
                        distance,
                    });
                }
            }
        }
        out
    }
}

/// Upper limits a candidate must respect, per node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Budget {
    pub max_macs_per_node: Option<f64>,
    pub max_fp_macs_per_node: Option<f64>,
    pub max_time_per_node: Option<Duration>,
}

impl Budget {
    fn admits(&self, c: &Candidate) -> bool {
        let nodes = c.macs.nodes.max(1) as u32;
        self.max_macs_per_node
            .is_none_or(|m| c.macs.total_per_node() <= m)
            && self
                .max_fp_macs_per_node
                .is_none_or(|m| c.macs.feature_processing_per_node() <= m)
            && self.max_time_per_node.is_none_or(|m| c.time / nodes <= m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: NapConfig,
    pub accuracy: f64,
    pub macs: MacsBreakdown,
    /// Exit counts for orders `1..=k`.
    pub histogram: Vec<usize>,
    pub time: Duration,
}

/// Best accuracy first, then fewer FP MACs, smaller `T_max`, larger `T_s`,
/// smaller `T_min`.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(
            a.macs
                .feature_processing()
                .cmp(&b.macs.feature_processing()),
        )
        .then(a.config.t_max.cmp(&b.config.t_max))
        .then(b.config.ts.total_cmp(&a.config.ts))
        .then(a.config.t_min.cmp(&b.config.t_min))
}

pub fn rank_candidates(cands: &mut [Candidate]) {
    cands.sort_by(rank);
}

/// Evaluates every grid point on labeled held-out nodes and returns the
/// admissible candidates in rank order.
pub fn sweep(
    engine: &Engine<'_>,
    grid: &SweepGrid,
    nodes: &[usize],
    labels: &[usize],
    budget: Option<&Budget>,
    batch_size: usize,
) -> Result<Vec<Candidate>> {
    let points = grid.points(batch_size, DistanceMode::Raw);
    if points.is_empty() {
        return input("sweep grid has no valid (T_s, T_min, T_max) point");
    }
    if nodes.len() != labels.len() {
        return input(format!(
            "{} validation labels for {} nodes",
            labels.len(),
            nodes.len()
        ));
    }
    let k = engine.bank().order();
    let mut out = Vec::with_capacity(points.len());
    for cfg in points {
        let outcome = engine.infer(&cfg, nodes, ExecutionMode::Sequential)?;
        let c = Candidate {
            config: cfg,
            accuracy: outcome.accuracy(labels)?,
            macs: outcome.macs,
            histogram: outcome.histogram(k),
            time: outcome.timings.total,
        };
        if budget.is_none_or(|b| b.admits(&c)) {
            out.push(c);
        }
    }
    rank_candidates(&mut out);
    Ok(out)
}

/// Candidates not dominated in (higher accuracy, fewer FP MACs), ordered by
/// FP MACs. Of exact duplicates only the best-ranked is kept.
pub fn pareto_front(cands: &[Candidate]) -> Vec<Candidate> {
    let mut ranked = cands.to_vec();
    rank_candidates(&mut ranked);
    let mut front: Vec<Candidate> = Vec::new();
    for c in ranked {
        let fp = c.macs.feature_processing();
        let dominated = cands.iter().any(|d| {
            let dfp = d.macs.feature_processing();
            d.accuracy >= c.accuracy && dfp <= fp && (d.accuracy > c.accuracy || dfp < fp)
        });
        let duplicate = front
            .iter()
            .any(|d| d.accuracy == c.accuracy && d.macs.feature_processing() == fp);
        if !dominated && !duplicate {
            front.push(c);
        }
    }
    front.sort_by(|a, b| {
        a.macs
            .feature_processing()
            .cmp(&b.macs.feature_processing())
            .then(b.accuracy.total_cmp(&a.accuracy))
    });
    front
}

/// Threshold grid from quantiles of the distances `d^(l)` observed on
/// `nodes` for `l` in `t_min..t_max`, plus `0`. Each threshold sits just
/// above its quantile. Sorted and deduplicated.
pub fn auto_ts_grid(
    engine: &Engine<'_>,
    nodes: &[usize],
    t_min: usize,
    t_max: usize,
    quantiles: &[f64],
) -> Result<Vec<f64>> {
    if t_min == 0 || t_min >= t_max {
        return Ok(vec![0.0]);
    }
    let profile = engine.distance_profile(nodes, t_max, DistanceMode::Raw)?;
    let mut pooled: Vec<f64> = profile[t_min - 1..t_max - 1]
        .iter()
        .flatten()
        .copied()
        .collect();
    pooled.sort_by(f64::total_cmp);
    let mut out = vec![0.0];
    if !pooled.is_empty() {
        for &q in quantiles {
            let q = q.clamp(0.0, 1.0);
            let idx = ((pooled.len() - 1) as f64 * q).round() as usize;
            out.push(pooled[idx] * (1.0 + 1e-9) + f64::MIN_POSITIVE);
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// The candidate with the fewest FP MACs whose accuracy is at least
/// `reference - tolerance`; ties go to the better-ranked one.
pub fn select_within(cands: &[Candidate], reference: f64, tolerance: f64) -> Option<&Candidate> {
    let mut best: Option<&Candidate> = None;
    for c in cands.iter().filter(|c| c.accuracy >= reference - tolerance) {
        let better = match best {
            None => true,
            Some(b) => {
                let (cf, bf) = (c.macs.feature_processing(), b.macs.feature_processing());
                cf < bf || (cf == bf && rank(c, b) == Ordering::Less)
            }
        };
        if better {
            best = Some(c);
        }
    }
    best
}

pub const DEFAULT_TS_QUANTILES: [f64; 11] =
    [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Sweeps every pair `T_min <= T_max` from the two lists. Each pair uses
/// `ts` when given and otherwise [`auto_ts_grid`] over `quantiles`.
/// Returns the admissible candidates in rank order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_orders(
    engine: &Engine<'_>,
    t_min: &[usize],
    t_max: &[usize],
    ts: Option<&[f64]>,
    quantiles: &[f64],
    nodes: &[usize],
    labels: &[usize],
    budget: Option<&Budget>,
    batch_size: usize,
) -> Result<Vec<Candidate>> {
    let pairs: Vec<(usize, usize)> = t_max
        .iter()
        .flat_map(|&hi| {
            t_min
                .iter()
                .filter(move |&&lo| lo <= hi)
                .map(move |&lo| (lo, hi))
        })
        .collect();
    if pairs.is_empty() {
        return input("sweep grid has no pair with T_min <= T_max");
    }
    let mut out = Vec::new();
    for (lo, hi) in pairs {
        let thresholds = match ts {
            Some(t) => t.to_vec(),
            None => auto_ts_grid(engine, nodes, lo, hi, quantiles)?,
        };
        let grid = SweepGrid {
            ts: thresholds,
            t_min: vec![lo],
            t_max: vec![hi],
        };
        out.extend(sweep(engine, &grid, nodes, labels, budget, batch_size)?);
    }
    rank_candidates(&mut out);
    Ok(out)
}
