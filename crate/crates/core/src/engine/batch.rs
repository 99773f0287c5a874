use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::Result;
use crate::matrix::{argmax, Matrix};
use crate::metering::{KernelEvent, MacsTrace};
use crate::propagation::{
    average_into, distance_unchecked, layered_support, Backend, SumAccumulator, SupportLayers,
};
use crate::train::softmax_rows;

use super::{Engine, ExitRecord, NapConfig};

/// Rows per hop below which the hop runs on the calling thread.
const PARALLEL_ROWS: usize = 256;

pub(super) struct BatchRun {
    pub records: Vec<ExitRecord>,
    pub trace: MacsTrace,
    pub fp_time: Duration,
    /// `profile[l - 1][pos]`, filled only when requested.
    pub profile: Vec<Vec<f64>>,
}

/// Adjacency of the outermost support layer in local ids (positions in the
/// sorted layer).
struct LocalGraph {
    nodes: Vec<usize>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl LocalGraph {
    fn build(engine: &Engine<'_>, support: &SupportLayers) -> Self {
        let nodes = support.layer(0).to_vec();
        let inner = support.layer(1);
        let mut offsets = vec![0; nodes.len() + 1];
        let mut targets = Vec::new();
        let mut next_inner = 0;
        for (li, &u) in nodes.iter().enumerate() {
            if next_inner < inner.len() && inner[next_inner] == u {
                next_inner += 1;
                for &v in engine.graph.neighbors(u) {
                    let lv = nodes
                        .binary_search(&v)
                        .expect("neighbors of inner layers lie in the outer layer");
                    targets.push(lv);
                }
            }
            offsets[li + 1] = targets.len();
        }
        Self {
            nodes,
            offsets,
            targets,
        }
    }

    fn local(&self, v: usize) -> usize {
        self.nodes
            .binary_search(&v)
            .expect("node inside the support")
    }
}

/// Same accumulation order as the whole-graph kernel, so hops agree bit for
/// bit with a precomputed stack.
fn hop_local(engine: &Engine<'_>, lg: &LocalGraph, x: &Matrix, li: usize, out: &mut [f64]) {
    let coef = &engine.coef;
    let u = lg.nodes[li];
    let ri = coef.right[u];
    for (o, &v) in out.iter_mut().zip(x.row(li)) {
        *o = ri * v;
    }
    for &lj in &lg.targets[lg.offsets[li]..lg.offsets[li + 1]] {
        let rj = coef.right[lg.nodes[lj]];
        for (o, &v) in out.iter_mut().zip(x.row(lj)) {
            *o += rj * v;
        }
    }
    let l = coef.left[u];
    for o in out.iter_mut() {
        *o *= l;
    }
}

/// Per-node state the backend needs to build classifier inputs.
enum Combiner {
    Last,
    Mean(Vec<SumAccumulator>),
    Concat(Vec<Vec<f64>>),
}

pub(super) fn run(
    engine: &Engine<'_>,
    cfg: &NapConfig,
    batch: &[usize],
    profile: bool,
) -> Result<BatchRun> {
    let f = engine.features.cols();
    let fu = f as u64;
    let n_batch = batch.len();
    let checks = profile || cfg.t_min < cfg.t_max;
    let mut trace = MacsTrace::default();
    let mut fp_time = Duration::ZERO;

    let mut stationary = Matrix::zeros(if checks { n_batch } else { 0 }, f);
    if checks {
        for (pos, &v) in batch.iter().enumerate() {
            engine.summary.state_into(v, stationary.row_mut(pos));
        }
        trace.push(KernelEvent::Stationary {
            nodes: n_batch as u64,
            dim: fu,
        });
    }

    let mut support = layered_support(engine.graph, batch, cfg.t_max)?;
    let mut base = 0;
    let lg = LocalGraph::build(engine, &support);
    let mut prev = engine.features.select_rows(&lg.nodes);
    let mut cur = Matrix::zeros(lg.nodes.len(), f);
    let batch_local: Vec<usize> = batch.iter().map(|&v| lg.local(v)).collect();

    let mut combiner = match engine.bank.backend {
        Backend::Sgc => Combiner::Last,
        Backend::S2gc => Combiner::Mean((0..n_batch).map(|_| SumAccumulator::new(f)).collect()),
        Backend::Sign => Combiner::Concat(
            batch_local
                .iter()
                .map(|&li| prev.row(li).to_vec())
                .collect(),
        ),
    };

    let mut active: Vec<usize> = (0..n_batch).collect();
    let mut at_rebuild = n_batch;
    let mut records: Vec<Option<ExitRecord>> = vec![None; n_batch];
    let mut profile_out = if profile {
        vec![vec![0.0; n_batch]; cfg.t_max]
    } else {
        Vec::new()
    };

    for l in 1..=cfg.t_max {
        let t_fp = Instant::now();
        let rows: Vec<usize> = support
            .layer(l - base)
            .iter()
            .map(|&v| lg.local(v))
            .collect();
        let mut compact = vec![0.0; rows.len() * f];
        if f > 0 {
            if rows.len() >= PARALLEL_ROWS {
                compact
                    .par_chunks_mut(f)
                    .zip(rows.par_iter())
                    .for_each(|(dst, &li)| hop_local(engine, &lg, &prev, li, dst));
            } else {
                for (dst, &li) in compact.chunks_mut(f).zip(&rows) {
                    hop_local(engine, &lg, &prev, li, dst);
                }
            }
        }
        for (src, &li) in compact.chunks(f.max(1)).zip(&rows) {
            cur.row_mut(li).copy_from_slice(&src[..f]);
        }
        let edge_terms: u64 = rows
            .iter()
            .map(|&li| (lg.offsets[li + 1] - lg.offsets[li] + 1) as u64)
            .sum();
        trace.push(KernelEvent::Propagation {
            rows: rows.len() as u64,
            edge_terms,
            dim: fu,
        });

        match &mut combiner {
            Combiner::Last => {}
            Combiner::Mean(sums) => {
                for &pos in &active {
                    sums[pos].add(cur.row(batch_local[pos]));
                }
            }
            Combiner::Concat(hist) => {
                for &pos in &active {
                    hist[pos].extend_from_slice(cur.row(batch_local[pos]));
                }
            }
        }

        let mut exits: Vec<(usize, Option<f64>)> = Vec::new();
        let check_here = profile || (l >= cfg.t_min && l < cfg.t_max);
        if check_here {
            let mut kept = Vec::with_capacity(active.len());
            for &pos in &active {
                let d = distance_unchecked(
                    cfg.distance,
                    cur.row(batch_local[pos]),
                    stationary.row(pos),
                );
                if profile {
                    profile_out[l - 1][pos] = d;
                }
                if l >= cfg.t_min && l < cfg.t_max && d < cfg.ts {
                    exits.push((pos, Some(d)));
                } else {
                    kept.push(pos);
                }
            }
            trace.push(KernelEvent::Distance {
                comparisons: active.len() as u64,
                dim: fu,
            });
            active = kept;
        }
        fp_time += t_fp.elapsed();
        if l == cfg.t_max {
            exits.extend(active.drain(..).map(|pos| (pos, None)));
        }

        if !exits.is_empty() {
            exits.sort_unstable_by_key(|&(pos, _)| pos);
            let clf = engine.bank.classifier(l)?;
            let width = clf.input_width();
            let mut inputs = Matrix::zeros(exits.len(), width);
            for (row, &(pos, _)) in exits.iter().enumerate() {
                let dst = inputs.row_mut(row);
                match &combiner {
                    Combiner::Last => dst.copy_from_slice(cur.row(batch_local[pos])),
                    Combiner::Mean(sums) => average_into(sums[pos].as_slice(), l, dst),
                    Combiner::Concat(hist) => dst.copy_from_slice(&hist[pos]),
                }
            }
            let probs = softmax_rows(&clf.forward(&inputs)?, 1.0)?;
            for (row, &(pos, distance)) in exits.iter().enumerate() {
                let p = probs.row(row);
                let predicted = argmax(p);
                records[pos] = Some(ExitRecord {
                    node: batch[pos],
                    order: l,
                    distance,
                    predicted,
                    confidence: p[predicted],
                });
            }
            trace.push(KernelEvent::Classification {
                nodes: exits.len() as u64,
                macs_per_node: clf.macs_per_node(),
            });
        }

        if active.is_empty() {
            break;
        }
        if (at_rebuild - active.len()) * 4 >= at_rebuild {
            let targets: Vec<usize> = active.iter().map(|&pos| batch[pos]).collect();
            support = layered_support(engine.graph, &targets, cfg.t_max - l)?;
            base = l;
            at_rebuild = active.len();
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    Ok(BatchRun {
        records: records
            .into_iter()
            .map(|r| r.expect("every batch node exits"))
            .collect(),
        trace,
        fp_time,
        profile: profile_out,
    })
}
