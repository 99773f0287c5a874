//! Closed-form limit of repeated propagation.
//!
//! Within a connected component `c` the limit operator is rank one:
//! `Â^∞_{ij} = (d_i+1)^r (d_j+1)^{1-r} / (2 m_c + n_c)`. The summary keeps the
//! weighted feature sum `S_c` and mass `M_c` so a node's stationary row costs
//! `O(f)`.

use crate::error::{input, Result};
use crate::graph::{Graph, GraphExtension, NormKind};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySummary {
    r: f64,
    /// Component label per node.
    labels: Vec<usize>,
    degrees: Vec<usize>,
    /// `(d_i + 1)^r`.
    row_coef: Vec<f64>,
    /// `M_c = 2 m_c + n_c`.
    mass: Vec<f64>,
    /// `S_c = Σ_{j∈c} (d_j+1)^{1-r} x_j`, one row per component.
    sums: Matrix,
}

impl StationarySummary {
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.sums.cols()
    }

    pub fn component_count(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self, c: usize) -> f64 {
        self.mass[c]
    }

    pub fn weighted_sum(&self, c: usize) -> &[f64] {
        self.sums.row(c)
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn component_of(&self, node: usize) -> usize {
        self.labels[node]
    }

    /// Writes node `i`'s stationary row into `out` without bounds checks on
    /// the node id.
    #[inline]
    pub(crate) fn state_into(&self, i: usize, out: &mut [f64]) {
        let c = self.labels[i];
        let scale = self.row_coef[i] / self.mass[c];
        for (o, &s) in out.iter_mut().zip(self.sums.row(c)) {
            *o = scale * s;
        }
    }

    /// Largest relative deviation between two summaries over masses and sums.
    /// Returns infinity when their shapes differ.
    pub fn max_relative_diff(&self, other: &StationarySummary) -> f64 {
        if self.labels != other.labels
            || self.mass.len() != other.mass.len()
            || self.sums.cols() != other.sums.cols()
        {
            return f64::INFINITY;
        }
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
        let m = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(&a, &b)| rel(a, b))
            .fold(0.0, f64::max);
        self.sums
            .as_slice()
            .iter()
            .zip(other.sums.as_slice())
            .map(|(&a, &b)| rel(a, b))
            .fold(m, f64::max)
    }
}

/// Builds the per-component summary from scratch in `O(n f)`.
pub fn stationary_summary(g: &Graph, norm: NormKind, x: &Matrix) -> Result<StationarySummary> {
    if x.rows() != g.n() {
        return input(format!(
            "feature matrix has {} rows but the graph has {} nodes",
            x.rows(),
            g.n()
        ));
    }
    let r = norm.r();
    let comps = g.components();
    let f = x.cols();
    let mut sums = Matrix::zeros(comps.count(), f);
    let mut row_coef = Vec::with_capacity(g.n());
    for j in 0..g.n() {
        let d1 = (g.degree(j) + 1) as f64;
        row_coef.push(d1.powf(r));
        let w = d1.powf(1.0 - r);
        let dst = sums.row_mut(comps.label(j));
        for (s, &v) in dst.iter_mut().zip(x.row(j)) {
            *s += w * v;
        }
    }
    let mass = comps
        .node_counts
        .iter()
        .zip(&comps.edge_counts)
        .map(|(&nc, &mc)| (2 * mc + nc) as f64)
        .collect();
    Ok(StationarySummary {
        r,
        labels: comps.labels.clone(),
        degrees: g.degrees(),
        row_coef,
        mass,
        sums,
    })
}

/// Stationary row of node `i`: `(d_i+1)^r / M_c · S_c`.
pub fn stationary_state(s: &StationarySummary, i: usize) -> Result<Vec<f64>> {
    if i >= s.n() {
        return input(format!(
            "node {i} is not covered by the summary ({} nodes)",
            s.n()
        ));
    }
    let mut out = vec![0.0; s.dim()];
    s.state_into(i, &mut out);
    Ok(out)
}

/// Incrementally updates a summary after [`extend_graph`](crate::graph::extend_graph).
///
/// `features` holds the rows of every node of the extended graph; rows of
/// pre-existing nodes are read only for nodes whose degree changed.
pub fn update_summary(
    s: &StationarySummary,
    ext: &GraphExtension,
    features: &Matrix,
) -> Result<StationarySummary> {
    let g = &ext.graph;
    if ext.old_n != s.n() {
        return input(format!(
            "extension starts from {} nodes but the summary covers {}",
            ext.old_n,
            s.n()
        ));
    }
    if ext.merge.old_to_new.len() != s.component_count() {
        return input("component merge plan does not match the summary");
    }
    if features.rows() != g.n() || features.cols() != s.dim() {
        return input(format!(
            "features are {}x{}, expected {}x{}",
            features.rows(),
            features.cols(),
            g.n(),
            s.dim()
        ));
    }
    let r = s.r;
    let f = s.dim();
    let comps = g.components();
    let mut sums = Matrix::zeros(ext.merge.new_count, f);
    for c in 0..s.component_count() {
        let dst = ext.merge.old_to_new[c];
        for (a, &b) in sums.row_mut(dst).iter_mut().zip(s.sums.row(c)) {
            *a += b;
        }
    }

    let mut degrees = s.degrees.clone();
    let mut row_coef = s.row_coef.clone();
    for &(j, old, new) in &ext.delta.changes {
        if j >= s.n() || degrees[j] != old || g.degree(j) != new {
            return input(format!(
                "degree delta for node {j} does not match the graph"
            ));
        }
        let w = ((new + 1) as f64).powf(1.0 - r) - ((old + 1) as f64).powf(1.0 - r);
        let dst = sums.row_mut(comps.label(j));
        for (a, &v) in dst.iter_mut().zip(features.row(j)) {
            *a += w * v;
        }
        degrees[j] = new;
        row_coef[j] = ((new + 1) as f64).powf(r);
    }
    for j in ext.old_n..g.n() {
        let d1 = (g.degree(j) + 1) as f64;
        let w = d1.powf(1.0 - r);
        let dst = sums.row_mut(comps.label(j));
        for (a, &v) in dst.iter_mut().zip(features.row(j)) {
            *a += w * v;
        }
        degrees.push(g.degree(j));
        row_coef.push(d1.powf(r));
    }
    let mass = comps
        .node_counts
        .iter()
        .zip(&comps.edge_counts)
        .map(|(&nc, &mc)| (2 * mc + nc) as f64)
        .collect();
    Ok(StationarySummary {
        r,
        labels: comps.labels.clone(),
        degrees,
        row_coef,
        mass,
        sums,
    })
}
