use std::fmt;
use std::str::FromStr;

use crate::error::{input, NaiError, Result};
use crate::graph::{propagate_with, Graph, HopCoefficients, NormKind, Support};
use crate::matrix::Matrix;

use super::support::layered_support;

/// Linear-propagation model family. Decides what the order-`l` classifier
/// sees: the hop itself, the running mean of hops, or their concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    /// `X^(l)`.
    Sgc,
    /// `(1/l) Σ_{t=1..l} X^(t)`.
    S2gc,
    /// `[X^(0) ‖ X^(1) ‖ … ‖ X^(l)]`.
    Sign,
}

impl Backend {
    /// Classifier input width at order `l` for raw width `f`.
    pub fn input_width(self, l: usize, f: usize) -> usize {
        match self {
            Backend::Sgc | Backend::S2gc => f,
            Backend::Sign => (l + 1) * f,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Backend::Sgc => 0,
            Backend::S2gc => 1,
            Backend::Sign => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Backend::Sgc),
            1 => Ok(Backend::S2gc),
            2 => Ok(Backend::Sign),
            t => input(format!("unknown backend tag {t}")),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Sgc => "sgc",
            Backend::S2gc => "s2gc",
            Backend::Sign => "sign",
        })
    }
}

impl FromStr for Backend {
    type Err = NaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgc" => Ok(Backend::Sgc),
            "s2gc" => Ok(Backend::S2gc),
            "sign" => Ok(Backend::Sign),
            other => Err(NaiError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Running sum of hops for the S2GC mean. Both the stack and the inference
/// engine accumulate through this type so their averages agree bit for bit.
#[derive(Debug, Clone)]
pub(crate) struct SumAccumulator {
    sum: Vec<f64>,
}

impl SumAccumulator {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, row: &[f64]) {
        for (s, &v) in self.sum.iter_mut().zip(row) {
            *s += v;
        }
    }

    #[inline]
    pub(crate) fn as_slice(&self) -> &[f64] {
        &self.sum
    }
}

/// `out = sum / count`.
#[inline]
pub(crate) fn average_into(sum: &[f64], count: usize, out: &mut [f64]) {
    let c = count as f64;
    for (o, &s) in out.iter_mut().zip(sum) {
        *o = s / c;
    }
}

/// Hops `X^(0..k)` of every node plus the backend's per-order classifier
/// inputs.
#[derive(Debug, Clone)]
pub struct PropagatedStack {
    backend: Backend,
    norm: NormKind,
    hops: Vec<Matrix>,
    /// Classifier inputs for orders `1..=k` (index 0 unused) when they differ
    /// from the raw hop.
    combined: Vec<Matrix>,
}

impl PropagatedStack {
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn order(&self) -> usize {
        self.hops.len() - 1
    }

    /// `X^(l)`, `X^(0)` being the raw features.
    pub fn hop(&self, l: usize) -> &Matrix {
        &self.hops[l]
    }

    /// What the order-`l` classifier consumes, `1 ≤ l ≤ k`.
    pub fn order_input(&self, l: usize) -> Result<&Matrix> {
        if l == 0 || l > self.order() {
            return input(format!(
                "stack has orders 1..={}, requested {l}",
                self.order()
            ));
        }
        Ok(match self.backend {
            Backend::Sgc => &self.hops[l],
            Backend::S2gc | Backend::Sign => &self.combined[l],
        })
    }
}

/// Propagates `x` over the whole graph `k` times.
pub fn precompute_stack(
    g: &Graph,
    norm: NormKind,
    x: &Matrix,
    k: usize,
    backend: Backend,
) -> Result<PropagatedStack> {
    if k == 0 {
        return input("propagation order k must be at least 1");
    }
    if x.rows() != g.n() {
        return input(format!(
            "feature matrix has {} rows but the graph has {} nodes",
            x.rows(),
            g.n()
        ));
    }
    x.ensure_finite("input features")?;
    let coef = HopCoefficients::new(g, norm);
    let mut hops = Vec::with_capacity(k + 1);
    hops.push(x.clone());
    for l in 1..=k {
        let next = propagate_with(g, &coef, &hops[l - 1], Support::All);
        hops.push(next);
    }

    let combined = combine(backend, &hops)?;
    Ok(PropagatedStack {
        backend,
        norm,
        hops,
        combined,
    })
}

/// Hops `X^(0..k)` of `targets` only, computed over their layered support.
/// Row `i` of every matrix belongs to `targets[i]`; values equal the rows of
/// [`precompute_stack`] bit for bit.
pub fn target_stack(
    g: &Graph,
    norm: NormKind,
    x: &Matrix,
    targets: &[usize],
    k: usize,
    backend: Backend,
) -> Result<PropagatedStack> {
    if k == 0 {
        return input("propagation order k must be at least 1");
    }
    if x.rows() != g.n() {
        return input(format!(
            "feature matrix has {} rows but the graph has {} nodes",
            x.rows(),
            g.n()
        ));
    }
    x.ensure_finite("input features")?;
    let support = layered_support(g, targets, k)?;
    let coef = HopCoefficients::new(g, norm);
    let mut hops = Vec::with_capacity(k + 1);
    hops.push(x.select_rows(targets));
    let mut prev = x.clone();
    for l in 1..=k {
        let next = propagate_with(g, &coef, &prev, Support::Nodes(support.layer(l)));
        hops.push(next.select_rows(targets));
        prev = next;
    }
    let combined = combine(backend, &hops)?;
    Ok(PropagatedStack {
        backend,
        norm,
        hops,
        combined,
    })
}

fn combine(backend: Backend, hops: &[Matrix]) -> Result<Vec<Matrix>> {
    let k = hops.len() - 1;
    let n = hops[0].rows();
    let f = hops[0].cols();
    Ok(match backend {
        Backend::Sgc => Vec::new(),
        Backend::S2gc => {
            let mut sums: Vec<SumAccumulator> = (0..n).map(|_| SumAccumulator::new(f)).collect();
            let mut out = vec![Matrix::zeros(0, 0)];
            for (l, hop) in hops.iter().enumerate().skip(1) {
                let mut avg = Matrix::zeros(n, f);
                for (i, acc) in sums.iter_mut().enumerate() {
                    acc.add(hop.row(i));
                    average_into(acc.as_slice(), l, avg.row_mut(i));
                }
                out.push(avg);
            }
            out
        }
        Backend::Sign => {
            let mut out = vec![Matrix::zeros(0, 0)];
            for l in 1..=k {
                let parts: Vec<&Matrix> = hops[..=l].iter().collect();
                out.push(Matrix::hconcat(&parts)?);
            }
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn p2_features() -> Matrix {
        Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn p2_sgc_is_fixed_after_one_hop() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let s = precompute_stack(&g, NormKind::SYMMETRIC, &p2_features(), 3, Backend::Sgc).unwrap();
        for l in 1..=3 {
            for v in s.order_input(l).unwrap().as_slice() {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
        assert_eq!(s.hop(0), &p2_features());
    }

    #[test]
    fn sign_width_is_concatenation() {
        let g = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        let x = Matrix::from_vec(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let s = precompute_stack(&g, NormKind::SYMMETRIC, &x, 2, Backend::Sign).unwrap();
        assert_eq!(s.order_input(2).unwrap().cols(), 12);
        assert_eq!(s.order_input(1).unwrap().cols(), 8);
        assert_eq!(Backend::Sign.input_width(2, 4), 12);
    }

    #[test]
    fn isolated_node_is_constant_for_every_backend() {
        let g = build_graph(&[], 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.25, -2.0]]).unwrap();
        for backend in [Backend::Sgc, Backend::S2gc, Backend::Sign] {
            let s = precompute_stack(&g, NormKind::new(0.7).unwrap(), &x, 4, backend).unwrap();
            for l in 0..=4 {
                assert_eq!(s.hop(l), &x);
            }
            assert_eq!(s.order_input(3).unwrap().row(0)[..2], [0.25, -2.0]);
        }
    }

    #[test]
    fn s2gc_average_matches_stack_mean() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)], 4).unwrap();
        let x = Matrix::from_vec(4, 2, vec![1.0, -1.0, 0.5, 2.0, -0.3, 0.0, 4.0, 1.0]).unwrap();
        let s = precompute_stack(&g, NormKind::SYMMETRIC, &x, 5, Backend::S2gc).unwrap();
        for l in 1..=5 {
            let avg = s.order_input(l).unwrap();
            for i in 0..4 {
                for j in 0..2 {
                    let mean: f64 = (1..=l).map(|t| s.hop(t).get(i, j)).sum::<f64>() / l as f64;
                    assert!((avg.get(i, j) - mean).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_zero_order_and_nan() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        assert!(
            precompute_stack(&g, NormKind::SYMMETRIC, &p2_features(), 0, Backend::Sgc).is_err()
        );
        let mut bad = p2_features();
        bad.set(1, 1, f64::NAN);
        assert!(precompute_stack(&g, NormKind::SYMMETRIC, &bad, 2, Backend::Sgc).is_err());
    }

    #[test]
    fn order_input_bounds() {
        let g = build_graph(&[(0, 1)], 2).unwrap();
        let s = precompute_stack(&g, NormKind::SYMMETRIC, &p2_features(), 2, Backend::Sgc).unwrap();
        assert!(s.order_input(0).is_err());
        assert!(s.order_input(3).is_err());
    }

    #[test]
    fn backend_parse_roundtrip() {
        for b in [Backend::Sgc, Backend::S2gc, Backend::Sign] {
            assert_eq!(b.to_string().parse::<Backend>().unwrap(), b);
            assert_eq!(Backend::from_tag(b.tag()).unwrap(), b);
        }
        assert!("gamlp".parse::<Backend>().is_err());
    }

    #[test]
    fn target_rows_match_full_stack_bitwise() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (3, 4), (1, 4), (5, 6)], 8).unwrap();
        let x = Matrix::from_vec(8, 2, (0..16).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        for backend in [Backend::Sgc, Backend::S2gc, Backend::Sign] {
            let full = precompute_stack(&g, NormKind::SYMMETRIC, &x, 3, backend).unwrap();
            let targets = [4, 0, 6];
            let part = target_stack(&g, NormKind::SYMMETRIC, &x, &targets, 3, backend).unwrap();
            for l in 1..=3 {
                let want = full.order_input(l).unwrap().select_rows(&targets);
                let got = part.order_input(l).unwrap();
                assert_eq!(
                    want.as_slice()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>(),
                    got.as_slice()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                );
            }
        }
    }
}
