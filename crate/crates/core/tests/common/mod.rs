#![allow(dead_code)]

use nai_core::distill::ClassifierBank;
use nai_core::graph::{build_graph, Graph, NormKind};
use nai_core::propagation::Backend;
use nai_core::train::{Classifier, ClassifierSpec};
use nai_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree plus every other pair with probability `p`.
pub fn connected_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    build_graph(&edges, n).unwrap()
}

/// Independent pairs with probability `p`; may be disconnected.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    build_graph(&edges, n).unwrap()
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// `D̃^(r-1) Ã D̃^(-r)` as a dense matrix, built from the edge list.
pub fn dense_operator(g: &Graph, r: f64) -> Matrix {
    let n = g.n();
    let mut a = Matrix::identity(n);
    for (u, v) in g.edges() {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j)).sum::<f64>())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) * deg[i].powf(r - 1.0) * deg[j].powf(-r);
            a.set(i, j, v);
        }
    }
    a
}

pub fn dense_power_apply(op: &Matrix, x: &Matrix, times: usize) -> Matrix {
    let mut cur = x.clone();
    for _ in 0..times {
        cur = op.matmul(&cur);
    }
    cur
}

/// Bank of untrained classifiers, enough to exercise inference.
pub fn random_bank(
    backend: Backend,
    norm: NormKind,
    f: usize,
    k: usize,
    classes: usize,
    seed: u64,
) -> ClassifierBank {
    let mut r = rng(seed);
    let spec = ClassifierSpec::linear();
    let cls: Vec<Classifier> = (1..=k)
        .map(|l| Classifier::new(&spec, backend.input_width(l, f), classes, &mut r))
        .collect();
    ClassifierBank::new(backend, norm, cls, vec![None; k]).unwrap()
}
