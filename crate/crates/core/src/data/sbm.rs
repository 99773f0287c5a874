use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Result};
use crate::graph::{build_graph, InductiveSplit};
use crate::matrix::Matrix;

use super::DatasetBundle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub labeled_train: f64,
    pub unlabeled_train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("labeled_train", self.labeled_train),
            ("unlabeled_train", self.unlabeled_train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return config(format!("split fraction {name}={v} outside [0, 1]"));
            }
        }
        let sum = self.labeled_train + self.unlabeled_train + self.validation + self.test;
        if sum > 1.0 + 1e-12 {
            return config(format!(
                "split fractions labeled_train + unlabeled_train + validation + test sum to {sum} > 1"
            ));
        }
        if self.labeled_train <= 0.0 {
            return config("split fraction labeled_train must be positive");
        }
        Ok(())
    }
}

/// Planted-partition graph with class-conditional Gaussian features.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    /// Distance of each class mean from the origin.
    pub mu: f64,
    pub sigma: f64,
    pub fractions: SplitFractions,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 2 {
            return config(format!("blocks must be at least 2, got {}", self.blocks));
        }
        if self.n < self.blocks {
            return config(format!(
                "n={} is smaller than blocks={}",
                self.n, self.blocks
            ));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return config(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if self.dim < self.blocks {
            return config(format!(
                "dim={} must be at least blocks={}",
                self.dim, self.blocks
            ));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 || !self.mu.is_finite() {
            return config(format!(
                "need sigma > 0 and finite mu, got sigma={} mu={}",
                self.sigma, self.mu
            ));
        }
        self.fractions.validate()
    }

    /// Non-fatal oddities of a valid configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.p_in == 0.0 && self.p_out == 0.0 {
            w.push("p_in and p_out are both 0: the graph has no edges".to_string());
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbmPreset {
    Small,
    FourK,
}

impl SbmPreset {
    pub const NAMES: [&'static str; 2] = ["sbm-small", "sbm-4k"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sbm-small" => Ok(SbmPreset::Small),
            "sbm-4k" => Ok(SbmPreset::FourK),
            other => config(format!(
                "unknown preset {other:?}, expected one of {:?}",
                Self::NAMES
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SbmPreset::Small => "sbm-small",
            SbmPreset::FourK => "sbm-4k",
        }
    }

    pub fn config(self) -> SbmConfig {
        let fractions = SplitFractions {
            labeled_train: 0.1,
            unlabeled_train: 0.4,
            validation: 0.15,
            test: 0.35,
        };
        match self {
            SbmPreset::Small => SbmConfig {
                n: 400,
                blocks: 4,
                p_in: 0.1,
                p_out: 0.01,
                dim: 16,
                mu: 1.0,
                sigma: 1.0,
                fractions,
            },
            SbmPreset::FourK => SbmConfig {
                n: 4000,
                blocks: 4,
                p_in: 0.02,
                p_out: 0.002,
                dim: 32,
                mu: 0.7,
                sigma: 1.0,
                fractions,
            },
        }
    }
}

/// `k` orthonormal columns of width `dim` from Gram-Schmidt on Gaussian
/// vectors.
fn random_orthonormal(dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Deterministic per seed. Blocks are balanced and contiguous; every node
/// pair is drawn independently. Features are stored at `f32` precision.
/// Nodes in `unlabeled_train` carry no label.
pub fn generate_sbm(cfg: &SbmConfig, seed: u64) -> Result<DatasetBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n;
    let class: Vec<usize> = (0..n).map(|i| i * cfg.blocks / n).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class[u] == class[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = build_graph(&edges, n)?;

    let means = random_orthonormal(cfg.dim, cfg.blocks, &mut rng);
    let mut x = Matrix::zeros(n, cfg.dim);
    for i in 0..n {
        let mean = &means[class[i]];
        for (j, dst) in x.row_mut(i).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *dst = (cfg.mu * mean[j] + cfg.sigma * noise) as f32 as f64;
        }
    }

    let fr = cfg.fractions;
    let mut split = InductiveSplit::default();
    for c in 0..cfg.blocks {
        let mut members: Vec<usize> = (0..n).filter(|&i| class[i] == c).collect();
        members.shuffle(&mut rng);
        let size = members.len() as f64;
        let take = |f: f64| (size * f).floor() as usize;
        let counts = [
            take(fr.labeled_train).max(1),
            take(fr.unlabeled_train),
            take(fr.validation),
            take(fr.test),
        ];
        let mut it = members.into_iter();
        for (dst, count) in [
            &mut split.labeled_train,
            &mut split.unlabeled_train,
            &mut split.validation,
            &mut split.test,
        ]
        .into_iter()
        .zip(counts)
        {
            dst.extend(it.by_ref().take(count));
        }
    }
    for set in [
        &mut split.labeled_train,
        &mut split.unlabeled_train,
        &mut split.validation,
        &mut split.test,
    ] {
        set.sort_unstable();
    }

    let mut labels: Vec<Option<usize>> = class.into_iter().map(Some).collect();
    for &v in &split.unlabeled_train {
        labels[v] = None;
    }
    let bundle = DatasetBundle {
        name: format!("sbm-n{n}-b{}-s{seed}", cfg.blocks),
        graph,
        features: x,
        labels,
        split,
        num_classes: cfg.blocks,
    };
    bundle.validate()?;
    Ok(bundle)
}
