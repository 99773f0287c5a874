use crate::error::{input, Result};
use crate::graph::Graph;

/// Nested node sets needed to propagate a batch `L` times:
/// `S_L` is the batch and `S_l = S_{l+1} ∪ N(S_{l+1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportLayers {
    /// `layers[l]` is `S_l`, sorted ascending.
    layers: Vec<Vec<usize>>,
}

impl SupportLayers {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        &self.layers[l]
    }

    pub fn targets(&self) -> &[usize] {
        &self.layers[self.depth()]
    }
}

/// Builds the layers by BFS rings around `batch`.
pub fn layered_support(g: &Graph, batch: &[usize], depth: usize) -> Result<SupportLayers> {
    if batch.is_empty() {
        return input("supporting-node sampling needs a nonempty batch");
    }
    if depth == 0 {
        return input("support depth must be at least 1");
    }
    if let Some(&bad) = batch.iter().find(|&&v| v >= g.n()) {
        return input(format!(
            "batch node {bad} is not in the graph ({} nodes)",
            g.n()
        ));
    }
    let mut seen = vec![false; g.n()];
    let mut current: Vec<usize> = batch.to_vec();
    current.sort_unstable();
    current.dedup();
    for &v in &current {
        seen[v] = true;
    }
    let mut frontier = current.clone();
    let mut layers = vec![current.clone()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        current.extend_from_slice(&next);
        current.sort_unstable();
        frontier = next;
        layers.push(current.clone());
    }
    layers.reverse();
    Ok(SupportLayers { layers })
}
