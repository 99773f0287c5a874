//! Undirected graph storage, inductive splits, connected components and the
//! single-hop normalized propagation kernel.
//!
//! Self-loops are never stored. Every normalization uses `d_i + 1` so the
//! implicit self-loop of the renormalized adjacency is accounted for there.

use std::collections::{HashMap, VecDeque};
use std::io::BufRead;

use rayon::prelude::*;

use crate::error::{input, Result};
use crate::matrix::Matrix;

/// Convolution coefficient `r` of the normalized operator
/// `D̃^{r-1} Ã D̃^{-r}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormKind {
    r: f64,
}

impl NormKind {
    /// `D̃^{-1} Ã`, rows sum to one.
    pub const REVERSE_TRANSITION: NormKind = NormKind { r: 0.0 };
    /// `D̃^{-1/2} Ã D̃^{-1/2}`.
    pub const SYMMETRIC: NormKind = NormKind { r: 0.5 };
    /// `Ã D̃^{-1}`, columns sum to one.
    pub const TRANSITION: NormKind = NormKind { r: 1.0 };

    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return input(format!("convolution coefficient r={r} outside [0, 1]"));
        }
        Ok(Self { r })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "reverse-transition" => Ok(Self::REVERSE_TRANSITION),
            "symmetric" => Ok(Self::SYMMETRIC),
            "transition" => Ok(Self::TRANSITION),
            other => match other.parse::<f64>() {
                Ok(r) => Self::new(r),
                Err(_) => input(format!("unknown normalization {other:?}")),
            },
        }
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }
}

impl Default for NormKind {
    fn default() -> Self {
        Self::SYMMETRIC
    }
}

/// Connected-component labels with per-component node and edge tallies.
///
/// Labels are canonical: components are numbered in order of their smallest
/// node id, so two labelings of the same partition compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub labels: Vec<usize>,
    pub node_counts: Vec<usize>,
    pub edge_counts: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.node_counts.len()
    }

    #[inline]
    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }
}

/// How the components of a graph map onto the components after an extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentMerge {
    /// Old component label to new component label.
    pub old_to_new: Vec<usize>,
    pub new_count: usize,
}

/// Degree changes of pre-existing nodes caused by an extension.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DegreeDelta {
    /// `(node, old degree, new degree)`, sorted by node id.
    pub changes: Vec<(usize, usize, usize)>,
}

impl DegreeDelta {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

/// Result of [`extend_graph`].
#[derive(Debug, Clone)]
pub struct GraphExtension {
    pub graph: Graph,
    pub delta: DegreeDelta,
    pub merge: ComponentMerge,
    /// Node count before the extension; new nodes are `old_n..graph.n()`.
    pub old_n: usize,
}

/// Immutable undirected simple graph in CSR form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    m: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    components: ComponentLabeling,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

pub fn build_graph(edges: &[(usize, usize)], n: usize) -> Result<Graph> {
    build_graph_with_report(edges, n).map(|(g, _)| g)
}

/// Builds a symmetric, deduplicated CSR graph. Self-loop pairs are dropped and
/// counted in the report.
pub fn build_graph_with_report(edges: &[(usize, usize)], n: usize) -> Result<(Graph, BuildReport)> {
    let (pairs, report) = canonical_pairs(edges, n)?;
    let g = Graph::from_canonical(n, &pairs);
    Ok((g, report))
}

fn canonical_pairs(
    edges: &[(usize, usize)],
    n: usize,
) -> Result<(Vec<(usize, usize)>, BuildReport)> {
    let mut report = BuildReport::default();
    let mut pairs = Vec::with_capacity(edges.len());
    for (idx, &(u, v)) in edges.iter().enumerate() {
        if u >= n || v >= n {
            return input(format!(
                "edge {idx} ({u}, {v}) references a node id >= node count {n}"
            ));
        }
        if u == v {
            report.self_loops_dropped += 1;
            continue;
        }
        pairs.push((u.min(v), u.max(v)));
    }
    let before = pairs.len();
    pairs.sort_unstable();
    pairs.dedup();
    report.duplicates_dropped = before - pairs.len();
    Ok((pairs, report))
}

impl Graph {
    /// `pairs` must be sorted, deduplicated `(u, v)` with `u < v < n`.
    fn from_canonical(n: usize, pairs: &[(usize, usize)]) -> Graph {
        let mut g = Graph::from_canonical_without_components(n, pairs);
        g.components = connected_components(&g);
        g
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edge count, self-loops excluded.
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Component labels maintained alongside the adjacency.
    pub fn components(&self) -> &ComponentLabeling {
        &self.components
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Checks the CSR invariants. Used by tests and after deserialization.
    pub fn validate(&self) -> Result<()> {
        let mut degree_sum = 0;
        for u in 0..self.n {
            let row = self.neighbors(u);
            degree_sum += row.len();
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return input(format!("row {u} is not strictly sorted"));
                }
            }
            for &v in row {
                if v == u {
                    return input(format!("explicit self-loop stored at {u}"));
                }
                if !self.has_edge(v, u) {
                    return input(format!("edge ({u}, {v}) has no reverse"));
                }
            }
        }
        if degree_sum != 2 * self.m {
            return input(format!("degree sum {degree_sum} != 2m = {}", 2 * self.m));
        }
        Ok(())
    }
}

/// Labels connected components by BFS from scratch.
pub fn connected_components(g: &Graph) -> ComponentLabeling {
    const UNSET: usize = usize::MAX;
    let mut labels = vec![UNSET; g.n];
    let mut node_counts = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..g.n {
        if labels[start] != UNSET {
            continue;
        }
        let c = node_counts.len();
        labels[start] = c;
        queue.push_back(start);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in g.neighbors(u) {
                if labels[v] == UNSET {
                    labels[v] = c;
                    queue.push_back(v);
                }
            }
        }
        node_counts.push(size);
    }
    let mut edge_counts = vec![0; node_counts.len()];
    for (u, _) in g.edges() {
        edge_counts[labels[u]] += 1;
    }
    ComponentLabeling {
        labels,
        node_counts,
        edge_counts,
    }
}

/// Adds `new_nodes` nodes and `new_edges` to `g`. Component labels are merged
/// with a union-find over the old components rather than recomputed.
pub fn extend_graph(
    g: &Graph,
    new_nodes: usize,
    new_edges: &[(usize, usize)],
) -> Result<GraphExtension> {
    let old_n = g.n;
    let n = old_n + new_nodes;
    let (added, _) = canonical_pairs(new_edges, n)?;
    let added: Vec<(usize, usize)> = added
        .into_iter()
        .filter(|&(u, v)| !g.has_edge(u, v))
        .collect();

    let mut all: Vec<(usize, usize)> = g.edges().collect();
    all.extend_from_slice(&added);
    all.sort_unstable();

    let old = &g.components;
    let old_count = old.count();
    let mut uf = UnionFind::new(old_count + new_nodes);
    let element = |u: usize| {
        if u < old_n {
            old.labels[u]
        } else {
            old_count + (u - old_n)
        }
    };
    for &(u, v) in &added {
        uf.union(element(u), element(v));
    }

    // Canonical relabeling: first appearance in node order.
    let mut root_label: HashMap<usize, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for u in 0..n {
        let root = uf.find(element(u));
        let next = root_label.len();
        labels.push(*root_label.entry(root).or_insert(next));
    }
    let new_count = root_label.len();
    let mut old_to_new = vec![0; old_count];
    for (c, slot) in old_to_new.iter_mut().enumerate() {
        *slot = root_label[&uf.find(c)];
    }
    let mut node_counts = vec![0; new_count];
    for &l in &labels {
        node_counts[l] += 1;
    }
    let mut edge_counts = vec![0; new_count];
    for (c, &e) in old.edge_counts.iter().enumerate() {
        edge_counts[old_to_new[c]] += e;
    }
    for &(u, _) in &added {
        edge_counts[labels[u]] += 1;
    }

    let mut extended = Graph::from_canonical_without_components(n, &all);
    extended.components = ComponentLabeling {
        labels,
        node_counts,
        edge_counts,
    };

    let changes = (0..old_n)
        .filter_map(|u| {
            let (before, after) = (g.degree(u), extended.degree(u));
            (before != after).then_some((u, before, after))
        })
        .collect();

    Ok(GraphExtension {
        graph: extended,
        delta: DegreeDelta { changes },
        merge: ComponentMerge {
            old_to_new,
            new_count,
        },
        old_n,
    })
}

impl Graph {
    fn from_canonical_without_components(n: usize, pairs: &[(usize, usize)]) -> Graph {
        let mut counts = vec![0usize; n + 1];
        for &(u, v) in pairs {
            counts[u + 1] += 1;
            counts[v + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut targets = vec![0usize; 2 * pairs.len()];
        for &(u, v) in pairs {
            targets[cursor[u]] = v;
            cursor[u] += 1;
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        for i in 0..n {
            targets[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Graph {
            n,
            m: pairs.len(),
            offsets,
            targets,
            components: ComponentLabeling {
                labels: Vec::new(),
                node_counts: Vec::new(),
                edge_counts: Vec::new(),
            },
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Disjoint node sets of the inductive protocol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InductiveSplit {
    pub labeled_train: Vec<usize>,
    pub unlabeled_train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl InductiveSplit {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.labeled_train.is_empty() {
            return input("split has no labeled training nodes");
        }
        let mut owner = vec![None; n];
        for (name, set) in self.sections() {
            for &v in set {
                if v >= n {
                    return input(format!("split section {name} lists node {v} >= {n}"));
                }
                if let Some(prev) = owner[v] {
                    return input(format!("node {v} appears in both {prev} and {name}"));
                }
                owner[v] = Some(name);
            }
        }
        Ok(())
    }

    pub fn sections(&self) -> [(&'static str, &Vec<usize>); 4] {
        [
            ("labeled_train", &self.labeled_train),
            ("unlabeled_train", &self.unlabeled_train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    /// `V_train = V_l ∪ V_u`, sorted.
    pub fn train_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .labeled_train
            .iter()
            .chain(&self.unlabeled_train)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Old-to-new node id mapping of an induced subgraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub new_to_old: Vec<usize>,
    old_to_new: HashMap<usize, usize>,
}

impl IdMap {
    pub fn from_new_to_old(new_to_old: Vec<usize>) -> Self {
        let old_to_new = new_to_old
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, i))
            .collect();
        Self {
            new_to_old,
            old_to_new,
        }
    }

    pub fn to_new(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(&old).copied()
    }

    pub fn to_old(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }

    pub fn push(&mut self, old: usize) -> usize {
        let id = self.new_to_old.len();
        self.new_to_old.push(old);
        self.old_to_new.insert(old, id);
        id
    }
}

/// Training graph of the inductive protocol: the subgraph induced on
/// `V_train`. Only edges with both endpoints in `V_train` are kept.
pub fn induce_train_graph(g: &Graph, split: &InductiveSplit) -> Result<(Graph, IdMap)> {
    split.validate(g.n)?;
    let nodes = split.train_nodes();
    if nodes.is_empty() {
        return input("V_train is empty");
    }
    let map = IdMap::from_new_to_old(nodes);
    let mut pairs = Vec::new();
    for (new_u, &old_u) in map.new_to_old.iter().enumerate() {
        for &old_v in g.neighbors(old_u) {
            if old_v > old_u {
                if let Some(new_v) = map.to_new(old_v) {
                    pairs.push((new_u.min(new_v), new_u.max(new_v)));
                }
            }
        }
    }
    pairs.sort_unstable();
    Ok((Graph::from_canonical(map.len(), &pairs), map))
}

/// Rows a propagation hop must produce.
#[derive(Debug, Clone, Copy)]
pub enum Support<'a> {
    All,
    Nodes(&'a [usize]),
}

/// Per-node factors of the normalized operator: row `i` of `Â x` is
/// `left[i] · Σ_{j ∈ N(i) ∪ {i}} right[j] · x_j`.
#[derive(Debug, Clone)]
pub struct HopCoefficients {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl HopCoefficients {
    pub fn new(g: &Graph, norm: NormKind) -> Self {
        let r = norm.r();
        let mut left = Vec::with_capacity(g.n);
        let mut right = Vec::with_capacity(g.n);
        for i in 0..g.n {
            let d = (g.degree(i) + 1) as f64;
            left.push(d.powf(r - 1.0));
            right.push(d.powf(-r));
        }
        Self { left, right }
    }
}

/// One normalized hop for a single row. Accumulation order is the self term
/// followed by neighbors in CSR order, so every caller gets identical bits.
#[inline]
pub(crate) fn hop_row(g: &Graph, coef: &HopCoefficients, x: &Matrix, i: usize, out: &mut [f64]) {
    let ri = coef.right[i];
    for (o, &v) in out.iter_mut().zip(x.row(i)) {
        *o = ri * v;
    }
    for &j in g.neighbors(i) {
        let rj = coef.right[j];
        for (o, &v) in out.iter_mut().zip(x.row(j)) {
            *o += rj * v;
        }
    }
    let li = coef.left[i];
    for o in out.iter_mut() {
        *o *= li;
    }
}

/// Computes rows `rows` of `Â x` into the same rows of `out`.
pub(crate) fn hop_rows_into(
    g: &Graph,
    coef: &HopCoefficients,
    x: &Matrix,
    rows: &[usize],
    out: &mut Matrix,
) {
    let f = x.cols();
    if f == 0 || rows.is_empty() {
        return;
    }
    let mut compact = vec![0.0; rows.len() * f];
    compact
        .par_chunks_mut(f)
        .zip(rows.par_iter())
        .for_each(|(dst, &i)| hop_row(g, coef, x, i, dst));
    for (src, &i) in compact.chunks(f).zip(rows) {
        out.row_mut(i).copy_from_slice(src);
    }
}

/// `Â x` restricted to `support`. Rows outside the support are left zero.
pub fn propagate_hop(
    g: &Graph,
    norm: NormKind,
    x: &Matrix,
    support: Support<'_>,
) -> Result<Matrix> {
    if x.rows() != g.n {
        return input(format!(
            "feature matrix has {} rows but the graph has {} nodes",
            x.rows(),
            g.n
        ));
    }
    let coef = HopCoefficients::new(g, norm);
    Ok(propagate_with(g, &coef, x, support))
}

pub(crate) fn propagate_with(
    g: &Graph,
    coef: &HopCoefficients,
    x: &Matrix,
    support: Support<'_>,
) -> Matrix {
    let f = x.cols();
    let mut out = Matrix::zeros(g.n, f);
    match support {
        Support::All => {
            if f > 0 {
                out.as_mut_slice()
                    .par_chunks_mut(f)
                    .enumerate()
                    .for_each(|(i, dst)| hop_row(g, coef, x, i, dst));
            }
        }
        Support::Nodes(rows) => hop_rows_into(g, coef, x, rows, &mut out),
    }
    out
}

/// Parsed edge-list file: `u v` per line, `#` comments. A `# nodes: N`
/// comment, when present, declares the node count.
#[derive(Debug, Clone, Default)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize)>,
    pub declared_nodes: Option<usize>,
}

impl EdgeList {
    /// Declared node count, or one past the largest id.
    pub fn node_count(&self) -> usize {
        self.declared_nodes.unwrap_or_else(|| {
            self.edges
                .iter()
                .map(|&(u, v)| u.max(v) + 1)
                .max()
                .unwrap_or(0)
        })
    }
}

pub fn read_edge_list<R: BufRead>(reader: R) -> Result<EdgeList> {
    let mut list = EdgeList::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("nodes:") {
                match rest.trim().parse() {
                    Ok(n) => list.declared_nodes = Some(n),
                    Err(_) => return input(format!("line {}: bad node count", lineno + 1)),
                }
            }
            continue;
        }
        let mut it = t.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            match tok.map(str::parse::<usize>) {
                Some(Ok(v)) => Ok(v),
                _ => input(format!(
                    "line {}: expected two node ids, got {t:?}",
                    lineno + 1
                )),
            }
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return input(format!("line {}: trailing tokens in {t:?}", lineno + 1));
        }
        list.edges.push((u, v));
    }
    Ok(list)
}

pub fn write_edge_list<W: std::io::Write>(g: &Graph, mut w: W) -> Result<()> {
    writeln!(w, "# nodes: {}", g.n)?;
    for (u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    Ok(())
}
