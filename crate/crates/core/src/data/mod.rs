//! Dataset files and the synthetic block-model generator.
//!
//! A dataset directory holds four files:
//!
//! * `edges.txt`: `u v` per line, optional `# nodes: N` header
//! * `features.naif`: `"NAIF"`, version `u32`, `n` `u64`, `f` `u64`, then
//!   `n·f` little-endian `f32` row-major
//! * `labels.txt`: one class id per line, `-1` for unlabeled, optional
//!   `# classes: C` header
//! * `split.txt`: sections `[labeled_train]`, `[unlabeled_train]`,
//!   `[validation]`, `[test]` with one node id per line

mod sbm;

pub use sbm::{generate_sbm, SbmConfig, SbmPreset, SplitFractions};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{input, Result};
use crate::graph::{build_graph, read_edge_list, write_edge_list, Graph, InductiveSplit};
use crate::matrix::Matrix;

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.naif";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLIT_FILE: &str = "split.txt";

const FEATURE_MAGIC: &[u8; 4] = b"NAIF";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub graph: Graph,
    pub features: Matrix,
    /// `None` marks an unlabeled node.
    pub labels: Vec<Option<usize>>,
    pub split: InductiveSplit,
    pub num_classes: usize,
}

impl DatasetBundle {
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.rows() != n {
            return input(format!(
                "feature matrix has {} rows but the graph has {n} nodes",
                self.features.rows()
            ));
        }
        if self.features.cols() == 0 {
            return input("feature dimension must be at least 1");
        }
        if self.labels.len() != n {
            return input(format!("{} labels for {n} nodes", self.labels.len()));
        }
        if self.num_classes < 2 {
            return input(format!(
                "need at least two classes, got {}",
                self.num_classes
            ));
        }
        if let Some(bad) = self
            .labels
            .iter()
            .flatten()
            .find(|&&c| c >= self.num_classes)
        {
            return input(format!("class id {bad} outside 0..{}", self.num_classes));
        }
        self.split.validate(n)?;
        for (name, set) in [
            ("labeled_train", &self.split.labeled_train),
            ("validation", &self.split.validation),
            ("test", &self.split.test),
        ] {
            if let Some(&v) = set.iter().find(|&&v| self.labels[v].is_none()) {
                return input(format!("node {v} in {name} has no label"));
            }
        }
        Ok(())
    }

    /// Labels of `nodes`, which must all be labeled.
    pub fn labels_of(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| match self.labels.get(v).copied().flatten() {
                Some(c) => Ok(c),
                None => input(format!("node {v} has no label")),
            })
            .collect()
    }
}

pub fn write_features<W: Write>(mut w: W, x: &Matrix) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(x.rows() as u64).to_le_bytes())?;
    w.write_all(&(x.cols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(x.as_slice().len() * 4);
    for &v in x.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<Matrix> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[..4] != FEATURE_MAGIC {
        return input("feature file does not start with NAIF");
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return input(format!("unsupported feature file version {version}"));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let f = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes")) as usize;
    let count = n
        .checked_mul(f)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| crate::NaiError::Input(format!("feature shape {n}x{f} overflows")))?;
    let mut buf = vec![0u8; count];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(n, f, data)
}

pub fn write_labels<W: Write>(
    mut w: W,
    labels: &[Option<usize>],
    num_classes: usize,
) -> Result<()> {
    writeln!(w, "# classes: {num_classes}")?;
    for l in labels {
        match l {
            Some(c) => writeln!(w, "{c}")?,
            None => writeln!(w, "-1")?,
        }
    }
    Ok(())
}

/// Labels plus the declared class count, if any.
pub fn read_labels<R: BufRead>(r: R) -> Result<(Vec<Option<usize>>, Option<usize>)> {
    let mut labels = Vec::new();
    let mut classes = None;
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("classes:") {
                classes = Some(
                    rest.trim()
                        .parse()
                        .or_else(|_| input(format!("labels line {}: bad class count", no + 1)))?,
                );
            }
            continue;
        }
        match t.parse::<i64>() {
            Ok(-1) => labels.push(None),
            Ok(c) if c >= 0 => labels.push(Some(c as usize)),
            _ => return input(format!("labels line {}: unknown class id {t:?}", no + 1)),
        }
    }
    Ok((labels, classes))
}

pub fn write_split<W: Write>(mut w: W, split: &InductiveSplit) -> Result<()> {
    for (name, set) in split.sections() {
        writeln!(w, "[{name}]")?;
        for v in set {
            writeln!(w, "{v}")?;
        }
    }
    Ok(())
}

pub fn read_split<R: BufRead>(r: R) -> Result<InductiveSplit> {
    let mut split = InductiveSplit::default();
    let mut section: Option<&mut Vec<usize>> = None;
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = Some(match name {
                "labeled_train" => &mut split.labeled_train,
                "unlabeled_train" => &mut split.unlabeled_train,
                "validation" => &mut split.validation,
                "test" => &mut split.test,
                other => return input(format!("split line {}: unknown section {other:?}", no + 1)),
            });
            continue;
        }
        let Some(dst) = section.as_deref_mut() else {
            return input(format!(
                "split line {}: node id before any section header",
                no + 1
            ));
        };
        match t.parse() {
            Ok(v) => dst.push(v),
            Err(_) => return input(format!("split line {}: bad node id {t:?}", no + 1)),
        }
    }
    Ok(split)
}

/// Reads and validates a dataset from its four files.
pub fn load_dataset(
    edges: &Path,
    features: &Path,
    labels: &Path,
    split: &Path,
) -> Result<DatasetBundle> {
    let list = read_edge_list(BufReader::new(File::open(edges)?))?;
    let x = read_features(BufReader::new(File::open(features)?))?;
    let (labels, declared) = read_labels(BufReader::new(File::open(labels)?))?;
    let split = read_split(BufReader::new(File::open(split)?))?;
    let n = list.node_count();
    if x.rows() != n {
        return input(format!(
            "feature file has {} rows but the edge list has {n} nodes",
            x.rows()
        ));
    }
    let graph = build_graph(&list.edges, n)?;
    let num_classes = match declared {
        Some(c) => c,
        None => labels.iter().flatten().max().map_or(0, |&m| m + 1),
    };
    let name = edges.parent().and_then(|p| p.file_name()).map_or_else(
        || "dataset".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let bundle = DatasetBundle {
        name,
        graph,
        features: x,
        labels,
        split,
        num_classes,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// [`load_dataset`] on the standard file names inside `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetBundle> {
    load_dataset(
        &dir.join(EDGES_FILE),
        &dir.join(FEATURES_FILE),
        &dir.join(LABELS_FILE),
        &dir.join(SPLIT_FILE),
    )
}

pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(dir.join(name))?))
    };
    let mut w = open(EDGES_FILE)?;
    write_edge_list(&bundle.graph, &mut w)?;
    w.flush()?;
    let mut w = open(FEATURES_FILE)?;
    write_features(&mut w, &bundle.features)?;
    w.flush()?;
    let mut w = open(LABELS_FILE)?;
    write_labels(&mut w, &bundle.labels, bundle.num_classes)?;
    w.flush()?;
    let mut w = open(SPLIT_FILE)?;
    write_split(&mut w, &bundle.split)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetBundle {
        DatasetBundle {
            name: "tiny".into(),
            graph: build_graph(&[(0, 1)], 2).unwrap(),
            features: Matrix::from_rows(&[vec![0.5, -1.25], vec![3.0, 1e-3f32 as f64]]).unwrap(),
            labels: vec![Some(0), Some(1)],
            split: InductiveSplit {
                labeled_train: vec![0],
                test: vec![1],
                ..Default::default()
            },
            num_classes: 2,
        }
    }

    #[test]
    fn two_node_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny");
        let b = tiny();
        write_dataset(&b, &path).unwrap();
        let back = load_dataset_dir(&path).unwrap();
        assert_eq!(back, b);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.features), bits(&b.features));
    }

    #[test]
    fn feature_rows_must_match_nodes() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        let three = Matrix::zeros(3, 2);
        write_features(
            File::create(dir.path().join(FEATURES_FILE)).unwrap(),
            &three,
        )
        .unwrap();
        let err = load_dataset_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "{err}");
    }

    #[test]
    fn unknown_class_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny(), dir.path()).unwrap();
        std::fs::write(dir.path().join(LABELS_FILE), "# classes: 2\n0\n5\n").unwrap();
        assert!(load_dataset_dir(dir.path()).is_err());
        std::fs::write(dir.path().join(LABELS_FILE), "0\n-3\n").unwrap();
        assert!(load_dataset_dir(dir.path()).is_err());
    }

    #[test]
    fn empty_features_rejected() {
        let mut b = tiny();
        b.features = Matrix::zeros(2, 0);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_dataset(&b, dir.path()),
            Err(crate::NaiError::Input(_))
        ));
    }

    #[test]
    fn sentinel_labels_survive() {
        let mut b = tiny();
        b.graph = build_graph(&[(0, 1), (1, 2)], 3).unwrap();
        b.features = Matrix::zeros(3, 1);
        b.labels = vec![Some(0), None, Some(1)];
        b.split = InductiveSplit {
            labeled_train: vec![0],
            unlabeled_train: vec![1],
            validation: vec![],
            test: vec![2],
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&b, dir.path()).unwrap();
        assert_eq!(
            load_dataset_dir(dir.path()).unwrap().labels,
            vec![Some(0), None, Some(1)]
        );
    }

    #[test]
    fn split_parsing_errors() {
        assert!(read_split("0\n".as_bytes()).is_err());
        assert!(read_split("[other]\n".as_bytes()).is_err());
        let s = read_split("[test]\n4\n[labeled_train]\n1\n2\n".as_bytes()).unwrap();
        assert_eq!(s.labeled_train, vec![1, 2]);
        assert_eq!(s.test, vec![4]);
    }
}
