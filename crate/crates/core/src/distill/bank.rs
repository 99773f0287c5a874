//! Per-order classifier banks and their on-disk form.
//!
//! A bank directory holds `order_<l>.naic` for `l = 1..=k` plus a
//! `manifest.txt` of `key=value` lines.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{input, Result};
use crate::graph::NormKind;
use crate::propagation::Backend;
use crate::train::{read_classifier, write_classifier, Classifier};

use super::ensemble::{Activation, AttentionScorer};

const FORMAT: &str = "nai-bank/1";

/// Classifiers `f^(1..k)` sharing one propagation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    pub backend: Backend,
    pub norm: NormKind,
    /// `classifiers[l - 1]` is the order-`l` classifier.
    pub classifiers: Vec<Classifier>,
    /// Validation accuracy of each classifier when it was selected.
    pub val_acc: Vec<Option<f64>>,
    /// Ensemble scorer learned in the online phase.
    pub scorer: Option<AttentionScorer>,
}

impl ClassifierBank {
    pub fn new(
        backend: Backend,
        norm: NormKind,
        classifiers: Vec<Classifier>,
        val_acc: Vec<Option<f64>>,
    ) -> Result<Self> {
        let bank = Self {
            backend,
            norm,
            classifiers,
            val_acc,
            scorer: None,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn order(&self) -> usize {
        self.classifiers.len()
    }

    pub fn classes(&self) -> usize {
        self.classifiers[0].classes()
    }

    /// Raw feature width the bank was trained on.
    pub fn feature_width(&self) -> usize {
        let w = self.classifiers[0].input_width();
        match self.backend {
            Backend::Sign => w / 2,
            Backend::Sgc | Backend::S2gc => w,
        }
    }

    pub fn classifier(&self, l: usize) -> Result<&Classifier> {
        match l.checked_sub(1).and_then(|i| self.classifiers.get(i)) {
            Some(c) => Ok(c),
            None => input(format!(
                "bank has orders 1..={}, requested {l}",
                self.order()
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() {
            return input("classifier bank is empty");
        }
        if self.val_acc.len() != self.classifiers.len() {
            return input("one validation accuracy per classifier is required");
        }
        let f = self.feature_width();
        let c = self.classes();
        for (i, clf) in self.classifiers.iter().enumerate() {
            let l = i + 1;
            let want = self.backend.input_width(l, f);
            if clf.input_width() != want || clf.classes() != c {
                return input(format!(
                    "order-{l} classifier maps {} -> {}, expected {want} -> {c} for backend {}",
                    clf.input_width(),
                    clf.classes(),
                    self.backend
                ));
            }
        }
        if let Some(s) = &self.scorer {
            if s.weights.len() != c {
                return input(format!(
                    "scorer has {} weights for {c} classes",
                    s.weights.len()
                ));
            }
        }
        Ok(())
    }
}

/// Parsed `manifest.txt`. Keys the bank does not interpret are kept in
/// `extra`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BankManifest {
    pub entries: BTreeMap<String, String>,
}

impl BankManifest {
    pub fn get(&self, key: &str) -> Result<&str> {
        match self.entries.get(key) {
            Some(v) => Ok(v),
            None => input(format!("bank manifest lacks key {key:?}")),
        }
    }

    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return input(format!("manifest line {}: expected key=value", no + 1));
            };
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .or_else(|_| input(format!("manifest key {key:?}: bad number {v:?}")))
}

fn join_f64(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the bank plus caller-supplied `extra` manifest entries.
pub fn write_bank(
    dir: &Path,
    bank: &ClassifierBank,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    bank.validate()?;
    fs::create_dir_all(dir)?;
    for (i, clf) in bank.classifiers.iter().enumerate() {
        let f = File::create(dir.join(format!("order_{}.naic", i + 1)))?;
        let mut w = BufWriter::new(f);
        write_classifier(&mut w, clf, i + 1, bank.backend)?;
        w.flush()?;
    }
    let mut m = BTreeMap::new();
    m.insert("format".to_string(), FORMAT.to_string());
    m.insert("backend".to_string(), bank.backend.to_string());
    m.insert("r_coef".to_string(), bank.norm.r().to_string());
    m.insert("k".to_string(), bank.order().to_string());
    let acc: Vec<String> = bank
        .val_acc
        .iter()
        .map(|a| a.map_or_else(|| "none".to_string(), |v| v.to_string()))
        .collect();
    m.insert("val_acc".to_string(), acc.join(","));
    if let Some(s) = &bank.scorer {
        m.insert("scorer".to_string(), join_f64(s.weights.iter().copied()));
        m.insert("scorer_activation".to_string(), s.activation.to_string());
    }
    for (k, v) in extra {
        m.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let mut w = BufWriter::new(File::create(dir.join("manifest.txt"))?);
    for (k, v) in &m {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bank(dir: &Path) -> Result<(ClassifierBank, BankManifest)> {
    let manifest = BankManifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    if manifest.get("format")? != FORMAT {
        return input(format!(
            "unsupported bank format {:?}",
            manifest.get("format")?
        ));
    }
    let backend: Backend = manifest.get("backend")?.parse()?;
    let norm = NormKind::new(parse_f64("r_coef", manifest.get("r_coef")?)?)?;
    let k: usize = manifest
        .get("k")?
        .parse()
        .or_else(|_| input("manifest key \"k\" is not an integer"))?;
    let mut classifiers = Vec::with_capacity(k);
    for l in 1..=k {
        let path = dir.join(format!("order_{l}.naic"));
        let ck = read_classifier(BufReader::new(File::open(&path)?))?;
        if ck.order != l || ck.backend != backend {
            return input(format!(
                "{} holds order {} / {}, expected order {l} / {backend}",
                path.display(),
                ck.order,
                ck.backend
            ));
        }
        classifiers.push(ck.classifier);
    }
    let val_acc = manifest
        .get("val_acc")?
        .split(',')
        .map(|v| match v {
            "none" => Ok(None),
            v => parse_f64("val_acc", v).map(Some),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bank = ClassifierBank::new(backend, norm, classifiers, val_acc)?;
    if let Some(s) = manifest.entries.get("scorer") {
        let weights = s
            .split(',')
            .map(|v| parse_f64("scorer", v))
            .collect::<Result<Vec<_>>>()?;
        let activation: Activation = manifest.get("scorer_activation")?.parse()?;
        bank.scorer = Some(AttentionScorer {
            weights,
            activation,
        });
        bank.validate()?;
    }
    Ok((bank, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::ClassifierSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(backend: Backend) -> ClassifierBank {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = 4;
        let classifiers = (1..=3)
            .map(|l| {
                Classifier::new(
                    &ClassifierSpec::mlp(&[3]),
                    backend.input_width(l, f),
                    2,
                    &mut rng,
                )
            })
            .collect();
        ClassifierBank::new(
            backend,
            NormKind::SYMMETRIC,
            classifiers,
            vec![Some(0.5), None, Some(1.0 / 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = bank(Backend::Sign);
        b.scorer = Some(AttentionScorer {
            weights: vec![0.1 + 0.2, -1e-300],
            activation: Activation::Sigmoid,
        });
        let mut extra = BTreeMap::new();
        extra.insert("temperature".to_string(), "1.5".to_string());
        write_bank(dir.path(), &b, &extra).unwrap();
        let (back, manifest) = read_bank(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(manifest.get("temperature").unwrap(), "1.5");
        assert_eq!(back.feature_width(), 4);
    }

    #[test]
    fn width_mismatch_rejected() {
        let b = bank(Backend::Sgc);
        let mut classifiers = b.classifiers.clone();
        classifiers.swap(0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        classifiers[0] = Classifier::new(&ClassifierSpec::linear(), 7, 2, &mut rng);
        assert!(ClassifierBank::new(
            Backend::Sgc,
            NormKind::SYMMETRIC,
            classifiers,
            vec![None; 3]
        )
        .is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        write_bank(dir.path(), &bank(Backend::Sgc), &BTreeMap::new()).unwrap();
        fs::remove_file(dir.path().join("order_2.naic")).unwrap();
        assert!(matches!(read_bank(dir.path()), Err(crate::NaiError::Io(_))));
    }
}
