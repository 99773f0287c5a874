//! Binary classifier checkpoints.
//!
//! Layout, all little-endian:
//! `"NAIC"`, version `u32`, kind tag `u32`, layer count `u32`, then per layer
//! rows `u64`, cols `u64`, `rows·cols` weights as `f64` row-major, `cols`
//! biases as `f64`; finally the propagation order `u32` and backend tag `u32`.

use std::io::{Read, Write};

use crate::error::{input, Result};
use crate::matrix::Matrix;
use crate::propagation::Backend;

use super::classifier::{Classifier, ClassifierKind, Dense};

const MAGIC: &[u8; 4] = b"NAIC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCheckpoint {
    pub classifier: Classifier,
    pub order: usize,
    pub backend: Backend,
}

pub fn write_classifier<W: Write>(
    mut w: W,
    c: &Classifier,
    order: usize,
    backend: Backend,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&c.kind().tag().to_le_bytes())?;
    w.write_all(&(c.layers().len() as u32).to_le_bytes())?;
    for layer in c.layers() {
        w.write_all(&(layer.weights.rows() as u64).to_le_bytes())?;
        w.write_all(&(layer.weights.cols() as u64).to_le_bytes())?;
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(order as u32).to_le_bytes())?;
    w.write_all(&backend.tag().to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_classifier<R: Read>(mut r: R) -> Result<ClassifierCheckpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return input("not a classifier checkpoint (bad magic)");
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return input(format!(
            "unsupported classifier checkpoint version {version}"
        ));
    }
    let kind = read_u32(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    if count == 0 || count > 64 {
        return input(format!("implausible layer count {count}"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.checked_mul(cols).is_none_or(|n| n > 1 << 32) {
            return input(format!("implausible layer shape {rows}x{cols}"));
        }
        let weights = Matrix::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?;
        let bias = read_f64s(&mut r, cols)?;
        layers.push(Dense { weights, bias });
    }
    let order = read_u32(&mut r)? as usize;
    let backend = Backend::from_tag(read_u32(&mut r)?)?;
    let classifier = Classifier::from_layers(layers)?;
    let expected = classifier.kind().tag();
    if kind != expected {
        return input(format!(
            "kind tag {kind} does not match a {}-layer classifier",
            classifier.layers().len()
        ));
    }
    debug_assert!(matches!(
        classifier.kind(),
        ClassifierKind::Linear | ClassifierKind::Mlp
    ));
    Ok(ClassifierCheckpoint {
        classifier,
        order,
        backend,
    })
}
