use crate::error::{input, Result};

/// How rows are compared against their stationary state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// Euclidean distance of the rows as they are.
    #[default]
    Raw,
    /// Both rows are scaled to unit l2 norm first. Zero rows stay zero.
    RowNormalized,
}

/// `‖x_l − x_∞‖₂` on raw rows.
pub fn smoothness_distance(x_l: &[f64], x_inf: &[f64]) -> Result<f64> {
    smoothness_distance_with(DistanceMode::Raw, x_l, x_inf)
}

pub fn smoothness_distance_with(mode: DistanceMode, x_l: &[f64], x_inf: &[f64]) -> Result<f64> {
    if x_l.len() != x_inf.len() {
        return input(format!(
            "distance between rows of length {} and {}",
            x_l.len(),
            x_inf.len()
        ));
    }
    Ok(distance_unchecked(mode, x_l, x_inf))
}

#[inline]
pub(crate) fn distance_unchecked(mode: DistanceMode, a: &[f64], b: &[f64]) -> f64 {
    match mode {
        DistanceMode::Raw => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceMode::RowNormalized => {
            let scale = |v: &[f64]| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            };
            let (sa, sb) = (scale(a), scale(b));
            a.iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x * sa - y * sb;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        }
    }
}
