use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input, NaiError, Result};

const STEP: f64 = 1e-5;

/// Compares an analytic gradient against central finite differences.
///
/// `loss` returns the loss and its analytic gradient at the given parameters.
/// `probes` coordinates are sampled without replacement (all of them when
/// `probes` exceeds the parameter count). Returns the largest
/// `|analytic − numeric| / max(1e-8, |numeric|)`.
pub fn gradient_check<F>(loss: F, params: &[f64], probes: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if params.is_empty() {
        return input("gradient check on an empty parameter vector");
    }
    if params.iter().any(|p| !p.is_finite()) {
        return input("gradient check on non-finite parameters");
    }
    let (value, grad) = loss(params)?;
    if !value.is_finite() {
        return Err(NaiError::Numeric(format!(
            "loss is {value} at the base point"
        )));
    }
    if grad.len() != params.len() {
        return input(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = probes.min(params.len());
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for idx in sample(&mut rng, params.len(), count) {
        let orig = p[idx];
        p[idx] = orig + STEP;
        let (up, _) = loss(&p)?;
        p[idx] = orig - STEP;
        let (down, _) = loss(&p)?;
        p[idx] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NaiError::Numeric(format!(
                "loss not finite when probing parameter {idx}"
            )));
        }
        let numeric = (up - down) / (2.0 * STEP);
        let err = (grad[idx] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
