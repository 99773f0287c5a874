//! Self-attention ensemble teacher.
//!
//! For one node with member logits `z_l` (`l = k−r+1..k`):
//!
//! ```text
//! y_l = softmax(z_l)
//! m_l = δ(y_l · s)
//! w   = softmax(m)
//! z̄   = softmax(Σ_l w_l y_l)      // Σ_l w_l z_l with TeacherMix::Logits
//! p̄   = softmax(z̄ / T)
//! ```
//!
//! The scorer `s` has one weight per class.

use std::fmt;
use std::str::FromStr;

use crate::error::{config, input, NaiError, Result};
use crate::train::{softmax_backward, tempered_softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-a).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, m: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - m * m,
            Activation::Sigmoid => m * (1.0 - m),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for Activation {
    type Err = NaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => config(format!("unknown activation {other:?}")),
        }
    }
}

/// What the attention weights mix before the outer softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMix {
    /// Member probabilities (softmax applied twice).
    Probabilities,
    /// Member logits.
    Logits,
}

impl fmt::Display for TeacherMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeacherMix::Probabilities => "probs",
            TeacherMix::Logits => "logits",
        })
    }
}

impl FromStr for TeacherMix {
    type Err = NaiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" | "probabilities" => Ok(TeacherMix::Probabilities),
            "logits" => Ok(TeacherMix::Logits),
            other => config(format!("unknown teacher mix {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScorer {
    pub weights: Vec<f64>,
    pub activation: Activation,
}

impl AttentionScorer {
    /// All-zero scorer: every member gets the same attention weight.
    pub fn zeros(classes: usize, activation: Activation) -> Self {
        Self {
            weights: vec![0.0; classes],
            activation,
        }
    }
}

/// Teacher quantities for one node, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    /// `softmax(z_l)` per member.
    pub member_probs: Vec<Vec<f64>>,
    /// `δ(y_l · s)` per member.
    pub scores: Vec<f64>,
    /// Attention weights `w_l`.
    pub weights: Vec<f64>,
    /// `z̄`.
    pub teacher: Vec<f64>,
    /// `p̄ = softmax(z̄ / T)`.
    pub probs: Vec<f64>,
}

/// Ensemble teacher of one node from its member logits, ordered from the
/// lowest member order to `k`.
pub fn ensemble_teacher(
    scorer: &AttentionScorer,
    member_logits: &[&[f64]],
    temperature: f64,
    mix: TeacherMix,
) -> Result<EnsembleOutput> {
    if member_logits.is_empty() {
        return input("ensemble teacher needs at least one member");
    }
    let c = scorer.weights.len();
    if let Some(bad) = member_logits.iter().find(|z| z.len() != c) {
        return input(format!(
            "member logits have {} classes, scorer expects {c}",
            bad.len()
        ));
    }
    let member_probs: Vec<Vec<f64>> = member_logits
        .iter()
        .map(|z| tempered_softmax(z, 1.0))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = member_probs
        .iter()
        .map(|y| scorer.activation.apply(dot(y, &scorer.weights)))
        .collect();
    let weights = tempered_softmax(&scores, 1.0)?;
    let mut mixed = vec![0.0; c];
    for (l, &w) in weights.iter().enumerate() {
        let src: &[f64] = match mix {
            TeacherMix::Probabilities => &member_probs[l],
            TeacherMix::Logits => member_logits[l],
        };
        for (m, &v) in mixed.iter_mut().zip(src) {
            *m += w * v;
        }
    }
    let teacher = tempered_softmax(&mixed, 1.0)?;
    let probs = tempered_softmax(&teacher, temperature)?;
    Ok(EnsembleOutput {
        member_probs,
        scores,
        weights,
        teacher,
        probs,
    })
}

/// Pulls `dL/dp̄` back to the scorer weights and to each member's logits.
/// Returns `(dL/ds, [dL/dz_l])`.
pub fn ensemble_teacher_backward(
    scorer: &AttentionScorer,
    member_logits: &[&[f64]],
    out: &EnsembleOutput,
    temperature: f64,
    mix: TeacherMix,
    grad_probs: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let c = scorer.weights.len();
    let g_teacher: Vec<f64> = softmax_backward(&out.probs, grad_probs)
        .into_iter()
        .map(|v| v / temperature)
        .collect();
    let g_mixed = softmax_backward(&out.teacher, &g_teacher);
    let sources: Vec<&[f64]> = match mix {
        TeacherMix::Probabilities => out.member_probs.iter().map(Vec::as_slice).collect(),
        TeacherMix::Logits => member_logits.to_vec(),
    };
    let g_weights: Vec<f64> = sources.iter().map(|u| dot(&g_mixed, u)).collect();
    let g_scores = softmax_backward(&out.weights, &g_weights);

    let mut g_scorer = vec![0.0; c];
    let mut g_logits = Vec::with_capacity(member_logits.len());
    for (l, &g_score) in g_scores.iter().enumerate() {
        let g_pre = g_score * scorer.activation.derivative_from_output(out.scores[l]);
        let y = &out.member_probs[l];
        for (gs, &yv) in g_scorer.iter_mut().zip(y) {
            *gs += g_pre * yv;
        }
        let mut g_y: Vec<f64> = scorer.weights.iter().map(|&s| g_pre * s).collect();
        if mix == TeacherMix::Probabilities {
            for (gy, &gm) in g_y.iter_mut().zip(&g_mixed) {
                *gy += out.weights[l] * gm;
            }
        }
        let mut g_z = softmax_backward(y, &g_y);
        if mix == TeacherMix::Logits {
            for (gz, &gm) in g_z.iter_mut().zip(&g_mixed) {
                *gz += out.weights[l] * gm;
            }
        }
        g_logits.push(g_z);
    }
    (g_scorer, g_logits)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::gradient_check;

    #[test]
    fn identical_members_ignore_weights() {
        let z = [0.3, -0.4, 1.1];
        let scorer = AttentionScorer {
            weights: vec![0.9, -2.0, 0.4],
            activation: Activation::Tanh,
        };
        let out = ensemble_teacher(&scorer, &[&z, &z, &z], 1.0, TeacherMix::Probabilities).unwrap();
        let y = tempered_softmax(&z, 1.0).unwrap();
        let expected = tempered_softmax(&y, 1.0).unwrap();
        for (a, b) in out.teacher.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_scorer_is_uniform_attention() {
        let scorer = AttentionScorer::zeros(2, Activation::Tanh);
        let out = ensemble_teacher(
            &scorer,
            &[&[1.0, 0.0], &[0.0, 3.0], &[-1.0, 2.0]],
            1.5,
            TeacherMix::Probabilities,
        )
        .unwrap();
        for w in &out.weights {
            assert_eq!(*w, 1.0 / 3.0);
        }
    }

    #[test]
    fn two_member_scalar_chain() {
        // Hand-unrolled scalar arithmetic for two members and two classes.
        let z1 = [0.0, 2f64.ln()]; // y1 = (1/3, 2/3)
        let z2 = [3f64.ln(), 0.0]; // y2 = (3/4, 1/4)
        let s = [1.0, -1.0];
        let t = 2.0;
        let scorer = AttentionScorer {
            weights: s.to_vec(),
            activation: Activation::Tanh,
        };
        let out = ensemble_teacher(&scorer, &[&z1, &z2], t, TeacherMix::Probabilities).unwrap();

        let m1 = (1.0f64 / 3.0 - 2.0 / 3.0).tanh();
        let m2 = (0.75f64 - 0.25).tanh();
        let w1 = m1.exp() / (m1.exp() + m2.exp());
        let w2 = 1.0 - w1;
        let mix0 = w1 / 3.0 + w2 * 0.75;
        let mix1 = w1 * 2.0 / 3.0 + w2 * 0.25;
        let zb0 = mix0.exp() / (mix0.exp() + mix1.exp());
        let zb1 = 1.0 - zb0;
        let p0 = (zb0 / t).exp() / ((zb0 / t).exp() + (zb1 / t).exp());

        assert!((out.weights[0] - w1).abs() < 1e-14);
        assert!((out.teacher[0] - zb0).abs() < 1e-14);
        assert!((out.probs[0] - p0).abs() < 1e-14);
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn member_width_mismatch() {
        let scorer = AttentionScorer::zeros(3, Activation::Tanh);
        assert!(ensemble_teacher(&scorer, &[&[1.0, 2.0]], 1.0, TeacherMix::Probabilities).is_err());
        assert!(ensemble_teacher(&scorer, &[], 1.0, TeacherMix::Probabilities).is_err());
    }

    /// Finite-difference check of the backward pass for a linear functional
    /// of `p̄`, over scorer weights and member logits jointly.
    #[test]
    fn backward_matches_finite_differences() {
        for (mix, act) in [
            (TeacherMix::Probabilities, Activation::Tanh),
            (TeacherMix::Logits, Activation::Tanh),
            (TeacherMix::Probabilities, Activation::Sigmoid),
        ] {
            let r = 3;
            let c = 4;
            let g = [0.7, -1.3, 0.2, 2.1];
            let t = 1.3;
            let loss = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                let scorer = AttentionScorer {
                    weights: p[..c].to_vec(),
                    activation: act,
                };
                let members: Vec<&[f64]> = (0..r).map(|l| &p[c + l * c..c + (l + 1) * c]).collect();
                let out = ensemble_teacher(&scorer, &members, t, mix)?;
                let value = dot(&out.probs, &g);
                let (gs, gz) = ensemble_teacher_backward(&scorer, &members, &out, t, mix, &g);
                let mut grad = gs;
                for z in gz {
                    grad.extend(z);
                }
                Ok((value, grad))
            };
            let params: Vec<f64> = (0..c + r * c)
                .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.4)
                .collect();
            let err = gradient_check(loss, &params, params.len(), 3).unwrap();
            assert!(err < 1e-5, "{mix:?}/{act:?}: {err}");
        }
    }
}
