//! Adversarial and reconstruction objectives, as plain functions over
//! scores and as tape operations for training.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::autograd::{Tape, Var};
use crate::composer::PlacementParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scores are clamped to `[SCORE_FLOOR, 1 − SCORE_FLOOR]` before any log.
pub const SCORE_FLOOR: f64 = 1e-7;

/// Per-component weights `[sin(t_r·π/2), cos(t_r·π/2), cos(t_r·π/2)]`: large
/// objects are judged on scale, small ones on position.
pub fn adaptive_weights(t_r: f64) -> [f64; 3] {
    let a = t_r * FRAC_PI_2;
    let (s, c) = (num_traits::Float::sin(a), num_traits::Float::cos(a));
    [s, c, c]
}

/// `Σ_k w_k(t)·(t_k − t_gt,k)²`.
pub fn reconstruction_loss(t: &PlacementParams, target: &PlacementParams) -> f64 {
    let w = adaptive_weights(t.t_r);
    t.to_array()
        .iter()
        .zip(target.to_array())
        .zip(w)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum()
}

fn check_scores(what: &str, scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
        Some(s) => Err(Error::Domain(format!("{what} score {s} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// `(mean log D(real), mean log(1 − D(fake)) + mean log(1 − D(G)))`, the
/// quantities the discriminator ascends. An empty score list contributes 0.
pub fn discriminator_losses(real: &[f64], fake: &[f64], generated: &[f64]) -> Result<(f64, f64)> {
    check_scores("real", real)?;
    check_scores("fake", fake)?;
    check_scores("generated", generated)?;
    let l_real = mean(real.iter().map(|s| s.ln()));
    let l_fake =
        mean(fake.iter().map(|s| (1.0 - s).ln())) + mean(generated.iter().map(|s| (1.0 - s).ln()));
    Ok((l_real, l_fake))
}

/// Generator descent objective `−mean log D(G) + λ·mean L_rec`.
pub fn generator_loss(
    generated: &[f64],
    t: &[PlacementParams],
    target: &[PlacementParams],
    rec_weight: f64,
) -> Result<f64> {
    check_scores("generated", generated)?;
    if t.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            t.len(),
            target.len()
        )));
    }
    let adv = -mean(generated.iter().map(|s| s.ln()));
    let rec = mean(t.iter().zip(target).map(|(a, b)| reconstruction_loss(a, b)));
    Ok(adv + rec_weight * rec)
}

/// Batch mean of the weighted reconstruction error of `t` (`B × 3`). The
/// weights are computed from the current values and carry no gradient.
pub fn reconstruction_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    t: Var,
    target: &[[f64; 3]],
) -> Result<Var> {
    let tv = tape.value(t);
    if tv.shape() != [target.len(), 3] {
        return Err(Error::Shape(format!(
            "parameters {:?} for {} targets",
            tv.shape(),
            target.len()
        )));
    }
    let weights: Vec<f64> = (0..target.len())
        .flat_map(|b| adaptive_weights(tv.get2(b, 0).f64()))
        .collect();
    let flat: Vec<f64> = target.iter().flatten().copied().collect();
    let goal = tape.constant(Tensor::from_f64(&[target.len(), 3], &flat)?);
    let w = tape.constant(Tensor::from_f64(&[target.len(), 3], &weights)?);
    let diff = tape.sub(t, goal)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = tape.mul(sq, w)?;
    let total = tape.sum(weighted);
    Ok(tape.affine(total, 1.0 / target.len() as f64, 0.0))
}

/// `mean log D` over clamped scores.
pub fn mean_log<T: Scalar>(tape: &mut Tape<T>, scores: Var) -> Var {
    let c = tape.clamp(scores, SCORE_FLOOR, 1.0 - SCORE_FLOOR);
    let l = tape.log(c);
    tape.mean(l)
}

/// `mean log(1 − D)` over clamped scores.
pub fn mean_log_complement<T: Scalar>(tape: &mut Tape<T>, scores: Var) -> Var {
    let c = tape.affine(scores, -1.0, 1.0);
    mean_log(tape, c)
}
