use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Tape, Var};
use crate::error::{Error, Result};

/// Temperature, regularizer threshold (raw dot-product units) and regularizer weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcmHyper {
    pub tau: Float,
    pub delta: Float,
    pub alpha: Float,
}

impl Default for TcmHyper {
    fn default() -> Self {
        TcmHyper {
            tau: 0.07,
            delta: 0.0,
            alpha: 1.0,
        }
    }
}

impl TcmHyper {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_alpha(self.alpha)?;
        if !self.delta.is_finite() {
            return Err(Error::Hyper {
                name: "delta",
                message: format!("must be finite, got {}", self.delta),
            });
        }
        Ok(())
    }
}

fn check_tau(tau: Float) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Hyper {
            name: "tau",
            message: format!("must be a positive finite number, got {tau}"),
        })
    }
}

fn check_alpha(alpha: Float) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Hyper {
            name: "alpha",
            message: format!("must be non-negative, got {alpha}"),
        })
    }
}

/// Unnormalized dot product of two representation vectors.
pub fn similarity(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    tape.dot(u, v)
}

/// Mean cross-entropy of `inputs · labelsᵀ / τ` against `targets`.
pub fn matching_loss(
    tape: &mut Tape,
    inputs: Var,
    labels: Var,
    targets: &[usize],
    tau: Float,
) -> Result<Var> {
    check_tau(tau)?;
    let sims = tape.matmul_t(inputs, labels, false, true)?;
    let logits = tape.scale(sims, 1.0 / tau);
    tape.softmax_cross_entropy(logits, targets)
}

/// Mean over labels of `max(δ, max_{y'≠y} sim(t_y, t_y'))`.
pub fn regularization_loss(tape: &mut Tape, labels: Var, delta: Float) -> Result<Var> {
    let n = tape.shape(labels).first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::Config(format!(
            "the label regularizer needs at least 2 labels, got {n}"
        )));
    }
    let sims = tape.matmul_t(labels, labels, false, true)?;
    let nearest = tape.row_max_off_diag(sims)?;
    let hinged = tape.max_scalar(nearest, delta);
    Ok(tape.mean(hinged))
}

/// `L_m + α·L_r`.
pub fn total_loss(tape: &mut Tape, matching: Var, regularizer: Var, alpha: Float) -> Result<Var> {
    check_alpha(alpha)?;
    let r = tape.scale(regularizer, alpha);
    tape.add(matching, r)
}

/// The full objective for one batch. The regularizer is skipped when α = 0,
/// which leaves the value and gradients unchanged.
pub fn matching_objective(
    tape: &mut Tape,
    inputs: Var,
    labels: Var,
    targets: &[usize],
    hyper: &TcmHyper,
) -> Result<Var> {
    hyper.validate()?;
    let lm = matching_loss(tape, inputs, labels, targets, hyper.tau)?;
    if hyper.alpha == 0.0 {
        return Ok(lm);
    }
    let lr = regularization_loss(tape, labels, hyper.delta)?;
    total_loss(tape, lm, lr, hyper.alpha)
}
