//! WGAN-GP gradient penalty with its parameter gradient.
//!
//! The penalty is `mean_i (‖∇ₓ D(x̂ᵢ, cᵢ)‖₂ − 1)²`. Its derivative with
//! respect to critic parameters goes through the input gradient, so the
//! input gradient is recorded on the tape with [`Tape::grad_graph`] and the
//! penalty is then differentiated by an ordinary backward pass.

use crate::error::{Result, SabrError};
use crate::math::{Matrix, Tape, Var};
use crate::nn::{BoundMlp, Mlp};

/// Penalty node plus the per-row input-gradient norms (`n×1`).
#[derive(Debug, Clone, Copy)]
pub struct RecordedPenalty {
    pub penalty: Var,
    pub grad_norms: Var,
}

/// Builds `D(x̂ ⊕ cond)` on `tape`; `x_hat` must be a differentiable leaf.
pub fn critic_score(tape: &mut Tape, critic: &BoundMlp, x: Var, cond: Option<Var>) -> Result<Var> {
    let input = match cond {
        Some(c) => tape.concat_cols(x, c)?,
        None => x,
    };
    critic.forward(tape, input)
}

pub fn record_gradient_penalty(
    tape: &mut Tape,
    critic: &BoundMlp,
    x_hat: Var,
    cond: Option<Var>,
) -> Result<RecordedPenalty> {
    let scores = critic_score(tape, critic, x_hat, cond)?;
    if tape.value(scores).cols() != 1 {
        return Err(SabrError::dim(
            "gradient penalty",
            tape.value(scores).shape_str(),
            "n x 1 critic output",
        ));
    }
    // rows are independent, so the gradient of the sum gives each row's input gradient
    let total = tape.sum(scores);
    let grad = tape.grad_graph(total, &[x_hat])?[0];
    let grad_norms = tape.row_norm(grad);
    let dev = tape.add_scalar(grad_norms, -1.0);
    let sq = tape.square(dev);
    let penalty = tape.mean(sq);
    Ok(RecordedPenalty {
        penalty,
        grad_norms,
    })
}

/// Penalty value and its gradient with respect to every critic parameter
/// (same order as [`Mlp::params`]).
pub fn grad_penalty_value_and_grad(
    critic: &Mlp,
    x_hat: &Matrix,
    cond: Option<&Matrix>,
) -> Result<(f64, Vec<Matrix>)> {
    if let Some(c) = cond {
        if c.rows() != x_hat.rows() {
            return Err(SabrError::dim(
                "grad_penalty_value_and_grad",
                x_hat.shape_str(),
                c.shape_str(),
            ));
        }
    }
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape);
    let x = tape.var(x_hat.clone());
    let c = cond.map(|c| tape.constant(c.clone()));
    let rec = record_gradient_penalty(&mut tape, &bound, x, c)?;
    let grads = tape.backward(rec.penalty)?;
    let param_grads = bound
        .param_vars()
        .into_iter()
        .map(|v| grads.get_or_zeros(v, tape.value(v).shape()))
        .collect();
    Ok((tape.scalar(rec.penalty), param_grads))
}

/// Mean input-gradient norm of the critic at `x` (diagnostic).
pub fn mean_input_grad_norm(critic: &Mlp, x: &Matrix, cond: Option<&Matrix>) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = critic.bind_frozen(&mut tape);
    let xv = tape.var(x.clone());
    let c = cond.map(|c| tape.constant(c.clone()));
    let scores = critic_score(&mut tape, &bound, xv, c)?;
    let total = tape.sum(scores);
    let grads = tape.backward(total)?;
    Ok(grads.get_or_zeros(xv, x.shape()).row_norms().mean())
}
