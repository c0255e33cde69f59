//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule on the tape.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Comparison of analytic and numeric gradients for one call of [`check`].
#[derive(Clone, Debug)]
pub struct GradReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// Per input: `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-7)`.
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks d f / d inputs, where `f` builds a scalar from leaves bound to
/// `inputs`, with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &leaves)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| tape.grad(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(f(&tape, &leaves)?.item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x0;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        numeric.push(g);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff = a
                .data()
                .iter()
                .zip(n.data())
                .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            diff / a.max_abs().max(n.max_abs()).max(1e-7)
        })
        .collect();

    Ok(GradReport {
        analytic,
        numeric,
        rel_errors,
    })
}
