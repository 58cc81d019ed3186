//! Feed-forward networks with exact reverse-mode gradients and Adam.

mod adam;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use mlp::{Activation, Layer, MlpParams, MlpVars};
pub use tape::{inner, Gradients, Tape, Var};

use crate::error::Result;

/// A collection of flat parameter tensors.
pub trait Parameterized: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Parameters that can be placed on a [`Tape`] and read back as gradients.
pub trait Differentiable: Parameterized {
    type Vars;

    fn register(&self, tape: &mut Tape) -> Self::Vars;

    /// Gradient shaped like `self`; parameters that did not reach the
    /// output get zeros.
    fn collect_grads(&self, vars: &Self::Vars, grads: &Gradients) -> Self;
}

/// Value and exact gradient of a scalar loss built on a fresh tape.
pub fn grad<P, F>(params: &P, loss: F) -> Result<(f64, P)>
where
    P: Differentiable,
    F: FnOnce(&mut Tape, &P::Vars) -> Var,
{
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = loss(&mut tape, &vars);
    let value = tape.scalar(out);
    let grads = tape.backward(out)?;
    Ok((value, params.collect_grads(&vars, &grads)))
}
