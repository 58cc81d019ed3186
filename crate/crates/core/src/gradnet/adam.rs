use super::Parameterized;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments. Accumulators share the parameter
/// container type, so they are shaped like the parameters by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<P> {
    pub step: u64,
    pub first_moment: P,
    pub second_moment: P,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl<P: Parameterized> AdamState<P> {
    pub fn new(params: &P, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }

    /// Applies one update to `params` in place.
    pub fn step_in_place(&mut self, params: &mut P, grads: &P) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                context: "Adam gradient".into(),
            });
        }
        let (pt, gt) = (params.tensors(), grads.tensors());
        if pt.len() != gt.len() || pt.iter().zip(&gt).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::dim("Adam gradient size", params.num_params(), grads.num_params()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.learning_rate);

        let grads = grads.tensors();
        let mut m_all = self.first_moment.tensors_mut();
        let mut v_all = self.second_moment.tensors_mut();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(m_all.iter_mut())
            .zip(v_all.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Pure form of one Adam update: returns the new parameters and state.
pub fn adam_step<P: Parameterized>(
    state: &AdamState<P>,
    params: &P,
    grads: &P,
) -> Result<(P, AdamState<P>)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.step_in_place(&mut next_params, grads)?;
    Ok((next_params, next_state))
}
