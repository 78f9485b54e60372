use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    /// `v <- mu v + g; w <- w - lr v`.
    Momentum { lr: f64, momentum: f64, velocity: Vec<f64> },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64, step: u32, m: Vec<f64>, v: Vec<f64> },
}

impl Optimizer {
    pub fn momentum(n: usize, lr: f64, momentum: f64) -> Self {
        Optimizer::Momentum { lr, momentum, velocity: vec![0.0; n] }
    }

    pub fn adam(n: usize, lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if grads.iter().any(|g| !g.is_finite()) {
            return invalid("non-finite gradient");
        }
        match self {
            Optimizer::Momentum { lr, momentum, velocity } => {
                if velocity.len() != params.len() || grads.len() != params.len() {
                    return invalid("optimizer state size mismatch");
                }
                for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
                    *v = *momentum * *v + g;
                    *w -= *lr * *v;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, step, m, v } => {
                if m.len() != params.len() || grads.len() != params.len() {
                    return invalid("optimizer state size mismatch");
                }
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                for (((w, mi), vi), g) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grads) {
                    *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                    *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                    *w -= *lr * (*mi / c1) / ((*vi / c2).sqrt() + *eps);
                }
            }
        }
        Ok(())
    }
}
