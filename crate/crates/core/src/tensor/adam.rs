//! Adam parameter updates with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        AdamState {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update in place. The parameter must carry a gradient from a
/// completed backward pass.
pub fn adam_step(param: &mut Tensor, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let grad = match param.grad.take() {
        Some(g) => g,
        None => {
            return Err(Error::State(
                "adam step requires a gradient; run backward first".into(),
            ))
        }
    };
    if grad.len() != param.numel() || state.m.len() != param.numel() {
        return Err(Error::Dimension(format!(
            "adam buffers ({} / {}) do not match parameter of {} elements",
            grad.len(),
            state.m.len(),
            param.numel()
        )));
    }

    state.t += 1;
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let corr1 = 1.0 - (b1 as f64).powi(state.t as i32);
    let corr2 = 1.0 - (b2 as f64).powi(state.t as i32);

    for ((p, (m, v)), &g) in param
        .data_mut()
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .zip(&grad)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = (*m as f64 / corr1) as f32;
        let v_hat = (*v as f64 / corr2) as f32;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        // With bias correction, step 1 is exactly lr * sign(g) (epsilon aside).
        let mut p = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap().with_grad();
        p.grad = Some(vec![0.5, -2.0]);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &mut st, &AdamHyper::default()).unwrap();
        assert!((p.data()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((p.data()[1] - (-1.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut p = Tensor::zeros(vec![2]).with_grad();
        let mut st = AdamState::new(2);
        assert!(matches!(
            adam_step(&mut p, &mut st, &AdamHyper::default()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn converges_on_quadratic() {
        // Minimize (x - 3)^2 by feeding its gradient for a few hundred steps.
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap().with_grad();
        let mut st = AdamState::new(1);
        let hyper = AdamHyper {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..500 {
            let x = p.data()[0];
            p.grad = Some(vec![2.0 * (x - 3.0)]);
            adam_step(&mut p, &mut st, &hyper).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2);
    }
}
