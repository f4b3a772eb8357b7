use std::f64::consts::PI;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

/// Cosine-annealed learning rate: `base_lr·½·(1 + cos(π·step/total))`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(
            "step",
            format!("need 0 <= step <= total_steps and total_steps >= 1, got {step}/{total_steps}"),
        ));
    }
    Ok(base_lr * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

/// SGD momentum buffers, one per query-branch parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: EncoderParams,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        OptimizerState {
            velocity: params.zeros_like(),
            step_count: 0,
        }
    }
}

/// One SGD step with momentum and L2 weight decay:
/// `g = grad + wd·param; v = momentum·v + g; param -= lr·v`.
pub fn sgd_step(
    params: &EncoderParams,
    grads: &EncoderParams,
    state: &OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(EncoderParams, OptimizerState)> {
    if !params.same_layout(grads) || !params.same_layout(&state.velocity) {
        return Err(Error::shape(
            "sgd_step",
            "parameters, gradients and velocity differ in layout",
        ));
    }
    let mut new_params = params.clone();
    let mut velocity = state.velocity.clone();
    for ((p, g), v) in new_params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = gv + weight_decay * *pv;
            *vv = momentum * *vv + g;
            *pv -= lr * *vv;
        }
    }
    Ok((
        new_params,
        OptimizerState {
            velocity,
            step_count: state.step_count + 1,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Architecture;

    fn filled(params: &EncoderParams, value: f64) -> EncoderParams {
        let mut out = params.clone();
        for t in out.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
        out
    }

    #[test]
    fn cosine_schedule_landmarks() {
        assert_eq!(cosine_lr(0, 100, 0.03).unwrap(), 0.03);
        assert!(cosine_lr(100, 100, 0.03).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.03).unwrap() - 0.015).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 0..=37 {
            let lr = cosine_lr(s, 37, 1.0).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
        assert!(cosine_lr(5, 4, 1.0).is_err());
        assert!(cosine_lr(0, 0, 1.0).is_err());
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let p = EncoderParams::init(Architecture::tiny(), 1);
        let mut state = OptimizerState::new(&p);
        state.velocity = filled(&p, 2.0);
        let (p2, s2) = sgd_step(&p, &p.zeros_like(), &state, 0.0, 0.9, 0.0).unwrap();
        assert_eq!(p2, p);
        assert!(s2
            .velocity
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.9 * 2.0)));
        assert_eq!(s2.step_count, 1);
    }

    #[test]
    fn plain_sgd_arithmetic() {
        let p = filled(&EncoderParams::init(Architecture::tiny(), 1), 1.0);
        let g = filled(&p, 0.5);
        let (p2, _) = sgd_step(&p, &g, &OptimizerState::new(&p), 0.1, 0.0, 0.0).unwrap();
        assert!(p2.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.95)));
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        let p = filled(&EncoderParams::init(Architecture::tiny(), 1), 1.0);
        let g = filled(&p, 0.5);
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        let s0 = OptimizerState::new(&p);
        let (p1, s1) = sgd_step(&p, &g, &s0, lr, mu, wd).unwrap();
        let (p2, s2) = sgd_step(&p1, &g, &s1, lr, mu, wd).unwrap();

        let mut x = 1.0_f64;
        let mut v = 0.0_f64;
        for _ in 0..2 {
            let grad = 0.5 + wd * x;
            v = mu * v + grad;
            x -= lr * v;
        }
        assert!(p2.tensors().iter().all(|t| t.data().iter().all(|&val| val == x)));
        assert!(s2
            .velocity
            .tensors()
            .iter()
            .all(|t| t.data().iter().all(|&val| val == v)));
    }

    #[test]
    fn rejects_layout_mismatch() {
        let p = EncoderParams::init(Architecture::tiny(), 1);
        let q = EncoderParams::init(Architecture::default(), 1);
        assert!(sgd_step(&p, &q, &OptimizerState::new(&p), 0.1, 0.9, 0.0).is_err());
    }
}
