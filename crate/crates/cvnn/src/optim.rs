//! Adam optimizer. Every real scalar is an independent coordinate: the re and
//! im planes of a complex parameter receive exactly the same update rule.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::Parameter;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Slot<P: Scalar> {
    m: Vec<Vec<P>>,
    v: Vec<Vec<P>>,
}

/// First/second moment buffers matching a parameter list, plus the step count.
pub struct AdamState<P: Scalar> {
    step: u64,
    slots: Vec<Slot<P>>,
}

impl<P: Scalar> AdamState<P> {
    pub fn new(params: &[Rc<Parameter<P>>]) -> Self {
        let slots = params
            .iter()
            .map(|p| Slot {
                m: (0..p.num_planes()).map(|_| vec![P::ZERO; p.plane_len()]).collect(),
                v: (0..p.num_planes()).map(|_| vec![P::ZERO; p.plane_len()]).collect(),
            })
            .collect();
        AdamState { step: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn moments(&self, param_idx: usize, plane: usize) -> (&[P], &[P]) {
        let slot = &self.slots[param_idx];
        (&slot.m[plane], &slot.v[plane])
    }

    pub fn set_moments(&mut self, param_idx: usize, plane: usize, m: &[P], v: &[P]) {
        let slot = &mut self.slots[param_idx];
        slot.m[plane].copy_from_slice(m);
        slot.v[plane].copy_from_slice(v);
    }
}

/// One Adam update over `params` using their accumulated gradients:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected, then
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`. Gradients are left
/// untouched; call `zero_grads` afterwards.
pub fn adam_step<P: Scalar>(
    params: &[Rc<Parameter<P>>],
    state: &mut AdamState<P>,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != state.slots.len() {
        return Err(Error::invalid(
            "adam_step",
            format!(
                "state tracks {} parameters, got {}",
                state.slots.len(),
                params.len()
            ),
        ));
    }
    for (p, slot) in params.iter().zip(&state.slots) {
        if slot.m.len() != p.num_planes() || slot.m[0].len() != p.plane_len() {
            return Err(Error::invalid(
                "adam_step",
                format!("moment buffers do not match parameter '{}'", p.name()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = P::from_f64(1.0 - hp.beta1.powi(t));
    let bc2 = P::from_f64(1.0 - hp.beta2.powi(t));
    let lr = P::from_f64(hp.learning_rate);
    let b1 = P::from_f64(hp.beta1);
    let b2 = P::from_f64(hp.beta2);
    let one_m_b1 = P::from_f64(1.0 - hp.beta1);
    let one_m_b2 = P::from_f64(1.0 - hp.beta2);
    let eps = P::from_f64(hp.epsilon);

    for (p, slot) in params.iter().zip(state.slots.iter_mut()) {
        for plane in 0..p.num_planes() {
            if !p.plane_trainable(plane) {
                continue;
            }
            let grad = p.grad_plane(plane);
            let m = &mut slot.m[plane];
            let v = &mut slot.v[plane];
            let mut updated = p.plane_tensor(plane).to_vec();
            for i in 0..updated.len() {
                let g = grad[i];
                m[i] = b1.mul(m[i]).add(one_m_b1.mul(g));
                v[i] = b2.mul(v[i]).add(one_m_b2.mul(g.mul(g)));
                let m_hat = m[i].div(bc1);
                let v_hat = v[i].div(bc2);
                updated[i] = updated[i].sub(lr.mul(m_hat.div(v_hat.sqrt().add(eps))));
            }
            p.set_plane(plane, &updated);
        }
    }
    Ok(())
}
