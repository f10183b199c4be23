use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{contract, Result};
use crate::networks::Parameter;

struct Slot {
    name: String,
    param: Var,
    m: Tensor,
    v: Tensor,
}

/// Adam with bias correction. Parameters without a gradient in a step are left
/// untouched, moments included.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    slots: Vec<Slot>,
}

/// Moment estimates and step count, for checkpointing.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub steps: u64,
    /// `(parameter name, first moment, second moment)`
    pub moments: Vec<(String, Tensor, Tensor)>,
}

impl Adam {
    pub fn new(params: Vec<Parameter>, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|p| {
                let zeros = p.var.as_tensor().zeros_like()?;
                Ok(Slot {
                    name: p.name,
                    m: zeros.clone(),
                    v: zeros,
                    param: p.var,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            beta1,
            beta2,
            eps,
            steps: 0,
            slots,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.param.as_tensor()) else {
                continue;
            };
            // gradients carry their own graph; keep it out of the running moments
            let g = g.detach();
            slot.m = (slot.m.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?.detach();
            slot.v = (slot.v.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?.detach();
            if lr == 0.0 {
                continue;
            }
            let m_hat = slot.m.affine(1.0 / correction1, 0.0)?;
            let v_hat = slot.v.affine(1.0 / correction2, 0.0)?;
            let update = m_hat.div(&(v_hat.sqrt()? + self.eps)?)?;
            let next = (slot.param.as_tensor().detach() - update.affine(lr, 0.0)?)?;
            slot.param.set(&next)?;
        }
        Ok(())
    }

    pub fn state(&self) -> Result<AdamState> {
        Ok(AdamState {
            steps: self.steps,
            moments: self
                .slots
                .iter()
                .map(|s| Ok((s.name.clone(), s.m.copy()?, s.v.copy()?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn load_state(&mut self, state: AdamState) -> Result<()> {
        if state.moments.len() != self.slots.len() {
            return Err(contract!(
                "optimizer state has {} slots, optimizer has {}",
                state.moments.len(),
                self.slots.len()
            ));
        }
        for (slot, (name, m, v)) in self.slots.iter_mut().zip(state.moments) {
            if slot.name != name || slot.m.dims() != m.dims() || slot.v.dims() != v.dims() {
                return Err(contract!("optimizer state for `{name}` does not match `{}`", slot.name));
            }
            slot.m = m.to_dtype(slot.m.dtype())?;
            slot.v = v.to_dtype(slot.v.dtype())?;
        }
        self.steps = state.steps;
        Ok(())
    }
}
