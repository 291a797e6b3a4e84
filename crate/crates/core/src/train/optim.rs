//! First-order optimizers over named parameters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

/// Applies one update to every parameter that has a gradient. The update
/// is computed in full before anything is written, so a non-finite result
/// leaves `params` untouched.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
    opt: &Optimizer,
) -> Result<()> {
    let mut updated: Vec<(String, Vec<f64>)> = Vec::with_capacity(grads.len());
    let step = state.step + 1;
    let mut moments = Vec::new();
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer_step",
                format!("`{name}`: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
            ));
        }
        let new: Vec<f64> = match *opt {
            Optimizer::Sgd { lr } => p.data().iter().zip(g.data()).map(|(p, g)| p - lr * g).collect(),
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let mut m = state.m.get(name).cloned().unwrap_or_else(|| vec![0.0; g.len()]);
                let mut v = state.v.get(name).cloned().unwrap_or_else(|| vec![0.0; g.len()]);
                let c1 = 1.0 - beta1.powf(step as f64);
                let c2 = 1.0 - beta2.powf(step as f64);
                let mut out = Vec::with_capacity(g.len());
                for i in 0..g.len() {
                    let gi = g.data()[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    out.push(p.data()[i] - lr * mh / (vh.sqrt() + eps));
                }
                moments.push((name.clone(), m, v));
                out
            }
        };
        if new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "optimizer_step" });
        }
        updated.push((name.clone(), new));
    }
    for (name, data) in updated {
        let t = params.tensors.get_mut(&name).expect("checked above");
        t.data_mut().copy_from_slice(&data);
    }
    for (name, m, v) in moments {
        state.m.insert(name.clone(), m);
        state.v.insert(name, v);
    }
    state.step = step;
    Ok(())
}
