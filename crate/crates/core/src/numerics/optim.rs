//! Trainable parameters and the optimizers the backbone needs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{ensure_finite, Tensor};
use crate::error::{Error, Result};

/// Which loss group a parameter belongs to: shared encoder, main-task head or
/// puzzle head. The groups partition the model exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Feature,
    MainHead,
    PuzzleHead,
}

/// Named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor, group: ParamGroup) -> Self {
        Self { name: name.into(), tensor: tensor.with_requires_grad(), group }
    }
}

/// Optimizer algorithm plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "snake_case")]
pub enum OptimAlgo {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    SgdMomentum { momentum: f64 },
}

impl OptimAlgo {
    pub fn adam() -> Self {
        OptimAlgo::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn sgd_momentum(momentum: f64) -> Self {
        OptimAlgo::SgdMomentum { momentum }
    }
}

/// Per-parameter optimizer slots, keyed by parameter name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Slot {
    /// Adam first moment, or SGD velocity.
    pub m: Vec<f64>,
    /// Adam second moment; unused for SGD.
    pub v: Vec<f64>,
}

/// Stateful optimizer. Updates are in place and deterministic.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub algo: OptimAlgo,
    pub base_lr: f64,
    pub step_count: u64,
    pub slots: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(algo: OptimAlgo, base_lr: f64) -> Self {
        Self { algo, base_lr, step_count: 0, slots: BTreeMap::new() }
    }

    /// Apply one update to every parameter in the iterator, then zero grads.
    ///
    /// Every visited parameter must carry a gradient of matching length.
    pub fn step<'a, I>(&mut self, params: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Parameter>,
    {
        self.step_count += 1;
        let t = self.step_count;
        for p in params {
            let n = p.tensor.numel();
            let grad = p.tensor.grad.as_ref().ok_or_else(|| {
                Error::State(format!("parameter {} has no gradient", p.name))
            })?;
            if grad.len() != n {
                return Err(Error::State(format!(
                    "parameter {} gradient length {} != {}",
                    p.name,
                    grad.len(),
                    n
                )));
            }
            let slot = self.slots.entry(p.name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: if matches!(self.algo, OptimAlgo::Adam { .. }) { vec![0.0; n] } else { Vec::new() },
            });
            if slot.m.len() != n {
                return Err(Error::State(format!("slot shape mismatch for {}", p.name)));
            }
            match self.algo {
                OptimAlgo::Adam { beta1, beta2, epsilon } => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let grad = p.tensor.grad.as_ref().unwrap().clone();
                    let data = p.tensor.data_mut();
                    for i in 0..n {
                        let g = grad[i];
                        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
                OptimAlgo::SgdMomentum { momentum } => {
                    let grad = p.tensor.grad.as_ref().unwrap().clone();
                    let data = p.tensor.data_mut();
                    for i in 0..n {
                        slot.m[i] = momentum * slot.m[i] + grad[i];
                        data[i] -= lr * slot.m[i];
                    }
                }
            }
            ensure_finite("optimizer_step", p.tensor.data())?;
            p.tensor.zero_grad();
        }
        Ok(())
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must deterministically construct the forward graph from the given
/// parameters (registering each under its slot index) and return the scalar
/// loss. At most `sample_cap` entries per parameter are probed, evenly spaced.
/// Returns the worst relative error `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn gradient_check<F>(
    params: &mut [Parameter],
    epsilon: f64,
    sample_cap: usize,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Parameter]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    let analytic: BTreeMap<usize, Vec<f64>> = graph
        .backward_param_grads(loss)?
        .into_iter()
        .fold(BTreeMap::new(), |mut acc, (slot, g)| {
            acc.entry(slot)
                .and_modify(|cur: &mut Vec<f64>| cur.iter_mut().zip(&g).for_each(|(a, b)| *a += b))
                .or_insert(g);
            acc
        });

    let eval = |params: &[Parameter]| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        Ok(g.value(loss)[0])
    };

    let mut worst = 0.0f64;
    for slot in 0..params.len() {
        let n = params[slot].tensor.numel();
        let stride = n.div_ceil(sample_cap).max(1);
        for i in (0..n).step_by(stride) {
            let orig = params[slot].tensor.data()[i];
            params[slot].tensor.data_mut()[i] = orig + epsilon;
            let up = eval(params)?;
            params[slot].tensor.data_mut()[i] = orig - epsilon;
            let down = eval(params)?;
            params[slot].tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.get(&slot).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
