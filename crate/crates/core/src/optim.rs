//! ADAM (generator/discriminator) and RMSProp (perceptual regressor).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, ParamSet};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Rmsprop {
        lr: f64,
        rho: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    /// lr 5e-4, β₁ 0.5, β₂ 0.999, ε 1e-8.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            lr: 5e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// lr 1e-3, ρ 0.9, ε 1e-10, no momentum.
    pub fn rmsprop_default() -> Self {
        OptimizerKind::Rmsprop {
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-10,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Rmsprop { .. } => "rmsprop",
        }
    }
}

/// Per-parameter moment buffers. RMSProp only uses `second`.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Element = f32> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Element = f32> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter that has a gradient. Parameters
    /// without a gradient entry are left untouched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        self.step_scaled(params, grads, 1.0)
    }

    /// [`step`](Self::step) with the learning rate multiplied by `lr_scale`.
    pub fn step_scaled(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr_scale: f64) -> Result<()> {
        if !(lr_scale >= 0.0 && lr_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning-rate scale must be non-negative, got {lr_scale}")));
        }
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::UnknownName(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if let Some(m) = self.moments.get(name) {
                if m.first.shape() != p.shape() {
                    return Err(Error::Shape(format!("optimizer moments for `{name}` do not match")));
                }
            }
        }
        self.step += 1;
        let t = self.step as f64;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            let m = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                first: Tensor::zeros(p.shape()),
                second: Tensor::zeros(p.shape()),
            });
            match self.kind {
                OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                    let b1 = T::of(beta1);
                    let b2 = T::of(beta2);
                    let c1 = T::of(1.0 - beta1);
                    let c2 = T::of(1.0 - beta2);
                    let corr1 = T::of(1.0 - beta1.powf(t));
                    let corr2 = T::of(1.0 - beta2.powf(t));
                    let lr = T::of(lr * lr_scale);
                    let eps = T::of(eps);
                    let pd = p.data_mut();
                    let (md, vd) = (m.first.data_mut(), m.second.data_mut());
                    for j in 0..pd.len() {
                        let gj = g.data()[j];
                        md[j] = b1 * md[j] + c1 * gj;
                        vd[j] = b2 * vd[j] + c2 * gj * gj;
                        let mhat = md[j] / corr1;
                        let vhat = vd[j] / corr2;
                        pd[j] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimizerKind::Rmsprop { lr, rho, eps } => {
                    let r = T::of(rho);
                    let c = T::of(1.0 - rho);
                    let lr = T::of(lr * lr_scale);
                    let eps = T::of(eps);
                    let pd = p.data_mut();
                    let vd = m.second.data_mut();
                    for j in 0..pd.len() {
                        let gj = g.data()[j];
                        vd[j] = r * vd[j] + c * gj * gj;
                        pd[j] -= lr * gj / (vd[j] + eps).sqrt();
                    }
                }
            }
            if !p.all_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` after update")));
            }
        }
        Ok(())
    }
}
