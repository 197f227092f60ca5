//! Central finite-difference checks of [`Graph::backprop`] in 64-bit mode.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Elements skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

pub struct GradCheck {
    pub step: f64,
    /// Elements checked per tensor; larger tensors are sampled evenly.
    pub max_per_tensor: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            max_per_tensor: 64,
            floor: 1e-8,
        }
    }
}

fn relu_masks(graph: &Graph<f64>) -> Vec<bool> {
    graph
        .nodes()
        .iter()
        .filter_map(|n| match n.op {
            Op::Relu(x) => Some(x),
            _ => None,
        })
        .flat_map(|x| {
            graph
                .value(x)
                .map(|t| t.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .collect()
}

fn sample_indices(numel: usize, max: usize) -> Vec<usize> {
    if numel <= max {
        (0..numel).collect()
    } else {
        (0..max).map(|i| i * numel / max).collect()
    }
}

impl GradCheck {
    /// Compare analytic gradients of `loss` against central differences for
    /// every trainable parameter and every differentiable input.
    pub fn run(
        &self,
        graph: &mut Graph<f64>,
        params: &ParamSet<f64>,
        inputs: &[(&str, &Tensor<f64>)],
        loss: NodeId,
    ) -> Result<GradCheckReport> {
        graph.forward(&[params], inputs)?;
        let analytic = graph.backprop(loss)?;
        let mut report = GradCheckReport {
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
            worst: String::new(),
        };
        let mut params = params.clone();
        let mut owned_inputs: Vec<(String, Tensor<f64>)> =
            inputs.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect();

        for (name, grad) in &analytic {
            let in_params = params.contains_key(name);
            for idx in sample_indices(grad.numel(), self.max_per_tensor) {
                let mut eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
                    let slot = if in_params {
                        params.get_mut(name).expect("present")
                    } else {
                        &mut owned_inputs
                            .iter_mut()
                            .find(|(n, _)| n == name)
                            .ok_or_else(|| Error::UnknownName(name.clone()))?
                            .1
                    };
                    let orig = slot.data()[idx];
                    slot.data_mut()[idx] = orig + delta;
                    let feed: Vec<(&str, &Tensor<f64>)> =
                        owned_inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
                    let out = graph.forward(&[&params], &feed);
                    let result = out.and_then(|_| Ok((graph.value(loss)?.item(), relu_masks(graph))));
                    let slot = if in_params {
                        params.get_mut(name).expect("present")
                    } else {
                        &mut owned_inputs.iter_mut().find(|(n, _)| n == name).expect("present").1
                    };
                    slot.data_mut()[idx] = orig;
                    result
                };
                let (plus, mask_plus) = eval(self.step)?;
                let (minus, mask_minus) = eval(-self.step)?;
                if mask_plus != mask_minus {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = grad.data()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
                report.checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = format!("{name}[{idx}]: analytic {a:e}, numeric {numeric:e}");
                }
            }
        }
        // restore cached activations for the caller
        graph.forward(&[&params], inputs)?;
        Ok(report)
    }
}
