//! Wiring [`LayerInit`] descriptions into graphs and parameter sets.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamSet};
use crate::init::{Activation, Direction, LayerInit, LayerSpec};
use crate::tensor::Element;

pub fn weight_name(layer: &str) -> String {
    format!("{layer}.w")
}

pub fn bias_name(layer: &str) -> String {
    format!("{layer}.b")
}

/// Append `layer` and its activation to `g`, reading from `x`.
pub fn add_layer<T: Element>(g: &mut Graph<T>, layer: &LayerInit, x: NodeId, trainable: bool) -> Result<NodeId> {
    let w = g.param(&weight_name(&layer.name), &layer.weight_shape(), trainable);
    let b = g.param(&bias_name(&layer.name), &[layer.bias_len()], trainable);
    let pre = match &layer.layer {
        LayerSpec::Dense { .. } => g.dense(&layer.name, x, w, b)?,
        LayerSpec::Conv(spec) => {
            if spec.kernel.len() != 2 || spec.kernel[0] != spec.kernel[1] || spec.stride[0] != spec.stride[1] {
                return Err(Error::InvalidArgument(format!(
                    "layer `{}`: only square 2-D kernels and strides are supported",
                    layer.name
                )));
            }
            let (k, d) = (spec.kernel[0], spec.stride[0]);
            match spec.direction {
                Direction::Convolution => g.conv2d(&layer.name, x, w, b, k, d)?,
                Direction::Transposed => g.conv_transpose2d(&layer.name, x, w, b, k, d)?,
            }
        }
    };
    let act = format!("{}.act", layer.name);
    Ok(match layer.rule.activation {
        Activation::Relu => g.relu(&act, pre),
        Activation::Tanh => g.tanh(&act, pre),
        Activation::Sigmoid => g.sigmoid(&act, pre),
    })
}

/// Fresh weights (per each layer's rule) and zero biases.
pub fn init_params<T: Element, R: Rng + ?Sized>(layers: &[LayerInit], rng: &mut R) -> Result<ParamSet<T>> {
    let mut params = ParamSet::new();
    for layer in layers {
        let (w, b) = layer.sample(rng)?;
        params.insert(weight_name(&layer.name), w);
        params.insert(bias_name(&layer.name), b);
    }
    Ok(params)
}

/// Check that `params` holds exactly the tensors `layers` expect.
pub fn check_params<T: Element>(layers: &[LayerInit], params: &ParamSet<T>) -> Result<()> {
    let mut expected = 0;
    for layer in layers {
        for (name, shape) in [
            (weight_name(&layer.name), layer.weight_shape()),
            (bias_name(&layer.name), vec![layer.bias_len()]),
        ] {
            let t = params
                .get(&name)
                .ok_or_else(|| Error::UnknownName(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            expected += 1;
        }
    }
    if params.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "{} parameters supplied, {expected} expected",
            params.len()
        )));
    }
    Ok(())
}
