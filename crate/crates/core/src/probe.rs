//! Empirical check that an initialization keeps backpropagated gradient
//! variance flat across a deep ReLU convolution stack.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamSet};
use crate::init::{Activation, ConvSpec, Direction, InitRule, LayerInit, LayerSpec, Principle};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ReluStack {
    pub depth: usize,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub input_channels: usize,
    pub side: usize,
    pub batch: usize,
}

impl Default for ReluStack {
    fn default() -> Self {
        ReluStack {
            depth: 6,
            kernel: 5,
            stride: 2,
            channels: 48,
            input_channels: 1,
            side: 256,
            batch: 1,
        }
    }
}

/// Mean square over an `[n, c, h, w]` tensor with `margin` rows and columns
/// dropped on every side.
fn interior_second_moment(t: &Tensor<f32>, margin: usize) -> f64 {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    let (mut sum, mut count) = (0.0, 0usize);
    for plane in t.data().chunks(h * w) {
        for y in margin..h - margin {
            for x in margin..w - margin {
                let v = plane[y * w + x] as f64;
                sum += v * v;
                count += 1;
            }
        }
    }
    sum / count as f64
}

impl ReluStack {
    pub fn layers(&self) -> Vec<LayerInit> {
        (0..self.depth)
            .map(|i| {
                let cin = if i == 0 { self.input_channels } else { self.channels };
                LayerInit {
                    name: format!("conv{i}"),
                    layer: LayerSpec::Conv(ConvSpec::square(
                        self.kernel,
                        self.stride,
                        cin,
                        self.channels,
                        Direction::Convolution,
                    )),
                    rule: InitRule::new(Principle::Backward, Activation::Relu),
                }
            })
            .collect()
    }

    /// One seeded trial: fresh weights, a Gaussian input and a Gaussian
    /// upstream gradient at the top. Returns, for each layer, the ratio of
    /// the gradient second moment at its input to that at its output
    /// activation (the next layer's input). Both are measured away from the
    /// zero-padded border: one output row/column is dropped on each side and
    /// the matching `stride` rows/columns on the input side.
    pub fn trial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut g = Graph::<f32>::new();
        let mut params = ParamSet::new();
        let x = g.input("x", &[self.batch, self.input_channels, self.side, self.side], true);
        let mut taps = vec![x];
        let mut h = x;
        for layer in self.layers() {
            let (w, b) = layer.sample::<f32, _>(rng)?;
            let wn = g.param(&format!("{}.w", layer.name), w.shape(), true);
            let bn = g.param(&format!("{}.b", layer.name), b.shape(), true);
            params.insert(format!("{}.w", layer.name), w);
            params.insert(format!("{}.b", layer.name), b);
            let c = g.conv2d(&layer.name, h, wn, bn, self.kernel, self.stride)?;
            h = g.relu(&format!("{}.relu", layer.name), c);
            taps.push(h);
        }
        let top: usize = g.shape(h)[1..].iter().product();
        let flat = g.reshape("flat", h, &[self.batch, top])?;
        let target = g.input("target", &[self.batch, top], false);
        let loss = g.quadratic_loss("loss", flat, target)?;

        let xv = Tensor::from_fn(g.shape(x), |_| StandardNormal.sample(rng));
        let zeros = Tensor::zeros(&[self.batch, top]);
        g.forward(&[&params], &[("x", &xv), ("target", &zeros)])?;
        // target = output - r makes the upstream gradient proportional to r
        let out = g.value(flat)?.clone();
        let r: Vec<f32> = (0..out.numel()).map(|_| StandardNormal.sample(rng)).collect();
        let tv = Tensor::new(
            out.shape().to_vec(),
            out.data().iter().zip(&r).map(|(o, r)| o - r).collect(),
        )?;
        g.forward(&[&params], &[("x", &xv), ("target", &tv)])?;
        g.backprop(loss)?;

        let mut ratios = Vec::with_capacity(self.depth);
        for pair in taps.windows(2) {
            let (Some(below), Some(above)) = (g.grad(pair[0]), g.grad(pair[1])) else {
                return Err(Error::Graph("probe gradients missing".into()));
            };
            if above.shape()[2] < 3 || above.shape()[3] < 3 {
                return Err(Error::InvalidArgument(format!(
                    "side {} is too small for {} layers of stride {}",
                    self.side, self.depth, self.stride
                )));
            }
            ratios.push(interior_second_moment(below, self.stride) / interior_second_moment(above, 1));
        }
        Ok(ratios)
    }
}
