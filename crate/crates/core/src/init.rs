//! Variance-preserving weight initialization.
//!
//! Weights are drawn from a truncated normal whose standard deviation depends
//! on an effective unit count `n`:
//!
//! * ReLU layers use `Var[w] = 2/n`.
//! * A tanh output layer uses `std = sqrt(1/n)`, a sigmoid output layer
//!   `std = 4 sqrt(1/n)` (the sigmoid slope at zero is 1/4).
//!
//! Under the backward principle `n` is the number of units a single input
//! unit sends gradient to. For a strided convolution that count varies with
//! the position of the input inside a stride cycle; [`fanout_avg`] averages
//! it over one cycle. Under the forward principle `n` is the fan-in.
//! Image borders are ignored throughout: counts are for interior units.

use num_rational::Ratio;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Draws beyond this many standard deviations are rejected and re-drawn.
pub const TRUNCATION_BOUND: f64 = 2.0;

/// Average number of outputs of a 1-D convolution (kernel `k`, stride `d`)
/// that receive a given interior input, as an exact fraction.
pub fn fanout_avg(k: u64, d: u64) -> Result<Ratio<u64>> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel and stride must be positive (k={k}, d={d})"
        )));
    }
    // One stride cycle starting at the k-th input: the first position
    // reaches floor((k-1)/d) + 1 outputs, the remaining d-1 positions
    // reach floor((k+i)/d) for i = 0..d-2.
    let head = (k - 1) / d + 1;
    let rest: u64 = (0..d.saturating_sub(1)).map(|i| (k + i) / d).sum();
    Ok(Ratio::new(head + rest, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Convolution,
    Transposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub direction: Direction,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn square(k: usize, d: usize, in_channels: usize, out_channels: usize, direction: Direction) -> Self {
        ConvSpec {
            kernel: vec![k, k],
            stride: vec![d, d],
            in_channels,
            out_channels,
            direction,
            padding: Padding::Same,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_empty()
            || self.kernel.len() != self.stride.len()
            || self.kernel.iter().chain(&self.stride).any(|&v| v == 0)
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::InvalidArgument(format!("invalid convolution spec {self:?}")));
        }
        Ok(())
    }
}

/// The layer an initializer is computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Principle {
    Backward,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRule {
    pub principle: Principle,
    pub activation: Activation,
    pub std_scale: f64,
}

impl InitRule {
    pub fn new(principle: Principle, activation: Activation) -> Self {
        InitRule {
            principle,
            activation,
            std_scale: 1.0,
        }
    }

    pub fn with_scale(mut self, std_scale: f64) -> Self {
        self.std_scale = std_scale;
        self
    }

    /// Standard deviation of the normal before truncation, scale included.
    pub fn target_std(&self, n: f64) -> Result<f64> {
        if !(n > 0.0) {
            return Err(Error::InvalidArgument(format!("effective unit count must be positive, got {n}")));
        }
        let base = match self.activation {
            Activation::Relu => (2.0 / n).sqrt(),
            Activation::Tanh => (1.0 / n).sqrt(),
            Activation::Sigmoid => 4.0 * (1.0 / n).sqrt(),
        };
        Ok(base * self.std_scale)
    }
}

/// Output layers that shrink the unit count by more than 4x get their
/// deviation halved to keep the forward pass out of saturation.
pub fn output_std_scale(input_units: usize, output_units: usize) -> f64 {
    if input_units > 4 * output_units {
        0.5
    } else {
        1.0
    }
}

/// Effective unit count `n` for `layer` under `principle`.
pub fn effective_n(layer: &LayerSpec, principle: Principle) -> Result<f64> {
    match layer {
        LayerSpec::Dense { inputs, outputs } => {
            if *inputs == 0 || *outputs == 0 {
                return Err(Error::InvalidArgument("dense layer widths must be positive".into()));
            }
            Ok(match principle {
                Principle::Backward => *outputs as f64,
                Principle::Forward => *inputs as f64,
            })
        }
        LayerSpec::Conv(spec) => {
            spec.validate()?;
            let dims = spec.kernel.iter().zip(&spec.stride);
            let spatial = |stride_of: &dyn Fn(usize) -> usize| -> Result<f64> {
                let mut prod = 1.0;
                for (&k, &d) in dims.clone() {
                    let r = fanout_avg(k as u64, stride_of(d) as u64)?;
                    prod *= *r.numer() as f64 / *r.denom() as f64;
                }
                Ok(prod)
            };
            Ok(match (spec.direction, principle) {
                // Gradient reaching one input unit comes from the outputs whose
                // receptive field covers it, in every output channel.
                (Direction::Convolution, Principle::Backward) => spatial(&|d| d)? * spec.out_channels as f64,
                // The adjoint gathers gradient over a dense k-window of the
                // upsampled map, i.e. a unit-stride cycle.
                (Direction::Transposed, Principle::Backward) => spatial(&|_| 1)? * spec.out_channels as f64,
                (Direction::Convolution, Principle::Forward) => {
                    spec.kernel.iter().product::<usize>() as f64 * spec.in_channels as f64
                }
                (Direction::Transposed, Principle::Forward) => spatial(&|d| d)? * spec.in_channels as f64,
            })
        }
    }
}

/// Standard normal density and distribution function via `erf`.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Ratio of the truncated normal's variance to the untruncated one.
pub fn truncated_variance_factor(bound: f64) -> f64 {
    let mass = normal_cdf(bound) - normal_cdf(-bound);
    1.0 - 2.0 * bound * normal_pdf(bound) / mass
}

/// Scale of the normal that is truncated at ±[`TRUNCATION_BOUND`] so that
/// the truncated draws have standard deviation `target_std`.
pub fn sampling_std(target_std: f64) -> f64 {
    target_std / truncated_variance_factor(TRUNCATION_BOUND).sqrt()
}

fn truncated_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= TRUNCATION_BOUND {
            return v;
        }
    }
}

/// Weight tensor drawn i.i.d. from a truncated normal whose realized
/// standard deviation is the rule's target.
pub fn init_tensor<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    rule: &InitRule,
    n: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let std = sampling_std(rule.target_std(n)?);
    Ok(Tensor::from_fn(shape, |_| T::of(truncated_standard_normal(rng) * std)))
}

/// One parameterized layer of a model together with how it is initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInit {
    pub name: String,
    pub layer: LayerSpec,
    pub rule: InitRule,
}

impl LayerInit {
    pub fn n(&self) -> Result<f64> {
        effective_n(&self.layer, self.rule.principle)
    }

    pub fn target_std(&self) -> Result<f64> {
        self.rule.target_std(self.n()?)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match &self.layer {
            LayerSpec::Dense { inputs, outputs } => vec![*inputs, *outputs],
            LayerSpec::Conv(c) => match c.direction {
                Direction::Convolution => vec![c.out_channels, c.in_channels, c.kernel[0], c.kernel[1]],
                Direction::Transposed => vec![c.in_channels, c.out_channels, c.kernel[0], c.kernel[1]],
            },
        }
    }

    pub fn bias_len(&self) -> usize {
        match &self.layer {
            LayerSpec::Dense { outputs, .. } => *outputs,
            LayerSpec::Conv(c) => c.out_channels,
        }
    }

    /// Weight (`<name>.w`) and zero bias (`<name>.b`).
    pub fn sample<T: Element, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        let w = init_tensor(&self.weight_shape(), &self.rule, self.n()?, rng)?;
        Ok((w, Tensor::zeros(&[self.bias_len()])))
    }
}

/// One line of an initialization report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitReportRow {
    pub layer: String,
    pub principle: Principle,
    pub activation: Activation,
    pub n: f64,
    pub target_std: f64,
    /// Scale of the normal before truncation.
    pub sampling_std: f64,
    pub realized_std: f64,
}

pub fn init_report<R: Rng + ?Sized>(layers: &[LayerInit], rng: &mut R) -> Result<Vec<InitReportRow>> {
    layers
        .iter()
        .map(|l| {
            let (w, _) = l.sample::<f64, _>(rng)?;
            let target = l.target_std()?;
            let realized = (w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64).sqrt();
            Ok(InitReportRow {
                layer: l.name.clone(),
                principle: l.rule.principle,
                activation: l.rule.activation,
                n: l.n()?,
                target_std: target,
                sampling_std: sampling_std(target),
                realized_std: realized,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Count, for every input position of a long 1-D strided convolution,
    /// the outputs whose window contains it; average over one interior cycle.
    fn brute_force_fanout(k: u64, d: u64) -> Ratio<u64> {
        let len = 8 * (k + d) * d;
        let outputs = (len - k) / d + 1;
        let mut count = vec![0u64; len as usize];
        for o in 0..outputs {
            for t in 0..k {
                count[(o * d + t) as usize] += 1;
            }
        }
        let start = (2 * (k + d) / d + 1) * d;
        let total: u64 = (start..start + d).map(|p| count[p as usize]).sum();
        Ratio::new(total, d)
    }

    #[test]
    fn fanout_examples() {
        assert_eq!(fanout_avg(5, 1).unwrap(), Ratio::from_integer(5));
        assert_eq!(fanout_avg(4, 2).unwrap(), Ratio::from_integer(2));
        assert_eq!(fanout_avg(5, 2).unwrap(), Ratio::new(5, 2));
        assert_eq!(fanout_avg(3, 2).unwrap(), Ratio::new(3, 2));
        assert!(fanout_avg(0, 2).is_err());
        assert!(fanout_avg(3, 0).is_err());
    }

    #[test]
    fn fanout_matches_brute_force() {
        for k in 1..=16 {
            for d in 1..=k {
                assert_eq!(fanout_avg(k, d).unwrap(), brute_force_fanout(k, d), "k={k} d={d}");
            }
        }
    }

    #[test]
    fn effective_n_examples() {
        let dense = LayerSpec::Dense { inputs: 12, outputs: 200 };
        assert_eq!(effective_n(&dense, Principle::Forward).unwrap(), 12.0);
        let conv = LayerSpec::Conv(ConvSpec::square(5, 2, 32, 64, Direction::Convolution));
        let n = effective_n(&conv, Principle::Backward).unwrap();
        assert_eq!(n, 400.0);
        let rule = InitRule::new(Principle::Backward, Activation::Relu);
        assert!((rule.target_std(n).unwrap().powi(2) - 0.005).abs() < 1e-15);
        let unit = LayerSpec::Conv(ConvSpec::square(1, 1, 1, 1, Direction::Convolution));
        let n = effective_n(&unit, Principle::Backward).unwrap();
        assert_eq!(n, 1.0);
        assert!((rule.target_std(n).unwrap().powi(2) - 2.0).abs() < 1e-15);
        let tconv = LayerSpec::Conv(ConvSpec::square(5, 2, 64, 32, Direction::Transposed));
        assert_eq!(effective_n(&tconv, Principle::Backward).unwrap(), 25.0 * 32.0);
        assert_eq!(effective_n(&conv, Principle::Forward).unwrap(), 25.0 * 32.0);
    }

    #[test]
    fn output_rules() {
        let tanh = InitRule::new(Principle::Backward, Activation::Tanh);
        assert!((tanh.target_std(100.0).unwrap() - 0.1).abs() < 1e-15);
        let sig = InitRule::new(Principle::Backward, Activation::Sigmoid);
        assert!((sig.target_std(100.0).unwrap() - 0.4).abs() < 1e-15);
        assert!(tanh.target_std(0.0).is_err());
        assert!(tanh.target_std(-1.0).is_err());
        assert_eq!(output_std_scale(64, 12), 0.5);
        assert_eq!(output_std_scale(48, 12), 1.0);
    }

    #[test]
    fn truncated_samples_stay_in_bounds_and_are_seeded() {
        let rule = InitRule::new(Principle::Backward, Activation::Tanh);
        let a: Tensor<f64> = init_tensor(&[1000], &rule, 100.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b: Tensor<f64> = init_tensor(&[1000], &rule, 100.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let bound = 2.0 * sampling_std(0.1);
        assert!((bound - 0.2274).abs() < 1e-4);
        assert!(a.data().iter().all(|v| v.abs() <= bound + 1e-12));
        assert!(a.data().iter().any(|v| v.abs() > 0.2));
    }

    #[test]
    fn biases_are_zero() {
        let layer = LayerInit {
            name: "fc".into(),
            layer: LayerSpec::Dense { inputs: 4, outputs: 3 },
            rule: InitRule::new(Principle::Backward, Activation::Relu),
        };
        let (w, b) = layer.sample::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(w.shape(), &[4, 3]);
        assert!(b.data().iter().all(|&v| v == 0.0));
    }
}
