//! Conditional generator `G`, discriminator `D` and their joint training with
//! the frozen perceptual model `H` in the loop.
//!
//! `D` minimizes the cross entropy of telling real `(x, y)` pairs from
//! generated ones. `G` minimizes `G_loss_d + α·G_loss_h`, where
//! `G_loss_d = -(1/n) Σ ln D(G(y, z), y)` and
//! `G_loss_h = (1/2n) Σ ‖H(G(y, z)) - y‖²`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::{AttributeStats, AttributeVector, NUM_ATTRIBUTES, SCALED_LIMIT};
use crate::checkpoint::{Checkpoint, CheckpointMeta, ModelKind};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{clamp_prob, Gradients, Graph, NodeId, ParamSet};
use crate::init::{output_std_scale, Activation, ConvSpec, Direction, InitRule, LayerInit, LayerSpec, Principle};
use crate::model::{add_layer, check_params, init_params};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::perceptual::{gather, PerceptualModel};
use crate::tensor::{Element, Tensor};

/// Variance of one component of the uniform `[-1, 1]` noise.
pub const NOISE_VARIANCE: f64 = 1.0 / 3.0;
/// Nominal variance of a scaled attribute, carried through the stretch layer.
pub const STRETCHED_VARIANCE: f64 = 0.09;
/// Tolerance on `|y| ≤ 0.9` before an attribute vector counts as unscaled.
pub const SCALED_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub stretch_dim: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub g_steps_per_d_step: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Generator trunk widths; the first is the 4×4 seed map, and each
    /// entry adds one 2× upsampling.
    pub g_channels: Vec<usize>,
    pub d_channels: Vec<usize>,
    pub d_hidden: usize,
    pub kernel: usize,
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub seed: u64,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Real labels become `1 - label_smoothing` in the D step.
    pub label_smoothing: f64,
    /// Global gradient-norm clip for both networks.
    pub grad_clip: Option<f64>,
    /// Accept a stretch pathway that does not dominate the noise.
    pub allow_weak_stretch: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 50,
            stretch_dim: 200,
            alpha: 10.0,
            batch_size: 60,
            g_steps_per_d_step: 2,
            image_size: 64,
            channels: 1,
            g_channels: vec![64, 32, 16, 8],
            d_channels: vec![8, 16, 32, 64],
            d_hidden: 64,
            kernel: 5,
            optimizer: OptimizerKind::adam_default(),
            iterations: 20000,
            seed: 0,
            checkpoint_every: 0,
            label_smoothing: 0.0,
            grad_clip: None,
            allow_weak_stretch: false,
        }
    }
}

impl GanConfig {
    /// Total variance of the stretched attributes over that of the noise.
    pub fn stretch_variance_ratio(&self) -> f64 {
        self.stretch_dim as f64 * STRETCHED_VARIANCE / (self.noise_dim as f64 * NOISE_VARIANCE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.noise_dim == 0 || self.stretch_dim == 0 {
            return bad("noise_dim and stretch_dim must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!("batch_size must be even and at least 2, got {}", self.batch_size));
        }
        if self.g_steps_per_d_step == 0 {
            return bad("g_steps_per_d_step must be positive".into());
        }
        if self.channels == 0 || self.kernel == 0 || self.d_hidden == 0 {
            return bad("channels, kernel and d_hidden must be positive".into());
        }
        if self.g_channels.is_empty() || self.d_channels.is_empty() {
            return bad("g_channels and d_channels must be non-empty".into());
        }
        if self.g_channels.iter().chain(&self.d_channels).any(|&c| c == 0) {
            return bad("channel widths must be positive".into());
        }
        let generated = 4usize << self.g_channels.len();
        if generated != self.image_size {
            return bad(format!(
                "{} generator stages produce {generated}px images, image_size is {}",
                self.g_channels.len(),
                self.image_size
            ));
        }
        if !self.image_size.is_multiple_of(1 << self.d_channels.len()) {
            return bad(format!(
                "{} discriminator stages do not divide image_size {}",
                self.d_channels.len(),
                self.image_size
            ));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing must be in [0, 0.5), got {}", self.label_smoothing));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        let dims_ok = self.stretch_dim >= 3 * self.noise_dim;
        let ratio = self.stretch_variance_ratio();
        if !dims_ok || ratio < 1.0 {
            let msg = format!(
                "stretched attributes do not dominate the noise: stretch_dim {} vs noise_dim {} (variance ratio {ratio:.3})",
                self.stretch_dim, self.noise_dim
            );
            if !self.allow_weak_stretch {
                return bad(format!("{msg}; set allow_weak_stretch to override"));
            }
            log::warn!("{msg}");
        }
        Ok(())
    }

    fn stretch_layer(&self, name: &str) -> LayerInit {
        LayerInit {
            name: name.into(),
            layer: LayerSpec::Dense {
                inputs: NUM_ATTRIBUTES,
                outputs: self.stretch_dim,
            },
            rule: InitRule::new(Principle::Forward, Activation::Relu),
        }
    }

    /// `g.stretch`, `g.fc`, `g.up1..`, `g.out`.
    pub fn generator_layers(&self) -> Vec<LayerInit> {
        let k = self.kernel;
        let mut layers = vec![
            self.stretch_layer("g.stretch"),
            LayerInit {
                name: "g.fc".into(),
                layer: LayerSpec::Dense {
                    inputs: self.noise_dim + self.stretch_dim,
                    outputs: 16 * self.g_channels[0],
                },
                rule: InitRule::new(Principle::Backward, Activation::Relu),
            },
        ];
        for i in 1..self.g_channels.len() {
            layers.push(LayerInit {
                name: format!("g.up{i}"),
                layer: LayerSpec::Conv(ConvSpec::square(
                    k,
                    2,
                    self.g_channels[i - 1],
                    self.g_channels[i],
                    Direction::Transposed,
                )),
                rule: InitRule::new(Principle::Backward, Activation::Relu),
            });
        }
        let last = *self.g_channels.last().expect("validated non-empty");
        layers.push(LayerInit {
            name: "g.out".into(),
            layer: LayerSpec::Conv(ConvSpec::square(k, 2, last, self.channels, Direction::Transposed)),
            rule: InitRule::new(Principle::Backward, Activation::Tanh),
        });
        layers
    }

    /// `d.conv0..`, `d.stretch`, `d.fc`, `d.out`.
    ///
    /// The sigmoid output uses the forward principle: its backward unit count
    /// is 1, which would put the logits deep in saturation.
    pub fn discriminator_layers(&self) -> Vec<LayerInit> {
        let mut layers = Vec::new();
        let mut cin = self.channels;
        for (i, &c) in self.d_channels.iter().enumerate() {
            layers.push(LayerInit {
                name: format!("d.conv{i}"),
                layer: LayerSpec::Conv(ConvSpec::square(self.kernel, 2, cin, c, Direction::Convolution)),
                rule: InitRule::new(Principle::Backward, Activation::Relu),
            });
            cin = c;
        }
        let side = self.image_size >> self.d_channels.len();
        layers.push(self.stretch_layer("d.stretch"));
        layers.push(LayerInit {
            name: "d.fc".into(),
            layer: LayerSpec::Dense {
                inputs: cin * side * side + self.stretch_dim,
                outputs: self.d_hidden,
            },
            rule: InitRule::new(Principle::Backward, Activation::Relu),
        });
        layers.push(LayerInit {
            name: "d.out".into(),
            layer: LayerSpec::Dense {
                inputs: self.d_hidden,
                outputs: 1,
            },
            rule: InitRule::new(Principle::Forward, Activation::Sigmoid).with_scale(output_std_scale(self.d_hidden, 1)),
        });
        layers
    }

    /// Append `G`; `z` is `[n, noise_dim]`, `y` is `[n, 12]`. Returns the
    /// `[n, channels, s, s]` tanh image.
    pub fn build_generator<T: Element>(&self, g: &mut Graph<T>, z: NodeId, y: NodeId, trainable: bool) -> Result<NodeId> {
        let layers = self.generator_layers();
        let n = g.shape(z)[0];
        let stretched = add_layer(g, &layers[0], y, trainable)?;
        let cond = g.concat("g.cond", z, stretched)?;
        let fc = add_layer(g, &layers[1], cond, trainable)?;
        let mut h = g.reshape("g.seed", fc, &[n, self.g_channels[0], 4, 4])?;
        for layer in &layers[2..] {
            h = add_layer(g, layer, h, trainable)?;
        }
        Ok(h)
    }

    /// Append `D`; `x` is `[n, channels, s, s]`, `y` is `[n, 12]`. Returns
    /// `[n, 1]` probabilities.
    pub fn build_discriminator<T: Element>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        y: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let layers = self.discriminator_layers();
        let convs = self.d_channels.len();
        let n = g.shape(x)[0];
        let mut h = x;
        for layer in &layers[..convs] {
            h = add_layer(g, layer, h, trainable)?;
        }
        let flat_len: usize = g.shape(h)[1..].iter().product();
        let flat = g.reshape("d.flat", h, &[n, flat_len])?;
        let stretched = add_layer(g, &layers[convs], y, trainable)?;
        let cond = g.concat("d.cond", flat, stretched)?;
        let hidden = add_layer(g, &layers[convs + 1], cond, trainable)?;
        add_layer(g, &layers[convs + 2], hidden, trainable)
    }
}

/// Seeded uniform noise over `[-1, 1]^dim`.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    dim: usize,
}

impl NoiseSource {
    pub fn new(seed: u64, dim: usize) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `[count, dim]` fresh draws.
    pub fn sample(&mut self, count: usize) -> Tensor<f32> {
        let rng = &mut self.rng;
        Tensor::from_fn(&[count, self.dim], |_| rng.random_range(-1.0f32..=1.0))
    }
}

/// Error unless every component of `y` lies within `±0.9` (plus rounding).
pub fn check_scaled_batch<T: Element>(y: &Tensor<T>) -> Result<()> {
    if y.shape().len() != 2 || y.shape()[1] != NUM_ATTRIBUTES {
        return Err(Error::Shape(format!("attribute batch must be [n, 12], got {:?}", y.shape())));
    }
    if let Some(i) = y
        .data()
        .iter()
        .position(|v| !(v.as_f64().abs() <= SCALED_LIMIT + SCALED_TOLERANCE))
    {
        return Err(Error::InvalidArgument(format!(
            "attribute {} of row {} is {}, outside the scaled range ±{SCALED_LIMIT}; was it scaled?",
            i % NUM_ATTRIBUTES,
            i / NUM_ATTRIBUTES,
            y.data()[i].as_f64()
        )));
    }
    Ok(())
}

/// The stretch layer alone: `relu(y·W + b)` for scaled `[n, 12]` input.
pub fn stretch<T: Element>(config: &GanConfig, params: &ParamSet<T>, prefix: &str, y: &Tensor<T>) -> Result<Tensor<T>> {
    check_scaled_batch(y)?;
    let layer = config.stretch_layer(&format!("{prefix}.stretch"));
    let mut g = Graph::new();
    let yi = g.input("y", y.shape(), false);
    let out = add_layer(&mut g, &layer, yi, false)?;
    g.forward(&[params], &[("y", y)])?;
    Ok(g.value(out)?.clone())
}

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    if let Some(bad) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!(
            "{name}[{bad}] = {} is not a probability",
            p[bad]
        )));
    }
    Ok(())
}

/// Cross entropy of the combined batch, real pairs labelled 1 and
/// generated pairs 0, probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_probs("d_real", d_real)?;
    check_probs("d_fake", d_fake)?;
    let n = d_real.len() + d_fake.len();
    if n == 0 {
        return Err(Error::InvalidArgument("d_loss needs at least one probability".into()));
    }
    let real: f64 = d_real.iter().map(|&p| clamp_prob(p).ln()).sum();
    let fake: f64 = d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum();
    Ok(-(real + fake) / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLoss {
    pub total: f64,
    pub d: f64,
    pub h: f64,
}

/// `G_loss_d + α·G_loss_h` with both parts.
pub fn g_loss<T: Element>(d_on_fake: &[f64], h_on_fake: &Tensor<T>, y: &Tensor<T>, alpha: f64) -> Result<GLoss> {
    check_probs("d_on_fake", d_on_fake)?;
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {alpha}")));
    }
    if h_on_fake.shape() != y.shape() || y.shape().len() != 2 || y.shape()[0] != d_on_fake.len() {
        return Err(Error::Shape(format!(
            "g_loss: {} discriminator outputs, H output {:?}, targets {:?}",
            d_on_fake.len(),
            h_on_fake.shape(),
            y.shape()
        )));
    }
    let n = d_on_fake.len() as f64;
    let d = -d_on_fake.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / n;
    let h = crate::perceptual::h_loss(h_on_fake, y)?;
    Ok(GLoss {
        total: d + alpha * h,
        d,
        h,
    })
}

/// Order-independent fingerprint of a parameter set's names, shapes and
/// exact values.
pub fn params_fingerprint(params: &ParamSet<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    for (name, t) in params {
        name.hash(&mut h);
        t.shape().hash(&mut h);
        for v in t.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

const GENERATE_CHUNK: usize = 32;

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GanConfig,
    pub stats: AttributeStats,
    pub params: ParamSet<f32>,
}

impl Generator {
    pub fn init(config: GanConfig, stats: AttributeStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config.generator_layers(), &mut rng)?;
        Ok(Generator { config, stats, params })
    }

    pub fn from_parts(config: GanConfig, stats: AttributeStats, params: ParamSet<f32>) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        check_params(&config.generator_layers(), &params)?;
        Ok(Generator { config, stats, params })
    }

    /// Images for each row of `y` (`[n, 12]`, scaled) paired with the same
    /// row of `z` (`[n, noise_dim]`).
    pub fn generate_batch(&self, y: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        check_scaled_batch(y)?;
        if z.shape() != [y.batch(), self.config.noise_dim] {
            return Err(Error::Shape(format!(
                "noise must be [{}, {}], got {:?}",
                y.batch(),
                self.config.noise_dim,
                z.shape()
            )));
        }
        let mut parts = Vec::new();
        let mut start = 0;
        while start < y.batch() {
            let end = (start + GENERATE_CHUNK).min(y.batch());
            let mut g = Graph::new();
            let zi = g.input("z", &[end - start, self.config.noise_dim], false);
            let yi = g.input("y", &[end - start, NUM_ATTRIBUTES], false);
            let img = self.config.build_generator(&mut g, zi, yi, false)?;
            g.forward(
                &[&self.params],
                &[("z", &z.slice_batch(start, end)), ("y", &y.slice_batch(start, end))],
            )?;
            parts.push(g.value(img)?.clone());
            start = end;
        }
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        Tensor::stack_batch(&refs)
    }

    /// `z.batch()` images conditioned on the single scaled vector `y`.
    pub fn generate(&self, y: &AttributeVector, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        y.check_scaled()?;
        let row: Vec<f32> = y.0.iter().map(|&v| v as f32).collect();
        let ys = Tensor::from_fn(&[z.batch(), NUM_ATTRIBUTES], |i| row[i % NUM_ATTRIBUTES]);
        self.generate_batch(&ys, z)
    }

    /// Noise for `count` images drawn from `seed`.
    pub fn noise(&self, seed: u64, count: usize) -> Tensor<f32> {
        NoiseSource::new(seed, self.config.noise_dim).sample(count)
    }

    pub fn to_checkpoint(&self, iteration: Option<u64>) -> Result<Checkpoint> {
        let meta = CheckpointMeta::now(serde_json::to_value(&self.config)?, Some(self.stats.clone()), iteration);
        Ok(Checkpoint::new(ModelKind::Generator, meta, self.params.clone()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Generator)?;
        Self::from_parts(ck.config()?, ck.stats()?.clone(), ck.tensors.clone())
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: GanConfig,
    pub params: ParamSet<f32>,
}

impl Discriminator {
    pub fn init(config: GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config.discriminator_layers(), &mut rng)?;
        Ok(Discriminator { config, params })
    }

    pub fn from_parts(config: GanConfig, params: ParamSet<f32>) -> Result<Self> {
        config.validate()?;
        check_params(&config.discriminator_layers(), &params)?;
        Ok(Discriminator { config, params })
    }

    /// `[n]` probabilities that each `(x, y)` pair is real.
    pub fn score(&self, x: &Tensor<f32>, y: &Tensor<f32>) -> Result<Vec<f64>> {
        check_scaled_batch(y)?;
        let mut g = Graph::new();
        let xi = g.input("x", x.shape(), false);
        let yi = g.input("y", y.shape(), false);
        let p = self.config.build_discriminator(&mut g, xi, yi, false)?;
        g.forward(&[&self.params], &[("x", x), ("y", y)])?;
        Ok(g.value(p)?.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn to_checkpoint(&self, stats: &AttributeStats, iteration: Option<u64>) -> Result<Checkpoint> {
        let meta = CheckpointMeta::now(serde_json::to_value(&self.config)?, Some(stats.clone()), iteration);
        Ok(Checkpoint::new(ModelKind::Discriminator, meta, self.params.clone()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Discriminator)?;
        Self::from_parts(ck.config()?, ck.tensors.clone())
    }
}

/// Real training images with their scaled attribute vectors.
#[derive(Clone, Debug)]
pub struct GanData {
    pub images: Tensor<f32>,
    pub targets: Tensor<f32>,
    pub stats: AttributeStats,
}

impl GanData {
    /// The training split of `ds`, scaled with the dataset's own statistics.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let stats = ds.stats()?.clone();
        let idx = ds.indices(Split::Train);
        if idx.is_empty() {
            return Err(Error::InvalidArgument("dataset has no training samples".into()));
        }
        Ok(GanData {
            images: ds.batch_images(&idx)?,
            targets: ds.batch_targets(&idx, &stats)?,
            stats,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCurvePoint {
    pub iteration: usize,
    pub d_loss: f64,
    /// Means over the iteration's generator steps.
    pub g_loss: f64,
    pub g_loss_d: f64,
    pub g_loss_h: f64,
}

pub fn gan_curve_csv(curve: &[GanCurvePoint]) -> String {
    let mut s = String::from("iteration,d_loss,g_loss,g_loss_d,g_loss_h\n");
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.iteration, p.d_loss, p.g_loss, p.g_loss_d, p.g_loss_h
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub curve: Vec<GanCurvePoint>,
    /// Fingerprints of `H`'s parameters before and after training.
    pub h_fingerprint: (u64, u64),
    pub checkpoints: Vec<PathBuf>,
}

/// Epoch-shuffled index stream.
struct Sampler {
    order: Vec<usize>,
    len: usize,
}

impl Sampler {
    fn draw<R: Rng>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        while self.order.len() < count {
            let mut fresh: Vec<usize> = (0..self.len).collect();
            fresh.shuffle(rng);
            self.order.extend(fresh);
        }
        self.order.drain(..count).collect()
    }
}

fn clip_gradients(grads: &mut Gradients<f32>, max_norm: Option<f64>) {
    let Some(max_norm) = max_norm else { return };
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn save_pair(
    dir: &Path,
    tag: &str,
    gen: &Generator,
    disc: &Discriminator,
    opts: (&OptimizerState<f32>, &OptimizerState<f32>),
    iteration: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let g_path = dir.join(format!("{tag}generator-{iteration:06}.ckpt"));
    let d_path = dir.join(format!("{tag}discriminator-{iteration:06}.ckpt"));
    gen.to_checkpoint(Some(iteration as u64))?
        .with_optimizer(opts.0.clone())
        .save(&g_path)?;
    disc.to_checkpoint(&gen.stats, Some(iteration as u64))?
        .with_optimizer(opts.1.clone())
        .save(&d_path)?;
    Ok(vec![g_path, d_path])
}

struct StepGraphs {
    fake: Graph<f32>,
    fake_out: NodeId,
    d: Graph<f32>,
    d_loss: NodeId,
    g: Graph<f32>,
    g_total: NodeId,
    g_d: NodeId,
    g_h: NodeId,
}

impl StepGraphs {
    fn build(config: &GanConfig, h: &PerceptualModel) -> Result<Self> {
        let (half, n) = (config.batch_size / 2, config.batch_size);
        let (c, s) = (config.channels, config.image_size);

        let mut fake = Graph::new();
        let z = fake.input("z", &[half, config.noise_dim], false);
        let y = fake.input("y", &[half, NUM_ATTRIBUTES], false);
        let fake_out = config.build_generator(&mut fake, z, y, false)?;

        let mut d = Graph::new();
        let x = d.input("x", &[n, c, s, s], false);
        let y = d.input("y", &[n, NUM_ATTRIBUTES], false);
        let q = d.input("q", &[n, 1], false);
        let p = config.build_discriminator(&mut d, x, y, true)?;
        let d_loss = d.binary_cross_entropy("d.loss", p, q)?;

        let mut g = Graph::new();
        let z = g.input("z", &[n, config.noise_dim], false);
        let y = g.input("y", &[n, NUM_ATTRIBUTES], false);
        let ones = g.input("ones", &[n, 1], false);
        let img = config.build_generator(&mut g, z, y, true)?;
        let p = config.build_discriminator(&mut g, img, y, false)?;
        let g_d = g.binary_cross_entropy("g.loss_d", p, ones)?;
        let pred = h.arch.build(&mut g, img, false)?;
        let g_h = g.quadratic_loss("g.loss_h", pred, y)?;
        let g_total = g.axpy("g.loss", g_d, g_h, config.alpha)?;
        Ok(StepGraphs {
            fake,
            fake_out,
            d,
            d_loss,
            g,
            g_total,
            g_d,
            g_h,
        })
    }
}

/// Alternate one `D` update on half real, half generated pairs with
/// `g_steps_per_d_step` `G` updates on full generated batches. `H` is only
/// read; gradients pass through it to `G`.
pub fn gan_train(
    data: &GanData,
    perceptual: &PerceptualModel,
    config: &GanConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<GanOutcome> {
    config.validate()?;
    if data.stats != perceptual.stats {
        return Err(Error::StatsMismatch(
            "the perceptual model was trained with different attribute statistics than this dataset".into(),
        ));
    }
    let (c, s) = (config.channels, config.image_size);
    if data.images.shape().len() != 4 || data.images.shape()[1..] != [c, s, s] {
        return Err(Error::Shape(format!(
            "GAN expects [n, {c}, {s}, {s}] images, dataset has {:?}",
            data.images.shape()
        )));
    }
    if perceptual.arch.image_size != s || perceptual.arch.channels != c {
        return Err(Error::Shape(format!(
            "perceptual model reads {}px images with {} channels, GAN produces {s}px with {c}",
            perceptual.arch.image_size, perceptual.arch.channels
        )));
    }
    if data.targets.shape() != [data.images.batch(), NUM_ATTRIBUTES] {
        return Err(Error::Shape(format!("targets {:?} do not match images", data.targets.shape())));
    }
    check_scaled_batch(&data.targets)?;

    let h_before = params_fingerprint(&perceptual.params);
    let mut gen = Generator::init(config.clone(), data.stats.clone(), config.seed)?;
    let mut disc = Discriminator::init(config.clone(), config.seed.wrapping_add(1))?;
    let mut g_opt = OptimizerState::<f32>::new(config.optimizer);
    let mut d_opt = OptimizerState::<f32>::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut noise = NoiseSource::new(config.seed.wrapping_add(2), config.noise_dim);
    let mut sampler = Sampler {
        order: Vec::new(),
        len: data.images.batch(),
    };
    let mut graphs = StepGraphs::build(config, perceptual)?;

    let (half, n) = (config.batch_size / 2, config.batch_size);
    let labels = Tensor::from_fn(&[n, 1], |i| if i < half { 1.0 - config.label_smoothing as f32 } else { 0.0 });
    let ones = Tensor::filled(&[n, 1], 1.0f32);
    let mut curve = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();

    for it in 1..=config.iterations {
        let step = (|| -> Result<GanCurvePoint> {
            let real = sampler.draw(half, &mut rng);
            let cond = sampler.draw(half, &mut rng);
            let y_fake = gather(&data.targets, &cond)?;
            let z = noise.sample(half);
            graphs.fake.forward(&[&gen.params], &[("z", &z), ("y", &y_fake)])?;
            let fake = graphs.fake.value(graphs.fake_out)?;
            let x = Tensor::stack_batch(&[&gather(&data.images, &real)?, fake])?;
            let y = Tensor::stack_batch(&[&gather(&data.targets, &real)?, &y_fake])?;
            graphs.d.forward(&[&disc.params], &[("x", &x), ("y", &y), ("q", &labels)])?;
            let d_loss = graphs.d.value(graphs.d_loss)?.item() as f64;
            if !d_loss.is_finite() {
                return Err(Error::NonFinite(format!("D loss at iteration {it}")));
            }
            let mut grads = graphs.d.backprop(graphs.d_loss)?;
            clip_gradients(&mut grads, config.grad_clip);
            d_opt.step(&mut disc.params, &grads)?;

            let mut sums = [0.0f64; 3];
            for _ in 0..config.g_steps_per_d_step {
                let idx = sampler.draw(n, &mut rng);
                let y = gather(&data.targets, &idx)?;
                let z = noise.sample(n);
                graphs.g.forward(
                    &[&gen.params, &disc.params, &perceptual.params],
                    &[("z", &z), ("y", &y), ("ones", &ones)],
                )?;
                let vals = [graphs.g_total, graphs.g_d, graphs.g_h]
                    .map(|id| graphs.g.value(id).map(|t| t.item() as f64));
                for (acc, v) in sums.iter_mut().zip(vals) {
                    let v = v?;
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("G loss at iteration {it}")));
                    }
                    *acc += v;
                }
                let mut grads = graphs.g.backprop(graphs.g_total)?;
                clip_gradients(&mut grads, config.grad_clip);
                g_opt.step(&mut gen.params, &grads)?;
            }
            let k = config.g_steps_per_d_step as f64;
            Ok(GanCurvePoint {
                iteration: it,
                d_loss,
                g_loss: sums[0] / k,
                g_loss_d: sums[1] / k,
                g_loss_h: sums[2] / k,
            })
        })();
        let point = match step {
            Ok(p) => p,
            Err(Error::NonFinite(what)) => {
                let mut msg = format!("non-finite value in {what}");
                if let Some(dir) = checkpoint_dir {
                    let saved = save_pair(dir, "diverged-", &gen, &disc, (&g_opt, &d_opt), it)?;
                    msg.push_str(&format!("; diagnostic checkpoints in {}", dir.display()));
                    checkpoints.extend(saved);
                }
                return Err(Error::Diverged(msg));
            }
            Err(e) => return Err(e),
        };
        if it % 100 == 0 {
            log::info!(
                "gan iteration {it}: D {:.4}, G_d {:.4}, G_h {:.4}",
                point.d_loss,
                point.g_loss_d,
                point.g_loss_h
            );
        }
        curve.push(point);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (it % config.checkpoint_every == 0 || it == config.iterations) {
                checkpoints.extend(save_pair(dir, "", &gen, &disc, (&g_opt, &d_opt), it)?);
            }
        }
    }
    let h_after = params_fingerprint(&perceptual.params);
    Ok(GanOutcome {
        generator: gen,
        discriminator: disc,
        curve,
        h_fingerprint: (h_before, h_after),
        checkpoints,
    })
}
