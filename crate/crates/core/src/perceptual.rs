//! The perceptual model `H`: a compact convolutional regressor from a
//! texture image to its 12 scaled attributes, trained with the quadratic
//! loss `(1/2n) Σ ‖H(x) - y‖²`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::mirror;
use crate::attributes::{AttributeStats, NUM_ATTRIBUTES};
use crate::checkpoint::{Checkpoint, CheckpointMeta, ModelKind};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamSet};
use crate::init::{output_std_scale, Activation, ConvSpec, Direction, InitRule, LayerInit, LayerSpec, Principle};
use crate::model::{add_layer, check_params, init_params};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualArch {
    pub image_size: usize,
    pub channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for PerceptualArch {
    fn default() -> Self {
        PerceptualArch {
            image_size: 64,
            channels: 1,
            conv_channels: vec![16, 32, 64, 64],
            kernel: 5,
            stride: 2,
        }
    }
}

impl PerceptualArch {
    pub fn layers(&self) -> Result<Vec<LayerInit>> {
        if self.conv_channels.is_empty() {
            return Err(Error::InvalidArgument("perceptual model needs at least one conv layer".into()));
        }
        let mut layers = Vec::new();
        let mut cin = self.channels;
        for (i, &c) in self.conv_channels.iter().enumerate() {
            layers.push(LayerInit {
                name: format!("h.conv{i}"),
                layer: LayerSpec::Conv(ConvSpec::square(self.kernel, self.stride, cin, c, Direction::Convolution)),
                rule: InitRule::new(Principle::Backward, Activation::Relu),
            });
            cin = c;
        }
        layers.push(LayerInit {
            name: "h.out".into(),
            layer: LayerSpec::Dense {
                inputs: cin,
                outputs: NUM_ATTRIBUTES,
            },
            rule: InitRule::new(Principle::Backward, Activation::Tanh)
                .with_scale(output_std_scale(cin, NUM_ATTRIBUTES)),
        });
        Ok(layers)
    }

    /// Append `H` reading `[n, c, s, s]` images from `x`; returns the
    /// `[n, 12]` tanh output.
    pub fn build<T: Element>(&self, g: &mut Graph<T>, x: NodeId, trainable: bool) -> Result<NodeId> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::Shape(format!(
                "perceptual model expects [n, {}, {}, {}] images, got {s:?}",
                self.channels, self.image_size, self.image_size
            )));
        }
        let layers = self.layers()?;
        let (convs, out) = layers.split_at(layers.len() - 1);
        let mut h = x;
        for layer in convs {
            h = add_layer(g, layer, h, trainable)?;
        }
        let pooled = g.global_avg_pool("h.pool", h)?;
        add_layer(g, &out[0], pooled, trainable)
    }
}

/// `(1/2n) Σᵢ ‖pᵢ - tᵢ‖²` over `[n, m]` tensors.
pub fn h_loss<T: Element>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    if predictions.shape() != targets.shape() || predictions.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "h_loss expects equal [n, m] shapes, got {:?} and {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let n = predictions.shape()[0] as f64;
    let ss: f64 = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(ss / (2.0 * n))
}

/// Per-attribute error deviation `sqrt(loss * 2 / 12)` implied by a mean
/// quadratic loss over 12 attributes.
pub fn eval_sigma(loss: f64) -> Result<f64> {
    if !(loss >= 0.0) {
        return Err(Error::InvalidArgument(format!("loss must be non-negative, got {loss}")));
    }
    Ok((loss * 2.0 / NUM_ATTRIBUTES as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub loss: f64,
    pub sigma: f64,
    pub samples: usize,
    /// Root-mean-square error per attribute.
    pub per_attribute_rmse: [f64; NUM_ATTRIBUTES],
}

/// Row `i` of every tensor in `indices`, stacked.
pub fn gather<T: Element>(t: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        if i >= t.batch() {
            return Err(Error::InvalidArgument(format!("row {i} out of range {}", t.batch())));
        }
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}

#[derive(Clone, Debug)]
pub struct PerceptualModel {
    pub arch: PerceptualArch,
    pub params: ParamSet<f32>,
    pub stats: AttributeStats,
}

const PREDICT_CHUNK: usize = 64;

impl PerceptualModel {
    pub fn init(arch: PerceptualArch, stats: AttributeStats, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&arch.layers()?, &mut rng)?;
        Ok(PerceptualModel { arch, params, stats })
    }

    pub fn from_parts(arch: PerceptualArch, params: ParamSet<f32>, stats: AttributeStats) -> Result<Self> {
        check_params(&arch.layers()?, &params)?;
        stats.validate()?;
        Ok(PerceptualModel { arch, params, stats })
    }

    /// `[n, 12]` predictions for `[n, c, s, s]` images, each in `(-1, 1)`.
    pub fn predict(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::Shape(format!("expected [n, c, h, w] images, got {s:?}")));
        }
        let mut out = Vec::with_capacity(s[0] * NUM_ATTRIBUTES);
        let mut start = 0;
        let mut cached: Option<(usize, Graph<f32>, NodeId)> = None;
        while start < s[0] {
            let end = (start + PREDICT_CHUNK).min(s[0]);
            let n = end - start;
            if cached.as_ref().map(|c| c.0) != Some(n) {
                let mut g = Graph::new();
                let x = g.input("x", &[n, s[1], s[2], s[3]], false);
                let y = self.arch.build(&mut g, x, false)?;
                cached = Some((n, g, y));
            }
            let (_, g, y) = cached.as_mut().expect("built above");
            let chunk = images.slice_batch(start, end);
            g.forward(&[&self.params], &[("x", &chunk)])?;
            out.extend_from_slice(g.value(*y)?.data());
            start = end;
        }
        Tensor::new(vec![s[0], NUM_ATTRIBUTES], out)
    }

    pub fn evaluate(&self, split: &str, images: &Tensor<f32>, targets: &Tensor<f32>) -> Result<EvalReport> {
        let pred = self.predict(images)?;
        let loss = h_loss(&pred, targets)?;
        let n = targets.batch();
        let mut rmse = [0.0; NUM_ATTRIBUTES];
        for (i, (p, t)) in pred.data().iter().zip(targets.data()).enumerate() {
            rmse[i % NUM_ATTRIBUTES] += ((p - t) as f64).powi(2);
        }
        rmse.iter_mut().for_each(|v| *v = (*v / n as f64).sqrt());
        Ok(EvalReport {
            split: split.into(),
            loss,
            sigma: eval_sigma(loss)?,
            samples: n,
            per_attribute_rmse: rmse,
        })
    }

    pub fn to_checkpoint(&self, iteration: Option<u64>) -> Result<Checkpoint> {
        let meta = CheckpointMeta::now(serde_json::to_value(&self.arch)?, Some(self.stats.clone()), iteration);
        Ok(Checkpoint::new(ModelKind::Perceptual, meta, self.params.clone()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Perceptual)?;
        Self::from_parts(ck.config()?, ck.tensors.clone(), ck.stats()?.clone())
    }
}

/// Images and scaled targets for both splits.
#[derive(Clone, Debug)]
pub struct PerceptualData {
    pub train_x: Tensor<f32>,
    pub train_y: Tensor<f32>,
    pub val_x: Tensor<f32>,
    pub val_y: Tensor<f32>,
}

impl PerceptualData {
    pub fn from_dataset(ds: &Dataset, stats: &AttributeStats) -> Result<Self> {
        let train = ds.indices(Split::Train);
        let val = ds.indices(Split::Validation);
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "perceptual training needs both splits ({} train, {} validation samples)",
                train.len(),
                val.len()
            )));
        }
        Ok(PerceptualData {
            train_x: ds.batch_images(&train)?,
            train_y: ds.batch_targets(&train, stats)?,
            val_x: ds.batch_images(&val)?,
            val_y: ds.batch_targets(&val, stats)?,
        })
    }

    fn validate(&self) -> Result<()> {
        for (name, x, y) in [("train", &self.train_x, &self.train_y), ("validation", &self.val_x, &self.val_y)] {
            if x.shape().len() != 4 || y.shape().len() != 2 || y.shape()[1] != NUM_ATTRIBUTES {
                return Err(Error::Shape(format!(
                    "{name} split: images {:?}, targets {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
            if x.numel() == 0 || x.batch() != y.batch() {
                return Err(Error::InvalidArgument(format!(
                    "{name} split is empty or misaligned ({} images, {} targets)",
                    x.batch(),
                    y.batch()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Evaluations without validation improvement before stopping.
    pub patience: usize,
    pub optimizer: OptimizerKind,
    /// The learning rate is multiplied by `lr_decay` every `lr_decay_every`
    /// iterations; 0 keeps it constant.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Randomly mirror training images left-right and top-bottom.
    pub flips: bool,
    pub seed: u64,
}

impl PerceptualConfig {
    /// Learning-rate multiplier in effect at iteration `it` (1-based).
    pub fn lr_scale(&self, it: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return 1.0;
        }
        self.lr_decay.powi(((it - 1) / self.lr_decay_every) as i32)
    }
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            iterations: 4000,
            batch_size: 32,
            eval_every: 100,
            patience: 10,
            optimizer: OptimizerKind::rmsprop_default(),
            lr_decay: 0.5,
            lr_decay_every: 2500,
            flips: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PerceptualOutcome {
    /// Parameters from the evaluation with the lowest validation loss.
    pub model: PerceptualModel,
    pub curve: Vec<CurvePoint>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// CSV with header `iteration,train_loss,val_loss`; `val_loss` is empty on
/// iterations without an evaluation.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iteration,train_loss,val_loss\n");
    for p in curve {
        let val = p.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", p.iteration, p.train_loss, val));
    }
    s
}

pub fn train_perceptual(
    data: &PerceptualData,
    arch: &PerceptualArch,
    stats: &AttributeStats,
    config: &PerceptualConfig,
) -> Result<PerceptualOutcome> {
    data.validate()?;
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument("batch_size and eval_every must be positive".into()));
    }
    if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        return Err(Error::InvalidArgument(format!("lr_decay must be in (0, 1], got {}", config.lr_decay)));
    }
    let mut model = PerceptualModel::init(arch.clone(), stats.clone(), config.seed)?;
    let mut opt = OptimizerState::<f32>::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let batch = config.batch_size.min(data.train_x.batch());
    let mut g = Graph::<f32>::new();
    let s = data.train_x.shape();
    let x = g.input("x", &[batch, s[1], s[2], s[3]], false);
    let pred = arch.build(&mut g, x, true)?;
    let y = g.input("y", &[batch, NUM_ATTRIBUTES], false);
    let loss = g.quadratic_loss("h.loss", pred, y)?;

    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(config.iterations);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    for it in 1..=config.iterations {
        if order.len() < batch {
            let mut fresh: Vec<usize> = (0..data.train_x.batch()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let idx: Vec<usize> = order.drain(..batch).collect();
        let mut xb = gather(&data.train_x, &idx)?;
        if config.flips {
            for i in 0..batch {
                let (h, v) = rng.random::<(bool, bool)>();
                mirror(&mut xb, i, h, v)?;
            }
        }
        let yb = gather(&data.train_y, &idx)?;
        g.forward(&[&model.params], &[("x", &xb), ("y", &yb)])?;
        let train_loss = g.value(loss)?.item() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(format!("perceptual loss is {train_loss} at iteration {it}")));
        }
        let grads = g.backprop(loss)?;
        opt.step_scaled(&mut model.params, &grads, config.lr_scale(it))?;

        let mut point = CurvePoint {
            iteration: it,
            train_loss,
            val_loss: None,
        };
        if it % config.eval_every == 0 || it == config.iterations {
            let val = h_loss(&model.predict(&data.val_x)?, &data.val_y)?;
            point.val_loss = Some(val);
            log::info!("perceptual iteration {it}: train {train_loss:.5}, validation {val:.5}");
            if val < best.0 {
                best = (val, it, model.params.clone());
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        curve.push(point);
        if since_best >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (best_val_loss, best_iteration, params) = best;
    model.params = params;
    Ok(PerceptualOutcome {
        model,
        curve,
        best_iteration,
        best_val_loss,
        stopped_early,
    })
}
