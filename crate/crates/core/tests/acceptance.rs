//! Acceptance checks, one line per criterion.
//!
//! Criteria 8 to 10 train real models and take a long time. Set
//! `TEXGEN_ACCEPTANCE_QUICK=1` to report them as skipped.

use std::error::Error as StdError;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use texgen::attributes::{scale_one, AttributeVector, DIRECTIONALITY, NUM_ATTRIBUTES, SCALED_LIMIT};
use texgen::checkpoint::Checkpoint;
use texgen::dataset::{build_dataset, Dataset, DatasetConfig, Split};
use texgen::gan::{gan_train, Discriminator, GanConfig, GanData, GanOutcome, Generator};
use texgen::gradcheck::GradCheck;
use texgen::init::{
    fanout_avg, sampling_std, truncated_variance_factor, Activation, ConvSpec, Direction, InitRule, LayerInit,
    LayerSpec, Principle,
};
use texgen::model::init_params;
use texgen::perceptual::{
    eval_sigma, h_loss, train_perceptual, PerceptualArch, PerceptualConfig, PerceptualData, PerceptualModel,
};
use texgen::probe::ReluStack;
use texgen::spectrum::anisotropy;
use texgen::{Graph, NodeId, ParamSet, Tensor};

type Res<T> = Result<T, Box<dyn StdError>>;
/// Max relative error, elements checked and the worst element.
type GradResult = (f64, usize, String);

const SEED: u64 = 0;
const DESK_SOURCES: usize = 4000;
const H_ITERATIONS: usize = 10_000;
const GAN_ITERATIONS: usize = 5_000;
/// Real attribute vectors, each with its own noise, swept in directionality.
const STEERING_BASES: usize = 8;
const PEARSON_CONDITIONS: usize = 50;
/// Fraction of the GAN curve averaged for the ablation.
const FINAL_WINDOW: f64 = 0.1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Res<Verdict> {
    Ok(Verdict { pass, detail })
}

#[derive(Default)]
struct Tally {
    passed: usize,
    failed: usize,
    skipped: usize,
}

impl Tally {
    fn run(&mut self, id: u8, name: &str, budget: Duration, check: impl FnOnce() -> Res<Verdict>) {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= budget;
        let pass = pass && in_time;
        let timing = format!(
            "{:.1}s of {}s{}",
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
        println!("{} {id:>2} {name}: {detail} ({timing})", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }

    fn skip(&mut self, id: u8, name: &str, why: &str) {
        println!("SKIP {id:>2} {name}: {why}");
        self.skipped += 1;
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Outputs of one 1-D convolution that read each input position, counted
/// directly, averaged over one stride period well inside the signal.
fn brute_force_fanout(k: u64, d: u64) -> Ratio<u64> {
    let len = 8 * (k + d);
    let mut reach = vec![0u64; len as usize];
    let mut start = 0;
    while start + k <= len {
        for p in start..start + k {
            reach[p as usize] += 1;
        }
        start += d;
    }
    let first = 2 * (k + d) / d * d;
    Ratio::new((first..first + d).map(|p| reach[p as usize]).sum(), d)
}

fn fanout_oracle() -> Res<Verdict> {
    let mut mismatches = Vec::new();
    let mut pairs = 0;
    for k in 1..=16u64 {
        for d in 1..=k {
            pairs += 1;
            let (got, want) = (fanout_avg(k, d)?, brute_force_fanout(k, d));
            if got != want {
                mismatches.push(format!("k={k} d={d}: {got} vs {want}"));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{pairs} (k, d) pairs, {} mismatches {:?}", mismatches.len(), mismatches),
    )
}

fn init_statistics() -> Res<Verdict> {
    let layer = LayerInit {
        name: "conv".into(),
        layer: LayerSpec::Conv(ConvSpec::square(5, 2, 625, 64, Direction::Convolution)),
        rule: InitRule::new(Principle::Backward, Activation::Relu),
    };
    let n = layer.n()?;
    let target = 2.0 / 400.0;
    let drawn = sampling_std(layer.target_std()?).powi(2);
    let (w, _) = layer.sample::<f64, _>(&mut ChaCha8Rng::seed_from_u64(SEED))?;
    let var = w.variance();
    let rel = (var - target).abs() / target;
    verdict(
        n == 400.0 && w.numel() == 1_000_000 && rel < 0.03,
        format!(
            "n = {n}, {} samples, realized variance {var:.6} vs {target} (rel {rel:.4}); untruncated draw variance {drawn:.6} times shrink {:.4}",
            w.numel(),
            truncated_variance_factor(2.0)
        ),
    )
}

fn gradient_variance() -> Res<Verdict> {
    let stack = ReluStack::default();
    let trials = 200;
    let mut ok = 0;
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..trials {
        let ratios = stack.trial(&mut ChaCha8Rng::seed_from_u64(t))?;
        if ratios.iter().all(|r| (0.7..=1.4).contains(r)) {
            ok += 1;
        }
        for r in ratios {
            worst = (worst.0.min(r), worst.1.max(r));
        }
    }
    let frac = ok as f64 / trials as f64;
    verdict(
        frac >= 0.9,
        format!(
            "{ok}/{trials} trials with every ratio in [0.7, 1.4]; ratio range [{:.3}, {:.3}]",
            worst.0, worst.1
        ),
    )
}

struct GradCase {
    graph: Graph<f64>,
    params: ParamSet<f64>,
    inputs: Vec<(String, Tensor<f64>)>,
    rng: ChaCha8Rng,
}

impl GradCase {
    fn new(seed: u64) -> Self {
        GradCase {
            graph: Graph::new(),
            params: ParamSet::new(),
            inputs: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: &[usize], scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.rng.random_range(-scale..scale))
    }

    fn input(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        let t = self.uniform(shape, 1.0);
        self.feed(name, t);
        self.graph.input(name, shape, requires_grad)
    }

    fn feed(&mut self, name: &str, t: Tensor<f64>) {
        self.inputs.push((name.into(), t));
    }

    fn param(&mut self, name: &str, shape: &[usize], scale: f64) -> NodeId {
        let t = self.uniform(shape, scale);
        self.params.insert(name.into(), t);
        self.graph.param(name, shape, true)
    }

    fn max_rel_err(mut self, loss: NodeId) -> Res<GradResult> {
        let feed: Vec<(&str, &Tensor<f64>)> = self.inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let r = GradCheck::default().run(&mut self.graph, &self.params, &feed, loss)?;
        if r.checked == 0 {
            return Err("nothing was checked".into());
        }
        Ok((r.max_rel_err, r.checked, r.worst))
    }
}

fn tiny_gan() -> GanConfig {
    GanConfig {
        noise_dim: 3,
        stretch_dim: 12,
        image_size: 16,
        g_channels: vec![3, 2],
        d_channels: vec![2, 3],
        d_hidden: 4,
        ..GanConfig::default()
    }
}

fn tiny_arch() -> PerceptualArch {
    PerceptualArch {
        image_size: 16,
        conv_channels: vec![3, 4],
        ..PerceptualArch::default()
    }
}

fn gradient_cases() -> Res<Vec<(&'static str, GradResult)>> {
    let mut out = Vec::new();

    let mut c = GradCase::new(1);
    let x = c.input("x", &[4, 5], true);
    let w = c.param("w", &[5, 3], 1.0);
    let b = c.param("b", &[3], 0.5);
    let h = c.graph.dense("fc", x, w, b)?;
    let r = c.graph.relu("relu", h);
    let y = c.input("y", &[4, 3], false);
    let loss = c.graph.quadratic_loss("loss", r, y)?;
    out.push(("dense+relu", c.max_rel_err(loss)?));

    let mut c = GradCase::new(2);
    let x = c.input("x", &[2, 2, 7, 6], true);
    let w = c.param("w", &[3, 2, 5, 5], 0.3);
    let b = c.param("b", &[3], 0.3);
    let h = c.graph.conv2d("conv", x, w, b, 5, 2)?;
    let t = c.graph.tanh("tanh", h);
    let p = c.graph.global_avg_pool("gap", t)?;
    let y = c.input("y", &[2, 3], false);
    let loss = c.graph.quadratic_loss("loss", p, y)?;
    out.push(("conv+tanh+pool", c.max_rel_err(loss)?));

    let mut c = GradCase::new(3);
    let x = c.input("x", &[2, 3, 3, 3], true);
    let w = c.param("w", &[3, 2, 5, 5], 0.3);
    let b = c.param("b", &[2], 0.3);
    let h = c.graph.conv_transpose2d("up", x, w, b, 5, 2)?;
    let s = c.graph.sigmoid("sigmoid", h);
    let f = c.graph.reshape("flat", s, &[2, 72])?;
    let y = c.input("y", &[2, 72], false);
    let loss = c.graph.quadratic_loss("loss", f, y)?;
    out.push(("transposed conv+sigmoid", c.max_rel_err(loss)?));

    let arch = tiny_arch();
    let mut c = GradCase::new(4);
    c.params = init_params(&arch.layers()?, &mut c.rng)?;
    let x = c.input("x", &[3, 1, 16, 16], false);
    let pred = arch.build(&mut c.graph, x, true)?;
    let y = c.input("y", &[3, NUM_ATTRIBUTES], false);
    let loss = c.graph.quadratic_loss("h.loss", pred, y)?;
    out.push(("perceptual loss", c.max_rel_err(loss)?));

    let gan = tiny_gan();
    let mut c = GradCase::new(5);
    c.params = init_params(&gan.discriminator_layers(), &mut c.rng)?;
    let x = c.input("x", &[2, 1, 16, 16], false);
    let y = c.input("y", &[2, NUM_ATTRIBUTES], false);
    let q = c.graph.input("q", &[2, 1], false);
    c.feed("q", Tensor::new(vec![2, 1], vec![1.0, 0.0])?);
    let p = gan.build_discriminator(&mut c.graph, x, y, true)?;
    let loss = c.graph.binary_cross_entropy("d.loss", p, q)?;
    out.push(("discriminator loss", c.max_rel_err(loss)?));

    let mut c = GradCase::new(6);
    let mut params: ParamSet<f64> = init_params(&gan.generator_layers(), &mut c.rng)?;
    params.extend(init_params::<f64, _>(&gan.discriminator_layers(), &mut c.rng)?);
    params.extend(init_params::<f64, _>(&arch.layers()?, &mut c.rng)?);
    c.params = params;
    let z = c.input("z", &[2, 3], false);
    let y = c.graph.input("y", &[2, NUM_ATTRIBUTES], false);
    let yv = c.uniform(&[2, NUM_ATTRIBUTES], SCALED_LIMIT);
    c.feed("y", yv);
    let ones = c.graph.input("ones", &[2, 1], false);
    c.feed("ones", Tensor::filled(&[2, 1], 1.0));
    let img = gan.build_generator(&mut c.graph, z, y, true)?;
    let p = gan.build_discriminator(&mut c.graph, img, y, false)?;
    let gd = c.graph.binary_cross_entropy("g.loss_d", p, ones)?;
    let pred = arch.build(&mut c.graph, img, false)?;
    let gh = c.graph.quadratic_loss("g.loss_h", pred, y)?;
    let loss = c.graph.axpy("g.loss", gd, gh, 10.0)?;
    out.push(("generator loss", c.max_rel_err(loss)?));
    Ok(out)
}

fn gradient_correctness() -> Res<Verdict> {
    let cases = gradient_cases()?;
    let worst = cases.iter().map(|(_, (e, _, _))| *e).fold(0.0, f64::max);
    let checked: usize = cases.iter().map(|(_, (_, n, _))| n).sum();
    let summary: Vec<String> = cases.iter().map(|(name, (e, _, _))| format!("{name} {e:.1e}")).collect();
    verdict(
        worst < 1e-4,
        format!("{checked} elements, max relative error {worst:.2e} [{}]", summary.join(", ")),
    )
}

fn scaling_properties() -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = 1_000_000;
    let mut bounded = true;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let f: f64 = StandardNormal.sample(&mut rng);
        let v = scale_one(f, 0.0, 1.0);
        bounded &= v.abs() <= SCALED_LIMIT;
        sum += v;
        sq += v * v;
    }
    for f in [-1e300, -50.0, -3.0, 3.0, 50.0, 1e300] {
        bounded &= scale_one(f, 0.0, 1.0).abs() <= SCALED_LIMIT;
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    let rel = (var - 0.0896).abs() / 0.0896;
    verdict(
        bounded && rel <= 0.03,
        format!("{n} samples, bounded: {bounded}, variance {var:.5} vs 0.0896 (rel {rel:.4})"),
    )
}

fn sigma_pins() -> Res<Verdict> {
    let pinned = eval_sigma(0.01161)?;
    let mut exact = true;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..1000 {
        let eps: f64 = rng.random_range(-1.0..1.0);
        let p = Tensor::<f64>::filled(&[4, NUM_ATTRIBUTES], eps);
        let s = eval_sigma(h_loss(&p, &Tensor::zeros(&[4, NUM_ATTRIBUTES]))?)?;
        exact &= (s - eps.abs()).abs() <= 4.0 * f64::EPSILON * eps.abs().max(f64::MIN_POSITIVE);
    }
    verdict(
        (pinned - 0.0440).abs() <= 0.0001 && exact,
        format!("eval_sigma(0.01161) = {pinned:.5}; uniform error recovered exactly: {exact}"),
    )
}

fn augmentation_counts() -> Res<Verdict> {
    let full = build_dataset(&DatasetConfig {
        sources: 450,
        side: 512,
        crop: 448,
        step: 8,
        image_size: 299,
        ..DatasetConfig::default()
    })?;
    let desk = build_dataset(&DatasetConfig {
        sources: 50,
        side: 64,
        crop: 48,
        step: 8,
        ..DatasetConfig::default()
    })?;
    verdict(
        full.len() == 36450 && desk.len() == 450,
        format!("512/448/8 on 450 sources: {}; 64/48/8 on 50 sources: {}", full.len(), desk.len()),
    )
}

struct Desk {
    dataset: Dataset,
    perceptual: Option<PerceptualModel>,
    steered: Option<(GanOutcome, Duration)>,
}

fn desk_dataset() -> Res<Dataset> {
    let ds = build_dataset(&DatasetConfig {
        sources: DESK_SOURCES,
        seed: SEED,
        ..DatasetConfig::default()
    })?;
    Ok(ds)
}

fn perceptual_training(desk: &mut Desk) -> Res<Verdict> {
    desk.dataset.materialize()?;
    let stats = desk.dataset.stats()?.clone();
    let data = PerceptualData::from_dataset(&desk.dataset, &stats)?;
    let config = PerceptualConfig {
        iterations: H_ITERATIONS,
        eval_every: 500,
        patience: H_ITERATIONS,
        seed: SEED,
        ..PerceptualConfig::default()
    };
    let out = train_perceptual(&data, &PerceptualArch::default(), &stats, &config)?;
    let last = out.curve.iter().rev().find_map(|p| p.val_loss).unwrap_or(f64::NAN);
    let loss = out.best_val_loss;
    desk.perceptual = Some(out.model);
    verdict(
        loss < 0.05 && out.best_iteration <= H_ITERATIONS,
        format!(
            "validation h_loss {loss:.4} (sigma {:.4}) at iteration {}, final evaluation {last:.4}; {} train / {} validation samples",
            eval_sigma(loss)?,
            out.best_iteration,
            data.train_x.batch(),
            data.val_x.batch()
        ),
    )
}

fn gan_config(alpha: f64) -> GanConfig {
    GanConfig {
        alpha,
        iterations: GAN_ITERATIONS,
        seed: SEED,
        ..GanConfig::default()
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn mean_anisotropy(images: &Tensor<f32>) -> Res<f64> {
    let s = images.shape();
    let mut total = 0.0;
    for i in 0..s[0] {
        total += anisotropy(&images.slice_batch(i, i + 1).reshape(&s[1..])?)?;
    }
    Ok(total / s[0] as f64)
}

fn steering(desk: &mut Desk) -> Res<Verdict> {
    let h = desk.perceptual.as_ref().ok_or("no perceptual model")?;
    let data = GanData::from_dataset(&desk.dataset)?;
    let start = Instant::now();
    let out = gan_train(&data, h, &gan_config(10.0), None)?;
    let trained_in = start.elapsed();
    drop(data);
    let g = &out.generator;

    let stats = desk.dataset.stats()?;
    let mut seen = std::collections::BTreeSet::new();
    let picks: Vec<usize> = desk
        .dataset
        .indices(Split::Validation)
        .into_iter()
        .filter(|&i| seen.insert(desk.dataset.records[i].source))
        .take(PEARSON_CONDITIONS)
        .collect();
    let ys = desk.dataset.batch_targets(&picks, stats)?;

    let bases = ys.slice_batch(0, STEERING_BASES);
    let z = g.noise(SEED + 100, STEERING_BASES);
    let mut scores = Vec::new();
    for v in [-SCALED_LIMIT, 0.0, SCALED_LIMIT] {
        let mut swept = bases.clone();
        swept.data_mut().chunks_mut(NUM_ATTRIBUTES).for_each(|row| row[DIRECTIONALITY] = v as f32);
        scores.push(mean_anisotropy(&g.generate_batch(&swept, &z)?)?);
    }
    let ordered = scores[0] < scores[1] && scores[1] < scores[2];

    let images = g.generate_batch(&ys, &g.noise(SEED + 200, picks.len()))?;
    let pred = h.predict(&images)?;
    let column = |t: &Tensor<f32>| -> Vec<f64> {
        t.data().chunks(NUM_ATTRIBUTES).map(|r| r[DIRECTIONALITY] as f64).collect()
    };
    let r = pearson(&column(&ys), &column(&pred));
    desk.steered = Some((out, trained_in));
    verdict(
        ordered && r > 0.5 && picks.len() == PEARSON_CONDITIONS,
        format!(
            "anisotropy at directionality -0.9/0/0.9: {:.4} < {:.4} < {:.4}: {ordered}; Pearson over {} conditions {r:.3}",
            scores[0],
            scores[1],
            scores[2],
            picks.len()
        ),
    )
}

fn final_window_h(out: &GanOutcome) -> f64 {
    let n = ((out.curve.len() as f64 * FINAL_WINDOW).ceil() as usize).max(1);
    let tail = &out.curve[out.curve.len() - n..];
    tail.iter().map(|p| p.g_loss_h).sum::<f64>() / n as f64
}

fn ablation(desk: &mut Desk) -> Res<Verdict> {
    let h = desk.perceptual.as_ref().ok_or("no perceptual model")?;
    let data = GanData::from_dataset(&desk.dataset)?;
    let start = Instant::now();
    let (with, with_time) = match &desk.steered {
        Some((out, t)) => (final_window_h(out), *t),
        None => (final_window_h(&gan_train(&data, h, &gan_config(10.0), None)?), start.elapsed()),
    };
    let start = Instant::now();
    let without = final_window_h(&gan_train(&data, h, &gan_config(0.0), None)?);
    let pair = with_time + start.elapsed();
    let ratio = with / without;
    verdict(
        ratio <= 0.5 && pair <= secs(90 * 60),
        format!(
            "final-window G_loss_h alpha=10 {with:.4}, alpha=0 {without:.4}, ratio {ratio:.3}; pair trained in {:.0}s",
            pair.as_secs_f64()
        ),
    )
}

fn same_bits(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn checkpoint_round_trip(desk: &Desk) -> Res<Verdict> {
    let stats = desk.dataset.stats()?.clone();
    let (generator, discriminator) = match &desk.steered {
        Some((out, _)) => (out.generator.clone(), out.discriminator.clone()),
        None => (
            Generator::init(gan_config(10.0), stats.clone(), SEED)?,
            Discriminator::init(gan_config(10.0), SEED + 1)?,
        ),
    };
    let dir = tempfile::tempdir()?;
    let gpath = dir.path().join("generator.ckpt");
    let dpath = dir.path().join("discriminator.ckpt");
    let gck = generator.to_checkpoint(Some(GAN_ITERATIONS as u64))?;
    gck.save(&gpath)?;
    discriminator.to_checkpoint(&stats, Some(GAN_ITERATIONS as u64))?.save(&dpath)?;
    let loaded_ck = Checkpoint::load(&gpath)?;
    let loaded = Generator::from_checkpoint(&loaded_ck)?;
    let loaded_d = Discriminator::from_checkpoint(&Checkpoint::load(&dpath)?)?;

    let bytes_equal = loaded_ck.to_bytes()? == gck.to_bytes()?;
    let params_equal = loaded.params == generator.params && loaded_d.params == discriminator.params;

    let mut y = AttributeVector::zeros();
    y.0[DIRECTIONALITY] = 0.5;
    let z = generator.noise(7, 4);
    let before = generator.generate(&y, &z)?;
    let after = loaded.generate(&y, &z)?;
    let again = loaded.generate(&y, &loaded.noise(7, 4))?;
    let images_equal = same_bits(&before, &after);
    let deterministic = same_bits(&after, &again);
    verdict(
        bytes_equal && params_equal && images_equal && deterministic,
        format!(
            "bytes equal {bytes_equal}, parameters equal {params_equal}, images bit-exact {images_equal}, repeat generation identical {deterministic}"
        ),
    )
}

fn main() {
    let quick = std::env::var("TEXGEN_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let mut tally = Tally::default();
    tally.run(1, "fan-out oracle", secs(1), fanout_oracle);
    tally.run(2, "initialization statistics", secs(5), init_statistics);
    tally.run(3, "gradient-variance preservation", secs(60), gradient_variance);
    tally.run(4, "gradient correctness", secs(60), gradient_correctness);
    tally.run(5, "attribute scaling", secs(5), scaling_properties);
    tally.run(6, "eval sigma pins", secs(1), sigma_pins);
    tally.run(7, "augmentation arithmetic", secs(5), augmentation_counts);

    let mut desk = Desk {
        dataset: match desk_dataset() {
            Ok(ds) => ds,
            Err(e) => {
                println!("FAIL desk dataset: {e}");
                std::process::exit(1);
            }
        },
        perceptual: None,
        steered: None,
    };
    if quick {
        for (id, name) in [(8, "perceptual training"), (9, "steering"), (10, "ablation")] {
            tally.skip(id, name, "TEXGEN_ACCEPTANCE_QUICK=1");
        }
    } else {
        tally.run(8, "perceptual training", secs(15 * 60), || perceptual_training(&mut desk));
        tally.run(9, "steering", secs(45 * 60), || steering(&mut desk));
        tally.run(10, "ablation", secs(90 * 60), || ablation(&mut desk));
    }
    tally.run(11, "checkpoint round-trip", secs(60), || checkpoint_round_trip(&desk));

    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        tally.passed, tally.failed, tally.skipped
    );
    if tally.failed > 0 {
        std::process::exit(1);
    }
}
