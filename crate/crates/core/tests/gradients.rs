use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texgen::gradcheck::GradCheck;
use texgen::{Graph, NodeId, ParamSet, Tensor};

const TOL: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

struct Case {
    graph: Graph<f64>,
    params: ParamSet<f64>,
    inputs: Vec<(String, Tensor<f64>)>,
    rng: ChaCha8Rng,
}

impl Case {
    fn new(seed: u64) -> Self {
        Case {
            graph: Graph::new(),
            params: ParamSet::new(),
            inputs: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn input(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        let t = uniform(&mut self.rng, shape, 1.0);
        self.inputs.push((name.into(), t));
        self.graph.input(name, shape, requires_grad)
    }

    fn param(&mut self, name: &str, shape: &[usize], scale: f64) -> NodeId {
        let t = uniform(&mut self.rng, shape, scale);
        self.params.insert(name.into(), t);
        self.graph.param(name, shape, true)
    }

    fn check(mut self, loss: NodeId) -> texgen::gradcheck::GradCheckReport {
        let feed: Vec<(&str, &Tensor<f64>)> = self.inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        GradCheck::default()
            .run(&mut self.graph, &self.params, &feed, loss)
            .unwrap()
    }
}

fn assert_passes(case: Case, loss: NodeId) {
    let report = case.check(loss);
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn dense_relu_quadratic() {
    let mut c = Case::new(1);
    let x = c.input("x", &[4, 5], true);
    let w = c.param("w", &[5, 3], 1.0);
    let b = c.param("b", &[3], 0.5);
    let h = c.graph.dense("fc", x, w, b).unwrap();
    let r = c.graph.relu("r", h);
    let y = c.input("y", &[4, 3], false);
    let loss = c.graph.quadratic_loss("loss", r, y).unwrap();
    assert_passes(c, loss);
}

#[test]
fn conv_stride_two_with_pooling() {
    let mut c = Case::new(2);
    let x = c.input("x", &[2, 2, 7, 6], true);
    let w = c.param("w", &[3, 2, 5, 5], 0.3);
    let b = c.param("b", &[3], 0.3);
    let h = c.graph.conv2d("conv", x, w, b, 5, 2).unwrap();
    let t = c.graph.tanh("t", h);
    let p = c.graph.global_avg_pool("gap", t).unwrap();
    let y = c.input("y", &[2, 3], false);
    let loss = c.graph.quadratic_loss("loss", p, y).unwrap();
    assert_passes(c, loss);
}

#[test]
fn conv_relu_stack() {
    let mut c = Case::new(3);
    let x = c.input("x", &[1, 1, 8, 8], true);
    let w1 = c.param("w1", &[2, 1, 3, 3], 0.8);
    let b1 = c.param("b1", &[2], 0.2);
    let h1 = c.graph.conv2d("c1", x, w1, b1, 3, 1).unwrap();
    let r1 = c.graph.relu("r1", h1);
    let w2 = c.param("w2", &[2, 2, 5, 5], 0.4);
    let b2 = c.param("b2", &[2], 0.2);
    let h2 = c.graph.conv2d("c2", r1, w2, b2, 5, 2).unwrap();
    let f = c.graph.reshape("flat", h2, &[1, 32]).unwrap();
    let y = c.input("y", &[1, 32], false);
    let loss = c.graph.quadratic_loss("loss", f, y).unwrap();
    assert_passes(c, loss);
}

#[test]
fn transposed_conv_tanh() {
    let mut c = Case::new(4);
    let x = c.input("x", &[2, 3, 3, 3], true);
    let w = c.param("w", &[3, 2, 5, 5], 0.3);
    let b = c.param("b", &[2], 0.3);
    let h = c.graph.conv_transpose2d("up", x, w, b, 5, 2).unwrap();
    let t = c.graph.tanh("t", h);
    let f = c.graph.reshape("flat", t, &[2, 72]).unwrap();
    let y = c.input("y", &[2, 72], false);
    let loss = c.graph.quadratic_loss("loss", f, y).unwrap();
    assert_passes(c, loss);
}

#[test]
fn sigmoid_cross_entropy() {
    let mut c = Case::new(5);
    let x = c.input("x", &[6, 4], true);
    let w = c.param("w", &[4, 1], 1.0);
    let b = c.param("b", &[1], 0.5);
    let h = c.graph.dense("fc", x, w, b).unwrap();
    let p = c.graph.sigmoid("p", h);
    let labels = c.graph.input("q", &[6, 1], false);
    c.inputs.push((
        "q".into(),
        Tensor::new(vec![6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap(),
    ));
    let loss = c.graph.binary_cross_entropy("loss", p, labels).unwrap();
    assert_passes(c, loss);
}

#[test]
fn concat_and_weighted_sum_of_losses() {
    let mut c = Case::new(6);
    let a = c.input("a", &[3, 2], true);
    let z = c.input("z", &[3, 4], true);
    let cat = c.graph.concat("cat", a, z).unwrap();
    let w = c.param("w", &[6, 2], 0.7);
    let b = c.param("b", &[2], 0.1);
    let h = c.graph.dense("fc", cat, w, b).unwrap();
    let t = c.graph.tanh("t", h);
    let y = c.input("y", &[3, 2], false);
    let quad = c.graph.quadratic_loss("quad", t, y).unwrap();
    let s = c.graph.sigmoid("s", h);
    let q = c.graph.input("q", &[3, 2], false);
    c.inputs.push(("q".into(), Tensor::filled(&[3, 2], 1.0)));
    let bce = c.graph.binary_cross_entropy("bce", s, q).unwrap();
    let total = c.graph.axpy("total", bce, quad, 10.0).unwrap();
    assert_passes(c, total);
}

#[test]
fn frozen_parameter_receives_no_gradient_but_passes_signal() {
    let mut c = Case::new(7);
    let x = c.input("x", &[2, 3], false);
    let w1 = c.param("w1", &[3, 3], 1.0);
    let b1 = c.param("b1", &[3], 0.1);
    let h = c.graph.dense("fc1", x, w1, b1).unwrap();
    let wf = c.graph.param("frozen", &[3, 2], false);
    let frozen = uniform(&mut c.rng, &[3, 2], 1.0);
    c.params.insert("frozen".into(), frozen);
    let bf = c.graph.param("frozen_b", &[2], false);
    c.params.insert("frozen_b".into(), Tensor::zeros(&[2]));
    let o = c.graph.dense("fc2", h, wf, bf).unwrap();
    let y = c.input("y", &[2, 2], false);
    let loss = c.graph.quadratic_loss("loss", o, y).unwrap();
    let report = c.check(loss);
    assert!(report.passes(TOL), "{report:?}");
    assert_eq!(report.checked, 9 + 3);
}

mod models {
    use super::*;
    use texgen::gan::GanConfig;
    use texgen::model::init_params;
    use texgen::perceptual::PerceptualArch;

    const TOL: f64 = 1e-4;

    fn gan() -> GanConfig {
        GanConfig {
            noise_dim: 3,
            stretch_dim: 12,
            batch_size: 2,
            image_size: 16,
            g_channels: vec![3, 2],
            d_channels: vec![2, 3],
            d_hidden: 4,
            ..GanConfig::default()
        }
    }

    fn arch() -> PerceptualArch {
        PerceptualArch {
            image_size: 16,
            conv_channels: vec![3, 4],
            ..PerceptualArch::default()
        }
    }

    fn scaled(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        uniform(rng, shape, 0.9)
    }

    fn feed(inputs: &[(String, Tensor<f64>)]) -> Vec<(&str, &Tensor<f64>)> {
        inputs.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    #[test]
    fn generator_loss_through_frozen_discriminator_and_perceptual_model() {
        let (config, arch) = (gan(), arch());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params: ParamSet<f64> = init_params(&config.generator_layers(), &mut rng).unwrap();
        params.extend(init_params::<f64, _>(&config.discriminator_layers(), &mut rng).unwrap());
        params.extend(init_params::<f64, _>(&arch.layers().unwrap(), &mut rng).unwrap());
        let mut g = Graph::<f64>::new();
        let z = g.input("z", &[2, 3], false);
        let y = g.input("y", &[2, 12], false);
        let ones = g.input("ones", &[2, 1], false);
        let img = config.build_generator(&mut g, z, y, true).unwrap();
        let p = config.build_discriminator(&mut g, img, y, false).unwrap();
        let gd = g.binary_cross_entropy("g.loss_d", p, ones).unwrap();
        let pred = arch.build(&mut g, img, false).unwrap();
        let gh = g.quadratic_loss("g.loss_h", pred, y).unwrap();
        let total = g.axpy("g.loss", gd, gh, 10.0).unwrap();
        let inputs = vec![
            ("z".to_string(), uniform(&mut rng, &[2, 3], 1.0)),
            ("y".to_string(), scaled(&mut rng, &[2, 12])),
            ("ones".to_string(), Tensor::filled(&[2, 1], 1.0)),
        ];
        let report = GradCheck::default().run(&mut g, &params, &feed(&inputs), total).unwrap();
        assert!(report.passes(TOL), "{report:?}");
        let grads = g.backprop(total).unwrap();
        assert!(grads.keys().all(|k| k.starts_with("g.")), "{:?}", grads.keys());
        assert!(grads.values().any(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn discriminator_loss() {
        let config = gan();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params: ParamSet<f64> = init_params(&config.discriminator_layers(), &mut rng).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[2, 1, 16, 16], false);
        let y = g.input("y", &[2, 12], false);
        let q = g.input("q", &[2, 1], false);
        let p = config.build_discriminator(&mut g, x, y, true).unwrap();
        let loss = g.binary_cross_entropy("d.loss", p, q).unwrap();
        let inputs = vec![
            ("x".to_string(), uniform(&mut rng, &[2, 1, 16, 16], 1.0)),
            ("y".to_string(), scaled(&mut rng, &[2, 12])),
            ("q".to_string(), Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()),
        ];
        let report = GradCheck::default().run(&mut g, &params, &feed(&inputs), loss).unwrap();
        assert!(report.passes(TOL), "{report:?}");
    }

    #[test]
    fn perceptual_loss() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params: ParamSet<f64> = init_params(&arch.layers().unwrap(), &mut rng).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.input("x", &[3, 1, 16, 16], false);
        let pred = arch.build(&mut g, x, true).unwrap();
        let y = g.input("y", &[3, 12], false);
        let loss = g.quadratic_loss("h.loss", pred, y).unwrap();
        let inputs = vec![
            ("x".to_string(), uniform(&mut rng, &[3, 1, 16, 16], 1.0)),
            ("y".to_string(), scaled(&mut rng, &[3, 12])),
        ];
        let report = GradCheck::default().run(&mut g, &params, &feed(&inputs), loss).unwrap();
        assert!(report.passes(TOL), "{report:?}");
    }
}
