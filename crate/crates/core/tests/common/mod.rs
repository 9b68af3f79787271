//! Shared fixtures for the integration and acceptance targets.
#![allow(dead_code)]

use coupa::attention::{AttentionParams, HistoryKeys};
use coupa::data::{build_samples, generate, DatasetSplit, GeneratorSpec, Protocol, Sample};
use coupa::gradcheck::{check_gradients, GradCheck, GradCheckReport};
use coupa::model::{batch_objective, negatives_for};
use coupa::nn::{Constraint, Graph, NodeId, ParamId, ParamStore, Tensor};
use coupa::point_process::{temporal_nll, MonotoneNet, PointProcessConfig};
use coupa::position::{position_logits, PositionConfig, PositionModule};
use coupa::time_encoding::{TimeEncoder, TimeEncodingConfig};
use coupa::{Coupa, ModelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A scalar function of a parameter store built on a graph.
type Build = Box<dyn Fn(&mut Graph<'_>) -> NodeId>;

pub struct GradientCase {
    pub name: &'static str,
    pub params: ParamStore,
    build: Build,
}

/// Entries bounded away from zero so that no finite-difference step crosses
/// a ReLU or mask kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen() {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn param(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize) -> ParamId {
    let data = away_from_zero(rng, rows * cols);
    store.insert(name, Tensor::matrix(rows, cols, data), Constraint::Free)
}

/// Contracts a node with fixed random weights so every output entry matters.
fn reduce(g: &mut Graph<'_>, x: NodeId, seed: u64) -> NodeId {
    let v = g.value(x);
    let (r, c) = (v.rows(), v.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let m = g.mul(x, w);
    g.sum(m)
}

fn case(name: &'static str, params: ParamStore, build: impl Fn(&mut Graph<'_>) -> NodeId + 'static) -> GradientCase {
    GradientCase {
        name,
        params,
        build: Box::new(build),
    }
}

/// One case per primitive plus the composed layers.
pub fn layer_cases(seed: u64) -> Vec<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (r, n, m) = (rng.gen_range(2..6), rng.gen_range(2..8), rng.gen_range(2..8));

    macro_rules! binary {
        ($name:literal, $ar:expr, $ac:expr, $br:expr, $bc:expr, $op:ident) => {{
            let mut s = ParamStore::new();
            let a = param(&mut s, &mut rng, "a", $ar, $ac);
            let b = param(&mut s, &mut rng, "b", $br, $bc);
            out.push(case($name, s, move |g| {
                let (x, y) = (g.param(a), g.param(b));
                let z = g.$op(x, y);
                reduce(g, z, 1)
            }));
        }};
    }
    macro_rules! unary {
        ($name:literal, $f:expr) => {{
            let mut s = ParamStore::new();
            let a = param(&mut s, &mut rng, "a", r, n);
            out.push(case($name, s, move |g| {
                let x = g.param(a);
                let f: fn(&mut Graph<'_>, NodeId) -> NodeId = $f;
                let z = f(g, x);
                reduce(g, z, 2)
            }));
        }};
    }

    binary!("matmul", r, n, n, m, matmul);
    binary!("matmul_bt", r, n, m, n, matmul_bt);
    binary!("add", r, n, r, n, add);
    binary!("sub", r, n, r, n, sub);
    binary!("mul", r, n, r, n, mul);
    binary!("add_row", r, n, 1, n, add_row);
    unary!("scale", |g, x| g.scale(x, -1.7));
    unary!("relu", |g, x| g.relu(x));
    unary!("sigmoid", |g, x| g.sigmoid(x));
    unary!("tanh", |g, x| g.tanh(x));
    unary!("exp", |g, x| g.exp(x));
    unary!("ln_floor", |g, x| {
        let e = g.exp(x);
        g.ln_floor(e, 1e-8)
    });
    unary!("softmax", |g, x| g.softmax(x));
    unary!("concat_cols", |g, x| {
        let y = g.scale(x, 2.0);
        g.concat_cols(&[x, y])
    });
    unary!("concat_rows", |g, x| {
        let y = g.tanh(x);
        g.concat_rows(&[y, x])
    });
    unary!("gather", |g, x| g.gather(x, &[1, 0, 1]));
    unary!("reshape", |g, x| {
        let v = g.value(x);
        let len = v.len();
        g.reshape(x, &[1, len])
    });
    unary!("mean_rows", |g, x| g.mean_rows(x));
    unary!("pick", |g, x| {
        let p = g.pick(x, 3);
        let q = g.pick(x, 0);
        let pq = g.mul(p, q);
        g.add(pq, p)
    });
    unary!("mask_right", |g, x| {
        let t = g.sigmoid(x);
        g.mask_right(x, t)
    });
    unary!("bce_logits", |g, x| {
        let a = g.pick(x, 0);
        let b = g.pick(x, 1);
        let la = g.bce_logits(a, 1.0);
        let lb = g.bce_logits(b, 0.0);
        g.add(la, lb)
    });

    {
        let mut s = ParamStore::new();
        let x = param(&mut s, &mut rng, "x", r, n);
        let w = param(&mut s, &mut rng, "w", n, m);
        let b = param(&mut s, &mut rng, "b", 1, m);
        out.push(case("dense", s, move |g| {
            let xi = g.param(x);
            let y = g.dense(xi, w, Some(b));
            reduce(g, y, 3)
        }));
    }
    {
        let mut s = ParamStore::new();
        let cfg = TimeEncodingConfig::default();
        let enc = TimeEncoder::new(&cfg, &mut s, "time").unwrap();
        let intervals: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..500_000.0)).collect();
        out.push(case("time_encode", s, move |g| {
            let z = enc.encode_graph(g, &intervals);
            reduce(g, z, 4)
        }));
    }
    {
        let mut s = ParamStore::new();
        let width = 6;
        let att = AttentionParams::new(&mut rng, &mut s, "att", width, 4);
        let hist = param(&mut s, &mut rng, "hist", 5, width);
        let target = param(&mut s, &mut rng, "target", 1, width);
        out.push(case("attention", s, move |g| {
            let z = g.param(hist);
            let keys = HistoryKeys::new(g, &att, Some(z));
            let t = g.param(target);
            let h = keys.attend(g, &att, t);
            reduce(g, h, 5)
        }));
    }
    {
        let mut s = ParamStore::new();
        let cfg = PointProcessConfig {
            hidden: 6,
            ..PointProcessConfig::default()
        };
        let net = MonotoneNet::new(&mut rng, &mut s, "pp", 5, &cfg).unwrap();
        for p in s.iter_mut() {
            for v in p.value.data_mut() {
                *v = rng.gen_range(0.1..1.0);
            }
        }
        let ctx = param(&mut s, &mut rng, "ctx", 1, 5);
        let neg = param(&mut s, &mut rng, "neg", 1, 5);
        out.push(case("monotone_net_nll", s, move |g| {
            let c = g.param(ctx);
            let pos = net.evaluate(g, c, 5400.0, true).unwrap();
            let n = g.param(neg);
            let other = net.evaluate(g, n, 5400.0, false).unwrap();
            temporal_nll(g, pos.intensity.unwrap(), &[pos.cumulative, other.cumulative], 1e-8)
        }));
    }
    {
        let mut s = ParamStore::new();
        let cfg = PositionConfig {
            max_position: 4,
            experts: 3,
            expert_width: 5,
            shared_bias: false,
            bias_init: 0.5,
        };
        let module = PositionModule::new(&mut rng, &mut s, "pos", 6, 3, &cfg).unwrap();
        let x = param(&mut s, &mut rng, "x", 1, 6);
        let p = param(&mut s, &mut rng, "p", 1, 3);
        out.push(case("position_module", s, move |g| {
            let (xi, pi) = (g.param(x), g.param(p));
            let d = module.uplifts(g, xi, pi);
            let mu = position_logits(g, d);
            reduce(g, mu, 6)
        }));
    }
    out
}

fn evaluate(params: &ParamStore, build: &Build) -> f64 {
    let mut g = Graph::new(params);
    let out = build(&mut g);
    g.value(out).item()
}

pub fn check_case(c: &GradientCase) -> GradCheckReport {
    let mut grads = c.params.zero_gradients();
    let mut g = Graph::new(&c.params);
    let out = (c.build)(&mut g);
    g.backward(out, &mut grads).unwrap();
    let opts = GradCheck {
        step: 1e-5,
        floor: 1e-4,
        ..GradCheck::default()
    };
    check_gradients(&c.params, &grads, |p| Ok(evaluate(p, &c.build)), &opts).unwrap()
}

pub fn small_spec(users: u32, items: u32, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        users,
        items,
        seed,
        ..GeneratorSpec::default()
    }
}

pub fn small_split(users: u32, items: u32, seed: u64) -> DatasetSplit {
    build_samples(&generate(&small_spec(users, items, seed)).unwrap().events, &Protocol::default()).unwrap()
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        mlp: vec![12, 8],
        attention_dim: 6,
        ..ModelConfig::default()
    }
}

pub struct ModelFixture {
    pub model: Coupa,
    pub batch: Vec<Sample>,
    pub negatives: Vec<Vec<coupa::attention::TargetItem>>,
    pub config: TrainConfig,
}

/// Full joint loss (CE, temporal NLL with negatives, L2) on a 10-sample batch.
pub fn check_model_gradient(seed: u64) -> GradCheckReport {
    let f = model_fixture(seed);
    let (model, batch, negs, cfg) = (&f.model, &f.batch, &f.negatives, &f.config);
    let mut grads = model.params().zero_gradients();
    batch_objective(model, model.params(), batch, negs, cfg, Some(&mut grads)).unwrap();
    let opts = GradCheck {
        step: 1e-4,
        floor: 1e-4,
        per_tensor: Some(40),
        kink_tolerance: Some(1e-4),
        retries: 3,
        seed,
    };
    check_gradients(
        model.params(),
        &grads,
        |p| batch_objective(model, p, batch, negs, cfg, None),
        &opts,
    )
    .unwrap()
}

pub fn model_fixture(seed: u64) -> ModelFixture {
    // a short horizon keeps intervals, and with them the curvature in the
    // log-periods, moderate
    let spec = GeneratorSpec {
        history_days: 2,
        window_days: 2,
        ..small_spec(150, 25, seed)
    };
    let protocol = Protocol {
        min_behaviors: 3,
        window_days: 2,
        ..Protocol::default()
    };
    let data = build_samples(&generate(&spec).unwrap().events, &protocol).unwrap();
    let mut model = Coupa::new(small_model_config(), data.vocab.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut().iter_mut() {
        // a flatter intensity net keeps the loss near O(10), so roundoff in
        // the finite differences stays small
        let shrink = if p.name.starts_with("process.") { 0.3 } else { 1.0 };
        for v in p.value.data_mut() {
            *v = shrink * *v + rng.gen_range(-0.05..0.05);
        }
        p.project();
    }
    let mut batch: Vec<Sample> = data.train.iter().filter(|s| s.label == 1 && !s.query.history.is_empty()).take(4).cloned().collect();
    batch.extend(data.train.iter().filter(|s| s.label == 0).take(6).cloned());
    assert_eq!(batch.len(), 10);
    let cfg = TrainConfig {
        l2: 1e-3,
        ..TrainConfig::default()
    };
    let negs = negatives_for(&mut rng, model.vocab(), &batch, &cfg);
    ModelFixture {
        model,
        batch,
        negatives: negs,
        config: cfg,
    }
}
