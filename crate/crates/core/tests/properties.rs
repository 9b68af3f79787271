use coupa::attention::attention_full;
use coupa::data::{build_samples, generate, Behavior, GeneratorSpec, Protocol, Sample};
use coupa::model::{Coupa, ModelConfig};
use coupa::nn::{Adam, AdamConfig, Constraint, Graph, ParamStore, Tensor};
use coupa::point_process::{IntensityContext, MonotoneNet, PointProcessConfig};
use coupa::position::{position_logit, position_logits, position_logits_matrix, PositionConfig, PositionModule};
use coupa::serving::fuse;
use coupa::time_encoding::{encode, kernel_value, random_config};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn random_net(seed: u64, context: usize) -> (ParamStore, MonotoneNet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let cfg = PointProcessConfig {
        hidden: rng.gen_range(2..8),
        layers: rng.gen_range(1..4),
        ..PointProcessConfig::default()
    };
    let net = MonotoneNet::new(&mut rng, &mut params, "pp", context, &cfg).unwrap();
    // random non-negative biases so the kinks move around
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
    }
    (params, net)
}

fn random_context(seed: u64, context: usize, elapsed: f64) -> IntensityContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    IntensityContext {
        user_embedding: (0..context / 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        temporal_summary: (0..context - context / 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        elapsed,
    }
}

fn behaviors(raw: &[(u32, i64)]) -> Vec<Behavior> {
    raw.iter()
        .map(|&(item, timestamp)| Behavior {
            item,
            category: item % 3,
            timestamp,
            position: item % 10,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernel_is_translation_invariant(seed in any::<u64>(), t1 in -1e4f64..1e4, t2 in -1e4f64..1e4, shift in -1e4f64..1e4) {
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed), 3, 5);
        let a = kernel_value(t1, t2, &cfg).unwrap();
        let b = kernel_value(t1 + shift, t2 + shift, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn encoding_norm_is_constant(seed in any::<u64>(), t in -1e5f64..1e5, k in 1usize..5, half in 0usize..4) {
        let d = 2 * half + 1;
        let cfg = random_config(&mut ChaCha8Rng::seed_from_u64(seed), k, d);
        let phi = encode(t, &cfg).unwrap();
        prop_assert_eq!(phi.len(), d * k);
        let zero = kernel_value(0.0, 0.0, &cfg).unwrap();
        let norm: f64 = phi.iter().map(|v| v * v).sum();
        prop_assert!((norm - zero).abs() < 1e-9);
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), rows in 1usize..9, width in 1usize..9, d in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_tensor(&mut rng, rows, width);
        let (w, _) = attention_full(&z, &random_tensor(&mut rng, width, d), &random_tensor(&mut rng, width, d), &random_tensor(&mut rng, width, d));
        for i in 0..rows {
            prop_assert!(w.row(i).iter().all(|&v| v >= 0.0));
            prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_history_rows_permutes_weights(seed in any::<u64>(), rows in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (width, d) = (6, 4);
        let z = random_tensor(&mut rng, rows, width);
        let (wq, wk, wv) = (random_tensor(&mut rng, width, d), random_tensor(&mut rng, width, d), random_tensor(&mut rng, width, d));
        let (w, out) = attention_full(&z, &wq, &wk, &wv);
        let last = rows - 1;
        let mut swapped = z.clone();
        for c in 0..width {
            let (a, b) = (z.get(0, c), z.get(1, c));
            swapped.data_mut()[c] = b;
            swapped.data_mut()[width + c] = a;
        }
        let (ws, outs) = attention_full(&swapped, &wq, &wk, &wv);
        prop_assert!((w.get(last, 0) - ws.get(last, 1)).abs() < 1e-12);
        prop_assert!((w.get(last, 1) - ws.get(last, 0)).abs() < 1e-12);
        for c in 0..d {
            prop_assert!((out.get(last, c) - outs.get(last, c)).abs() < 1e-12);
        }
        // moving only the embedding half leaves each row's interval behind
        let mut crossed = z.clone();
        for c in 0..width / 2 {
            crossed.data_mut()[c] = z.get(1, c);
            crossed.data_mut()[width + c] = z.get(0, c);
        }
        let (_, outc) = attention_full(&crossed, &wq, &wk, &wv);
        prop_assert!((0..d).any(|c| (out.get(last, c) - outc.get(last, c)).abs() > 1e-12));
    }

    #[test]
    fn cumulative_intensity_is_anchored_and_monotone(seed in any::<u64>()) {
        let (params, net) = random_net(seed, 6);
        let at = |tau: f64| net.cumulative_intensity(&params, &random_context(seed, 6, tau)).unwrap();
        prop_assert_eq!(at(0.0), 0.0);
        let mut prev = 0.0;
        for i in 1..=100 {
            let tau = i as f64 * 720.0;
            let c = at(tau);
            prop_assert!(c >= prev);
            prop_assert!(net.intensity(&params, &random_context(seed, 6, tau)).unwrap() >= 0.0);
            prev = c;
        }
    }

    #[test]
    fn intensity_is_the_slope_of_the_cumulative(seed in any::<u64>(), tau in 10.0f64..2e5) {
        let (params, net) = random_net(seed, 4);
        let at = |t: f64| net.cumulative_intensity(&params, &random_context(seed, 4, t)).unwrap();
        let h = 1.0;
        let (down, mid, up) = (at(tau - h), at(tau), at(tau + h));
        let (left, right) = ((mid - down) / h, (up - mid) / h);
        // piecewise linear in τ: equal one-sided slopes mean no kink nearby
        if (left - right).abs() <= 1e-9 * left.abs().max(1e-12) {
            let lambda = net.intensity(&params, &random_context(seed, 4, tau)).unwrap();
            let numeric = (up - down) / (2.0 * h);
            prop_assert!((lambda - numeric).abs() <= 1e-4 * lambda.abs().max(numeric.abs()).max(1e-12));
        }
    }

    #[test]
    fn position_logits_never_increase(seed in any::<u64>(), experts in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let cfg = PositionConfig { max_position: 6, experts, expert_width: 5, shared_bias: rng.gen(), bias_init: rng.gen_range(-0.5..1.5) };
        let m = PositionModule::new(&mut rng, &mut params, "pos", 7, 3, &cfg).unwrap();
        let mut g = Graph::new(&params);
        let x = g.input(random_tensor(&mut rng, 1, 7));
        let p = g.input(random_tensor(&mut rng, 1, 3));
        let d = m.uplifts(&mut g, x, p);
        let mu = position_logits(&mut g, d);
        let delta = g.value(d).data().to_vec();
        prop_assert!(delta.iter().all(|v| (0.0..1.0).contains(v)));
        let mu = g.value(mu).data();
        prop_assert!(mu.windows(2).all(|w| w[0] >= w[1]));
        let looped: Vec<f64> = (0..delta.len()).map(|k| position_logit(&delta, k).unwrap()).collect();
        prop_assert_eq!(&position_logits_matrix(&delta), &looped);
    }

    #[test]
    fn fused_sequences_are_sorted_sets(
        a in proptest::collection::vec((0u32..6, 0i64..30), 0..20),
        b in proptest::collection::vec((0u32..6, 0i64..30), 0..20),
    ) {
        let (a, b) = (behaviors(&a), behaviors(&b));
        let fused = fuse(&[&a, &b]);
        let ev = fused.events();
        prop_assert!(ev.windows(2).all(|w| (w[0].timestamp, w[0].item) < (w[1].timestamp, w[1].item)));
        let again = fuse(&[ev]);
        prop_assert_eq!(again.events(), ev);
        for x in a.iter().chain(&b) {
            prop_assert!(ev.iter().any(|e| e.item == x.item && e.timestamp == x.timestamp));
        }
    }
}

#[test]
fn adam_keeps_constrained_parameters_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamStore::new();
    let id = params.insert_uniform(&mut rng, "w", &[3, 4], 3, Constraint::NonNegative);
    let free = params.insert_uniform(&mut rng, "f", &[5], 5, Constraint::Free);
    let mut adam = Adam::new(AdamConfig { learning_rate: 0.3, ..AdamConfig::default() }, &params);
    for _ in 0..200 {
        let mut grads = params.zero_gradients();
        for v in grads.get_mut(id).data_mut() {
            *v = rng.gen_range(-1.0..3.0);
        }
        for v in grads.get_mut(free).data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        adam.update(&mut params, &grads).unwrap();
        assert!(params.value(id).data().iter().all(|&v| v >= 0.0));
    }
    assert!(params.value(id).data().contains(&0.0));
}

#[test]
fn only_later_uplifts_receive_gradient() {
    let positions = 6;
    let mut params = ParamStore::new();
    let delta = params.insert("delta", Tensor::matrix(1, positions, vec![0.1, 0.3, 0.05, 0.2, 0.4, 0.15]), Constraint::Free);
    for i in 0..positions {
        let mut g = Graph::new(&params);
        let d = g.param(delta);
        let mu = position_logits(&mut g, d);
        let logit = g.pick(mu, i);
        let loss = g.bce_logits(logit, 1.0);
        let mut grads = params.zero_gradients();
        g.backward(loss, &mut grads).unwrap();
        for (k, &gk) in grads.get(delta).data().iter().enumerate() {
            assert_eq!(gk != 0.0, k >= i, "sample at {i}, uplift {k}");
        }
    }
}

fn small_split(seed: u64) -> coupa::data::DatasetSplit {
    let spec = GeneratorSpec { users: 80, items: 40, seed, ..GeneratorSpec::default() };
    build_samples(&generate(&spec).unwrap().events, &Protocol::default()).unwrap()
}

#[test]
fn splits_are_time_disjoint_and_keep_the_ratio() {
    let data = small_split(5);
    let last_train = data.train.iter().chain(&data.validation).map(|s| s.query.timestamp).max().unwrap();
    let first_test = data.test.iter().map(|s| s.query.timestamp).min().unwrap();
    assert!(last_train < first_test);
    let ratio = Protocol::default().negatives_per_positive;
    let seen: Vec<Sample> = data.train.iter().chain(&data.validation).cloned().collect();
    for part in [&seen, &data.test] {
        let pos = part.iter().filter(|s| s.label == 1).count();
        let neg = part.len() - pos;
        assert!(neg <= ratio * pos);
    }
}

#[test]
fn predict_ignores_the_logged_position() {
    let data = small_split(6);
    let model = Coupa::new(ModelConfig { mlp: vec![8], attention_dim: 4, ..ModelConfig::default() }, data.vocab.clone(), 0).unwrap();
    for s in data.test.iter().take(20) {
        let moved = Sample { position: (s.position + 3) % 10, ..s.clone() };
        assert_eq!(model.predict(&s.query).unwrap(), model.predict(&moved.query).unwrap());
        assert!(model.predict(&s.query).unwrap() >= model.probability(&moved.query, moved.position).unwrap());
    }
}
