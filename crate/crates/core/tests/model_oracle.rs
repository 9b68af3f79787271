//! The full model recomputed with plain loops over its parameter tables.

use std::f64::consts::PI;

use coupa::attention::TargetItem;
use coupa::data::{build_samples, generate, GeneratorSpec, Protocol, Query, Sample};
use coupa::model::{batch_objective, day_of_week, hour_of_day, negatives_for};
use coupa::{Coupa, ModelConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Oracle<'a> {
    m: &'a Coupa,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl<'a> Oracle<'a> {
    fn table(&self, name: &str) -> (&'a [f64], Vec<usize>) {
        let p = self.m.params();
        let t = p.value(p.id(name).unwrap_or_else(|| panic!("{name}")));
        (t.data(), t.shape().to_vec())
    }

    fn row(&self, name: &str, r: usize) -> Vec<f64> {
        let (d, s) = self.table(name);
        d[r * s[1]..(r + 1) * s[1]].to_vec()
    }

    /// `x · W (+ b)` with `W` stored row-major as fan_in × out.
    fn affine(&self, x: &[f64], w: &str, b: Option<&str>) -> Vec<f64> {
        let (wd, ws) = self.table(w);
        assert_eq!(ws[0], x.len(), "{w}");
        let out = ws[1];
        let mut y = match b {
            Some(b) => self.table(b).0.to_vec(),
            None => vec![0.0; out],
        };
        for (i, xi) in x.iter().enumerate() {
            for j in 0..out {
                y[j] += xi * wd[i * out + j];
            }
        }
        y
    }

    fn proj(&self, x: &[f64], name: &str) -> Vec<f64> {
        self.affine(x, &format!("{name}.w"), Some(&format!("{name}.b")))
            .into_iter()
            .map(f64::tanh)
            .collect()
    }

    fn cat(parts: &[&[f64]]) -> Vec<f64> {
        parts.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn item(&self, item: u32, category: u32) -> Vec<f64> {
        let v = self.m.vocab();
        let a = self.row("emb.item", item.min(v.items) as usize);
        let b = self.row("emb.category", category.min(v.categories) as usize);
        self.proj(&Self::cat(&[&a, &b]), "proj.item")
    }

    fn encode(&self, t: f64) -> Vec<f64> {
        let (lp, _) = self.table("time.log_period");
        let (amp, s) = self.table("time.amplitude");
        let mut out = Vec::new();
        for f in 0..lp.len() {
            let period = lp[f].exp();
            let a = &amp[f * s[1]..(f + 1) * s[1]];
            out.push(a[0]);
            for j in 1..a.len() {
                let arg = j as f64 * PI * t / period;
                out.push(a[j] * arg.cos());
                out.push(a[j] * arg.sin());
            }
        }
        out
    }

    fn user(&self, q: &Query) -> Vec<f64> {
        let u = self.row("emb.user", q.user.min(self.m.vocab().users) as usize);
        self.proj(&u, "proj.user")
    }

    /// Retained history rows `[e_v ‖ Φ(t − t_i)]`.
    fn history(&self, q: &Query) -> Vec<Vec<f64>> {
        let ev = q.history.events();
        let ev = &ev[ev.len().saturating_sub(self.m.config().max_history)..];
        ev.iter()
            .map(|b| {
                let e = self.item(b.item, b.category);
                let phi = self.encode((q.timestamp - b.timestamp) as f64);
                Self::cat(&[&e, &phi])
            })
            .collect()
    }

    fn summary(&self, q: &Query, item: u32, category: u32) -> Vec<f64> {
        let mut rows = self.history(q);
        let target = Self::cat(&[&self.item(item, category), &self.encode(0.0)]);
        rows.push(target.clone());
        let query = self.affine(&target, "attention.w_q", None);
        let keys: Vec<Vec<f64>> = rows.iter().map(|r| self.affine(r, "attention.w_k", None)).collect();
        let vals: Vec<Vec<f64>> = rows.iter().map(|r| self.affine(r, "attention.w_v", None)).collect();
        let scale = (query.len() as f64).sqrt();
        let scores: Vec<f64> = keys.iter().map(|k| dot(&query, k) / scale).collect();
        let w = softmax(&scores);
        let mut h = vec![0.0; query.len()];
        for (wi, v) in w.iter().zip(&vals) {
            for (hj, vj) in h.iter_mut().zip(v) {
                *hj += wi * vj;
            }
        }
        h
    }

    /// `b + μ_0..μ_K`.
    fn logits(&self, q: &Query, item: u32, category: u32) -> Vec<f64> {
        let cfg = self.m.config();
        let u = self.user(q);
        let e = self.item(item, category);
        let hr = self.row("emb.hour", hour_of_day(q.timestamp));
        let dw = self.row("emb.weekday", day_of_week(q.timestamp));
        let c = self.proj(&Self::cat(&[&hr, &dw]), "proj.context");
        let h = self.summary(q, item, category);
        let mut x = Self::cat(&[&u, &e, &c, &h]);
        for l in 0..cfg.mlp.len() {
            x = relu(self.affine(&x, &format!("mlp.{l}.w"), Some(&format!("mlp.{l}.b"))));
        }
        let kp = cfg.position.positions();
        let n = cfg.position.experts;
        let experts: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let p = format!("position.expert{i}");
                let h1 = relu(self.affine(&x, &format!("{p}.w1"), Some(&format!("{p}.b1"))));
                relu(self.affine(&h1, &format!("{p}.w2"), Some(&format!("{p}.b2"))))
            })
            .collect();
        let gate_logits = self.affine(&x, "position.gates", None);
        let readout = self.table("position.readout").0;
        let bias = self.table("position.bias").0;
        let raw: Vec<f64> = (0..kp)
            .map(|k| {
                let gate = softmax(&gate_logits[k * n..(k + 1) * n]);
                let score: f64 = (0..n).map(|i| gate[i] * dot(&experts[i], readout)).sum();
                (score + bias[if bias.len() == 1 { 0 } else { k }]).max(0.0)
            })
            .collect();

        let ip = self.row("emb.item_position", item.min(self.m.vocab().items) as usize);
        let ev = q.history.events();
        let ev = &ev[ev.len().saturating_sub(cfg.max_history)..];
        let mut past = vec![0.0; cfg.embedding_dim];
        for b in ev {
            let r = self.row("emb.position", (b.position as usize).min(kp - 1));
            for (a, v) in past.iter_mut().zip(r) {
                *a += v / ev.len() as f64;
            }
        }
        let p = self.proj(&Self::cat(&[&ip, &past]), "proj.position");
        let eps = self.affine(&p, "position.glu_w", Some("position.glu_b"));
        let delta: Vec<f64> = raw.iter().zip(&eps).map(|(r, e)| sigmoid(*e) * r.tanh()).collect();
        let offset = self.table("position.logit_offset").0[0];
        (0..kp).map(|k| offset + delta[k..].iter().sum::<f64>()).collect()
    }

    /// `Ψ(τ)` and `∂Ψ/∂τ` of the monotone net for context `[e_u ‖ h]`.
    fn psi(&self, context: &[f64], tau: f64) -> (f64, f64) {
        let layers = self.m.config().point_process.layers;
        let mut x = Self::cat(&[context, &[tau]]);
        let (w0, s0) = self.table("process.w0");
        let mut tangent: Vec<f64> = w0[(s0[0] - 1) * s0[1]..].to_vec();
        for l in 0..layers {
            let z = self.affine(&x, &format!("process.w{l}"), Some(&format!("process.b{l}")));
            if l + 1 == layers {
                return (z[0], tangent[0]);
            }
            let masked: Vec<f64> = z.iter().zip(&tangent).map(|(zi, ti)| if *zi > 0.0 { *ti } else { 0.0 }).collect();
            tangent = self.affine(&masked, &format!("process.w{}", l + 1), None);
            x = relu(z);
        }
        unreachable!()
    }

    fn cumulative(&self, q: &Query, summary: &[f64], elapsed: f64) -> f64 {
        let unit = self.m.config().point_process.time_unit_seconds;
        let ctx = Self::cat(&[&self.user(q), summary]);
        self.psi(&ctx, elapsed / unit).0 - self.psi(&ctx, 0.0).0
    }

    fn intensity(&self, q: &Query, summary: &[f64], elapsed: f64) -> f64 {
        let unit = self.m.config().point_process.time_unit_seconds;
        let ctx = Self::cat(&[&self.user(q), summary]);
        self.psi(&ctx, elapsed / unit).1 / unit
    }

    fn sample_loss(&self, s: &Sample, negs: &[TargetItem], alpha: f64) -> f64 {
        let q = &s.query;
        let p = sigmoid(self.logits(q, q.item, q.category)[s.position as usize]);
        let mut loss = if s.label == 1 { -p.ln() } else { -(1.0 - p).ln() };
        if let (1, Some(last)) = (s.label, q.history.last()) {
            let elapsed = (q.timestamp - last.timestamp) as f64;
            let h = self.summary(q, q.item, q.category);
            let floor = self.m.config().point_process.lambda_floor;
            let mut nll = -self.intensity(q, &h, elapsed).max(floor).ln();
            for n in negs {
                let hn = self.summary(q, n.item, n.category);
                nll += self.cumulative(q, &hn, elapsed);
            }
            loss += alpha * nll;
        }
        loss
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn fixture() -> (Coupa, Vec<Sample>) {
    let spec = GeneratorSpec {
        users: 60,
        items: 40,
        seed: 11,
        ..GeneratorSpec::default()
    };
    let data = build_samples(&generate(&spec).unwrap().events, &Protocol::default()).unwrap();
    let cfg = ModelConfig {
        mlp: vec![24, 12],
        attention_dim: 8,
        ..ModelConfig::default()
    };
    let mut model = Coupa::new(cfg, data.vocab.clone(), 3).unwrap();
    // move every parameter off its initial value so no term is trivially zero
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        p.project();
    }
    let mut samples: Vec<Sample> = data.train.iter().filter(|s| !s.query.history.is_empty()).take(30).cloned().collect();
    samples.extend(data.train.iter().filter(|s| s.query.history.is_empty()).take(2).cloned());
    (model, samples)
}

#[test]
fn forward_matches_straight_line_recomputation() {
    let (model, samples) = fixture();
    let oracle = Oracle { m: &model };
    for s in &samples {
        let q = &s.query;
        let out = model.forward(q, s.position).unwrap();
        let logits = oracle.logits(q, q.item, q.category);
        assert_eq!(out.logits.len(), logits.len());
        for (a, b) in out.logits.iter().zip(&logits) {
            assert!(close(*a, *b, 1e-10), "{a} vs {b}");
        }
        assert!(close(out.probability, sigmoid(logits[s.position as usize]), 1e-12));
        let h = oracle.summary(q, q.item, q.category);
        for (a, b) in out.summary.iter().zip(&h) {
            assert!(close(*a, *b, 1e-10));
        }
        match (out.intensity, q.elapsed()) {
            (Some(l), Some(e)) => {
                assert!(close(l, oracle.intensity(q, &h, e), 1e-10));
                assert!(close(model.cumulative_intensity(q, e).unwrap(), oracle.cumulative(q, &h, e), 1e-10));
            }
            (None, None) => {}
            other => panic!("intensity presence mismatch {other:?}"),
        }
    }
}

#[test]
fn candidate_ranking_follows_oracle_position_zero_logit() {
    let (model, samples) = fixture();
    let oracle = Oracle { m: &model };
    let q = &samples[0].query;
    let vocab = model.vocab();
    let candidates: Vec<TargetItem> = [3u32, 17, 29]
        .iter()
        .map(|&v| TargetItem {
            item: v,
            category: vocab.category_of(v).unwrap(),
        })
        .collect();
    let scores = model.predict_targets(q, &candidates).unwrap();
    let mu0: Vec<f64> = candidates.iter().map(|c| oracle.logits(q, c.item, c.category)[0]).collect();
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        idx
    };
    assert_eq!(order(&scores), order(&mu0));
}

#[test]
fn joint_loss_matches_oracle_sum() {
    let (model, samples) = fixture();
    let oracle = Oracle { m: &model };
    let cfg = TrainConfig {
        alpha: 0.7,
        l2: 1e-4,
        ..TrainConfig::default()
    };
    let negs = negatives_for(&mut ChaCha8Rng::seed_from_u64(2), model.vocab(), &samples, &cfg);
    assert!(negs.iter().any(|n| !n.is_empty()));
    let loss = batch_objective(&model, model.params(), &samples, &negs, &cfg, None).unwrap();
    let mut expected: f64 = samples.iter().zip(&negs).map(|(s, n)| oracle.sample_loss(s, n, cfg.alpha)).sum();
    expected += cfg.l2 * model.params().iter().map(|(_, p)| p.value.sum_squares()).sum::<f64>();
    assert!(close(loss, expected, 1e-10), "{loss} vs {expected}");
}
