//! Per-position uplifts from the mixture of experts and the cumulative
//! logits they induce: click probability can only fall further down a list.

use coupa::nn::{Graph, ParamStore, Tensor};
use coupa::position::{click_probability, position_logits, PositionConfig, PositionModule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> coupa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ParamStore::new();
    let cfg = PositionConfig::default();
    let (x_dim, p_dim) = (12, 4);
    let module = PositionModule::new(&mut rng, &mut params, "position", x_dim, p_dim, &cfg)?;

    for user in 0..3 {
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::matrix(1, x_dim, (0..x_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()));
        let p = g.input(Tensor::matrix(1, p_dim, (0..p_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()));
        let delta = module.uplifts(&mut g, x, p);
        let mu = position_logits(&mut g, delta);
        let delta: Vec<String> = g.value(delta).data().iter().map(|d| format!("{d:.2}")).collect();
        let probs: Vec<String> = g.value(mu).data().iter().map(|&m| format!("{:.2}", click_probability(m))).collect();
        println!("input {user}\n  δ    {}\n  σ(μ) {}", delta.join(" "), probs.join(" "));
    }
    Ok(())
}
