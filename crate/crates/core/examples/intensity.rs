//! A monotone network turned into a point process: the cumulative intensity
//! starts at zero and never decreases, and its slope is the intensity.

use coupa::nn::ParamStore;
use coupa::point_process::{IntensityContext, MonotoneNet, PointProcessConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coupa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParamStore::new();
    let cfg = PointProcessConfig {
        hidden: 16,
        ..PointProcessConfig::default()
    };
    let net = MonotoneNet::new(&mut rng, &mut params, "process", 4, &cfg)?;
    let at = |hours: f64| IntensityContext {
        user_embedding: vec![0.3, -0.2],
        temporal_summary: vec![0.5, 0.1],
        elapsed: hours * 3600.0,
    };

    println!("    τ (h)      Ψ(τ)      λ(τ) per hour   P(no event before τ)");
    for hours in [0.0, 0.5, 1.0, 2.0, 6.0, 12.0, 24.0, 48.0] {
        let psi = net.cumulative_intensity(&params, &at(hours))?;
        let lambda = net.intensity(&params, &at(hours))? * 3600.0;
        println!("{hours:>9.1} {psi:>9.4} {lambda:>15.4} {:>22.4}", (-psi).exp());
    }
    Ok(())
}
