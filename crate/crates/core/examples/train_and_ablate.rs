//! Trains the full model and both ablations on one small log and compares
//! their test GAUC.

use std::time::Instant;

use coupa::data::{build_samples, generate, GeneratorSpec, Protocol};
use coupa::model::{evaluate, train, Ablation, ScoreMode};
use coupa::{Coupa, ModelConfig, TrainConfig};

fn main() -> coupa::Result<()> {
    let users = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000);
    let spec = GeneratorSpec {
        users,
        ..GeneratorSpec::default()
    };
    let data = build_samples(&generate(&spec)?.events, &Protocol::default())?;
    println!("{} train, {} validation, {} test samples", data.train.len(), data.validation.len(), data.test.len());

    let cfg = TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        batch_size: 64,
        alpha: 0.01,
        seed: 1,
        ..TrainConfig::default()
    };
    let variants = [
        ("full", Ablation::default()),
        ("no time encoding", Ablation { time_encoding: true, ..Ablation::default() }),
        ("no position module", Ablation { position_module: true, ..Ablation::default() }),
    ];
    for (name, ablation) in variants {
        let t = Instant::now();
        let mut model = Coupa::new(ModelConfig { ablation, ..ModelConfig::default() }, data.vocab.clone(), 1)?;
        train(&mut model, &data, &cfg, |rec, _| {
            if let (Some(loss), Some(v)) = (rec.train_loss, rec.validation_gauc) {
                println!("  {name} epoch {}: loss {loss:.4}, validation GAUC {v:.4}", rec.epoch);
            }
            Ok(())
        })?;
        let report = evaluate(&model, &data.test, ScoreMode::Logged)?;
        println!("{name:>18}: test GAUC {:.4} ({:.0?})", report.gauc, t.elapsed());
    }
    Ok(())
}
