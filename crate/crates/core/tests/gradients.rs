mod common;

use std::time::Instant;

use common::{check_case, check_model_gradient, layer_cases};

#[test]
fn every_layer_matches_finite_differences() {
    for seed in 0..3 {
        for c in layer_cases(seed) {
            let report = check_case(&c);
            assert!(report.checked > 0, "{}", c.name);
            assert!(report.max_error < 1e-4, "{} seed {seed}: {:?}", c.name, report.worst);
        }
    }
}

#[test]
fn joint_loss_matches_finite_differences() {
    let t = Instant::now();
    let report = check_model_gradient(1);
    assert!(report.checked > 500);
    assert!(report.skipped * 20 < report.checked, "{} skipped", report.skipped);
    assert!(report.max_error < 1e-4, "{:?}", report.worst);
    assert!(t.elapsed().as_secs() < 60);
}
