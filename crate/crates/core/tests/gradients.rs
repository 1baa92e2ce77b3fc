use tkan::gradcheck::{check_gradients, format_reports, run_all, run_suite, suite_names, DEFAULT_STEP};
use tkan::numerics::Rng;
use tkan::spline::{Activation, KanLayer, SplineGrid};
use std::sync::Arc;

#[test]
fn every_suite_is_within_tolerance() {
    let reports = run_all(7).unwrap();
    print!("{}", format_reports(&reports));
    for r in &reports {
        assert!(r.passed(), "{} worst {:?}", r.suite, r.worst());
        assert!(r.tensors.iter().all(|t| t.entries > 0));
    }
}

#[test]
fn reports_are_deterministic() {
    let a = run_suite("rkan-step", 3).unwrap();
    let b = run_suite("rkan-step", 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_suite_is_rejected() {
    assert!(run_suite("nope", 0).is_err());
    assert!(suite_names().any(|n| n == "cnn-encoder"));
}

#[test]
fn corrupted_backward_is_detected() {
    let mut rng = Rng::new(11);
    let mut layer = KanLayer::new(3, 2, Arc::new(SplineGrid::default()), Activation::Silu, &mut rng).unwrap();
    let x = [0.3, -0.4, 0.8];
    let r = [0.7, -1.1];
    let checks = check_gradients(&mut layer, DEFAULT_STEP, |m, grad| {
        let (y, cache) = m.forward(&x)?;
        if grad {
            let mut dx = [0.0; 3];
            m.backward(&cache, &r, &mut dx);
            m.coeffs.grad_mut()[5] *= 1.5;
        }
        Ok(y.iter().zip(&r).map(|(a, b)| a * b).sum())
    })
    .unwrap();
    let coeffs = checks.iter().find(|c| c.name == "coeffs").unwrap();
    assert!(coeffs.rel_error > 1e-3, "{coeffs:?}");
    let alpha = checks.iter().find(|c| c.name == "alpha").unwrap();
    assert!(alpha.rel_error < 1e-6);
}
