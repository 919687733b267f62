//! Composite-loss and model-level finite-difference checks in f64.

use std::time::Instant;

use vsp_core::suite::core_suite;

#[test]
fn composite_losses_and_models_match_finite_differences() {
    let start = Instant::now();
    let reports = core_suite();
    let mut failed = false;
    for r in &reports {
        println!("{r}");
        failed |= !r.passed;
    }
    println!("core suite: {} checks in {:.1?}", reports.len(), start.elapsed());
    assert!(!failed, "at least one composite check failed");
}
