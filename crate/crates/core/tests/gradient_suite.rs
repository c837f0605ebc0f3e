use facenas_core::gradsuite::{run_gradient_suite, LOSS_TOLERANCE, OP_TOLERANCE};

#[test]
fn every_case_passes_over_twenty_seeds() {
    let reports = run_gradient_suite(20).unwrap();
    assert!(reports.len() >= 40);
    let losses: Vec<_> = reports.iter().filter(|r| r.name.starts_with("loss_")).collect();
    assert_eq!(losses.len(), 4);
    assert!(losses.iter().all(|r| r.tolerance == LOSS_TOLERANCE));
    for r in &reports {
        assert_eq!(r.seeds, 20);
        assert!(r.name.starts_with("loss_") || r.tolerance == OP_TOLERANCE);
        assert!(r.passed(), "{}: {:e} > {:e}", r.name, r.max_error, r.tolerance);
    }
}
