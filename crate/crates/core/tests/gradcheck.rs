use cka_core::checks::{check_all_losses, check_loss, GRADCHECK_TOLERANCE, LOSS_CHECKS};

#[test]
fn every_loss_matches_finite_differences() {
    let results = check_all_losses(10, 0).unwrap();
    assert_eq!(results.len(), LOSS_CHECKS.len());
    for r in &results {
        assert!(r.max_rel_error <= GRADCHECK_TOLERANCE, "{}: {:e}", r.name, r.max_rel_error);
    }
}

#[test]
fn unknown_loss_is_rejected() {
    assert!(check_loss("hinge", 1, 0).is_err());
}
