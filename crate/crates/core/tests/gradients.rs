//! Layer and regularizer gradients against central finite differences.

mod support {
    pub mod grad_checks;
}

use support::grad_checks::{alpha_norm_fixtures, per_layer_kind};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (kind, err) in per_layer_kind(20) {
        assert!(err < 1e-3, "{kind}: relative error {err:e}");
    }
}

#[test]
fn alpha_norm_gradient_matches_finite_differences() {
    let err = alpha_norm_fixtures(20);
    assert!(err < 1e-3, "relative error {err:e}");
}
