//! Split-Bregman TV denoising against an independent solver: projected
//! gradient ascent on the dual of the same objective, run to convergence.

mod support {
    pub mod tv_dual;
}

use facetviz::priors::{tv_denoise, tv_objective};
use support::tv_dual::{fixtures, oracle};

#[test]
fn split_bregman_reaches_dual_oracle_objective() {
    for (k, (img, lambda)) in fixtures().into_iter().enumerate() {
        let ours = tv_denoise(&img, lambda, 100).unwrap();
        let reference = oracle(&img, lambda);
        let (a, b) = (tv_objective(&ours, &img, lambda), tv_objective(&reference, &img, lambda));
        assert!(a <= b * 1.02, "fixture {k}: split Bregman {a} vs oracle {b}");
    }
}
