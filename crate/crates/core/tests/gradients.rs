//! Finite-difference checks of every analytic gradient in the clustering
//! stage, against objectives recomputed from scratch.

mod common;

use common::{check_net_gradient, check_u_gradient, gradient_instances};
use cpac::admm::Mode;

const INSTANCES: usize = 24;
const TOLERANCE: f64 = 1e-6;

fn assert_close(what: &str, seed: usize, value: f64) {
    assert!(
        value <= TOLERANCE,
        "{what} on instance {seed}: relative error {value:e}"
    );
}

#[test]
fn enough_instances_survive_the_kink_filter() {
    assert_eq!(gradient_instances(INSTANCES).len(), INSTANCES);
}

#[test]
fn network_gradients_match_finite_differences_in_every_mode() {
    for (i, inst) in gradient_instances(INSTANCES).iter().enumerate() {
        for mode in [Mode::SingleRepresentation, Mode::ClusteringOnly, Mode::Admm] {
            let check = check_net_gradient(inst, mode);
            assert_close(&format!("mode {mode} parameters"), i, check.params);
            assert_close(&format!("mode {mode} input"), i, check.input);
            assert!(
                check.loss < 1e-10,
                "mode {mode} loss mismatch on instance {i}: {:e}",
                check.loss
            );
        }
    }
}

#[test]
fn u_gradient_matches_finite_differences() {
    for (i, inst) in gradient_instances(INSTANCES).iter().enumerate() {
        let check = check_u_gradient(inst);
        assert_close("U", i, check.params);
        assert!(
            check.loss < 1e-10,
            "U loss mismatch on instance {i}: {:e}",
            check.loss
        );
    }
}
