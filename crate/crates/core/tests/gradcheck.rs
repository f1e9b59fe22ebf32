mod support;

use support::gradcheck::*;

#[test]
fn matmul_gradients_match_finite_differences() {
    let worst = matmul();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn dense_bias_gradients_match_finite_differences() {
    let worst = dense_bias();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn channel_bias_gradients_match_finite_differences() {
    let worst = channel_bias();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let worst = conv2d();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn relu_gradients_match_finite_differences() {
    let worst = relu();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn global_avg_pool_gradients_match_finite_differences() {
    let worst = global_avg_pool();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    let worst = cross_entropy();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn reduction_and_arithmetic_gradients_match_finite_differences() {
    let worst = reduction_and_arithmetic();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}

#[test]
fn two_layer_mlp_gradients_match_finite_differences() {
    let worst = two_layer_mlp();
    assert!(worst < TOL, "max relative error {worst:e} over {TRIALS} trials");
}
