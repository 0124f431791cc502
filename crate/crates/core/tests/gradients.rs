//! Finite-difference checks of every backward pass.

mod common;

use common::gradcheck;

#[test]
fn conv_layers() {
    gradcheck::conv_layers().assert_ok();
}

#[test]
fn dense_layers() {
    gradcheck::dense_layers().assert_ok();
}

#[test]
fn batch_norm_over_batch() {
    gradcheck::batch_norm_over_batch().assert_ok();
}

#[test]
fn dropout_with_fixed_mask() {
    gradcheck::dropout_with_fixed_mask().assert_ok();
}

#[test]
fn bilinear_resample() {
    gradcheck::bilinear_resample().assert_ok();
}

#[test]
fn recurrent_conv_through_time() {
    gradcheck::recurrent_conv_through_time().assert_ok();
}

#[test]
fn fovea_insertion_routes_to_max() {
    gradcheck::fovea_insertion_routes_to_max().assert_ok();
}

#[test]
fn encoder_heads() {
    gradcheck::encoder_heads().assert_ok();
}

#[test]
fn full_combined_model() {
    gradcheck::full_combined_model().assert_ok();
}

#[test]
fn full_combined_model_central_foveae() {
    gradcheck::full_combined_model_central_foveae().assert_ok();
}

#[test]
fn full_dual_model() {
    gradcheck::full_dual_model().assert_ok();
}

#[test]
fn full_periphery_only_model() {
    gradcheck::full_periphery_only_model().assert_ok();
}

#[test]
fn full_combined_model_two_sequences() {
    gradcheck::full_combined_model_two_sequences().assert_ok();
}
