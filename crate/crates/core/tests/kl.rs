//! Closed-form divergences against sampling and direct evaluation.

mod common;

use common::{bernoulli_kl_failures, gaussian_kl_failures};

#[test]
fn gaussian_kl_within_three_standard_errors_of_sampling() {
    let bad = gaussian_kl_failures(20, 1_000_000, 2024);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn bernoulli_kl_vanishes_only_at_target() {
    let bad = bernoulli_kl_failures();
    assert!(bad.is_empty(), "{bad:#?}");
}
