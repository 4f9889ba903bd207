//! The nine acceptance criteria on the reference study. Each test prints
//! one PASS/FAIL line with the measured quantities.

use std::path::PathBuf;
use std::sync::OnceLock;

use petc_core::harness::acceptance::Suite;

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("kernels");
        Suite::new(Some(cache))
    })
}

fn check(id: u8) {
    let result = suite().criterion(id);
    println!("{result}");
    assert!(result.passed, "{result}");
}

#[test]
fn criterion_1_minimum_dwell_time() {
    check(1);
}

#[test]
fn criterion_2_constant_chain_feasibility() {
    check(2);
}

#[test]
fn criterion_3_triggering_invariants() {
    check(3);
}

#[test]
fn criterion_4_stability() {
    check(4);
}

#[test]
fn criterion_5_observer_extinction() {
    check(5);
}

#[test]
fn criterion_6_etc_relationship() {
    check(6);
}

#[test]
fn criterion_7_kernel_correctness() {
    check(7);
}

#[test]
fn criterion_8_numerics() {
    check(8);
}

#[test]
fn criterion_9_lyapunov_certificate() {
    check(9);
}
