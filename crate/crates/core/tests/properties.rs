//! Property tests over the constant chain and the state transforms, with
//! kernels solved on the reference plant.

use std::sync::OnceLock;

use petc_core::grid::UniformGrid;
use petc_core::kernels::{compute_gains, Gains, KernelSet, SolverOptions};
use petc_core::params::{
    compute_constants, compute_epsilons, CharacteristicTimes, DesignChoices, Epsilons, PlantParams, SampledPlant,
    TriggerParams,
};
use petc_core::transforms::VolterraOperator;
use petc_core::Error;
use proptest::prelude::*;

struct Setup {
    plant: SampledPlant,
    times: CharacteristicTimes,
    kernels: KernelSet,
    gains: Gains,
    eps: Epsilons,
}

fn setup(cells: usize) -> Setup {
    let plant = PlantParams::reference().sample(&UniformGrid::new(cells).unwrap()).unwrap();
    let times = CharacteristicTimes::from_sampled(&plant);
    let kernels = KernelSet::solve(&plant, &SolverOptions::default()).unwrap().0;
    let gains = compute_gains(&kernels.p, &kernels.k, &kernels.l, &plant).unwrap();
    let eps = compute_epsilons(&plant, &gains.control, &gains.transformed).unwrap();
    Setup { plant, times, kernels, gains, eps }
}

fn reference() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(256))
}

fn chain(s: &Setup, trig: &TriggerParams, design: &DesignChoices) -> petc_core::Result<petc_core::params::DerivedConstants> {
    compute_constants(&s.plant, &s.times, trig, &s.eps, &s.gains.transformed, design)
}

#[test]
fn reference_design_reproduces_hand_computed_chain() {
    let s = reference();
    let trig = TriggerParams::reference();
    let design = DesignChoices {
        mu: Some(0.173),
        delta: Some(0.17),
        gamma: Some(0.1236),
        a_pinned: Some(253.75),
        allow_infeasible: true,
        ..DesignChoices::default()
    };
    let c = chain(s, &trig, &design).unwrap();
    // Unit transit times: r = 1/min(e^{-mu}, 2 q^2) = 1/min(0.841, 0.5).
    assert!((c.r - 2.0).abs() < 1e-12);
    assert_eq!(c.b_weight, 253.75 * 0.25);
    let load = (s.eps.eps1 + 1.0).max(s.eps.eps2 + 1.0);
    assert!((c.nu0 - (0.173 - 0.17 - 2.0 / 253.75 * load)).abs() < 1e-14);
    assert!(c.nu0 < 0.0);
    assert!((c.a0 - (4.0 * 253.75 * 0.25 * 0.173_f64.exp() + s.eps.eps0)).abs() < 1e-10);
    assert!((c.eps.eps0 - 9.453125).abs() < 1e-9);
    assert_eq!(c.gamma, 0.1236);
    assert_eq!(c.violations.len(), 2);

    let strict = DesignChoices { allow_infeasible: false, ..design };
    match chain(s, &trig, &strict) {
        Err(Error::Infeasible { inequality, .. }) => assert!(inequality.starts_with("A >")),
        other => panic!("expected infeasible design, got {other:?}"),
    }
}

#[test]
fn chain_is_deterministic() {
    let s = reference();
    let trig = TriggerParams::reference();
    let design = DesignChoices { mu: Some(0.3), delta: Some(0.1), ..DesignChoices::default() };
    assert_eq!(chain(s, &trig, &design).unwrap(), chain(s, &trig, &design).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn feasible_designs_respect_the_rate_cap(
        mu_frac in 0.02..0.98_f64,
        delta_frac in 0.02..0.98_f64,
        margin in 0.0..5.0_f64,
        gamma_req in proptest::option::of(0.001..2.0_f64),
        a1 in 0.1..3.0_f64,
        eta in 0.1..3.0_f64,
    ) {
        let s = reference();
        let trig = TriggerParams { a1, eta, ..TriggerParams::reference() };
        let mu_upper = chain(s, &trig, &DesignChoices::default()).unwrap().mu_upper;
        let mu = mu_frac * mu_upper;
        let design = DesignChoices { mu: Some(mu), delta: Some(delta_frac * mu), gamma: gamma_req, a_margin: margin, ..DesignChoices::default() };
        match chain(s, &trig, &design) {
            Ok(c) => {
                prop_assert!(c.is_feasible());
                prop_assert!(c.gamma > 0.0);
                prop_assert!(c.gamma <= c.nu0.min(a1).min(eta));
                prop_assert_eq!(c.nu, c.nu0.min(a1).min(eta));
                prop_assert_eq!(c.b_weight / c.a_weight, 0.25);
                let spread = (mu * (s.times.phi1_1 + s.times.phi2_1)).exp();
                prop_assert!((c.c_weight / c.d_weight - 0.25 * spread).abs() < 1e-12 * spread);
                prop_assert!((c.theta - (trig.a2 * trig.omega0.powi(2) + a1 * trig.omega0 + c.a0)).abs() < 1e-9 * c.theta);
                let load = (s.eps.eps1 / trig.a2 + trig.kappa1).max(s.eps.eps2 / trig.a2 + trig.kappa2);
                prop_assert!((c.nu0 - (mu - c.delta - c.r / c.a_weight * load)).abs() < 1e-12);
                prop_assert!(c.tau > 0.0);
            }
            Err(Error::Infeasible { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn tau_shrinks_as_the_weight_grows(a in 1.0..1e4_f64, factor in 1.01..10.0_f64) {
        let s = reference();
        let trig = TriggerParams::reference();
        let pinned = |a| DesignChoices { mu: Some(0.3), delta: Some(0.1), gamma: Some(0.01), a_pinned: Some(a), allow_infeasible: true, ..DesignChoices::default() };
        let lo = chain(s, &trig, &pinned(a)).unwrap().tau;
        let hi = chain(s, &trig, &pinned(a * factor)).unwrap().tau;
        prop_assert!(hi < lo);
    }

    #[test]
    fn forward_then_inverse_recovers_smooth_states(k1 in 0.5..3.0_f64, k2 in 0.5..3.0_f64, shift in -1.0..1.0_f64) {
        let s = reference();
        let grid = s.plant.grid;
        let forward = VolterraOperator::forward(&s.kernels.k);
        let inverse = VolterraOperator::inverse(&s.kernels.l);
        let u = grid.sample(|x| (k1 * x).sin() + shift);
        let v = grid.sample(|x| (k2 * x).cos() * x);
        let (a, b) = forward.apply(&u, &v).unwrap();
        let (u2, v2) = inverse.apply(&a, &b).unwrap();
        let err = (0..grid.nodes()).map(|i| (u2[i] - u[i]).abs().max((v2[i] - v[i]).abs())).fold(0.0, f64::max);
        prop_assert!(err < 5e-3, "round-trip error {err}");
    }
}

#[test]
fn transform_round_trip_error_is_first_order() {
    let errs: Vec<f64> = [64, 128, 256]
        .into_iter()
        .map(|n| {
            let s = if n == 256 { None } else { Some(setup(n)) };
            let s = s.as_ref().unwrap_or_else(|| reference());
            let grid = s.plant.grid;
            let u = grid.sample(|x| (2.0 * x).sin() + 0.5);
            let v = grid.sample(|x| 1.0 - x * x);
            let (a, b) = VolterraOperator::forward(&s.kernels.k).apply(&u, &v).unwrap();
            let (u2, v2) = VolterraOperator::inverse(&s.kernels.l).apply(&a, &b).unwrap();
            (0..grid.nodes()).map(|i| (u2[i] - u[i]).abs().max((v2[i] - v[i]).abs())).fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[1] / w[0];
        assert!(ratio < 0.6, "errors {errs:?}");
    }
}
