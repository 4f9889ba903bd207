//! The dynamic event-triggering machine: trigger variable `m`, Riccati clock
//! `f`, dwell gate, running-max barrier and the Lyapunov functionals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::params::{CharacteristicTimes, DerivedConstants, SampledPlant, TriggerParams};

/// How the held input is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Dynamic triggering with the performance residual.
    Petc,
    /// Dynamic triggering without the performance residual.
    Etc,
    /// Input refreshed every step.
    Continuous,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Petc, Mode::Etc, Mode::Continuous];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Petc => "petc",
            Mode::Etc => "etc",
            Mode::Continuous => "continuous",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (expected petc, etc or continuous)")))
    }
}

/// Quadrature weights of `∫ w_α a² + w_β b²` on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWeights {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl EnergyWeights {
    /// Weights `a·e^{−μφ1}/λ1` and `b·e^{μφ2}/λ2`.
    pub fn new(plant: &SampledPlant, times: &CharacteristicTimes, mu: f64, a: f64, b: f64) -> Result<Self> {
        let nodes = plant.grid.nodes();
        for g in [&times.phi1, &times.phi2] {
            if g.len() != nodes {
                return Err(Error::GridMismatch { expected: nodes, found: g.len() });
            }
        }
        let trap = plant.grid.trapezoid_weights();
        let alpha = (0..nodes).map(|i| trap[i] * a * (-mu * times.phi1[i]).exp() / plant.lambda1[i]).collect();
        let beta = (0..nodes).map(|i| trap[i] * b * (mu * times.phi2[i]).exp() / plant.lambda2[i]).collect();
        Ok(Self { alpha, beta })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let ea: f64 = self.alpha.iter().zip(a).map(|(w, x)| w * x * x).sum();
        let eb: f64 = self.beta.iter().zip(b).map(|(w, x)| w * x * x).sum();
        ea + eb
    }
}

/// The weights of `V1` (observer target states) and `V2` (error states).
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovWeights {
    pub v1: EnergyWeights,
    pub v2: EnergyWeights,
}

impl LyapunovWeights {
    pub fn new(plant: &SampledPlant, times: &CharacteristicTimes, consts: &DerivedConstants) -> Result<Self> {
        Ok(Self {
            v1: EnergyWeights::new(plant, times, consts.mu, consts.a_weight, consts.b_weight)?,
            v2: EnergyWeights::new(plant, times, consts.mu, consts.c_weight, consts.d_weight)?,
        })
    }
}

/// `V1` of a pair of target profiles.
pub fn eval_v1(weights: &LyapunovWeights, alpha_hat: &GridFunction, beta_hat: &GridFunction) -> f64 {
    weights.v1.eval(alpha_hat.values(), beta_hat.values())
}

/// `(V2, V)` from the error profiles in target coordinates and `V̂`.
pub fn eval_diagnostics(
    weights: &LyapunovWeights,
    alpha_tilde: &GridFunction,
    beta_tilde: &GridFunction,
    v_hat: f64,
) -> (f64, f64) {
    let v2 = weights.v2.eval(alpha_tilde.values(), beta_tilde.values());
    (v2, v_hat + v2)
}

/// Signals driving the trigger variable at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TriggerInputs {
    pub alpha_sq: f64,
    pub beta_sq: f64,
    pub alpha_1_sq: f64,
    pub beta_tilde_0_sq: f64,
    pub d_sq: f64,
}

impl TriggerInputs {
    pub fn new(alpha_hat: &GridFunction, beta_hat: &GridFunction, beta_tilde_0: f64, d: f64) -> Self {
        Self {
            alpha_sq: alpha_hat.norm_sq(),
            beta_sq: beta_hat.norm_sq(),
            alpha_1_sq: alpha_hat.last().powi(2),
            beta_tilde_0_sq: beta_tilde_0 * beta_tilde_0,
            d_sq: d * d,
        }
    }
}

/// One sample of the performance quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerformanceSample {
    pub v1: f64,
    pub v_hat: f64,
    pub w: f64,
    pub barrier: f64,
    pub v2: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerState {
    pub m: f64,
    pub f: f64,
    /// Running maximum of `e^{γs} V̂(s)`.
    pub rho_max: f64,
    pub t_last_event: f64,
    /// Events so far, counting the initial one.
    pub event_index: usize,
    pub mode: Mode,
}

impl TriggerState {
    /// State before the initial event at `t = 0`.
    pub fn new(mode: Mode, trig: &TriggerParams) -> Self {
        Self { m: 0.0, f: trig.omega1, rho_max: 0.0, t_last_event: 0.0, event_index: 0, mode }
    }

    pub fn in_dwell(&self, t: f64, tau: f64) -> bool {
        t < self.t_last_event + tau
    }

    /// `V̂ = V1 + f d² + m`.
    pub fn v_hat(&self, v1: f64, d: f64) -> f64 {
        v1 + self.f * d * d + self.m
    }

    /// Folds `V̂(t)` into the running maximum; returns `(barrier, W)`.
    pub fn update_barrier(&mut self, v_hat: f64, t: f64, gamma: f64) -> (f64, f64) {
        self.rho_max = self.rho_max.max((gamma * t).exp() * v_hat);
        let barrier = ((-gamma * t).exp() * self.rho_max).max(v_hat);
        (barrier, barrier - v_hat)
    }

    /// One explicit Euler step of `m` and `f` from time `t`.
    pub fn step(&mut self, inputs: &TriggerInputs, w: f64, consts: &DerivedConstants, trig: &TriggerParams, t: f64, dt: f64) {
        if self.mode == Mode::Continuous {
            return;
        }
        let c = if self.mode == Mode::Etc { 0.0 } else { trig.c };
        let forcing = trig.kappa1 * inputs.alpha_sq
            + trig.kappa2 * inputs.beta_sq
            + trig.kappa3 * inputs.alpha_1_sq
            + trig.kappa4 * inputs.beta_tilde_0_sq
            + c * w;
        let dwelling = self.in_dwell(t, consts.tau);
        let hold_penalty = if dwelling { 0.0 } else { consts.theta * inputs.d_sq };
        self.m += dt * (-trig.eta * self.m - hold_penalty + forcing);

        let t_next = t + dt;
        self.f = if self.in_dwell(t_next, consts.tau) {
            let rate = trig.a2 * self.f * self.f + trig.a1 * self.f + consts.a0;
            (self.f - dt * rate).max(trig.omega0)
        } else {
            trig.omega0
        };
    }

    /// Whether an event fires at `t` given the trigger value `m` there.
    pub fn check_event(&self, m: f64, t: f64, tau: f64) -> bool {
        !self.in_dwell(t, tau) && m < 0.0
    }

    /// Resets the machine at an event; `d_before` is the holding error just
    /// before the input update.
    pub fn on_event(&mut self, d_before: f64, t: f64, trig: &TriggerParams) {
        self.m = if self.event_index == 0 { 0.0 } else { trig.omega0 * d_before * d_before };
        self.f = trig.omega1;
        self.t_last_event = t;
        self.event_index += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::params::{Epsilons, PlantParams};

    fn consts(tau: f64, a0: f64, theta: f64) -> DerivedConstants {
        DerivedConstants {
            eps: Epsilons::default(),
            mu: 0.0,
            mu_upper: 1.0,
            delta: 0.0,
            r: 1.0,
            a_weight: 1.0,
            b_weight: 1.0,
            c_weight: 1.0,
            d_weight: 1.0,
            a_lower_reflection: 0.0,
            a_lower_decay: 0.0,
            a0,
            theta,
            nu0: 1.0,
            nu: 1.0,
            gamma: 0.1,
            gamma_requested: None,
            tau,
            lambda1_min: 1.0,
            lambda2_min: 1.0,
            violations: Vec::new(),
        }
    }

    fn unit_plant(n: usize, mu: f64, a: f64) -> (SampledPlant, CharacteristicTimes, LyapunovWeights) {
        let plant = PlantParams::constant(1.0, 1.0, 0.0, 0.0, 0.5, 0.5).sample(&UniformGrid::new(n).unwrap()).unwrap();
        let times = CharacteristicTimes::from_sampled(&plant);
        let mut c = consts(0.1, 1.0, 1.0);
        (c.mu, c.a_weight) = (mu, a);
        let w = LyapunovWeights::new(&plant, &times, &c).unwrap();
        (plant, times, w)
    }

    #[test]
    fn v1_of_unit_profile() {
        let n = 1024;
        let (_, _, w) = unit_plant(n, 0.0, 253.75);
        let one = GridFunction::constant(n + 1, 1.0);
        let zero = GridFunction::zeros(n + 1);
        assert!((eval_v1(&w, &one, &zero) - 253.75).abs() < 1e-10);
        assert_eq!(eval_v1(&w, &zero, &zero), 0.0);

        let (_, _, w) = unit_plant(n, 0.173, 253.75);
        let exact = 253.75 * (1.0 - (-0.173_f64).exp()) / 0.173;
        assert!((eval_v1(&w, &one, &zero) - exact).abs() < 1e-8 * exact);

        let (v2, v) = eval_diagnostics(&w, &zero, &zero, 3.0);
        assert_eq!((v2, v), (0.0, 3.0));
        let (_, _, w) = unit_plant(n, 0.0, 1.0);
        assert!((eval_diagnostics(&w, &one, &zero, 0.0).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undriven_trigger_decays_exponentially() {
        let trig = TriggerParams { kappa1: 0.0, kappa2: 0.0, kappa3: 0.0, kappa4: 0.0, c: 0.0, ..TriggerParams::reference() };
        let c = consts(10.0, 1.0, 1.0);
        let mut s = TriggerState::new(Mode::Petc, &trig);
        s.m = 2.0;
        let dt = 1e-4;
        for n in 0..10_000 {
            s.step(&TriggerInputs::default(), 0.0, &c, &trig, n as f64 * dt, dt);
        }
        let exact = 2.0 * (-1.0_f64).exp();
        assert!((s.m - exact).abs() < 2.0 * dt);
    }

    #[test]
    fn riccati_clock_reaches_omega0_at_tau() {
        let trig = TriggerParams { a1: 0.0, a2: 1.0, omega0: 1.0, omega1: 10.0, ..TriggerParams::reference() };
        let tau = 0.9;
        let c = consts(tau, 0.0, 1.0);
        let mut s = TriggerState::new(Mode::Petc, &trig);
        let dt = tau / 9000.0;
        let mut max_err = 0.0_f64;
        let mut n = 0;
        while (n as f64 + 1.0) * dt < tau - 1e-12 {
            s.step(&TriggerInputs::default(), 0.0, &c, &trig, n as f64 * dt, dt);
            n += 1;
            let t = n as f64 * dt;
            max_err = max_err.max((s.f - 10.0 / (1.0 + 10.0 * t)).abs());
        }
        assert!(max_err < 0.02, "max error {max_err}");
        s.step(&TriggerInputs::default(), 0.0, &c, &trig, n as f64 * dt, dt);
        assert_eq!(s.f, 1.0);
    }

    #[test]
    fn hold_penalty_only_after_dwell() {
        let trig = TriggerParams { kappa1: 0.0, kappa2: 0.0, kappa3: 0.0, kappa4: 0.0, c: 0.0, ..TriggerParams::reference() };
        let c = consts(0.5, 1.0, 3.0);
        let inputs = TriggerInputs { d_sq: 1.0, ..Default::default() };
        let mut s = TriggerState::new(Mode::Petc, &trig);
        s.step(&inputs, 0.0, &c, &trig, 0.1, 0.01);
        assert_eq!(s.m, 0.0);
        s.step(&inputs, 0.0, &c, &trig, 0.5, 0.01);
        assert!((s.m + 0.03).abs() < 1e-15);
    }

    #[test]
    fn barrier_cases() {
        let gamma = 0.2;
        let mut s = TriggerState::new(Mode::Petc, &TriggerParams::reference());
        for n in 0..100 {
            let (_, w) = s.update_barrier(4.0 * (-gamma * n as f64 * 0.1).exp(), n as f64 * 0.1, gamma);
            assert!((0.0..1e-12).contains(&w));
        }
        let mut s = TriggerState::new(Mode::Petc, &TriggerParams::reference());
        for n in 0..100 {
            let t = n as f64 * 0.1;
            let (barrier, w) = s.update_barrier(4.0 * (-2.0 * gamma * t).exp(), t, gamma);
            let exact = 4.0 * ((-gamma * t).exp() - (-2.0 * gamma * t).exp());
            assert!((w - exact).abs() < 1e-12);
            assert!(barrier >= 4.0 * (-2.0 * gamma * t).exp());
        }
    }

    #[test]
    fn dwell_gate_dominates() {
        let trig = TriggerParams::reference();
        let mut s = TriggerState::new(Mode::Petc, &trig);
        s.on_event(5.0, 0.0, &trig);
        assert_eq!((s.m, s.f, s.event_index), (0.0, 10.0, 1));
        assert!(!s.check_event(-5.0, 0.05, 0.1));
        assert!(s.check_event(-1e-9, 0.1, 0.1));
        assert!(!s.check_event(0.0, 0.2, 0.1));
        s.on_event(2.0, 0.3, &trig);
        assert_eq!((s.m, s.t_last_event, s.event_index), (4.0, 0.3, 2));
    }

    #[test]
    fn etc_ignores_the_residual() {
        let trig = TriggerParams::reference();
        let c = consts(0.01, 1.0, 1.0);
        let inputs = TriggerInputs { alpha_sq: 0.5, beta_sq: 0.25, alpha_1_sq: 0.1, beta_tilde_0_sq: 0.2, d_sq: 0.3 };
        let mut a = TriggerState::new(Mode::Etc, &trig);
        let mut b = a;
        for n in 0..50 {
            a.step(&inputs, 0.0, &c, &trig, n as f64 * 1e-3, 1e-3);
            b.step(&inputs, 100.0 * n as f64, &c, &trig, n as f64 * 1e-3, 1e-3);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
