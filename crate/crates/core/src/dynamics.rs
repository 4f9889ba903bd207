//! First-order upwind time stepping of the plant and the observer under a
//! held boundary input.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernels::ObserverGains;
use crate::params::SampledPlant;
use crate::transforms::StateSnapshot;

/// Courant number used when both speeds are constant.
pub const CFL_CONSTANT_SPEEDS: f64 = 1.0;
/// Courant number used for variable speeds.
pub const CFL_VARIABLE_SPEEDS: f64 = 0.95;

/// Time discretization of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub cells: usize,
    pub dx: f64,
    pub dt: f64,
    pub cfl: f64,
    pub t_end: f64,
}

impl SimGrid {
    /// `dt = cfl·dx / max λ`.
    pub fn new(plant: &SampledPlant, cfl: f64, t_end: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::Cfl { courant: cfl });
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {t_end}")));
        }
        let cells = plant.grid.cells();
        let dx = plant.grid.dx();
        Ok(Self { cells, dx, dt: cfl * dx / plant.max_speed(), cfl, t_end })
    }

    /// Number of steps needed to reach the horizon.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }

    /// Time of step `n`, computed without accumulation.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Rejects steps that cannot resolve the dwell time `tau`.
    pub fn check_dwell_resolution(&self, tau: f64, max_speed: f64) -> Result<()> {
        let limit = tau / 10.0;
        if self.dt > limit {
            let suggested_grid = (10.0 * self.cfl / (max_speed * tau)).ceil() as usize;
            return Err(Error::StepTooLarge { dt: self.dt, limit, suggested_grid });
        }
        Ok(())
    }
}

/// The held input, the continuous law and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlState {
    /// Input currently applied at the actuated boundary.
    pub held: f64,
    /// Continuous feedback law at the current step.
    pub law: f64,
    /// Holding error `held − law`.
    pub d: f64,
}

impl ControlState {
    /// Refreshes the continuous law, keeping the held input.
    pub fn observe(&mut self, law: f64) {
        self.law = law;
        self.d = self.held - law;
    }

    /// Event update: the held input jumps to the current law.
    pub fn apply_event(&mut self, law_now: f64) {
        self.held = law_now;
        self.law = law_now;
        self.d = 0.0;
    }
}

/// Measurement `y = v(0)`.
pub fn measure(snapshot: &StateSnapshot) -> f64 {
    snapshot.v.first()
}

/// Precomputed per-node coefficients of one explicit step.
#[derive(Debug, Clone)]
pub struct Stepper {
    dt: f64,
    sigma1: Vec<f64>,
    sigma2: Vec<f64>,
    c1_dt: Vec<f64>,
    c2_dt: Vec<f64>,
    p1_dt: Vec<f64>,
    p2_dt: Vec<f64>,
    q: f64,
    rho: f64,
}

impl Stepper {
    pub fn new(plant: &SampledPlant, gains: &ObserverGains, grid: &SimGrid) -> Result<Self> {
        let nodes = plant.grid.nodes();
        for g in [&gains.p1, &gains.p2] {
            if g.len() != nodes {
                return Err(Error::GridMismatch { expected: nodes, found: g.len() });
            }
        }
        if grid.cells != plant.grid.cells() {
            return Err(Error::GridMismatch { expected: nodes, found: grid.cells + 1 });
        }
        let (dt, dx) = (grid.dt, grid.dx);
        let courant = |l: &GridFunction| -> Vec<f64> { l.values().iter().map(|l| l * dt / dx).collect() };
        let (sigma1, sigma2) = (courant(&plant.lambda1), courant(&plant.lambda2));
        let worst = sigma1.iter().chain(&sigma2).fold(0.0_f64, |m, s| m.max(*s));
        if worst > 1.0 + 1e-12 {
            return Err(Error::Cfl { courant: worst });
        }
        let scaled = |g: &GridFunction| -> Vec<f64> { g.values().iter().map(|v| v * dt).collect() };
        Ok(Self {
            dt,
            sigma1,
            sigma2,
            c1_dt: scaled(&plant.c1),
            c2_dt: scaled(&plant.c2),
            p1_dt: scaled(&gains.p1),
            p2_dt: scaled(&gains.p2),
            q: plant.q,
            rho: plant.rho,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> usize {
        self.sigma1.len()
    }

    /// Advances `cur` one step under the held input `input`, writing into
    /// `next`. Sources use the old time level; boundary conditions are
    /// imposed after the interior update, the observer inlet being fed by
    /// the new measurement.
    pub fn step_into(&self, cur: &StateSnapshot, input: f64, next: &mut StateSnapshot) -> Result<()> {
        let nodes = self.nodes();
        cur.check_grid(nodes)?;
        next.check_grid(nodes)?;
        let n = nodes - 1;
        let innovation = cur.v[0] - cur.v_hat[0];

        self.advect_right(cur.u.values(), cur.v.values(), 0.0, &self.p1_dt, next.u.values_mut());
        self.advect_left(cur.v.values(), cur.u.values(), 0.0, &self.p2_dt, next.v.values_mut());
        self.advect_right(cur.u_hat.values(), cur.v_hat.values(), innovation, &self.p1_dt, next.u_hat.values_mut());
        self.advect_left(cur.v_hat.values(), cur.u_hat.values(), innovation, &self.p2_dt, next.v_hat.values_mut());

        next.v[n] = self.rho * next.u[n] + input;
        next.u[0] = self.q * next.v[0];
        next.u_hat[0] = self.q * next.v[0];
        next.v_hat[n] = self.rho * next.u_hat[n] + input;
        next.t = cur.t + self.dt;

        for (g, what) in [(&next.u, "u"), (&next.v, "v"), (&next.u_hat, "u_hat"), (&next.v_hat, "v_hat")] {
            if !g.is_finite() {
                return Err(Error::Divergence { t: next.t, what });
            }
        }
        Ok(())
    }

    pub fn step(&self, cur: &StateSnapshot, input: f64) -> Result<StateSnapshot> {
        let mut next = cur.clone();
        self.step_into(cur, input, &mut next)?;
        Ok(next)
    }

    // w_i ← (1−σ_i)w_i + σ_i w_{i−1} + dt(c1_i z_i + p1_i e) for i ≥ 1.
    #[inline]
    fn advect_right(&self, w: &[f64], z: &[f64], injection: f64, gain_dt: &[f64], out: &mut [f64]) {
        for i in 1..w.len() {
            let s = self.sigma1[i];
            out[i] = (1.0 - s) * w[i] + s * w[i - 1] + self.c1_dt[i] * z[i] + gain_dt[i] * injection;
        }
    }

    // w_i ← (1−σ_i)w_i + σ_i w_{i+1} + dt(c2_i z_i + p2_i e) for i < N.
    #[inline]
    fn advect_left(&self, w: &[f64], z: &[f64], injection: f64, gain_dt: &[f64], out: &mut [f64]) {
        for i in 0..w.len() - 1 {
            let s = self.sigma2[i];
            out[i] = (1.0 - s) * w[i] + s * w[i + 1] + self.c2_dt[i] * z[i] + gain_dt[i] * injection;
        }
    }
}

/// `‖(u, v)‖` in L² by the trapezoid rule.
pub fn pair_norm(a: &GridFunction, b: &GridFunction) -> f64 {
    (a.norm_sq() + b.norm_sq()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::params::PlantParams;

    fn transport_setup(n: usize) -> (SampledPlant, ObserverGains, SimGrid) {
        let plant = PlantParams::constant(1.0, 1.0, 0.0, 0.0, 0.0, 0.0).sample(&UniformGrid::new(n).unwrap()).unwrap();
        let gains = ObserverGains { p1: GridFunction::zeros(n + 1), p2: GridFunction::zeros(n + 1) };
        let grid = SimGrid::new(&plant, 1.0, 1.0).unwrap();
        (plant, gains, grid)
    }

    #[test]
    fn unit_courant_transport_is_an_exact_shift() {
        let n = 32;
        let (plant, gains, grid) = transport_setup(n);
        let stepper = Stepper::new(&plant, &gains, &grid).unwrap();
        let mut s = StateSnapshot::zeros(n + 1);
        s.u = plant.grid.sample(|x| (7.0 * x).sin() + 0.3);
        s.v = plant.grid.sample(|x| x.exp());
        let next = stepper.step(&s, 0.0).unwrap();
        for i in 1..=n {
            assert_eq!(next.u[i].to_bits(), s.u[i - 1].to_bits());
        }
        for i in 0..n {
            assert_eq!(next.v[i].to_bits(), s.v[i + 1].to_bits());
        }
        assert_eq!(next.u[0], 0.0);
        assert_eq!(next.v[n], 0.0);
    }

    #[test]
    fn zero_state_stays_zero() {
        let n = 16;
        let plant = PlantParams::reference().sample(&UniformGrid::new(n).unwrap()).unwrap();
        let gains = ObserverGains { p1: GridFunction::constant(n + 1, 2.0), p2: GridFunction::constant(n + 1, -1.0) };
        let grid = SimGrid::new(&plant, 1.0, 1.0).unwrap();
        let stepper = Stepper::new(&plant, &gains, &grid).unwrap();
        let mut s = StateSnapshot::zeros(n + 1);
        for _ in 0..100 {
            s = stepper.step(&s, 0.0).unwrap();
        }
        assert_eq!(s, StateSnapshot { t: s.t, ..StateSnapshot::zeros(n + 1) });
    }

    #[test]
    fn pulse_leaves_through_the_measured_boundary() {
        let n = 64;
        let (plant, gains, grid) = transport_setup(n);
        let stepper = Stepper::new(&plant, &gains, &grid).unwrap();
        let mut s = StateSnapshot::zeros(n + 1);
        s.v = plant.grid.sample(|x| if (0.2..=0.4).contains(&x) { 1.0 } else { 0.0 });
        let mut seen = 0.0_f64;
        for _ in 0..n {
            s = stepper.step(&s, 0.0).unwrap();
            seen = seen.max(measure(&s));
        }
        assert_eq!(seen, 1.0);
        assert_eq!(measure(&s), 0.0);
    }

    #[test]
    fn boundary_conditions_hold_after_each_step() {
        let n = 16;
        let plant = PlantParams::reference().sample(&UniformGrid::new(n).unwrap()).unwrap();
        let gains = ObserverGains { p1: GridFunction::constant(n + 1, 0.5), p2: GridFunction::constant(n + 1, 0.25) };
        let grid = SimGrid::new(&plant, 1.0, 1.0).unwrap();
        let stepper = Stepper::new(&plant, &gains, &grid).unwrap();
        let mut s = StateSnapshot::zeros(n + 1);
        s.v = plant.grid.sample(|x| 10.0 * (1.0 - x));
        s.u = s.v.map(|v| 0.5 * v);
        let next = stepper.step(&s, 1.25).unwrap();
        assert_eq!(next.u[0], 0.5 * next.v[0]);
        assert_eq!(next.u_hat[0], 0.5 * next.v[0]);
        assert_eq!(next.v[n], 0.5 * next.u[n] + 1.25);
        assert_eq!(next.v_hat[n], 0.5 * next.u_hat[n] + 1.25);
        assert_eq!(measure(&s), 10.0);
    }

    #[test]
    fn step_checks() {
        let (plant, gains, grid) = transport_setup(8);
        assert!(matches!(SimGrid::new(&plant, 1.5, 1.0), Err(Error::Cfl { .. })));
        let too_fast = SimGrid { dt: 2.0 * grid.dt, ..grid };
        assert!(matches!(Stepper::new(&plant, &gains, &too_fast), Err(Error::Cfl { .. })));
        match grid.check_dwell_resolution(0.1, 1.0) {
            Err(Error::StepTooLarge { suggested_grid, .. }) => assert_eq!(suggested_grid, 100),
            other => panic!("unexpected {other:?}"),
        }
        assert!(grid.check_dwell_resolution(2.0, 1.0).is_ok());
        assert_eq!(grid.steps(), 8);

        let stepper = Stepper::new(&plant, &gains, &grid).unwrap();
        let mut s = StateSnapshot::zeros(9);
        s.u[3] = f64::NAN;
        assert!(matches!(stepper.step(&s, 0.0), Err(Error::Divergence { what: "u", .. })));
    }

    #[test]
    fn events_reset_the_holding_error() {
        let mut c = ControlState::default();
        c.observe(0.4);
        assert_eq!(c.d, -0.4);
        c.apply_event(1.7);
        assert_eq!((c.held, c.d), (1.7, 0.0));
        c.observe(1.2);
        assert!((c.d - 0.5).abs() < 1e-15);
    }
}
