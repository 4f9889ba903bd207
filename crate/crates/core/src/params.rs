//! Plant data, trigger parameters and the certificate constant chain that
//! produces the Lyapunov weights, the decay rates and the minimum dwell-time.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Profile, UniformGrid};
use crate::kernels::{ControlGains, TransformedGains};

/// Reflection product bound `|ρq| ≤ 1/2` that makes the open boundary
/// dissipative enough for the weighted Lyapunov functional.
pub const MAX_REFLECTION_PRODUCT: f64 = 0.5;

/// Smallest admissible `|ρ|`; the observer kernel edge data divide by `ρ`.
pub const MIN_ABS_RHO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub lambda1: Profile,
    pub lambda2: Profile,
    pub c1: Profile,
    pub c2: Profile,
    pub q: f64,
    pub rho: f64,
}

impl PlantParams {
    /// Constant-coefficient plant.
    pub fn constant(lambda1: f64, lambda2: f64, c1: f64, c2: f64, q: f64, rho: f64) -> Self {
        Self {
            lambda1: Profile::Constant(lambda1),
            lambda2: Profile::Constant(lambda2),
            c1: Profile::Constant(c1),
            c2: Profile::Constant(c2),
            q,
            rho,
        }
    }

    /// The numerical-study plant: unit speeds, `c1 = 1`, `c2 = 1.5`,
    /// `q = ρ = 0.5`.
    pub fn reference() -> Self {
        Self::constant(1.0, 1.0, 1.0, 1.5, 0.5, 0.5)
    }

    pub fn has_constant_speeds(&self) -> bool {
        self.lambda1.is_constant() && self.lambda2.is_constant()
    }

    /// Checks the scalar boundary data. Speed positivity is checked when
    /// the plant is sampled.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("lambda1", &self.lambda1), ("lambda2", &self.lambda2), ("c1", &self.c1), ("c2", &self.c2)] {
            p.validate(name).map_err(|e| Error::InvalidPlant(e.to_string()))?;
        }
        if !self.q.is_finite() || !self.rho.is_finite() {
            return Err(Error::InvalidPlant("q and rho must be finite".into()));
        }
        let product = (self.rho * self.q).abs();
        if product > MAX_REFLECTION_PRODUCT {
            return Err(Error::InvalidPlant(format!(
                "|rho*q| = {product} exceeds 0.5 (boundary dissipativity assumption |rho q| <= 0.5)"
            )));
        }
        Ok(())
    }

    /// Samples every profile on `grid`, rejecting non-positive speeds.
    pub fn sample(&self, grid: &UniformGrid) -> Result<SampledPlant> {
        self.validate()?;
        let lambda1 = self.lambda1.sample(grid);
        let lambda2 = self.lambda2.sample(grid);
        for (name, l) in [("lambda1", &lambda1), ("lambda2", &lambda2)] {
            if let Some(i) = l.values().iter().position(|&v| !(v > 0.0)) {
                return Err(Error::InvalidPlant(format!(
                    "{name} must be positive, found {} at x = {}",
                    l[i],
                    grid.x(i)
                )));
            }
        }
        Ok(SampledPlant {
            grid: *grid,
            dlambda1: lambda1.derivative(),
            dlambda2: lambda2.derivative(),
            lambda1,
            lambda2,
            c1: self.c1.sample(grid),
            c2: self.c2.sample(grid),
            q: self.q,
            rho: self.rho,
        })
    }
}

/// Plant coefficients sampled on a grid, with speed derivatives.
#[derive(Debug, Clone)]
pub struct SampledPlant {
    pub grid: UniformGrid,
    pub lambda1: GridFunction,
    pub lambda2: GridFunction,
    pub dlambda1: GridFunction,
    pub dlambda2: GridFunction,
    pub c1: GridFunction,
    pub c2: GridFunction,
    pub q: f64,
    pub rho: f64,
}

impl SampledPlant {
    pub fn max_speed(&self) -> f64 {
        self.lambda1.max().max(self.lambda2.max())
    }
}

/// Transit-time profiles `φ_k(x) = ∫_0^x 1/λ_k`.
#[derive(Debug, Clone)]
pub struct CharacteristicTimes {
    pub phi1: GridFunction,
    pub phi2: GridFunction,
    pub phi1_1: f64,
    pub phi2_1: f64,
}

impl CharacteristicTimes {
    pub fn from_sampled(plant: &SampledPlant) -> Self {
        let phi1 = plant.lambda1.map(|l| 1.0 / l).cumulative_integral();
        let phi2 = plant.lambda2.map(|l| 1.0 / l).cumulative_integral();
        Self { phi1_1: phi1.last(), phi2_1: phi2.last(), phi1, phi2 }
    }

    /// Time for a disturbance to cross the domain in both directions.
    pub fn round_trip(&self) -> f64 {
        self.phi1_1 + self.phi2_1
    }
}

pub fn compute_characteristic_times(plant: &PlantParams, n_grid: usize) -> Result<CharacteristicTimes> {
    let grid = UniformGrid::new(n_grid)?;
    Ok(CharacteristicTimes::from_sampled(&plant.sample(&grid)?))
}

/// Upper end of the admissible interval for the weight exponent `μ`:
/// `2/(φ1(1)+φ2(1)) · ln(1/(2|ρq|))`.
pub fn mu_upper_bound(plant: &PlantParams, times: &CharacteristicTimes) -> Result<f64> {
    mu_upper_bound_for(plant.q, plant.rho, times)
}

fn mu_upper_bound_for(q: f64, rho: f64, times: &CharacteristicTimes) -> Result<f64> {
    let product = (rho * q).abs();
    if product >= MAX_REFLECTION_PRODUCT {
        return Err(Error::Infeasible {
            inequality: "mu interval (0, 2/(phi1(1)+phi2(1)) ln(1/(2|rho q|)))",
            detail: format!("|rho*q| = {product} leaves the interval empty"),
        });
    }
    if product == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 / times.round_trip() * (1.0 / (2.0 * product)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub eta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    /// Performance-residual gain `c`.
    pub c: f64,
    pub a1: f64,
    pub a2: f64,
    pub omega0: f64,
    pub omega1: f64,
}

impl TriggerParams {
    /// All-ones tuning of the numerical study with `ω1 = 10`.
    pub fn reference() -> Self {
        Self {
            eta: 1.0,
            kappa1: 1.0,
            kappa2: 1.0,
            kappa3: 1.0,
            kappa4: 1.0,
            c: 1.0,
            a1: 1.0,
            a2: 1.0,
            omega0: 1.0,
            omega1: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("eta", self.eta), ("a1", self.a1), ("a2", self.a2), ("omega0", self.omega0)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("trigger.{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("kappa4", self.kappa4),
            ("c", self.c),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("trigger.{name} must be non-negative, got {v}")));
            }
        }
        if !(self.omega1 > self.omega0) {
            return Err(Error::Config(format!(
                "trigger.omega1 = {} must exceed omega0 = {}",
                self.omega1, self.omega0
            )));
        }
        Ok(())
    }
}

/// Bounds on the growth of the holding error derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Epsilons {
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
}

pub fn compute_epsilons(
    plant: &SampledPlant,
    gains: &ControlGains,
    transformed: &TransformedGains,
) -> Result<Epsilons> {
    let nodes = plant.grid.nodes();
    for g in [&gains.n_alpha, &gains.n_beta, &transformed.p1_bar, &transformed.p2_bar] {
        if g.len() != nodes {
            return Err(Error::GridMismatch { expected: nodes, found: g.len() });
        }
    }
    let (na, nb) = (&gains.n_alpha, &gains.n_beta);
    let (l1, l2) = (&plant.lambda1, &plant.lambda2);
    let rho = plant.rho;

    let dna = na.derivative();
    let dnb = nb.derivative();
    let flux_alpha = GridFunction::new((0..nodes).map(|i| plant.dlambda1[i] * na[i] + l1[i] * dna[i]).collect());
    let flux_beta = GridFunction::new((0..nodes).map(|i| plant.dlambda2[i] * nb[i] + l2[i] * dnb[i]).collect());

    let injection = na.dot(&transformed.p1_bar) + nb.dot(&transformed.p2_bar);
    let inlet = l1.first() * plant.q * na.first();

    Ok(Epsilons {
        eps0: 5.0 * (l2.last() * nb.last()).powi(2),
        eps1: 5.0 * flux_alpha.norm_sq(),
        eps2: 5.0 * flux_beta.norm_sq(),
        eps3: 5.0 * (l1.last() * na.last() - rho * l2.last() * nb.last()).powi(2),
        eps4: 5.0 * (injection + inlet).powi(2),
    })
}

/// User choices feeding the constant chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignChoices {
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    /// Requested barrier decay rate; capped at `ν` when the chain is feasible.
    pub gamma: Option<f64>,
    /// Pins the weight `A` instead of deriving it from its lower bound.
    #[serde(rename = "A")]
    pub a_pinned: Option<f64>,
    #[serde(default = "default_margin")]
    pub a_margin: f64,
    /// Continue with the requested `γ` when a certificate inequality fails,
    /// recording the violations instead of aborting.
    #[serde(default)]
    pub allow_infeasible: bool,
}

fn default_margin() -> f64 {
    0.01
}

impl Default for DesignChoices {
    fn default() -> Self {
        Self { mu: None, delta: None, gamma: None, a_pinned: None, a_margin: 0.01, allow_infeasible: false }
    }
}

/// A certificate inequality that does not hold for the chosen design.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub inequality: &'static str,
    pub detail: String,
}

/// The full constant chain of the stability certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    pub eps: Epsilons,
    pub mu: f64,
    pub mu_upper: f64,
    pub delta: f64,
    pub r: f64,
    pub a_weight: f64,
    pub b_weight: f64,
    pub c_weight: f64,
    pub d_weight: f64,
    /// The two arguments of the lower bound on `A`.
    pub a_lower_reflection: f64,
    pub a_lower_decay: f64,
    pub a0: f64,
    pub theta: f64,
    pub nu0: f64,
    pub nu: f64,
    pub gamma: f64,
    pub gamma_requested: Option<f64>,
    pub tau: f64,
    pub lambda1_min: f64,
    pub lambda2_min: f64,
    pub violations: Vec<Violation>,
}

impl DerivedConstants {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    /// `key = value` lines with 17 significant digits.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, f64); 24] = [
            ("eps0", self.eps.eps0),
            ("eps1", self.eps.eps1),
            ("eps2", self.eps.eps2),
            ("eps3", self.eps.eps3),
            ("eps4", self.eps.eps4),
            ("mu", self.mu),
            ("mu_upper", self.mu_upper),
            ("delta", self.delta),
            ("r", self.r),
            ("A", self.a_weight),
            ("B", self.b_weight),
            ("C", self.c_weight),
            ("D", self.d_weight),
            ("A_lower_reflection", self.a_lower_reflection),
            ("A_lower_decay", self.a_lower_decay),
            ("a0", self.a0),
            ("theta", self.theta),
            ("nu0", self.nu0),
            ("nu", self.nu),
            ("gamma", self.gamma),
            ("gamma_requested", self.gamma_requested.unwrap_or(f64::NAN)),
            ("tau", self.tau),
            ("lambda1_min", self.lambda1_min),
            ("lambda2_min", self.lambda2_min),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v:.16e}");
        }
        let _ = writeln!(out, "feasible = {}", self.is_feasible());
        for v in &self.violations {
            let _ = writeln!(out, "violation = {}: {}", v.inequality, v.detail);
        }
        out
    }
}

/// Evaluates the constant chain. Infeasible designs are rejected unless
/// `design.allow_infeasible` is set, in which case the violations are
/// recorded and the requested `γ` is used as-is.
pub fn compute_constants(
    plant: &SampledPlant,
    times: &CharacteristicTimes,
    trig: &TriggerParams,
    eps: &Epsilons,
    transformed: &TransformedGains,
    design: &DesignChoices,
) -> Result<DerivedConstants> {
    trig.validate()?;
    let (q, rho) = (plant.q, plant.rho);
    if q == 0.0 {
        return Err(Error::InvalidPlant("q must be non-zero".into()));
    }
    let mu_upper = mu_upper_bound_for(q, rho, times)?;
    let mu = design.mu.unwrap_or(0.25 * mu_upper.min(1e6));
    if !(mu > 0.0 && mu < mu_upper) {
        return Err(Error::Infeasible {
            inequality: "mu in (0, 2/(phi1(1)+phi2(1)) ln(1/(2|rho q|)))",
            detail: format!("mu = {mu}, upper bound = {mu_upper}"),
        });
    }
    let delta = design.delta.unwrap_or(0.98 * mu);
    if !(delta > 0.0 && delta < mu) {
        return Err(Error::Infeasible { inequality: "0 < delta < mu", detail: format!("delta = {delta}, mu = {mu}") });
    }

    let (phi1_1, phi2_1) = (times.phi1_1, times.phi2_1);
    let r = 1.0 / ((-mu * phi1_1).exp() / phi1_1).min(2.0 * q * q / phi2_1);
    let decay_load = (eps.eps1 / trig.a2 + trig.kappa1).max(eps.eps2 / trig.a2 + trig.kappa2);
    let reflection = 1.0 - 4.0 * rho * rho * q * q * (mu * (phi1_1 + phi2_1)).exp();
    let a_lower_reflection = (mu * phi1_1).exp() / reflection * (eps.eps3 / trig.a2 + trig.kappa3);
    let a_lower_decay = r / (mu - delta) * decay_load;

    let mut violations = Vec::new();
    let a_weight = match design.a_pinned {
        Some(a) => {
            if !(a > 0.0) {
                return Err(Error::Config(format!("pinned A must be positive, got {a}")));
            }
            a
        }
        None => (1.0 + design.a_margin) * a_lower_reflection.max(a_lower_decay),
    };
    if !(a_weight > a_lower_reflection) {
        violations.push(Violation {
            inequality: "A > e^{mu phi1(1)}/(1-4 rho^2 q^2 e^{mu(phi1(1)+phi2(1))}) (eps3/a2 + kappa3)",
            detail: format!("A = {a_weight}, bound = {a_lower_reflection}"),
        });
    }
    if !(a_weight > a_lower_decay) {
        violations.push(Violation {
            inequality: "A > r/(mu-delta) max{eps1/a2+kappa1, eps2/a2+kappa2}",
            detail: format!("A = {a_weight}, bound = {a_lower_decay}"),
        });
    }

    let b_weight = a_weight * q * q;
    let a0 = 4.0 * a_weight * q * q * (mu * phi2_1).exp() + eps.eps0 / trig.a2;
    let theta = trig.a2 * trig.omega0 * trig.omega0 + trig.a1 * trig.omega0 + a0;
    let nu0 = mu - delta - r / a_weight * decay_load;
    let nu = nu0.min(trig.a1).min(trig.eta);
    if !(nu0 > 0.0) {
        violations.push(Violation {
            inequality: "nu0 = mu - delta - (r/A) max{eps1/a2+kappa1, eps2/a2+kappa2} > 0",
            detail: format!("nu0 = {nu0}"),
        });
    }

    let gamma = if violations.is_empty() {
        design.gamma.map_or(nu, |g| g.min(nu))
    } else if design.allow_infeasible {
        for v in &violations {
            log::warn!("certificate inequality violated: {} ({})", v.inequality, v.detail);
        }
        design.gamma.ok_or_else(|| Error::Config(
            "an infeasible design needs an explicit gamma".into(),
        ))?
    } else {
        let v = violations.swap_remove(0);
        return Err(Error::Infeasible { inequality: v.inequality, detail: v.detail });
    };
    if !(gamma > 0.0) {
        return Err(Error::Infeasible { inequality: "0 < gamma <= nu", detail: format!("gamma = {gamma}") });
    }
    if let Some(g) = design.gamma {
        if g != gamma {
            log::info!("requested gamma {g} replaced by {gamma} from the constant chain");
        }
    }

    let lambda1_min = plant.lambda1.min();
    let lambda2_min = plant.lambda2.min();
    let d_weight = 2.0 * a_weight * q * q
        + a_weight * transformed.p1_bar.norm_sq() / (lambda1_min * delta)
        + b_weight * (mu * phi2_1).exp() * transformed.p2_bar.norm_sq() / (lambda2_min * delta)
        + eps.eps4 / trig.a2
        + trig.kappa4;
    let c_weight = d_weight * rho * rho * (mu * (phi1_1 + phi2_1)).exp();
    let tau = compute_tau(a0, trig)?;

    Ok(DerivedConstants {
        eps: *eps,
        mu,
        mu_upper,
        delta,
        r,
        a_weight,
        b_weight,
        c_weight,
        d_weight,
        a_lower_reflection,
        a_lower_decay,
        a0,
        theta,
        nu0,
        nu,
        gamma,
        gamma_requested: design.gamma,
        tau,
        lambda1_min,
        lambda2_min,
        violations,
    })
}

/// Minimum dwell-time `τ = ∫_{ω0}^{ω1} ds / (a2 s² + a1 s + a0)`.
pub fn compute_tau(a0: f64, trig: &TriggerParams) -> Result<f64> {
    riccati_dwell_time(trig.a2, trig.a1, a0, trig.omega0, trig.omega1)
}

pub fn riccati_dwell_time(a2: f64, a1: f64, a0: f64, omega0: f64, omega1: f64) -> Result<f64> {
    if !(omega1 > omega0) || !(omega0 > 0.0) {
        return Err(Error::Config(format!("need omega1 > omega0 > 0, got omega0 = {omega0}, omega1 = {omega1}")));
    }
    if !(a2 > 0.0) || !(a0 >= 0.0) {
        return Err(Error::Config(format!("need a2 > 0 and a0 >= 0, got a2 = {a2}, a0 = {a0}")));
    }
    let disc = 4.0 * a2 * a0 - a1 * a1;
    if disc > 0.0 {
        let s = disc.sqrt();
        let (ta, tb) = ((2.0 * a2 * omega1 + a1) / s, (2.0 * a2 * omega0 + a1) / s);
        // atan(a) - atan(b) = atan((a-b)/(1+ab)) when ab > -1; avoids
        // cancellation for large arguments.
        let diff = if ta * tb > -1.0 { ((ta - tb) / (1.0 + ta * tb)).atan() } else { ta.atan() - tb.atan() };
        return Ok(2.0 / s * diff);
    }
    let f = |x: f64| 1.0 / (a2 * x * x + a1 * x + a0);
    Ok(adaptive_simpson(&f, omega0, omega1, 1e-10))
}

/// Adaptive Simpson quadrature to relative tolerance `rel_tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize) -> GridFunction {
        GridFunction::constant(n + 1, 1.0)
    }

    #[test]
    fn unit_speed_transit_time_is_identity() {
        let t = compute_characteristic_times(&PlantParams::reference(), 64).unwrap();
        assert_eq!(t.phi1_1, 1.0);
        for i in 0..=64 {
            assert!((t.phi1[i] - i as f64 / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn double_speed_halves_transit_time() {
        let p = PlantParams::constant(2.0, 1.0, 0.0, 0.0, 0.5, 0.5);
        let t = compute_characteristic_times(&p, 32).unwrap();
        assert!((t.phi1_1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn transit_time_of_decaying_speed_matches_antiderivative() {
        let n = 200;
        let xs: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let p = PlantParams {
            lambda1: Profile::Table { value: xs.iter().map(|x| 1.0 / (1.0 + x)).collect(), x: xs.clone() },
            ..PlantParams::reference()
        };
        let t = compute_characteristic_times(&p, n).unwrap();
        for (i, x) in xs.iter().enumerate() {
            assert!((t.phi1[i] - (x + 0.5 * x * x)).abs() < 1e-10);
        }
        assert!((t.phi1_1 - 1.5).abs() < 1e-10);
    }

    #[test]
    fn non_positive_speed_is_rejected() {
        let p = PlantParams::constant(1.0, 0.0, 0.0, 0.0, 0.5, 0.5);
        assert!(matches!(compute_characteristic_times(&p, 8), Err(Error::InvalidPlant(_))));
    }

    #[test]
    fn mu_upper_bound_values() {
        let t = compute_characteristic_times(&PlantParams::reference(), 16).unwrap();
        let b = mu_upper_bound(&PlantParams::reference(), &t).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(0.173 < b);

        let slow = PlantParams::constant(0.5, 0.5, 0.0, 0.0, 0.25, 1.0);
        let t = compute_characteristic_times(&slow, 16).unwrap();
        let b = mu_upper_bound(&slow, &t).unwrap();
        // (2/4) ln 2, evaluated to 20 digits: 0.34657359027997265471
        assert!((b - 0.346_573_590_279_972_65).abs() < 1e-15);

        let mut prev = 0.0;
        for k in 1..10 {
            let p = PlantParams::constant(1.0, 1.0, 0.0, 0.0, 0.5 / k as f64, 0.5);
            let b = mu_upper_bound(&p, &t).unwrap();
            assert!(b > prev);
            prev = b;
        }
        let edge = PlantParams::constant(1.0, 1.0, 0.0, 0.0, 1.0, 0.5);
        assert!(matches!(mu_upper_bound(&edge, &t), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn epsilons_vanish_for_zero_gains() {
        let grid = UniformGrid::new(16).unwrap();
        let plant = PlantParams::reference().sample(&grid).unwrap();
        let zero = GridFunction::zeros(17);
        let gains = ControlGains { n_alpha: zero.clone(), n_beta: zero.clone() };
        let tg = TransformedGains { p1_bar: zero.clone(), p2_bar: zero };
        assert_eq!(compute_epsilons(&plant, &gains, &tg).unwrap(), Epsilons::default());
    }

    #[test]
    fn eps0_plug_in() {
        let grid = UniformGrid::new(16).unwrap();
        let plant = PlantParams::reference().sample(&grid).unwrap();
        let gains = ControlGains { n_alpha: GridFunction::zeros(17), n_beta: ones(16).map(|v| 2.0 * v) };
        let tg = TransformedGains { p1_bar: GridFunction::zeros(17), p2_bar: GridFunction::zeros(17) };
        let e = compute_epsilons(&plant, &gains, &tg).unwrap();
        assert_eq!(e.eps0, 20.0);
        assert_eq!(e.eps2, 0.0);
        // eps3 = 5 (0 - 0.5*1*2)^2
        assert_eq!(e.eps3, 5.0);
    }

    #[test]
    fn tau_closed_form_and_quadrature() {
        let t = riccati_dwell_time(1.0, 0.0, 0.0, 1.0, 10.0).unwrap();
        assert!((t - 0.9).abs() < 1e-10);

        let closed = riccati_dwell_time(1.0, 1.0, 657.0, 1.0, 10.0).unwrap();
        let f = |s: f64| 1.0 / (s * s + s + 657.0);
        let quad = adaptive_simpson(&f, 1.0, 10.0, 1e-12);
        assert!((closed - quad).abs() < 1e-9 * closed);

        assert!(riccati_dwell_time(1.0, 1.0, 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn tau_decreases_with_a0() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let a0 = k as f64 * 25.0;
            let t = riccati_dwell_time(1.0, 1.0, a0, 1.0, 10.0).unwrap();
            assert!(t < prev && t > 0.0);
            prev = t;
        }
    }
}
