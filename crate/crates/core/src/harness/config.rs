//! Run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, Profile, UniformGrid};
use crate::params::{DesignChoices, PlantParams, TriggerParams};
use crate::triggering::Mode;

/// Built-in initial profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialProfile {
    Zero,
    /// `10(1 − x)`.
    Ramp10,
    /// `q` times the `v` profile; only meaningful for `u`.
    ProportionalInlet,
    Constant { value: f64 },
    Linear { left: f64, right: f64 },
    /// `amplitude·cos²(π(x − center)/width)` on `|x − center| < width/2`.
    Bump { center: f64, width: f64, amplitude: f64 },
    Table { x: Vec<f64>, value: Vec<f64> },
}

/// A profile given either by name (`"ramp10"`) or as a table with a `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Detailed(InitialProfile),
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<InitialProfile> {
        match self {
            ProfileSpec::Detailed(p) => Ok(p.clone()),
            ProfileSpec::Named(name) => match name.as_str() {
                "zero" => Ok(InitialProfile::Zero),
                "ramp10" => Ok(InitialProfile::Ramp10),
                "proportional-inlet" => Ok(InitialProfile::ProportionalInlet),
                other => Err(Error::Config(format!("unknown initial profile {other:?}"))),
            },
        }
    }
}

impl From<InitialProfile> for ProfileSpec {
    fn from(p: InitialProfile) -> Self {
        ProfileSpec::Detailed(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    pub u: ProfileSpec,
    pub v: ProfileSpec,
    pub u_hat: ProfileSpec,
    pub v_hat: ProfileSpec,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            u: ProfileSpec::Named("proportional-inlet".into()),
            v: ProfileSpec::Named("ramp10".into()),
            u_hat: ProfileSpec::Named("zero".into()),
            v_hat: ProfileSpec::Named("zero".into()),
        }
    }
}

impl InitialProfile {
    fn sample(&self, grid: &UniformGrid, inlet_source: Option<(&GridFunction, f64)>) -> Result<GridFunction> {
        Ok(match self {
            InitialProfile::Zero => GridFunction::zeros(grid.nodes()),
            InitialProfile::Ramp10 => grid.sample(|x| 10.0 * (1.0 - x)),
            InitialProfile::ProportionalInlet => match inlet_source {
                Some((v, q)) => v.map(|v| q * v),
                None => return Err(Error::Config("proportional-inlet is only available for u and u_hat".into())),
            },
            InitialProfile::Constant { value } => GridFunction::constant(grid.nodes(), *value),
            InitialProfile::Linear { left, right } => grid.sample(|x| left + (right - left) * x),
            InitialProfile::Bump { center, width, amplitude } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                grid.sample(|x| {
                    let s = (x - center) / width;
                    if s.abs() < 0.5 {
                        amplitude * (std::f64::consts::PI * s).cos().powi(2)
                    } else {
                        0.0
                    }
                })
            }
            InitialProfile::Table { x, value } => {
                let p = Profile::Table { x: x.clone(), value: value.clone() };
                p.validate("initial profile")?;
                p.sample(grid)
            }
        })
    }
}

/// Samples the initial plant and observer profiles; returns `(u, v, û, v̂)`.
pub fn sample_initial(
    init: &InitialConditions,
    grid: &UniformGrid,
    q: f64,
) -> Result<[GridFunction; 4]> {
    let v = init.v.resolve()?.sample(grid, None)?;
    let v_hat = init.v_hat.resolve()?.sample(grid, None)?;
    let u = init.u.resolve()?.sample(grid, Some((&v, q)))?;
    let u_hat = init.u_hat.resolve()?.sample(grid, Some((&v_hat, q)))?;
    for g in [&u, &v, &u_hat, &v_hat] {
        if !g.is_finite() {
            return Err(Error::Config("initial profile is not finite".into()));
        }
    }
    Ok([u, v, u_hat, v_hat])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Number of grid cells.
    pub grid: usize,
    /// Courant number; chosen from the speed profiles when absent.
    pub cfl: Option<f64>,
    pub horizon: f64,
    pub mode: Mode,
    /// Records the error states in target coordinates and `V2`, `V`.
    pub diagnostics: bool,
    /// Writes every k-th trace row; event rows are always written.
    pub decimate: usize,
    pub output: PathBuf,
    /// Reserved; the dynamics are deterministic.
    pub seed: u64,
    pub kernel_tol: f64,
    pub kernel_max_iter: usize,
    /// Directory of cached kernel files.
    pub kernel_cache: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            grid: 2048,
            cfl: None,
            horizon: 15.0,
            mode: Mode::Petc,
            diagnostics: false,
            decimate: 1,
            output: PathBuf::from("out"),
            seed: 0,
            kernel_tol: 1e-10,
            kernel_max_iter: 200,
            kernel_cache: None,
        }
    }
}

/// A complete experiment description. Every section is optional; missing
/// values fall back to the numerical study (with a feasible design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub initial: InitialConditions,
    pub trigger: TriggerParams,
    pub design: DesignChoices,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::reference(),
            initial: InitialConditions::default(),
            trigger: TriggerParams::reference(),
            design: DesignChoices::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Schema-level checks; the constant chain is checked when the
    /// experiment is prepared.
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.trigger.validate()?;
        let s = &self.simulation;
        if s.grid < 16 {
            return Err(Error::Config(format!("simulation.grid must be at least 16, got {}", s.grid)));
        }
        if let Some(cfl) = s.cfl {
            if !(cfl > 0.0 && cfl <= 1.0) {
                return Err(Error::Cfl { courant: cfl });
            }
        }
        if !(s.horizon > 0.0) || !s.horizon.is_finite() {
            return Err(Error::Config(format!("simulation.horizon must be positive, got {}", s.horizon)));
        }
        if s.decimate == 0 {
            return Err(Error::Config("simulation.decimate must be at least 1".into()));
        }
        if !(s.kernel_tol > 0.0) || s.kernel_max_iter == 0 {
            return Err(Error::Config("kernel tolerance and iteration cap must be positive".into()));
        }
        let d = &self.design;
        for (name, v) in [("mu", d.mu), ("delta", d.delta), ("gamma", d.gamma), ("A", d.a_pinned)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::Config(format!("design.{name} must be finite")));
                }
            }
        }
        self.initial.u.resolve()?;
        self.initial.v.resolve()?;
        self.initial.u_hat.resolve()?;
        self.initial.v_hat.resolve()?;
        Ok(())
    }

    /// Courant number: the configured one, else 1 for constant speeds.
    pub fn cfl(&self) -> f64 {
        self.simulation.cfl.unwrap_or(if self.plant.has_constant_speeds() {
            crate::dynamics::CFL_CONSTANT_SPEEDS
        } else {
            crate::dynamics::CFL_VARIABLE_SPEEDS
        })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}
