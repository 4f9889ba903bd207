//! Closed-loop runs.
//!
//! States are advanced speculatively in blocks of [`CHUNK`] steps under the
//! currently held input so that the Volterra transforms can be applied to a
//! whole block at once. The block is then processed step by step; when an
//! event is scheduled inside the block the speculative tail is discarded and
//! stepping resumes from the last valid state.

use std::time::Instant;

use crate::dynamics::{measure, pair_norm, ControlState, SimGrid, Stepper};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, UniformGrid};
use crate::kernels::{compute_gains, Gains, KernelCache, KernelSet, SolverOptions};
use crate::params::{compute_constants, compute_epsilons, CharacteristicTimes, DerivedConstants, SampledPlant, TriggerParams};
use crate::transforms::{ControlFunctional, StateSnapshot, TrajectoryFrame, VolterraOperator, CHUNK};
use crate::triggering::{LyapunovWeights, Mode, TriggerInputs, TriggerState};

use super::config::{sample_initial, RunConfig};

/// One row of the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub y: f64,
    /// Input held from this step on.
    pub u: f64,
    pub u_c: f64,
    pub d: f64,
    pub m: f64,
    pub f: f64,
    pub v1: f64,
    pub v_hat: f64,
    pub w: f64,
    pub barrier: f64,
    pub v2: Option<f64>,
    pub v: Option<f64>,
    pub norm_uv: f64,
    pub norm_err: f64,
    pub alpha_hat_1: f64,
    pub beta_tilde_0: f64,
    pub event: bool,
}

impl TraceRecord {
    /// Bit patterns of every field, for exact comparisons; absent
    /// diagnostics map to `u64::MAX`.
    pub fn bits(&self) -> [u64; 18] {
        let opt = |v: Option<f64>| v.map_or(u64::MAX, f64::to_bits);
        [
            self.t.to_bits(),
            self.y.to_bits(),
            self.u.to_bits(),
            self.u_c.to_bits(),
            self.d.to_bits(),
            self.m.to_bits(),
            self.f.to_bits(),
            self.v1.to_bits(),
            self.v_hat.to_bits(),
            self.w.to_bits(),
            self.barrier.to_bits(),
            opt(self.v2),
            opt(self.v),
            self.norm_uv.to_bits(),
            self.norm_err.to_bits(),
            self.alpha_hat_1.to_bits(),
            self.beta_tilde_0.to_bits(),
            self.event as u64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub index: usize,
    pub t: f64,
    /// Time since the previous event; absent for the initial one.
    pub dwell: Option<f64>,
    pub d_before: f64,
    pub u_new: f64,
}

/// Aggregate statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub mode: Mode,
    pub steps: usize,
    pub dt: f64,
    pub tau: f64,
    pub gamma: f64,
    pub c: f64,
    pub events: usize,
    pub min_dwell: Option<f64>,
    pub mean_dwell: Option<f64>,
    pub max_dwell: Option<f64>,
    pub initial_norm_uv: f64,
    pub final_norm_uv: f64,
    pub initial_norm_err: f64,
    pub final_norm_err: f64,
    /// `−slope` of a least-squares fit of `ln V̂` against `t`.
    pub v_hat_decay_rate: Option<f64>,
    pub min_m: f64,
    pub min_w: f64,
}

impl RunSummary {
    /// Dwell statistics `(min, mean, max)` over the non-initial events.
    pub fn dwell_stats(events: &[EventRecord]) -> (Option<f64>, Option<f64>, Option<f64>) {
        let dwells: Vec<f64> = events.iter().filter_map(|e| e.dwell).collect();
        if dwells.is_empty() {
            return (None, None, None);
        }
        let min = dwells.iter().copied().fold(f64::INFINITY, f64::min);
        let max = dwells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = dwells.iter().sum::<f64>() / dwells.len() as f64;
        (Some(min), Some(mean), Some(max))
    }

    fn build(mode: Mode, grid: &SimGrid, consts: &DerivedConstants, c: f64, trace: &[TraceRecord], events: &[EventRecord]) -> Self {
        let (min_dwell, mean_dwell, max_dwell) = Self::dwell_stats(events);
        let first = trace.first().expect("non-empty trace");
        let last = trace.last().expect("non-empty trace");
        Self {
            mode,
            steps: trace.len() - 1,
            dt: grid.dt,
            tau: consts.tau,
            gamma: consts.gamma,
            c,
            events: events.len(),
            min_dwell,
            mean_dwell,
            max_dwell,
            initial_norm_uv: first.norm_uv,
            final_norm_uv: last.norm_uv,
            initial_norm_err: first.norm_err,
            final_norm_err: last.norm_err,
            v_hat_decay_rate: fit_decay_rate(trace.iter().map(|r| (r.t, r.v_hat))),
            min_m: trace.iter().map(|r| r.m).fold(f64::INFINITY, f64::min),
            min_w: trace.iter().map(|r| r.w).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Least-squares decay rate of the positive samples `(t, value)`.
pub fn fit_decay_rate(samples: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples.filter(|(_, v)| *v > 0.0 && v.is_finite()).map(|(t, v)| (t, v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sty, stt) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    (stt > 0.0).then(|| -sty / stt)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub events: Vec<EventRecord>,
    pub summary: RunSummary,
    /// Target-coordinate frames from step 1 on, when requested.
    pub frames: Vec<TrajectoryFrame>,
    pub final_state: StateSnapshot,
}

/// Per-run choices layered on a prepared experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    pub trigger: TriggerParams,
    pub diagnostics: bool,
    pub record_frames: bool,
    pub horizon: f64,
}

/// Everything shared by the runs of one configuration: sampled plant,
/// kernels, gains, constants and the precomputed operators.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub plant: SampledPlant,
    pub times: CharacteristicTimes,
    pub kernels: KernelSet,
    pub gains: Gains,
    pub consts: DerivedConstants,
    pub grid: SimGrid,
    stepper: Stepper,
    forward: VolterraOperator,
    error_forward: VolterraOperator,
    law: ControlFunctional,
    weights: LyapunovWeights,
    initial: StateSnapshot,
}

impl Experiment {
    /// Solves (or loads) the kernels and evaluates the constant chain.
    pub fn prepare(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let sim = &config.simulation;
        let opts = SolverOptions { tol: sim.kernel_tol, max_iter: sim.kernel_max_iter };
        let start = Instant::now();
        let kernels = match &sim.kernel_cache {
            Some(dir) => KernelCache::new(dir).load_or_solve(&config.plant, sim.grid, &opts)?,
            None => {
                let sampled = config.plant.sample(&UniformGrid::new(sim.grid)?)?;
                KernelSet::solve(&sampled, &opts)?.0
            }
        };
        log::info!("kernels ready in {:.2} s", start.elapsed().as_secs_f64());
        Self::with_kernels(config, kernels)
    }

    pub fn with_kernels(config: &RunConfig, kernels: KernelSet) -> Result<Self> {
        config.validate()?;
        let cells = config.simulation.grid;
        if kernels.cells() != cells {
            return Err(Error::GridMismatch { expected: cells + 1, found: kernels.cells() + 1 });
        }
        let ugrid = UniformGrid::new(cells)?;
        let plant = config.plant.sample(&ugrid)?;
        let times = CharacteristicTimes::from_sampled(&plant);
        let gains = compute_gains(&kernels.p, &kernels.k, &kernels.l, &plant)?;
        let eps = compute_epsilons(&plant, &gains.control, &gains.transformed)?;
        let consts = compute_constants(&plant, &times, &config.trigger, &eps, &gains.transformed, &config.design)?;
        let grid = SimGrid::new(&plant, config.cfl(), config.simulation.horizon)?;
        let stepper = Stepper::new(&plant, &gains.observer, &grid)?;
        let forward = VolterraOperator::forward(&kernels.k);
        let error_forward = VolterraOperator::inverse(&kernels.r);
        let law = ControlFunctional::new(&forward, &gains.control, &ugrid);
        let weights = LyapunovWeights::new(&plant, &times, &consts)?;
        let [u, v, u_hat, v_hat] = sample_initial(&config.initial, &ugrid, plant.q)?;
        let initial = StateSnapshot { t: 0.0, u, v, u_hat, v_hat };
        Ok(Self {
            config: config.clone(),
            plant,
            times,
            kernels,
            gains,
            consts,
            grid,
            stepper,
            forward,
            error_forward,
            law,
            weights,
            initial,
        })
    }

    pub fn default_options(&self) -> RunOptions {
        let sim = &self.config.simulation;
        RunOptions {
            mode: sim.mode,
            trigger: self.config.trigger,
            diagnostics: sim.diagnostics,
            record_frames: false,
            horizon: sim.horizon,
        }
    }

    pub fn initial_state(&self) -> &StateSnapshot {
        &self.initial
    }

    pub fn weights(&self) -> &LyapunovWeights {
        &self.weights
    }

    /// The continuous law evaluated on observer states.
    pub fn control_law(&self, state: &StateSnapshot) -> f64 {
        self.law.eval(state.u_hat.values(), state.v_hat.values())
    }

    pub fn run(&self, opts: &RunOptions) -> Result<RunOutput> {
        self.run_from(&self.initial, opts)
    }

    pub fn run_from(&self, initial: &StateSnapshot, opts: &RunOptions) -> Result<RunOutput> {
        opts.trigger.validate()?;
        initial.check_grid(self.plant.grid.nodes())?;
        let grid = SimGrid { t_end: opts.horizon, ..self.grid };
        if !(opts.horizon > 0.0) || !opts.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", opts.horizon)));
        }
        if opts.mode != Mode::Continuous {
            grid.check_dwell_resolution(self.consts.tau, self.plant.max_speed())?;
        }
        let start = Instant::now();
        let mut run = Run::new(self, opts, grid);
        let final_state = run.execute(initial)?;
        log::info!(
            "{} run: {} steps, {} events in {:.2} s",
            opts.mode,
            grid.steps(),
            run.events.len(),
            start.elapsed().as_secs_f64()
        );
        let summary = RunSummary::build(opts.mode, &grid, &self.consts, effective_c(opts), &run.trace, &run.events);
        Ok(RunOutput { trace: run.trace, events: run.events, summary, frames: run.frames, final_state })
    }
}

fn effective_c(opts: &RunOptions) -> f64 {
    if opts.mode == Mode::Petc {
        opts.trigger.c
    } else {
        0.0
    }
}

/// Node-major staging buffers for one block.
struct Block {
    lanes: usize,
    u_hat: Vec<f64>,
    v_hat: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    u_err: Vec<f64>,
    v_err: Vec<f64>,
    alpha_err: Vec<f64>,
    beta_err: Vec<f64>,
}

impl Block {
    fn new(nodes: usize) -> Self {
        let z = || vec![0.0; nodes * CHUNK];
        Self {
            lanes: 0,
            u_hat: z(),
            v_hat: z(),
            alpha: z(),
            beta: z(),
            u_err: z(),
            v_err: z(),
            alpha_err: z(),
            beta_err: z(),
        }
    }

    fn lane(buf: &[f64], lanes: usize, k: usize) -> GridFunction {
        GridFunction::new(buf.chunks_exact(lanes).map(|row| row[k]).collect())
    }
}

struct Run<'a> {
    exp: &'a Experiment,
    opts: &'a RunOptions,
    grid: SimGrid,
    trigger: TriggerState,
    control: ControlState,
    pending: bool,
    trace: Vec<TraceRecord>,
    events: Vec<EventRecord>,
    frames: Vec<TrajectoryFrame>,
    /// Input applied during the step that produced the current state.
    previous_input: f64,
}

impl<'a> Run<'a> {
    fn new(exp: &'a Experiment, opts: &'a RunOptions, grid: SimGrid) -> Self {
        Self {
            exp,
            opts,
            grid,
            trigger: TriggerState::new(opts.mode, &opts.trigger),
            control: ControlState::default(),
            pending: true,
            trace: Vec::with_capacity(grid.steps() + 1),
            events: Vec::new(),
            frames: Vec::new(),
            previous_input: 0.0,
        }
    }

    /// Returns the state at the final time.
    fn execute(&mut self, initial: &StateSnapshot) -> Result<StateSnapshot> {
        let exp = self.exp;
        let nodes = exp.plant.grid.nodes();
        let last = self.grid.steps();
        let continuous = self.opts.mode == Mode::Continuous;
        let mut states: Vec<StateSnapshot> = vec![initial.clone(); CHUNK];
        let mut block = Block::new(nodes);
        let mut n = 0;
        states[0].t = 0.0;
        loop {
            let lanes = CHUNK.min(last - n + 1);
            let mut input = if continuous || self.pending { exp.control_law(&states[0]) } else { self.control.held };
            for k in 1..lanes {
                let (done, rest) = states.split_at_mut(k);
                exp.stepper.step_into(&done[k - 1], input, &mut rest[0])?;
                rest[0].t = self.grid.time(n + k);
                if continuous {
                    input = exp.control_law(&rest[0]);
                }
            }
            self.transform_block(&states[..lanes], &mut block);

            let mut resume = None;
            for (k, state) in states.iter().enumerate().take(lanes) {
                self.process(n + k, state, &block, k)?;
                if k + 1 < lanes && self.pending && !continuous {
                    resume = Some(k + 1);
                    break;
                }
            }
            match resume {
                Some(k) => {
                    states.swap(0, k);
                    n += k;
                }
                None if n + lanes - 1 == last => return Ok(states.swap_remove(lanes - 1)),
                None => {
                    let (head, tail) = states.split_at_mut(lanes - 1);
                    let (first, prev) = (&mut head[0], &tail[0]);
                    exp.stepper.step_into(prev, self.control.held, first)?;
                    n += lanes;
                    first.t = self.grid.time(n);
                }
            }
        }
    }

    fn transform_block(&self, states: &[StateSnapshot], block: &mut Block) {
        let lanes = states.len();
        let nodes = self.exp.plant.grid.nodes();
        let len = nodes * lanes;
        block.lanes = lanes;
        for (k, s) in states.iter().enumerate() {
            for i in 0..nodes {
                block.u_hat[i * lanes + k] = s.u_hat[i];
                block.v_hat[i * lanes + k] = s.v_hat[i];
                block.u_err[i * lanes + k] = s.u[i] - s.u_hat[i];
                block.v_err[i * lanes + k] = s.v[i] - s.v_hat[i];
            }
        }
        self.exp.forward.apply_batch(
            lanes,
            &block.u_hat[..len],
            &block.v_hat[..len],
            &mut block.alpha[..len],
            &mut block.beta[..len],
        );
        if self.opts.diagnostics {
            self.exp.error_forward.apply_batch(
                lanes,
                &block.u_err[..len],
                &block.v_err[..len],
                &mut block.alpha_err[..len],
                &mut block.beta_err[..len],
            );
        }
    }

    fn process(&mut self, n: usize, state: &StateSnapshot, block: &Block, k: usize) -> Result<()> {
        let exp = self.exp;
        let consts = &exp.consts;
        let trig = &self.opts.trigger;
        let t = self.grid.time(n);
        let lanes = block.lanes;
        let len = exp.plant.grid.nodes() * lanes;
        let law = exp.control_law(state);

        let fire = self.pending;
        let d_before = self.control.held - law;
        if fire {
            self.control.apply_event(law);
            if self.opts.mode == Mode::Continuous {
                self.trigger.t_last_event = t;
                self.trigger.event_index += 1;
            } else {
                self.trigger.on_event(d_before, t, trig);
            }
            let dwell = self.events.last().map(|e| t - e.t);
            self.events.push(EventRecord { index: self.events.len(), t, dwell, d_before, u_new: law });
        } else {
            self.control.observe(law);
        }

        let alpha = Block::lane(&block.alpha[..len], lanes, k);
        let beta = Block::lane(&block.beta[..len], lanes, k);
        let y = measure(state);
        let beta_tilde_0 = y - state.v_hat[0];
        let d = self.control.d;
        let v1 = exp.weights.v1.eval(alpha.values(), beta.values());
        let v_hat = self.trigger.v_hat(v1, d);
        if !v_hat.is_finite() {
            return Err(Error::Divergence { t, what: "V_hat" });
        }
        let (barrier, w) = self.trigger.update_barrier(v_hat, t, consts.gamma);
        let errors = self.opts.diagnostics.then(|| {
            (Block::lane(&block.alpha_err[..len], lanes, k), Block::lane(&block.beta_err[..len], lanes, k))
        });
        let v2 = errors.as_ref().map(|(a, b)| exp.weights.v2.eval(a.values(), b.values()));
        let (u_err, v_err) = state.errors();

        self.trace.push(TraceRecord {
            t,
            y,
            u: self.control.held,
            u_c: law,
            d,
            m: self.trigger.m,
            f: self.trigger.f,
            v1,
            v_hat,
            w,
            barrier,
            v2,
            v: v2.map(|v2| v_hat + v2),
            norm_uv: pair_norm(&state.u, &state.v),
            norm_err: pair_norm(&u_err, &v_err),
            alpha_hat_1: alpha.last(),
            beta_tilde_0,
            event: fire,
        });

        let inputs = TriggerInputs::new(&alpha, &beta, beta_tilde_0, d);
        self.trigger.step(&inputs, w, consts, trig, t, self.grid.dt);
        self.pending = match self.opts.mode {
            Mode::Continuous => true,
            _ => self.trigger.check_event(self.trigger.m, self.grid.time(n + 1), consts.tau),
        };

        if self.opts.record_frames && n > 0 {
            let (alpha_tilde, beta_tilde) = match errors {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            self.frames.push(TrajectoryFrame {
                t,
                alpha_hat: alpha,
                beta_hat: beta,
                beta_tilde_0,
                d_boundary: self.previous_input - law,
                alpha_tilde,
                beta_tilde,
            });
        }
        self.previous_input = self.control.held;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{InitialConditions, InitialProfile};
    use crate::params::DesignChoices;

    fn small_config(mode: Mode) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.simulation.grid = 256;
        cfg.simulation.horizon = 1.0;
        cfg.simulation.mode = mode;
        cfg.design = DesignChoices { mu: Some(0.3), delta: Some(0.1), a_margin: 1.0, ..DesignChoices::default() };
        cfg
    }

    #[test]
    fn zero_data_gives_one_event_and_zero_norms() {
        let mut cfg = small_config(Mode::Petc);
        cfg.initial = InitialConditions {
            u: InitialProfile::Zero.into(),
            v: InitialProfile::Zero.into(),
            u_hat: InitialProfile::Zero.into(),
            v_hat: InitialProfile::Zero.into(),
        };
        let exp = Experiment::prepare(&cfg).unwrap();
        for mode in [Mode::Petc, Mode::Etc] {
            let out = exp.run(&RunOptions { mode, ..exp.default_options() }).unwrap();
            assert_eq!(out.events.len(), 1);
            assert!(out.trace.iter().all(|r| r.norm_uv == 0.0 && r.v_hat == 0.0));
            assert_eq!(out.trace.len(), exp.grid.steps() + 1);
        }
    }

    #[test]
    fn block_processing_matches_stepwise_reference() {
        let cfg = small_config(Mode::Petc);
        let exp = Experiment::prepare(&cfg).unwrap();
        let out = exp.run(&RunOptions { record_frames: true, diagnostics: true, ..exp.default_options() }).unwrap();

        let mut state = exp.initial_state().clone();
        let mut held = 0.0;
        let events: Vec<usize> = out.trace.iter().enumerate().filter(|(_, r)| r.event).map(|(n, _)| n).collect();
        for (n, row) in out.trace.iter().enumerate() {
            let law = exp.control_law(&state);
            if events.contains(&n) {
                held = law;
            }
            assert_eq!(row.u.to_bits(), held.to_bits());
            assert_eq!(row.u_c.to_bits(), law.to_bits());
            let (a, b) = exp.forward.apply(&state.u_hat, &state.v_hat).unwrap();
            assert_eq!(row.alpha_hat_1.to_bits(), a.last().to_bits());
            assert_eq!(row.v1.to_bits(), exp.weights.v1.eval(a.values(), b.values()).to_bits());
            state = exp.stepper.step(&state, held).unwrap();
        }
        assert!(out.trace.iter().all(|r| r.m >= 0.0 && r.w >= 0.0));
        assert_eq!(out.frames.len(), out.trace.len() - 1);
        let last = out.trace.last().unwrap();
        assert_eq!(out.final_state.t, last.t);
        assert_eq!(pair_norm(&out.final_state.u, &out.final_state.v).to_bits(), last.norm_uv.to_bits());
    }

    #[test]
    fn continuous_mode_updates_every_step() {
        let cfg = small_config(Mode::Continuous);
        let exp = Experiment::prepare(&cfg).unwrap();
        let out = exp.run(&exp.default_options()).unwrap();
        assert_eq!(out.events.len(), out.trace.len());
        assert!(out.trace.iter().all(|r| r.d == 0.0 && r.u == r.u_c));
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let rate = fit_decay_rate((0..100).map(|k| (k as f64 * 0.1, 3.0 * (-0.7 * k as f64 * 0.1).exp()))).unwrap();
        assert!((rate - 0.7).abs() < 1e-12);
        assert_eq!(fit_decay_rate(std::iter::once((0.0, 1.0))), None);
    }
}
