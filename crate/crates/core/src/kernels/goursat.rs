//! Successive approximation on the characteristic form of the kernel
//! equations.
//!
//! Each block `F` of a kernel satisfies `a(x) ∂x F + b(ξ) ∂ξ F = S − b'(ξ) F`
//! with row speed `a` and column speed `b` (either `λ1` or `-λ2`). Along a
//! characteristic the transit times `Φ_a(x)` and `Φ_b(ξ)` change at unit
//! rate, so each node is linked to a point on the neighbouring grid row, or
//! to the data curve when the characteristic reaches it first, and the
//! right-hand side is integrated by the trapezoid rule over that segment.
//! The coupling right-hand side is lagged one sweep (Jacobi), which gives a
//! discrete Picard iteration.

use crate::error::{Error, Result};
use crate::grid::tri_offset;
use crate::params::{CharacteristicTimes, SampledPlant, MIN_ABS_RHO};

use super::{Block, KernelTable};

/// Interpolation weights closer than this to a node snap onto the node.
const SNAP: f64 = 1e-9;

/// Smallest grid accepted by the solver.
pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSystem {
    /// Error-coordinate kernel `P`; data on the diagonal and on `x = 1`.
    Observer,
    /// Observer-state kernel `K`; data on the diagonal and on `ξ = 0`.
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

/// Convergence history of a solve: `residuals[k]` is the max-norm change
/// between sweeps `k` and `k + 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

pub fn solve_observer_kernels(plant: &SampledPlant, opts: &SolverOptions) -> Result<(KernelTable, SolveReport)> {
    solve(KernelSystem::Observer, plant, opts)
}

pub fn solve_controller_kernels(plant: &SampledPlant, opts: &SolverOptions) -> Result<(KernelTable, SolveReport)> {
    solve(KernelSystem::Controller, plant, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Curve {
    Diagonal,
    EdgeX1,
    EdgeXi0,
}

fn curve_of(system: KernelSystem, b: Block) -> Curve {
    match (system, b) {
        (_, Block::AB | Block::BA) => Curve::Diagonal,
        (KernelSystem::Observer, _) => Curve::EdgeX1,
        (KernelSystem::Controller, _) => Curve::EdgeXi0,
    }
}

/// Signed speed profile index: 0 is `+λ1`, 1 is `-λ2`.
fn speed_sign(index: usize) -> f64 {
    if index == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Data,
    /// Flat triangle index of the left interpolation node on a grid row.
    Row(u32),
    /// Index of the left interpolation node along the data curve.
    Curve(u32),
}

#[derive(Debug, Clone, Copy)]
struct Step {
    source: Source,
    w: f64,
    ds: f64,
}

fn snap(k: usize, w: f64) -> (usize, f64) {
    if w < SNAP {
        (k, 0.0)
    } else if w > 1.0 - SNAP {
        (k + 1, 0.0)
    } else {
        (k, w)
    }
}

/// Locates `target` in the increasing table `phi[0..=last]`.
fn locate(phi: &[f64], last: usize, target: f64) -> (usize, f64) {
    if target <= phi[0] {
        return (0, 0.0);
    }
    if target >= phi[last] {
        return (last, 0.0);
    }
    let k = phi[..=last].partition_point(|&p| p <= target) - 1;
    snap(k, (target - phi[k]) / (phi[k + 1] - phi[k]))
}

fn build_steps(curve: Curve, phi_a: &[f64], sign_a: f64, phi_b: &[f64]) -> Vec<Step> {
    let n = phi_a.len() - 1;
    let data = Step { source: Source::Data, w: 0.0, ds: 0.0 };
    let mut steps = vec![data; tri_offset(n + 1)];
    match curve {
        Curve::Diagonal => {
            for i in 1..=n {
                let row_prev = tri_offset(i - 1);
                for j in 0..i {
                    let c = phi_a[i] + phi_b[j];
                    let target = c - phi_a[i - 1];
                    let step = if target <= phi_b[i - 1] * (1.0 + 1e-12) {
                        let (k, w) = locate(phi_b, i - 1, target);
                        Step {
                            source: Source::Row((row_prev + k) as u32),
                            w,
                            ds: sign_a * (phi_a[i] - phi_a[i - 1]),
                        }
                    } else {
                        let s_lo = phi_a[i - 1] + phi_b[i - 1];
                        let s_hi = phi_a[i] + phi_b[i];
                        let (k, w) = snap(i - 1, (c - s_lo) / (s_hi - s_lo));
                        let phi_z = if w == 0.0 { phi_a[k] } else { (1.0 - w) * phi_a[k] + w * phi_a[k + 1] };
                        Step { source: Source::Curve(k as u32), w, ds: sign_a * (phi_a[i] - phi_z) }
                    };
                    steps[tri_offset(i) + j] = step;
                }
            }
        }
        Curve::EdgeX1 => {
            for i in 0..n {
                let row_next = tri_offset(i + 1);
                for j in 0..=i {
                    let target = phi_b[j] + phi_a[i + 1] - phi_a[i];
                    let (k, w) = locate(phi_b, i + 1, target);
                    steps[tri_offset(i) + j] = Step {
                        source: Source::Row((row_next + k) as u32),
                        w,
                        ds: sign_a * (phi_a[i] - phi_a[i + 1]),
                    };
                }
            }
        }
        Curve::EdgeXi0 => {
            for i in 1..=n {
                let row_prev = tri_offset(i - 1);
                for j in 1..=i {
                    let target = phi_b[j] - (phi_a[i] - phi_a[i - 1]);
                    let step = if target >= -1e-12 * phi_b[j] {
                        let (k, w) = locate(phi_b, i - 1, target.max(0.0));
                        Step {
                            source: Source::Row((row_prev + k) as u32),
                            w,
                            ds: sign_a * (phi_a[i] - phi_a[i - 1]),
                        }
                    } else {
                        let phi_z = phi_a[i] - phi_b[j];
                        let (k, w) = snap(i - 1, (phi_z - phi_a[i - 1]) / (phi_a[i] - phi_a[i - 1]));
                        Step { source: Source::Curve(k as u32), w, ds: sign_a * phi_b[j] }
                    };
                    steps[tri_offset(i) + j] = step;
                }
            }
        }
    }
    steps
}

#[inline]
fn lerp(values: &[f64], k: usize, w: f64) -> f64 {
    if w == 0.0 {
        values[k]
    } else {
        (1.0 - w) * values[k] + w * values[k + 1]
    }
}

struct BlockPlan {
    block: Block,
    curve: Curve,
    steps: Vec<Step>,
}

struct Solver<'a> {
    system: KernelSystem,
    plant: &'a SampledPlant,
    cells: usize,
    plans: Vec<BlockPlan>,
    /// `b'(ξ)` per column speed index.
    col_slope: [Vec<f64>; 2],
    /// Data on the diagonal for the two coupling blocks.
    trace_ab: Vec<f64>,
    trace_ba: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(system: KernelSystem, plant: &'a SampledPlant) -> Self {
        let times = CharacteristicTimes::from_sampled(plant);
        let phi = [times.phi1.values(), times.phi2.values()];
        let plans = Block::ALL
            .into_iter()
            .map(|b| {
                let curve = curve_of(system, b);
                let steps = build_steps(curve, phi[b.row()], speed_sign(b.row()), phi[b.col()]);
                BlockPlan { block: b, curve, steps }
            })
            .collect();
        let nodes = plant.grid.nodes();
        let sum: Vec<f64> = (0..nodes).map(|i| plant.lambda1[i] + plant.lambda2[i]).collect();
        let (sab, sba) = match system {
            KernelSystem::Observer => (-1.0, 1.0),
            KernelSystem::Controller => (1.0, -1.0),
        };
        Self {
            system,
            plant,
            cells: plant.grid.cells(),
            plans,
            col_slope: [plant.dlambda1.values().to_vec(), plant.dlambda2.values().iter().map(|d| -d).collect()],
            trace_ab: (0..nodes).map(|i| sab * plant.c1[i] / sum[i]).collect(),
            trace_ba: (0..nodes).map(|i| sba * plant.c2[i] / sum[i]).collect(),
        }
    }

    /// Coupling block and its coefficient at node `(i, j)`.
    #[inline]
    fn coupling(&self, b: Block, i: usize, j: usize) -> (Block, f64) {
        let p = self.plant;
        match self.system {
            KernelSystem::Observer => {
                let partner = Block::from_row_col(1 - b.row(), b.col());
                (partner, if b.row() == 0 { p.c1[i] } else { p.c2[i] })
            }
            KernelSystem::Controller => {
                let partner = Block::from_row_col(b.row(), 1 - b.col());
                (partner, if b.col() == 0 { -p.c2[j] } else { -p.c1[j] })
            }
        }
    }

    /// Right-hand side `S − b'F` of every block.
    fn rhs(&self, f: &KernelTable, g: &mut KernelTable) {
        for b in Block::ALL {
            let slope = &self.col_slope[b.col()];
            for i in 0..=self.cells {
                for j in 0..=i {
                    let (partner, coef) = self.coupling(b, i, j);
                    let v = coef * f.get(partner, i, j) - slope[j] * f.get(b, i, j);
                    g.set(b, i, j, v);
                }
            }
        }
    }

    /// Values on the data curve of block `b`, taken from already updated
    /// coupling blocks of `f`.
    fn curve_data(&self, b: Block, f: &KernelTable) -> Vec<f64> {
        let p = self.plant;
        let n = self.cells;
        match (self.system, b) {
            (_, Block::AB) => self.trace_ab.clone(),
            (_, Block::BA) => self.trace_ba.clone(),
            (KernelSystem::Observer, Block::AA) => f.last_row(Block::BA).iter().map(|v| v / p.rho).collect(),
            (KernelSystem::Observer, Block::BB) => f.last_row(Block::AB).iter().map(|v| p.rho * v).collect(),
            (KernelSystem::Controller, Block::AA) => {
                let s = p.lambda2[0] / (p.q * p.lambda1[0]);
                (0..=n).map(|i| s * f.get(Block::AB, i, 0)).collect()
            }
            (KernelSystem::Controller, Block::BB) => {
                let s = p.q * p.lambda1[0] / p.lambda2[0];
                (0..=n).map(|i| s * f.get(Block::BA, i, 0)).collect()
            }
        }
    }

    fn sweep_block(&self, plan: &BlockPlan, g: &KernelTable, f: &mut KernelTable) {
        let n = self.cells;
        let b = plan.block;
        let data = self.curve_data(b, f);
        let g_curve: Vec<f64> = match plan.curve {
            Curve::Diagonal => g.diagonal(b),
            Curve::EdgeX1 => g.last_row(b).to_vec(),
            Curve::EdgeXi0 => g.first_column(b),
        };
        let gb = g.block(b);
        let rows: Box<dyn Iterator<Item = usize>> = match plan.curve {
            Curve::EdgeX1 => Box::new((0..=n).rev()),
            _ => Box::new(0..=n),
        };
        let out = f.block_mut(b);
        for i in rows {
            let off = tri_offset(i);
            for j in 0..=i {
                let idx = off + j;
                let step = plan.steps[idx];
                out[idx] = match step.source {
                    Source::Data => match plan.curve {
                        Curve::Diagonal => data[i],
                        Curve::EdgeX1 => data[j],
                        Curve::EdgeXi0 => data[i],
                    },
                    Source::Row(src) => {
                        let s = src as usize;
                        let f_up = lerp(out, s, step.w);
                        let g_up = lerp(gb, s, step.w);
                        f_up + step.ds * 0.5 * (gb[idx] + g_up)
                    }
                    Source::Curve(k) => {
                        let k = k as usize;
                        let f_up = lerp(&data, k, step.w);
                        let g_up = lerp(&g_curve, k, step.w);
                        f_up + step.ds * 0.5 * (gb[idx] + g_up)
                    }
                };
            }
        }
    }

    fn sweep(&self, g: &KernelTable, f: &mut KernelTable) {
        // Coupling blocks first: the edge data of the other two read them.
        for plan in self.plans.iter().filter(|p| p.curve == Curve::Diagonal) {
            self.sweep_block(plan, g, f);
        }
        for plan in self.plans.iter().filter(|p| p.curve != Curve::Diagonal) {
            self.sweep_block(plan, g, f);
        }
    }
}

fn solve(system: KernelSystem, plant: &SampledPlant, opts: &SolverOptions) -> Result<(KernelTable, SolveReport)> {
    let cells = plant.grid.cells();
    if cells < MIN_CELLS {
        return Err(Error::Config(format!("kernel grid needs at least {MIN_CELLS} cells, got {cells}")));
    }
    match system {
        KernelSystem::Observer if plant.rho.abs() < MIN_ABS_RHO => {
            return Err(Error::InvalidPlant("|rho| < 1e-12: the x = 1 kernel edge data divide by rho".into()))
        }
        KernelSystem::Controller if plant.q == 0.0 => {
            return Err(Error::InvalidPlant("q = 0: the xi = 0 kernel edge data divide by q".into()))
        }
        _ => {}
    }
    let solver = Solver::new(system, plant);
    let solver_name = match system {
        KernelSystem::Observer => "observer kernel solver",
        KernelSystem::Controller => "controller kernel solver",
    };

    let mut f = KernelTable::zeros(cells);
    let mut g = KernelTable::zeros(cells);
    let mut next = KernelTable::zeros(cells);
    let mut report = SolveReport::default();
    for iter in 1..=opts.max_iter {
        solver.rhs(&f, &mut g);
        solver.sweep(&g, &mut next);
        let residual = next.max_diff(&f);
        std::mem::swap(&mut f, &mut next);
        report.iterations = iter;
        report.residuals.push(residual);
        log::debug!("{solver_name}: iteration {iter}, residual {residual:e}");
        if !residual.is_finite() {
            return Err(Error::NotConverged { solver: solver_name, iterations: iter, residual });
        }
        if residual < opts.tol {
            return Ok((f, report));
        }
    }
    Err(Error::NotConverged { solver: solver_name, iterations: opts.max_iter, residual: report.final_residual() })
}

/// Largest residual of the kernel equations under a first-order backward
/// difference stencil, over interior nodes `1 ≤ j ≤ i − 1`.
pub fn kernel_pde_residual(system: KernelSystem, plant: &SampledPlant, table: &KernelTable) -> Result<f64> {
    let n = plant.grid.cells();
    if table.cells() != n {
        return Err(Error::GridMismatch { expected: n + 1, found: table.nodes() });
    }
    let solver = Solver::new(system, plant);
    let h = plant.grid.dx();
    let speed = |index: usize, k: usize| if index == 0 { plant.lambda1[k] } else { -plant.lambda2[k] };
    let mut worst = 0.0_f64;
    for b in Block::ALL {
        for i in 2..=n {
            for j in 1..i {
                let f = table.get(b, i, j);
                let dx = speed(b.row(), i) * (f - table.get(b, i - 1, j)) / h;
                let dxi = (speed(b.col(), j) * f - speed(b.col(), j - 1) * table.get(b, i, j - 1)) / h;
                let (partner, coef) = solver.coupling(b, i, j);
                worst = worst.max((dx + dxi - coef * table.get(partner, i, j)).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::params::PlantParams;

    fn sampled(p: &PlantParams, n: usize) -> SampledPlant {
        p.sample(&UniformGrid::new(n).unwrap()).unwrap()
    }

    #[test]
    fn uncoupled_plant_has_zero_kernels() {
        let p = sampled(&PlantParams::constant(1.0, 2.0, 0.0, 0.0, 0.5, 0.5), 32);
        for system in [KernelSystem::Observer, KernelSystem::Controller] {
            let (k, report) = solve(system, &p, &SolverOptions::default()).unwrap();
            assert_eq!(k.max_abs(), 0.0);
            assert_eq!(report.iterations, 1);
        }
    }

    #[test]
    fn observer_traces_and_edges() {
        let p = sampled(&PlantParams::reference(), 64);
        let (k, _) = solve_observer_kernels(&p, &SolverOptions::default()).unwrap();
        for i in 0..=64 {
            assert_eq!(k.get(Block::AB, i, i), -0.5);
            assert_eq!(k.get(Block::BA, i, i), 0.75);
        }
        for j in 0..=64 {
            assert!((k.get(Block::AA, 64, j) - 2.0 * k.get(Block::BA, 64, j)).abs() < 1e-12);
            assert!((k.get(Block::BB, 64, j) - 0.5 * k.get(Block::AB, 64, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_traces_and_edges() {
        let p = sampled(&PlantParams::reference(), 64);
        let (k, _) = solve_controller_kernels(&p, &SolverOptions::default()).unwrap();
        for i in 0..=64 {
            assert_eq!(k.get(Block::AB, i, i), 0.5);
            assert_eq!(k.get(Block::BA, i, i), -0.75);
            assert!((k.get(Block::AA, i, 0) - 2.0 * k.get(Block::AB, i, 0)).abs() < 1e-12);
            assert!((k.get(Block::BB, i, 0) - 0.5 * k.get(Block::BA, i, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_history_contracts() {
        let p = sampled(&PlantParams::reference(), 64);
        for system in [KernelSystem::Observer, KernelSystem::Controller] {
            let (_, report) = solve(system, &p, &SolverOptions::default()).unwrap();
            assert!(report.final_residual() < 1e-10);
            for w in report.residuals[3..].windows(2) {
                assert!(w[1] <= w[0], "{system:?}: {:?}", report.residuals);
            }
        }
    }

    #[test]
    fn discrete_residual_is_first_order() {
        let plant = PlantParams::reference();
        for system in [KernelSystem::Observer, KernelSystem::Controller] {
            let r: Vec<f64> = [64, 128]
                .into_iter()
                .map(|n| {
                    let p = sampled(&plant, n);
                    let (k, _) = solve(system, &p, &SolverOptions::default()).unwrap();
                    kernel_pde_residual(system, &p, &k).unwrap()
                })
                .collect();
            let ratio = r[1] / r[0];
            assert!((0.4..=0.6).contains(&ratio), "{system:?}: {r:?}");
        }
    }

    #[test]
    fn variable_speed_kernels_converge_under_refinement() {
        let xs = vec![0.0, 1.0];
        let plant = PlantParams {
            lambda1: crate::grid::Profile::Table { x: xs.clone(), value: vec![1.0, 1.5] },
            lambda2: crate::grid::Profile::Table { x: xs, value: vec![2.0, 1.0] },
            ..PlantParams::reference()
        };
        for system in [KernelSystem::Observer, KernelSystem::Controller] {
            let at = |n: usize| {
                let (k, _) = solve(system, &sampled(&plant, n), &SolverOptions::default()).unwrap();
                Block::ALL.map(|b| k.get(b, n, n / 2))
            };
            let levels = [at(128), at(256), at(512), at(1024)];
            for m in 0..4 {
                let e1 = (levels[0][m] - levels[1][m]).abs();
                let e2 = (levels[2][m] - levels[3][m]).abs();
                assert!(e2 <= 0.5 * e1 + 1e-12, "{system:?} block {m}: {e1} {e2}");
            }
        }
    }

    #[test]
    fn rejects_degenerate_boundaries() {
        let p = sampled(&PlantParams::constant(1.0, 1.0, 1.0, 1.0, 0.0, 0.5), 16);
        assert!(matches!(solve_controller_kernels(&p, &SolverOptions::default()), Err(Error::InvalidPlant(_))));
        let small = sampled(&PlantParams::reference(), 8);
        assert!(solve_observer_kernels(&small, &SolverOptions::default()).is_err());
    }
}
