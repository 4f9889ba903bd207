//! Volterra transforms between observer states and target coordinates,
//! the continuous control law and the target-system residual check.

use crate::error::{Error, Result};
use crate::grid::{tri_offset, GridFunction, UniformGrid};
use crate::kernels::{Block, ControlGains, KernelTable, TransformedGains};
use crate::params::SampledPlant;

/// Lanes processed together by the batched operator; batches of exactly
/// this width are the fastest.
pub const CHUNK: usize = 8;

/// Plant and observer states at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub t: f64,
    pub u: GridFunction,
    pub v: GridFunction,
    pub u_hat: GridFunction,
    pub v_hat: GridFunction,
}

impl StateSnapshot {
    pub fn zeros(nodes: usize) -> Self {
        let z = GridFunction::zeros(nodes);
        Self { t: 0.0, u: z.clone(), v: z.clone(), u_hat: z.clone(), v_hat: z }
    }

    pub fn nodes(&self) -> usize {
        self.u.len()
    }

    pub fn check_grid(&self, nodes: usize) -> Result<()> {
        for g in [&self.u, &self.v, &self.u_hat, &self.v_hat] {
            if g.len() != nodes {
                return Err(Error::GridMismatch { expected: nodes, found: g.len() });
            }
        }
        Ok(())
    }

    /// Observer errors `(u − û, v − v̂)`.
    pub fn errors(&self) -> (GridFunction, GridFunction) {
        (self.u.zip_map(&self.u_hat, |a, b| a - b), self.v.zip_map(&self.v_hat, |a, b| a - b))
    }
}

/// Observer states in target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSnapshot {
    pub alpha_hat: GridFunction,
    pub beta_hat: GridFunction,
    pub alpha_hat_1: f64,
    /// Measurement residual `v(0) − v̂(0)`.
    pub beta_tilde_0: f64,
    /// Error states in target coordinates, when requested.
    pub alpha_tilde: Option<GridFunction>,
    pub beta_tilde: Option<GridFunction>,
}

/// `(a, b) ↦ (a, b) ± ∫_0^x T(x,ξ)(a, b)(ξ) dξ` with the trapezoid rule on
/// `[0, x_i]`, stored as a lower-triangular matrix with the quadrature
/// weights folded in.
///
/// Every output lane is accumulated in the same order whatever the batch
/// width, so batched and single applications agree bit for bit.
#[derive(Debug, Clone)]
pub struct VolterraOperator {
    cells: usize,
    sign: f64,
    weighted: [Vec<f64>; 4],
}

impl VolterraOperator {
    /// The transform `I − T`.
    pub fn forward(table: &KernelTable) -> Self {
        Self::new(table, -1.0)
    }

    /// The transform `I + T`.
    pub fn inverse(table: &KernelTable) -> Self {
        Self::new(table, 1.0)
    }

    fn new(table: &KernelTable, sign: f64) -> Self {
        let n = table.cells();
        let h = table.grid().dx();
        let weighted = Block::ALL.map(|b| {
            let mut out = table.block(b).to_vec();
            for i in 0..=n {
                let row = &mut out[tri_offset(i)..tri_offset(i) + i + 1];
                if i == 0 {
                    row[0] = 0.0;
                    continue;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= if j == 0 || j == i { 0.5 * h } else { h };
                }
            }
            out
        });
        Self { cells: n, sign, weighted }
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn apply(&self, a: &GridFunction, b: &GridFunction) -> Result<(GridFunction, GridFunction)> {
        let nodes = self.nodes();
        for g in [a, b] {
            if g.len() != nodes {
                return Err(Error::GridMismatch { expected: nodes, found: g.len() });
            }
        }
        let mut out_a = vec![0.0; nodes];
        let mut out_b = vec![0.0; nodes];
        self.apply_batch(1, a.values(), b.values(), &mut out_a, &mut out_b);
        Ok((GridFunction::new(out_a), GridFunction::new(out_b)))
    }

    /// Applies the operator to `lanes` pairs at once. All slices are laid
    /// out node-major: entry `(node, lane)` lives at `node * lanes + lane`.
    pub fn apply_batch(&self, lanes: usize, a: &[f64], b: &[f64], out_a: &mut [f64], out_b: &mut [f64]) {
        let len = self.nodes() * lanes;
        assert!(a.len() == len && b.len() == len && out_a.len() == len && out_b.len() == len);
        let full = lanes / CHUNK * CHUNK;
        for i in 0..=self.cells {
            let o = tri_offset(i);
            let rows: [&[f64]; 4] = std::array::from_fn(|k| &self.weighted[k][o..o + i + 1]);
            for start in (0..full).step_by(CHUNK) {
                let (sa, sb) = row_sums_chunk(&rows, a, b, lanes, start);
                for l in 0..CHUNK {
                    let idx = i * lanes + start + l;
                    out_a[idx] = a[idx] + self.sign * sa[l];
                    out_b[idx] = b[idx] + self.sign * sb[l];
                }
            }
            for lane in full..lanes {
                let (sa, sb) = row_sums_lane(&rows, a, b, lanes, lane);
                let idx = i * lanes + lane;
                out_a[idx] = a[idx] + self.sign * sa;
                out_b[idx] = b[idx] + self.sign * sb;
            }
        }
    }

    /// Weights `(g_a, g_b)` with `Σ w_a·(Ta)_a + w_b·(Tb)_b = Σ g_a·a + g_b·b`
    /// for the transform `T` applied to `(a, b)`.
    pub fn adjoint(&self, w_a: &[f64], w_b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut g_a = w_a.to_vec();
        let mut g_b = w_b.to_vec();
        for i in 0..=self.cells {
            let o = tri_offset(i);
            let (ca, cb) = (self.sign * w_a[i], self.sign * w_b[i]);
            let [aa, ab, ba, bb] = &self.weighted;
            for j in 0..=i {
                g_a[j] += ca * aa[o + j] + cb * ba[o + j];
                g_b[j] += ca * ab[o + j] + cb * bb[o + j];
            }
        }
        (g_a, g_b)
    }
}

// Four interleaved partial sums per output (term `j` goes to sum `j mod 4`),
// combined as (p0 + p1) + (p2 + p3).
#[inline(always)]
fn row_sums_chunk(rows: &[&[f64]; 4], a: &[f64], b: &[f64], lanes: usize, start: usize) -> ([f64; CHUNK], [f64; CHUNK]) {
    #[inline(always)]
    fn accumulate(
        pa: &mut [f64; CHUNK],
        pb: &mut [f64; CHUNK],
        w: [f64; 4],
        a: &[f64],
        b: &[f64],
        base: usize,
    ) {
        let xa: &[f64; CHUNK] = a[base..base + CHUNK].try_into().expect("chunk");
        let xb: &[f64; CHUNK] = b[base..base + CHUNK].try_into().expect("chunk");
        for l in 0..CHUNK {
            pa[l] += w[0] * xa[l];
            pa[l] += w[1] * xb[l];
            pb[l] += w[2] * xa[l];
            pb[l] += w[3] * xb[l];
        }
    }
    let [aa, ab, ba, bb] = *rows;
    let w = |j: usize| [aa[j], ab[j], ba[j], bb[j]];
    let mut pa = [[0.0_f64; CHUNK]; 4];
    let mut pb = [[0.0_f64; CHUNK]; 4];
    let len = aa.len();
    let body = len / 4 * 4;
    let [pa0, pa1, pa2, pa3] = &mut pa;
    let [pb0, pb1, pb2, pb3] = &mut pb;
    for j in (0..body).step_by(4) {
        accumulate(pa0, pb0, w(j), a, b, j * lanes + start);
        accumulate(pa1, pb1, w(j + 1), a, b, (j + 1) * lanes + start);
        accumulate(pa2, pb2, w(j + 2), a, b, (j + 2) * lanes + start);
        accumulate(pa3, pb3, w(j + 3), a, b, (j + 3) * lanes + start);
    }
    let tail: [(&mut [f64; CHUNK], &mut [f64; CHUNK]); 3] = [(pa0, pb0), (pa1, pb1), (pa2, pb2)];
    for (k, (qa, qb)) in tail.into_iter().enumerate().take(len - body) {
        let j = body + k;
        accumulate(qa, qb, w(j), a, b, j * lanes + start);
    }
    let mut sa = [0.0; CHUNK];
    let mut sb = [0.0; CHUNK];
    for l in 0..CHUNK {
        sa[l] = (pa[0][l] + pa[1][l]) + (pa[2][l] + pa[3][l]);
        sb[l] = (pb[0][l] + pb[1][l]) + (pb[2][l] + pb[3][l]);
    }
    (sa, sb)
}

#[inline(always)]
fn row_sums_lane(rows: &[&[f64]; 4], a: &[f64], b: &[f64], lanes: usize, lane: usize) -> (f64, f64) {
    let [aa, ab, ba, bb] = *rows;
    let mut pa = [0.0_f64; 4];
    let mut pb = [0.0_f64; 4];
    for j in 0..aa.len() {
        let k = j % 4;
        let (xa, xb) = (a[j * lanes + lane], b[j * lanes + lane]);
        pa[k] += aa[j] * xa;
        pa[k] += ab[j] * xb;
        pb[k] += ba[j] * xa;
        pb[k] += bb[j] * xb;
    }
    ((pa[0] + pa[1]) + (pa[2] + pa[3]), (pb[0] + pb[1]) + (pb[2] + pb[3]))
}

/// Observer states to target coordinates through `I − K`.
pub fn to_target(snapshot: &StateSnapshot, k: &VolterraOperator) -> Result<TargetSnapshot> {
    snapshot.check_grid(k.nodes())?;
    let (alpha_hat, beta_hat) = k.apply(&snapshot.u_hat, &snapshot.v_hat)?;
    Ok(TargetSnapshot {
        alpha_hat_1: alpha_hat.last(),
        alpha_hat,
        beta_hat,
        beta_tilde_0: snapshot.v.first() - snapshot.v_hat.first(),
        alpha_tilde: None,
        beta_tilde: None,
    })
}

/// As [`to_target`], adding the error states through `I + R`.
pub fn to_target_with_errors(
    snapshot: &StateSnapshot,
    k: &VolterraOperator,
    r: &VolterraOperator,
) -> Result<TargetSnapshot> {
    let mut target = to_target(snapshot, k)?;
    let (u_err, v_err) = snapshot.errors();
    let (a, b) = r.apply(&u_err, &v_err)?;
    target.alpha_tilde = Some(a);
    target.beta_tilde = Some(b);
    Ok(target)
}

/// Target coordinates back to observer states through `I + L`.
pub fn from_target(target: &TargetSnapshot, l: &VolterraOperator) -> Result<(GridFunction, GridFunction)> {
    l.apply(&target.alpha_hat, &target.beta_hat)
}

/// `U^c = ∫ Nα α̂ + ∫ Nβ β̂` by the trapezoid rule.
pub fn control_signal(target: &TargetSnapshot, gains: &ControlGains) -> f64 {
    gains.n_alpha.dot(&target.alpha_hat) + gains.n_beta.dot(&target.beta_hat)
}

/// The control law as a linear functional of the observer states,
/// `U^c = Σ g_u û + g_v v̂`, evaluated in O(N).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFunctional {
    pub g_u: Vec<f64>,
    pub g_v: Vec<f64>,
}

impl ControlFunctional {
    pub fn new(k: &VolterraOperator, gains: &ControlGains, grid: &UniformGrid) -> Self {
        let w = grid.trapezoid_weights();
        let wa: Vec<f64> = w.iter().zip(gains.n_alpha.values()).map(|(w, n)| w * n).collect();
        let wb: Vec<f64> = w.iter().zip(gains.n_beta.values()).map(|(w, n)| w * n).collect();
        let (g_u, g_v) = k.adjoint(&wa, &wb);
        Self { g_u, g_v }
    }

    pub fn eval(&self, u_hat: &[f64], v_hat: &[f64]) -> f64 {
        let su: f64 = self.g_u.iter().zip(u_hat).map(|(g, u)| g * u).sum();
        let sv: f64 = self.g_v.iter().zip(v_hat).map(|(g, v)| g * v).sum();
        su + sv
    }
}

/// One step of a recorded trajectory in target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub t: f64,
    pub alpha_hat: GridFunction,
    pub beta_hat: GridFunction,
    pub beta_tilde_0: f64,
    /// Input applied at the boundary during the step that produced this
    /// frame, minus the control law evaluated on the frame.
    pub d_boundary: f64,
    pub alpha_tilde: Option<GridFunction>,
    pub beta_tilde: Option<GridFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    /// Interior transport residual of the observer target system.
    pub pde_max: f64,
    pub pde_rms: f64,
    /// `β̂(1) − ρα̂(1) − d`.
    pub actuated_boundary_max: f64,
    /// `α̂(0) − qβ̂(0) − qβ̃(0)`.
    pub inlet_boundary_max: f64,
    /// `β̃(1) − ρα̃(1)` and `α̃(0)` when error states were recorded.
    pub error_boundary_max: Option<f64>,
}

/// Finite-difference residuals of the target systems along consecutive
/// frames, using the upwind stencil of the time stepper.
pub fn verify_target_residual(
    frames: &[TrajectoryFrame],
    plant: &SampledPlant,
    transformed: &TransformedGains,
) -> Result<ResidualReport> {
    if frames.len() < 3 {
        return Err(Error::Config(format!("target residual needs at least 3 frames, got {}", frames.len())));
    }
    let nodes = plant.grid.nodes();
    for f in frames {
        for g in [&f.alpha_hat, &f.beta_hat] {
            if g.len() != nodes {
                return Err(Error::GridMismatch { expected: nodes, found: g.len() });
            }
        }
    }
    let h = plant.grid.dx();
    let n = plant.grid.cells();
    let (q, rho) = (plant.q, plant.rho);
    let mut report = ResidualReport::default();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for pair in frames.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        let dt = next.t - now.t;
        if !(dt > 0.0) {
            return Err(Error::Config("frames must have increasing time stamps".into()));
        }
        let (a0, a1) = (&now.alpha_hat, &next.alpha_hat);
        let (b0, b1) = (&now.beta_hat, &next.beta_hat);
        for i in 1..=n {
            let r = (a1[i] - a0[i]) / dt + plant.lambda1[i] * (a0[i] - a0[i - 1]) / h
                - transformed.p1_bar[i] * now.beta_tilde_0;
            report.pde_max = report.pde_max.max(r.abs());
            sum_sq += r * r;
            count += 1;
        }
        for i in 0..n {
            let r = (b1[i] - b0[i]) / dt - plant.lambda2[i] * (b0[i + 1] - b0[i]) / h
                - transformed.p2_bar[i] * now.beta_tilde_0;
            report.pde_max = report.pde_max.max(r.abs());
            sum_sq += r * r;
            count += 1;
        }
    }
    for f in frames {
        let act = f.beta_hat.last() - rho * f.alpha_hat.last() - f.d_boundary;
        let inlet = f.alpha_hat.first() - q * f.beta_hat.first() - q * f.beta_tilde_0;
        report.actuated_boundary_max = report.actuated_boundary_max.max(act.abs());
        report.inlet_boundary_max = report.inlet_boundary_max.max(inlet.abs());
        if let (Some(at), Some(bt)) = (&f.alpha_tilde, &f.beta_tilde) {
            let e = (bt.last() - rho * at.last()).abs().max(at.first().abs());
            report.error_boundary_max = Some(report.error_boundary_max.unwrap_or(0.0).max(e));
        }
    }
    report.pde_rms = (sum_sq / count as f64).sqrt();
    Ok(report)
}
