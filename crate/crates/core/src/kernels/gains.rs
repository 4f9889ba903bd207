use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::params::SampledPlant;

use super::{Block, KernelTable};

/// Output-injection gains of the observer.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub p1: GridFunction,
    pub p2: GridFunction,
}

/// Output-injection gains as seen in the controller's target coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedGains {
    pub p1_bar: GridFunction,
    pub p2_bar: GridFunction,
}

/// Feedback weights of the continuous control law.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGains {
    pub n_alpha: GridFunction,
    pub n_beta: GridFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub observer: ObserverGains,
    pub transformed: TransformedGains,
    pub control: ControlGains,
}

/// Evaluates all gain functions from the observer kernel `p`, the
/// controller kernel `k` and its inverse `l`.
pub fn compute_gains(p: &KernelTable, k: &KernelTable, l: &KernelTable, plant: &SampledPlant) -> Result<Gains> {
    let nodes = plant.grid.nodes();
    for t in [p, k, l] {
        if t.nodes() != nodes {
            return Err(Error::GridMismatch { expected: nodes, found: t.nodes() });
        }
    }
    let observer = observer_gains(p, plant);
    let transformed = transformed_gains(k, &observer, plant);
    let control = control_gains(l, plant.rho);
    Ok(Gains { observer, transformed, control })
}

pub fn observer_gains(p: &KernelTable, plant: &SampledPlant) -> ObserverGains {
    let l2 = plant.lambda2[0];
    ObserverGains {
        p1: GridFunction::new(p.first_column(Block::AB).into_iter().map(|v| -l2 * v).collect()),
        p2: GridFunction::new(p.first_column(Block::BB).into_iter().map(|v| -l2 * v).collect()),
    }
}

/// `(I − K) p` by row-wise trapezoid quadrature.
pub fn volterra_image(k: &KernelTable, p1: &GridFunction, p2: &GridFunction) -> (GridFunction, GridFunction) {
    let h = k.grid().dx();
    let n = k.cells();
    let mut out1 = p1.clone();
    let mut out2 = p2.clone();
    for i in 1..=n {
        let row_dot = |b1: Block, b2: Block| {
            let (r1, r2) = (k.row(b1, i), k.row(b2, i));
            let term = |j: usize| r1[j] * p1[j] + r2[j] * p2[j];
            let inner: f64 = (1..i).map(term).sum();
            h * (inner + 0.5 * (term(0) + term(i)))
        };
        out1[i] -= row_dot(Block::AA, Block::AB);
        out2[i] -= row_dot(Block::BA, Block::BB);
    }
    (out1, out2)
}

/// Injection gains in target coordinates. Besides the Volterra image of the
/// observer gains, the measurement-fed inlet `û(0) = q v(0)` leaves the
/// boundary term `−q λ1(0) K(x,0)` from integrating by parts at `ξ = 0`.
pub fn transformed_gains(k: &KernelTable, observer: &ObserverGains, plant: &SampledPlant) -> TransformedGains {
    let (mut p1_bar, mut p2_bar) = volterra_image(k, &observer.p1, &observer.p2);
    let inlet = plant.q * plant.lambda1[0];
    for i in 0..=k.cells() {
        p1_bar[i] -= inlet * k.get(Block::AA, i, 0);
        p2_bar[i] -= inlet * k.get(Block::BA, i, 0);
    }
    TransformedGains { p1_bar, p2_bar }
}

pub fn control_gains(l: &KernelTable, rho: f64) -> ControlGains {
    let combine = |top: &[f64], bottom: &[f64]| {
        GridFunction::new(top.iter().zip(bottom).map(|(t, b)| b - rho * t).collect())
    };
    ControlGains {
        n_alpha: combine(l.last_row(Block::AA), l.last_row(Block::BA)),
        n_beta: combine(l.last_row(Block::AB), l.last_row(Block::BB)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::params::PlantParams;

    fn plant(n: usize) -> SampledPlant {
        PlantParams::reference().sample(&UniformGrid::new(n).unwrap()).unwrap()
    }

    #[test]
    fn zero_kernels_give_zero_gains() {
        let z = KernelTable::zeros(16);
        let g = compute_gains(&z, &z, &z, &plant(16)).unwrap();
        assert_eq!(g.observer.p1.max_abs(), 0.0);
        assert_eq!(g.transformed.p2_bar.max_abs(), 0.0);
        assert_eq!(g.control.n_alpha.max_abs(), 0.0);
        assert_eq!(g.control.n_beta.max_abs(), 0.0);
    }

    #[test]
    fn zero_controller_kernel_keeps_observer_gains() {
        let p = KernelTable::from_fn(16, |b, x, xi| b.index() as f64 + x - xi);
        let z = KernelTable::zeros(16);
        let g = compute_gains(&p, &z, &z, &plant(16)).unwrap();
        assert_eq!(g.transformed.p1_bar, g.observer.p1);
        assert_eq!(g.transformed.p2_bar, g.observer.p2);
        assert_eq!(g.observer.p1[16], -(1.0 + 1.0));
    }

    #[test]
    fn feedback_weights_from_last_row() {
        let l = KernelTable::from_fn(16, |b, _, _| match b {
            Block::BA => 1.0,
            Block::AA => 2.0,
            Block::BB => 3.0,
            Block::AB => 4.0,
        });
        let c = control_gains(&l, 0.5);
        assert!(c.n_alpha.values().iter().all(|&v| v == 0.0));
        assert!(c.n_beta.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn volterra_image_of_constant_kernel() {
        let k = KernelTable::from_fn(16, |b, _, _| if b == Block::AA { 1.0 } else { 0.0 });
        let one = GridFunction::constant(17, 1.0);
        let (a, b) = volterra_image(&k, &one, &GridFunction::zeros(17));
        for i in 0..=16 {
            assert!((a[i] - (1.0 - i as f64 / 16.0)).abs() < 1e-15);
            assert_eq!(b[i], 0.0);
        }
    }

    #[test]
    fn rejects_mismatched_tables() {
        let z = KernelTable::zeros(16);
        assert!(matches!(
            compute_gains(&z, &KernelTable::zeros(20), &z, &plant(16)),
            Err(Error::GridMismatch { .. })
        ));
    }
}
