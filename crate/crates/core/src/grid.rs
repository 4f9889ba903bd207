//! Uniform spatial grid on `[0, 1]`, sampled profiles and the quadrature
//! helpers shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform partition of `[0, 1]` into `cells` cells (`cells + 1` nodes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformGrid {
    cells: usize,
}

impl UniformGrid {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Config(format!("grid needs at least 2 cells, got {cells}")));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.x(i)).collect()
    }

    /// Composite trapezoid weights for `∫_0^1`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.nodes()];
        w[0] = 0.5 * dx;
        w[self.cells] = 0.5 * dx;
        w
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::new(self.xs().into_iter().map(f).collect())
    }
}

/// A real function sampled on the nodes of a [`UniformGrid`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(nodes: usize) -> Self {
        Self::new(vec![0.0; nodes])
    }

    pub fn constant(nodes: usize, value: f64) -> Self {
        Self::new(vec![value; nodes])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫_0^1 f dx` by the composite trapezoid rule.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.dx())
    }

    /// Squared L² norm by the composite trapezoid rule.
    pub fn norm_sq(&self) -> f64 {
        let dx = self.dx();
        let n = self.values.len() - 1;
        let inner: f64 = self.values[1..n].iter().map(|v| v * v).sum();
        dx * (inner + 0.5 * (self.values[0] * self.values[0] + self.values[n] * self.values[n]))
    }

    /// Trapezoid inner product `∫_0^1 f g dx`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        let dx = self.dx();
        let n = self.values.len() - 1;
        let a = &self.values;
        let b = &other.values;
        let inner: f64 = (1..n).map(|i| a[i] * b[i]).sum();
        dx * (inner + 0.5 * (a[0] * b[0] + a[n] * b[n]))
    }

    /// Cumulative trapezoid integral `x ↦ ∫_0^x f`.
    pub fn cumulative_integral(&self) -> GridFunction {
        let dx = self.dx();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * dx * (w[0] + w[1]);
            out.push(acc);
        }
        GridFunction::new(out)
    }

    /// Derivative by second-order central differences, second-order
    /// one-sided stencils at the two endpoints.
    pub fn derivative(&self) -> GridFunction {
        let f = &self.values;
        let n = f.len();
        let h = self.dx();
        let mut d = vec![0.0; n];
        if n == 2 {
            let s = (f[1] - f[0]) / h;
            return GridFunction::new(vec![s, s]);
        }
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
        for i in 1..n - 1 {
            d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
        }
        GridFunction::new(d)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::new(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        GridFunction::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    /// Linear interpolation at an arbitrary `x ∈ [0, 1]`.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.cells();
        let s = (x.clamp(0.0, 1.0) * n as f64).min(n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let w = s - k as f64;
        (1.0 - w) * self.values[k] + w * self.values[k + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for GridFunction {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// A coefficient profile on `[0, 1]`: either a constant or a table of
/// `(x, value)` breakpoints joined linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Table { x: Vec<f64>, value: Vec<f64> },
}

impl Profile {
    pub fn is_constant(&self) -> bool {
        matches!(self, Profile::Constant(_))
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            Profile::Constant(v) if !v.is_finite() => {
                Err(Error::Config(format!("{name}: non-finite constant")))
            }
            Profile::Constant(_) => Ok(()),
            Profile::Table { x, value } => {
                if x.len() != value.len() || x.len() < 2 {
                    return Err(Error::Config(format!(
                        "{name}: table needs matching x/value arrays with at least 2 entries"
                    )));
                }
                if x[0] > 0.0 || x[x.len() - 1] < 1.0 {
                    return Err(Error::Config(format!("{name}: table must cover [0, 1]")));
                }
                if x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config(format!("{name}: table x must be increasing")));
                }
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("{name}: non-finite table value")));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, at: f64) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Table { x, value } => {
                let k = x.partition_point(|&xi| xi <= at).clamp(1, x.len() - 1);
                let (x0, x1) = (x[k - 1], x[k]);
                let w = (at - x0) / (x1 - x0);
                (1.0 - w) * value[k - 1] + w * value[k]
            }
        }
    }

    pub fn sample(&self, grid: &UniformGrid) -> GridFunction {
        grid.sample(|x| self.eval(x))
    }
}

/// Offset of row `i` in a row-major lower-triangular layout.
#[inline]
pub fn tri_offset(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Number of entries of a lower triangle including the diagonal on
/// `nodes` rows.
#[inline]
pub fn tri_len(nodes: usize) -> usize {
    tri_offset(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_on_linear_functions() {
        let g = UniformGrid::new(7).unwrap();
        let f = g.sample(|x| 3.0 * x - 1.0);
        assert!((f.integral() - 0.5).abs() < 1e-15);
        let c = f.cumulative_integral();
        for (i, x) in g.xs().into_iter().enumerate() {
            assert!((c[i] - (1.5 * x * x - x)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let g = UniformGrid::new(10).unwrap();
        let f = g.sample(|x| x * x - 2.0 * x);
        let d = f.derivative();
        for (i, x) in g.xs().into_iter().enumerate() {
            assert!((d[i] - (2.0 * x - 2.0)).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn table_profiles_interpolate_linearly() {
        let p = Profile::Table { x: vec![0.0, 0.5, 1.0], value: vec![1.0, 2.0, 0.0] };
        p.validate("p").unwrap();
        assert_eq!(p.eval(0.25), 1.5);
        assert_eq!(p.eval(0.75), 1.0);
        assert_eq!(p.eval(1.0), 0.0);
        let bad = Profile::Table { x: vec![0.0, 0.9], value: vec![1.0, 2.0] };
        assert!(bad.validate("bad").is_err());
    }

    #[test]
    fn interpolation_hits_nodes() {
        let g = UniformGrid::new(4).unwrap();
        let f = g.sample(|x| x * x);
        assert_eq!(f.interpolate(0.5), 0.25);
        assert!((f.interpolate(0.125) - 0.03125).abs() < 1e-15);
    }
}
