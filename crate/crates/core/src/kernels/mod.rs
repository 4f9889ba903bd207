//! Backstepping kernels on the triangle `0 ≤ ξ ≤ x ≤ 1`: the characteristic
//! Goursat solver, Volterra inversion, gain extraction and an on-disk cache.

mod cache;
mod gains;
mod goursat;
mod volterra;

pub use cache::{cache_key, read_kernel_file, write_kernel_file, KernelCache, KernelSet, INVERSE_TOL};
pub use gains::{
    compute_gains, control_gains, observer_gains, transformed_gains, volterra_image, ControlGains, Gains,
    ObserverGains, TransformedGains,
};
pub use goursat::{
    kernel_pde_residual, solve_controller_kernels, solve_observer_kernels, KernelSystem, SolveReport,
    SolverOptions,
};
pub use volterra::{invert_kernel, volterra_residual, volterra_residual_rows};

use crate::error::{Error, Result};
use crate::grid::{tri_len, tri_offset, UniformGrid};

/// One entry of a 2×2 kernel matrix. The first letter is the row (the
/// transformed state), the second the column (the integrated state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    AA,
    AB,
    BA,
    BB,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::AA, Block::AB, Block::BA, Block::BB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn row(self) -> usize {
        self.index() / 2
    }

    pub fn col(self) -> usize {
        self.index() % 2
    }

    pub fn from_row_col(row: usize, col: usize) -> Block {
        Block::ALL[2 * row + col]
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::AA => "aa",
            Block::AB => "ab",
            Block::BA => "ba",
            Block::BB => "bb",
        }
    }

    pub fn parse(name: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// A 2×2 matrix kernel sampled on the lower triangle of a uniform grid,
/// each block stored row-major (`x` index outer, `ξ` index inner).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    cells: usize,
    blocks: [Vec<f64>; 4],
}

impl KernelTable {
    pub fn zeros(cells: usize) -> Self {
        let len = tri_len(cells + 1);
        Self { cells, blocks: std::array::from_fn(|_| vec![0.0; len]) }
    }

    pub fn from_blocks(cells: usize, blocks: [Vec<f64>; 4]) -> Result<Self> {
        let len = tri_len(cells + 1);
        for b in &blocks {
            if b.len() != len {
                return Err(Error::GridMismatch { expected: len, found: b.len() });
            }
        }
        Ok(Self { cells, blocks })
    }

    /// Samples `f(block, x, ξ)` at every triangle node.
    pub fn from_fn(cells: usize, f: impl Fn(Block, f64, f64) -> f64) -> Self {
        let mut t = Self::zeros(cells);
        let h = 1.0 / cells as f64;
        for b in Block::ALL {
            for i in 0..=cells {
                for j in 0..=i {
                    t.set(b, i, j, f(b, i as f64 * h, j as f64 * h));
                }
            }
        }
        t
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn grid(&self) -> UniformGrid {
        UniformGrid::new(self.cells).expect("kernel tables have at least 2 cells")
    }

    #[inline]
    pub fn get(&self, b: Block, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i <= self.cells);
        self.blocks[b.index()][tri_offset(i) + j]
    }

    #[inline]
    pub fn set(&mut self, b: Block, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i <= self.cells);
        self.blocks[b.index()][tri_offset(i) + j] = v;
    }

    /// Row `i` of block `b`: the values at `ξ_0, …, ξ_i`.
    #[inline]
    pub fn row(&self, b: Block, i: usize) -> &[f64] {
        let o = tri_offset(i);
        &self.blocks[b.index()][o..o + i + 1]
    }

    #[inline]
    pub fn row_mut(&mut self, b: Block, i: usize) -> &mut [f64] {
        let o = tri_offset(i);
        &mut self.blocks[b.index()][o..o + i + 1]
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.blocks[b.index()]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        &mut self.blocks[b.index()]
    }

    /// Values of block `b` on the diagonal `ξ = x`.
    pub fn diagonal(&self, b: Block) -> Vec<f64> {
        (0..=self.cells).map(|i| self.get(b, i, i)).collect()
    }

    /// Values of block `b` on the edge `ξ = 0`.
    pub fn first_column(&self, b: Block) -> Vec<f64> {
        (0..=self.cells).map(|i| self.get(b, i, 0)).collect()
    }

    /// Values of block `b` on the edge `x = 1`.
    pub fn last_row(&self, b: Block) -> &[f64] {
        self.row(b, self.cells)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_diff(&self, other: &KernelTable) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.iter().zip(b))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_grid(&self, other: &KernelTable) -> Result<()> {
        if self.cells != other.cells {
            return Err(Error::GridMismatch { expected: self.cells + 1, found: other.cells + 1 });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_layout_round_trips() {
        for b in Block::ALL {
            assert_eq!(Block::from_row_col(b.row(), b.col()), b);
            assert_eq!(Block::parse(b.name()), Some(b));
        }
    }

    #[test]
    fn triangular_indexing() {
        let t = KernelTable::from_fn(4, |b, x, xi| b.index() as f64 + 10.0 * x + xi);
        assert_eq!(t.get(Block::BA, 4, 2), 2.0 + 10.0 + 0.5);
        assert_eq!(t.row(Block::AA, 3).len(), 4);
        assert_eq!(t.diagonal(Block::AB)[2], 1.0 + 5.0 + 0.5);
        assert_eq!(t.first_column(Block::BB)[4], 3.0 + 10.0);
        assert_eq!(t.last_row(Block::AA)[4], 11.0);
    }
}
