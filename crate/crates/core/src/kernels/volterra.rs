//! Inverse of a Volterra transform `I − P` as `I + R`, where
//! `R(x,ξ) = P(x,ξ) + ∫_ξ^x R(x,s) P(s,ξ) ds`.
//!
//! The trapezoid discretization of this identity is lower triangular in `ξ`
//! for each fixed row, so it is solved exactly by marching from the diagonal
//! towards `ξ = 0`, one implicit 2×2 solve per node. Rows are processed in
//! small batches so that each row of `P` is streamed once per batch.

use crate::error::{Error, Result};

use super::{Block, KernelTable};

const ROW_BATCH: usize = 16;

type Mat2 = [[f64; 2]; 2];

fn mat_at(t: &KernelTable, i: usize, j: usize) -> Mat2 {
    [[t.get(Block::AA, i, j), t.get(Block::AB, i, j)], [t.get(Block::BA, i, j), t.get(Block::BB, i, j)]]
}

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn inverse(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Per-row accumulators, one array per block.
struct RowAcc {
    row: usize,
    acc: [Vec<f64>; 4],
}

/// Solves for the inverse kernel. The result is checked against the
/// discrete identity on a sample of rows and rejected if the residual
/// exceeds `tol`.
pub fn invert_kernel(forward: &KernelTable, tol: f64) -> Result<KernelTable> {
    let n = forward.cells();
    let h = forward.grid().dx();
    let half = 0.5 * h;

    // (I − h/2 P(s,s))^{-1}
    let pivots: Vec<Mat2> = (0..=n)
        .map(|s| {
            let p = mat_at(forward, s, s);
            let m = [[1.0 - half * p[0][0], -half * p[0][1]], [-half * p[1][0], 1.0 - half * p[1][1]]];
            inverse(&m).ok_or(Error::NotConverged { solver: "Volterra inversion", iterations: 0, residual: f64::NAN })
        })
        .collect::<Result<_>>()?;

    let mut out = KernelTable::zeros(n);
    let mut start = 0;
    while start <= n {
        let end = (start + ROW_BATCH).min(n + 1);
        let mut rows: Vec<RowAcc> = (start..end)
            .map(|i| {
                let diag = mat_at(forward, i, i);
                for b in Block::ALL {
                    out.set(b, i, i, diag[b.row()][b.col()]);
                }
                let mut acc: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; i]);
                for j in 0..i {
                    let pij = mat_at(forward, i, j);
                    let d = mul(&diag, &pij);
                    for b in Block::ALL {
                        let (r, c) = (b.row(), b.col());
                        acc[b.index()][j] = pij[r][c] + half * d[r][c];
                    }
                }
                RowAcc { row: i, acc }
            })
            .collect();

        for s in (0..end - 1).rev() {
            let paa = forward.row(Block::AA, s);
            let pab = forward.row(Block::AB, s);
            let pba = forward.row(Block::BA, s);
            let pbb = forward.row(Block::BB, s);
            for row in rows.iter_mut().filter(|r| r.row > s) {
                let a = [[row.acc[0][s], row.acc[1][s]], [row.acc[2][s], row.acc[3][s]]];
                let r = mul(&a, &pivots[s]);
                for b in Block::ALL {
                    out.set(b, row.row, s, r[b.row()][b.col()]);
                }
                let (raa, rab, rba, rbb) = (h * r[0][0], h * r[0][1], h * r[1][0], h * r[1][1]);
                let [acc_aa, acc_ab, acc_ba, acc_bb] = &mut row.acc;
                let m = s;
                for j in 0..m {
                    acc_aa[j] += raa * paa[j] + rab * pba[j];
                    acc_ab[j] += raa * pab[j] + rab * pbb[j];
                    acc_ba[j] += rba * paa[j] + rbb * pba[j];
                    acc_bb[j] += rba * pab[j] + rbb * pbb[j];
                }
            }
        }
        start = end;
    }

    if !out.is_finite() {
        return Err(Error::NotConverged { solver: "Volterra inversion", iterations: 1, residual: f64::INFINITY });
    }
    let sample: Vec<usize> = (0..=16).map(|k| k * n / 16).collect();
    let residual = volterra_residual_rows(forward, &out, &sample)?;
    if residual > tol {
        return Err(Error::NotConverged { solver: "Volterra inversion", iterations: 1, residual });
    }
    Ok(out)
}

/// Max-norm residual of the discrete identity
/// `R(x_i,ξ_j) − P(x_i,ξ_j) − Σ_s w_s R(x_i,s) P(s,ξ_j)` over all nodes.
pub fn volterra_residual(forward: &KernelTable, inverse: &KernelTable) -> Result<f64> {
    let rows: Vec<usize> = (0..=forward.cells()).collect();
    volterra_residual_rows(forward, inverse, &rows)
}

/// As [`volterra_residual`], restricted to the listed rows.
pub fn volterra_residual_rows(forward: &KernelTable, inverse: &KernelTable, rows: &[usize]) -> Result<f64> {
    forward.check_same_grid(inverse)?;
    let h = forward.grid().dx();
    let mut worst = 0.0_f64;
    for &i in rows {
        // Sum over s of w_s R(i,s) P(s,j), accumulated right-looking.
        let mut acc: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; i + 1]);
        for s in 0..=i {
            let r = mat_at(inverse, i, s);
            for j in 0..=s {
                let w = if j == s || s == i { 0.5 * h } else { h };
                let w = if j == s && s == i { 0.0 } else { w };
                let p = mat_at(forward, s, j);
                let rp = mul(&r, &p);
                for b in Block::ALL {
                    acc[b.index()][j] += w * rp[b.row()][b.col()];
                }
            }
        }
        for j in 0..=i {
            for b in Block::ALL {
                let res = inverse.get(b, i, j) - forward.get(b, i, j) - acc[b.index()][j];
                worst = worst.max(res.abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(n: usize, k: f64) -> KernelTable {
        KernelTable::from_fn(n, |b, _, _| if b == Block::AA { k } else { 0.0 })
    }

    #[test]
    fn zero_kernel_inverts_to_zero() {
        let r = invert_kernel(&KernelTable::zeros(32), 1e-12).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn scalar_exponential_solution() {
        let k = 0.5;
        let r = invert_kernel(&scalar(256, k), 1e-10).unwrap();
        let mut err = 0.0_f64;
        for i in 0..=256 {
            for j in 0..=i {
                let exact = k * (k * (i - j) as f64 / 256.0).exp();
                err = err.max((r.get(Block::AA, i, j) - exact).abs());
            }
        }
        assert!(err < 1e-6, "{err}");
        assert_eq!(r.get(Block::AB, 200, 3), 0.0);
    }

    #[test]
    fn identity_residual_is_rounding_level() {
        let p = KernelTable::from_fn(40, |b, x, xi| {
            (b.index() as f64 + 1.0) * (x - 0.3 * xi).sin() - 0.2 * x * xi
        });
        let r = invert_kernel(&p, 1e-11).unwrap();
        assert!(volterra_residual(&p, &r).unwrap() < 1e-13);
    }

    #[test]
    fn batch_boundaries_do_not_matter() {
        // 37 cells spans three batches with a ragged tail.
        let p = KernelTable::from_fn(37, |b, x, xi| if b.row() == b.col() { x + xi } else { x - xi - 1.0 });
        let r = invert_kernel(&p, 1e-11).unwrap();
        assert!(volterra_residual(&p, &r).unwrap() < 1e-13);
    }
}
