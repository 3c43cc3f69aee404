//! Implicit solves for `(I − a (Δ − c)) x = b` with the Neumann Laplacian of
//! [`crate::grid`].
//!
//! 1D uses the Thomas algorithm on the tridiagonal matrix. 2D uses fast
//! diagonalisation: the 1D Neumann operator with reflected ghosts has the
//! cosine modes `cos(kπj/(n−1))` as exact eigenvectors, so the tensor-product
//! system is diagonal in the product cosine basis.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Solves `x − a (Δx − c x) = b` on `grid` for `a ≥ 0`, `c ≥ 0`.
#[derive(Debug, Clone)]
pub struct NeumannSolver {
    grid: Arc<Grid>,
    bases: Vec<CosineBasis>,
}

#[derive(Debug, Clone)]
struct CosineBasis {
    n: usize,
    /// `eigvals[k]` of the 1D operator for mode `k`.
    eigvals: Vec<f64>,
    /// synthesis, `synth[j * n + k] = cos(kπj/(n−1))`
    synth: Vec<f64>,
    /// analysis (inverse of `synth`), row-major `[k][j]`
    analysis: Vec<f64>,
}

impl CosineBasis {
    fn new(n: usize, h: f64) -> Self {
        let m = (n - 1) as f64;
        let eigvals = (0..n)
            .map(|k| {
                let s = (k as f64 * PI / (2.0 * m)).sin();
                -4.0 * s * s / (h * h)
            })
            .collect();
        let mut synth = vec![0.0; n * n];
        let mut analysis = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                let c = (k as f64 * j as f64 * PI / m).cos();
                synth[j * n + k] = c;
                let wj = if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
                let norm = if k == 0 || k + 1 == n { m } else { m / 2.0 };
                analysis[k * n + j] = wj * c / norm;
            }
        }
        CosineBasis {
            n,
            eigvals,
            synth,
            analysis,
        }
    }
}

impl NeumannSolver {
    pub fn new(grid: Arc<Grid>) -> Self {
        let bases = if grid.dim() == 2 {
            (0..2)
                .map(|axis| CosineBasis::new(grid.counts()[axis], grid.spacing()[axis]))
                .collect()
        } else {
            Vec::new()
        };
        NeumannSolver { grid, bases }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn solve(&self, a: f64, c: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.grid.len() {
            return Err(Error::Structural(format!(
                "rhs has {} entries, grid has {} nodes",
                rhs.len(),
                self.grid.len()
            )));
        }
        if !(a >= 0.0 && c >= 0.0 && a.is_finite() && c.is_finite()) {
            return Err(Error::LinearSolve(format!(
                "operator is not an M-matrix for a = {a}, c = {c}"
            )));
        }
        let x = match self.grid.dim() {
            1 => self.solve_1d(a, c, rhs)?,
            _ => self.solve_2d(a, c, rhs),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("non-finite solution".into()));
        }
        Ok(x)
    }

    fn solve_1d(&self, a: f64, c: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let h = self.grid.spacing()[0];
        let s = a / (h * h);
        let diag = 1.0 + a * c + 2.0 * s;
        let lower = |i: usize| if i + 1 == n { -2.0 * s } else { -s };
        let upper = |i: usize| if i == 0 { -2.0 * s } else { -s };

        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = upper(0) / diag;
        dp[0] = rhs[0] / diag;
        for i in 1..n {
            let pivot = diag - lower(i) * cp[i - 1];
            if !(pivot > 0.0) {
                return Err(Error::LinearSolve(format!("zero pivot at row {i}")));
            }
            if i + 1 < n {
                cp[i] = upper(i) / pivot;
            }
            dp[i] = (rhs[i] - lower(i) * dp[i - 1]) / pivot;
        }
        let mut x = dp;
        for i in (0..n - 1).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        Ok(x)
    }

    fn solve_2d(&self, a: f64, c: f64, rhs: &[f64]) -> Vec<f64> {
        let (bx, by) = (&self.bases[0], &self.bases[1]);
        let (nx, ny) = (bx.n, by.n);
        let mut hat = transform(rhs, nx, ny, &bx.analysis, &by.analysis);
        for k in 0..nx {
            for m in 0..ny {
                hat[k * ny + m] /= 1.0 + a * c - a * (bx.eigvals[k] + by.eigvals[m]);
            }
        }
        transform(&hat, nx, ny, &bx.synth, &by.synth)
    }
}

/// `Mx · B · Myᵀ` for row-major `B` of shape `nx × ny`.
fn transform(b: &[f64], nx: usize, ny: usize, mx: &[f64], my: &[f64]) -> Vec<f64> {
    let mut tmp = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let row = &my[j * ny..(j + 1) * ny];
            tmp[i * ny + j] = b[i * ny..(i + 1) * ny]
                .iter()
                .zip(row)
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        for k in 0..nx {
            let w = mx[i * nx + k];
            if w == 0.0 {
                continue;
            }
            for j in 0..ny {
                out[i * ny + j] += w * tmp[k * ny + j];
            }
        }
    }
    out
}
