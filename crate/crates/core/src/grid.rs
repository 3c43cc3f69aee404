//! Node-centred rectangular grids with homogeneous Neumann boundaries.
//!
//! Nodes sit on the boundary faces. Every difference operator here is written
//! in flux form on the dual cells (half cells at the faces), which is the same
//! thing as the second-order central stencil with a reflected ghost node
//! `f(-h) = f(h)`. In that form the trapezoid-weighted sum of any operator
//! output telescopes to zero: the discrete divergence theorem holds exactly up
//! to round-off.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Rectangle `(0, L_0) x ... ` in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    extents: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(extents: &[f64], counts: &[usize]) -> Result<Arc<Grid>> {
        if extents.is_empty() || extents.len() > 2 {
            return Err(Error::invalid("grid.dim", "must be 1 or 2"));
        }
        if extents.len() != counts.len() {
            return Err(Error::invalid(
                "grid.counts",
                format!("{} counts for {} extents", counts.len(), extents.len()),
            ));
        }
        for (axis, (&len, &n)) in extents.iter().zip(counts).enumerate() {
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::invalid(
                    "grid.extents",
                    format!("axis {axis}: extent must be positive and finite, got {len}"),
                ));
            }
            if n < 3 {
                return Err(Error::invalid(
                    "grid.counts",
                    format!("axis {axis}: need at least 3 nodes, got {n}"),
                ));
            }
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(counts)
            .map(|(&len, &n)| len / (n - 1) as f64)
            .collect();

        let axis_weights: Vec<Vec<f64>> = counts
            .iter()
            .zip(&spacing)
            .map(|(&n, &h)| (0..n).map(|k| h * dual_fraction(k, n)).collect())
            .collect();
        let weights = match axis_weights.as_slice() {
            [wx] => wx.clone(),
            [wx, wy] => wx
                .iter()
                .flat_map(|a| wy.iter().map(move |b| a * b))
                .collect(),
            _ => unreachable!(),
        };

        Ok(Arc::new(Grid {
            extents: extents.to_vec(),
            counts: counts.to_vec(),
            spacing,
            weights,
        }))
    }

    pub fn interval(length: f64, count: usize) -> Result<Arc<Grid>> {
        Grid::new(&[length], &[count])
    }

    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Arc<Grid>> {
        Grid::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// `|Ω|`, the product of the extents.
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Trapezoid (tensor-product in 2D) quadrature weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical coordinates of node `index` (row-major, last axis fastest).
    pub fn coords(&self, index: usize) -> [f64; 2] {
        match self.dim() {
            1 => [index as f64 * self.spacing[0], 0.0],
            _ => {
                let ny = self.counts[1];
                [
                    (index / ny) as f64 * self.spacing[0],
                    (index % ny) as f64 * self.spacing[1],
                ]
            }
        }
    }

    /// Node coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis])
            .map(|k| k as f64 * self.spacing[axis])
            .collect()
    }

    /// Every grid line along `axis` as `(start, stride)`; each line has
    /// `counts[axis]` nodes.
    pub(crate) fn lines(&self, axis: usize) -> Vec<(usize, usize)> {
        match (self.dim(), axis) {
            (1, 0) => vec![(0, 1)],
            (2, 0) => {
                let ny = self.counts[1];
                (0..ny).map(|j| (j, ny)).collect()
            }
            (2, 1) => {
                let ny = self.counts[1];
                (0..self.counts[0]).map(|i| (i * ny, 1)).collect()
            }
            _ => panic!("axis {axis} out of range for a {}D grid", self.dim()),
        }
    }
}

/// Fraction of a full cell owned by node `k` of an `n`-node line.
pub(crate) fn dual_fraction(k: usize, n: usize) -> f64 {
    if k == 0 || k + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// A scalar function sampled at the nodes of a [`Grid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structural(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Field { grid, values })
    }

    /// Unchecked constructor for values produced by operators on finite data.
    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Field {
        let n = grid.len();
        Field {
            grid,
            values: vec![value; n],
        }
    }

    pub fn zeros(grid: Arc<Grid>) -> Field {
        Field::constant(grid, 0.0)
    }

    /// Samples `f` at node coordinates. In 1D the second coordinate is zero.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Field {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::Structural(
                "fields are defined on different grids".into(),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_raw(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `Δf` with homogeneous Neumann data via ghost reflection.
pub fn laplacian_neumann(f: &Field) -> Field {
    let grid = f.grid();
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        let n = grid.counts()[axis];
        let h = grid.spacing()[axis];
        for (start, stride) in grid.lines(axis) {
            let at = |k: usize| start + k * stride;
            let mut flux_left = 0.0;
            for k in 0..n {
                let flux_right = if k + 1 < n {
                    (f.values[at(k + 1)] - f.values[at(k)]) / h
                } else {
                    0.0
                };
                out[at(k)] += (flux_right - flux_left) / (h * dual_fraction(k, n));
                flux_left = flux_right;
            }
        }
    }
    Field::from_raw(grid.clone(), out)
}

/// `−χ ∇·(u ∇v)` in conservative face-flux form. The face value of `u` is the
/// arithmetic mean of its neighbours; boundary faces carry no flux.
pub fn chemotaxis_divergence(u: &Field, v: &Field, chi: f64) -> Result<Field> {
    u.check_same_grid(v)?;
    let grid = u.grid();
    let mut out = vec![0.0; grid.len()];
    if chi == 0.0 {
        return Ok(Field::from_raw(grid.clone(), out));
    }
    for axis in 0..grid.dim() {
        let n = grid.counts()[axis];
        let h = grid.spacing()[axis];
        for (start, stride) in grid.lines(axis) {
            let at = |k: usize| start + k * stride;
            let mut flux_left = 0.0;
            for k in 0..n {
                let flux_right = if k + 1 < n {
                    let (l, r) = (at(k), at(k + 1));
                    0.5 * (u.values[l] + u.values[r]) * (v.values[r] - v.values[l]) / h
                } else {
                    0.0
                };
                out[at(k)] -= chi * (flux_right - flux_left) / (h * dual_fraction(k, n));
                flux_left = flux_right;
            }
        }
    }
    Ok(Field::from_raw(grid.clone(), out))
}

/// Trapezoid rule; exact for fields affine along each axis.
pub fn integrate(f: &Field) -> f64 {
    f.grid()
        .weights()
        .iter()
        .zip(f.values())
        .map(|(w, v)| w * v)
        .sum()
}

/// `(‖f‖_{L²}, ‖f‖_∞)`.
pub fn norms(f: &Field) -> (f64, f64) {
    let sq: f64 = f
        .grid()
        .weights()
        .iter()
        .zip(f.values())
        .map(|(w, v)| w * v * v)
        .sum();
    (sq.sqrt(), f.max_abs())
}

/// `(f₊, f₋)` with `f₊ = max(0, f)` and `f₋ = max(0, −f)`.
pub fn pos_neg_parts(f: &Field) -> (Field, Field) {
    (f.map(|v| v.max(0.0)), f.map(|v| (-v).max(0.0)))
}

/// Scalar positive part.
pub fn pos(x: f64) -> f64 {
    x.max(0.0)
}

/// Scalar negative part, `max(0, −x)`.
pub fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}
