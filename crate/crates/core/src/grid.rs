//! Uniform staggered (MAC) grid on the unit square.
//!
//! Scalars live at cell centers `((i + 1/2) h, (j + 1/2) h)`, the first array
//! index running along `x`. Fluxes live on faces: `x`-components on vertical
//! faces `(i h, (j + 1/2) h)` with `i = 0..=N`, `y`-components on horizontal
//! faces. Boundary samples are ordered bottom, right, top, left, each side
//! running left-to-right or bottom-to-top.
//!
//! With the boundary-normal flux entries held at zero, [`gradient_to_faces`]
//! and `-`[`divergence_to_cells`] are exact adjoints, and
//! [`neumann_to_source`] is exactly the adjoint of [`boundary_trace`] under the
//! cell and boundary inner products.

use ndarray::{Array1, Array2, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StaggeredGrid {
    n: usize,
}

impl StaggeredGrid {
    pub const MIN_CELLS: usize = 4;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::GridTooSmall(n));
        }
        Ok(StaggeredGrid { n })
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    }

    /// Number of boundary samples, `4N`.
    pub fn boundary_len(&self) -> usize {
        4 * self.n
    }

    /// Cell adjacent to boundary sample `k`.
    pub fn boundary_cell(&self, k: usize) -> (usize, usize) {
        let n = self.n;
        let (side, t) = (k / n, k % n);
        match side {
            0 => (t, 0),
            1 => (n - 1, t),
            2 => (t, n - 1),
            3 => (0, t),
            _ => panic!("boundary index {k} out of range for N = {n}"),
        }
    }

    /// Face midpoint of boundary sample `k`.
    pub fn boundary_point(&self, k: usize) -> (f64, f64) {
        let n = self.n;
        let h = self.spacing();
        let (side, t) = (k / n, k % n);
        let s = (t as f64 + 0.5) * h;
        match side {
            0 => (s, 0.0),
            1 => (1.0, s),
            2 => (s, 1.0),
            3 => (0.0, s),
            _ => panic!("boundary index {k} out of range for N = {n}"),
        }
    }

    /// Outward unit normal at boundary sample `k`.
    pub fn boundary_normal(&self, k: usize) -> (f64, f64) {
        match k / self.n {
            0 => (0.0, -1.0),
            1 => (1.0, 0.0),
            2 => (0.0, 1.0),
            _ => (-1.0, 0.0),
        }
    }

    pub(crate) fn check_same(&self, other: &StaggeredGrid) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }
}

/// Cell-centered scalar values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: StaggeredGrid,
    values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: StaggeredGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: Array2::from_elem((grid.n, grid.n), c),
        }
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
            let (x, y) = grid.cell_center(i, j);
            f(x, y)
        });
        ScalarField { grid, values }
    }

    pub fn from_array(grid: StaggeredGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n, grid.n) {
            return Err(Error::InvalidArgument(format!(
                "scalar field shape {:?} does not match N = {}",
                values.dim(),
                grid.n
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn grid(&self) -> StaggeredGrid {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Cell inner product, weighted by `h^2`.
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self.raw_dot(other) * self.grid.spacing().powi(2))
    }

    pub fn norm_sq(&self) -> f64 {
        self.raw_dot(self) * self.grid.spacing().powi(2)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub(crate) fn raw_dot(&self, other: &ScalarField) -> f64 {
        Zip::from(&self.values)
            .and(&other.values)
            .fold(0.0, |acc, &a, &b| acc + a * b)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        Zip::from(&mut self.values)
            .and(&x.values)
            .for_each(|s, &v| *s += a * v);
    }

    pub fn scale(&mut self, a: f64) {
        self.values.mapv_inplace(|v| v * a);
    }

    pub fn scaled(&self, a: f64) -> ScalarField {
        self.map(|v| v * a)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.mapv(f),
        }
    }

    /// `a * self + b * other`
    pub fn lincomb(&self, a: f64, b: f64, other: &ScalarField) -> ScalarField {
        let mut out = self.scaled(a);
        out.axpy(b, other);
        out
    }

    pub fn hadamard(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: &self.values * &other.values,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Integral over the unit square.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.spacing().powi(2)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Face-centered vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    grid: StaggeredGrid,
    x: Array2<f64>,
    y: Array2<f64>,
}

impl FluxField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: StaggeredGrid, c: f64) -> Self {
        let n = grid.n;
        FluxField {
            grid,
            x: Array2::from_elem((n + 1, n), c),
            y: Array2::from_elem((n, n + 1), c),
        }
    }

    pub fn from_arrays(grid: StaggeredGrid, x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        let n = grid.n;
        if x.dim() != (n + 1, n) || y.dim() != (n, n + 1) {
            return Err(Error::InvalidArgument(format!(
                "flux shapes {:?}/{:?} do not match N = {n}",
                x.dim(),
                y.dim()
            )));
        }
        Ok(FluxField { grid, x, y })
    }

    /// Samples a vector function at the face midpoints.
    pub fn from_fn(
        grid: StaggeredGrid,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let n = grid.n;
        let h = grid.spacing();
        FluxField {
            grid,
            x: Array2::from_shape_fn((n + 1, n), |(i, j)| {
                fx(i as f64 * h, (j as f64 + 0.5) * h)
            }),
            y: Array2::from_shape_fn((n, n + 1), |(i, j)| {
                fy((i as f64 + 0.5) * h, j as f64 * h)
            }),
        }
    }

    pub fn grid(&self) -> StaggeredGrid {
        self.grid
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn x_mut(&mut self) -> &mut Array2<f64> {
        &mut self.x
    }

    pub fn y_mut(&mut self) -> &mut Array2<f64> {
        &mut self.y
    }

    /// Sets the boundary-normal entries to zero (`p . nu = 0`).
    pub fn clear_boundary(&mut self) {
        let n = self.grid.n;
        for j in 0..n {
            self.x[[0, j]] = 0.0;
            self.x[[n, j]] = 0.0;
        }
        for i in 0..n {
            self.y[[i, 0]] = 0.0;
            self.y[[i, n]] = 0.0;
        }
    }

    pub fn is_admissible(&self) -> bool {
        let n = self.grid.n;
        (0..n).all(|j| self.x[[0, j]] == 0.0 && self.x[[n, j]] == 0.0)
            && (0..n).all(|i| self.y[[i, 0]] == 0.0 && self.y[[i, n]] == 0.0)
    }

    /// Face inner product, weighted by `h^2`.
    pub fn dot(&self, other: &FluxField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self.raw_dot(other) * self.grid.spacing().powi(2))
    }

    pub fn norm_sq(&self) -> f64 {
        self.raw_dot(self) * self.grid.spacing().powi(2)
    }

    pub(crate) fn raw_dot(&self, other: &FluxField) -> f64 {
        let dx = Zip::from(&self.x)
            .and(&other.x)
            .fold(0.0, |acc, &a, &b| acc + a * b);
        let dy = Zip::from(&self.y)
            .and(&other.y)
            .fold(0.0, |acc, &a, &b| acc + a * b);
        dx + dy
    }

    pub fn axpy(&mut self, a: f64, other: &FluxField) {
        Zip::from(&mut self.x)
            .and(&other.x)
            .for_each(|s, &v| *s += a * v);
        Zip::from(&mut self.y)
            .and(&other.y)
            .for_each(|s, &v| *s += a * v);
    }

    pub fn scale(&mut self, a: f64) {
        self.x.mapv_inplace(|v| v * a);
        self.y.mapv_inplace(|v| v * a);
    }

    pub fn hadamard(&self, other: &FluxField) -> FluxField {
        FluxField {
            grid: self.grid,
            x: &self.x * &other.x,
            y: &self.y * &other.y,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }
}

/// Samples at the `4N` boundary face midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    grid: StaggeredGrid,
    values: Array1<f64>,
}

impl BoundaryData {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: StaggeredGrid, c: f64) -> Self {
        BoundaryData {
            grid,
            values: Array1::from_elem(grid.boundary_len(), c),
        }
    }

    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array1::from_shape_fn(grid.boundary_len(), |k| {
            let (x, y) = grid.boundary_point(k);
            f(x, y)
        });
        BoundaryData { grid, values }
    }

    pub fn from_vec(grid: StaggeredGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.boundary_len() {
            return Err(Error::InvalidArgument(format!(
                "boundary data has {} entries, expected {}",
                values.len(),
                grid.boundary_len()
            )));
        }
        Ok(BoundaryData {
            grid,
            values: Array1::from(values),
        })
    }

    pub fn grid(&self) -> StaggeredGrid {
        self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    /// Boundary inner product, weighted by `h`.
    pub fn dot(&self, other: &BoundaryData) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self.values.dot(&other.values) * self.grid.spacing())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.dot(&self.values) * self.grid.spacing()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn axpy(&mut self, a: f64, other: &BoundaryData) {
        self.values.scaled_add(a, &other.values);
    }

    pub fn lincomb(&self, a: f64, b: f64, other: &BoundaryData) -> BoundaryData {
        let mut out = self.clone();
        out.values.mapv_inplace(|v| v * a);
        out.axpy(b, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.spacing()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Discrete gradient on faces. Boundary-normal faces hold zero.
pub fn gradient_to_faces(u: &ScalarField) -> FluxField {
    let grid = u.grid;
    let n = grid.n;
    let inv_h = grid.n as f64;
    let v = &u.values;
    let mut out = FluxField::zeros(grid);
    for i in 1..n {
        for j in 0..n {
            out.x[[i, j]] = (v[[i, j]] - v[[i - 1, j]]) * inv_h;
        }
    }
    for i in 0..n {
        for j in 1..n {
            out.y[[i, j]] = (v[[i, j]] - v[[i, j - 1]]) * inv_h;
        }
    }
    out
}

/// Discrete divergence of a face field, evaluated at cell centers.
pub fn divergence_to_cells(p: &FluxField) -> ScalarField {
    let grid = p.grid;
    let n = grid.n;
    let inv_h = grid.n as f64;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        (p.x[[i + 1, j]] - p.x[[i, j]] + p.y[[i, j + 1]] - p.y[[i, j]]) * inv_h
    });
    ScalarField { grid, values }
}

/// Arithmetic mean of the two cells sharing each face; boundary faces copy
/// their single neighbor.
pub fn average_to_faces(q: &ScalarField) -> FluxField {
    let grid = q.grid;
    let n = grid.n;
    let v = &q.values;
    let x = Array2::from_shape_fn((n + 1, n), |(i, j)| {
        if i == 0 {
            v[[0, j]]
        } else if i == n {
            v[[n - 1, j]]
        } else {
            0.5 * (v[[i - 1, j]] + v[[i, j]])
        }
    });
    let y = Array2::from_shape_fn((n, n + 1), |(i, j)| {
        if j == 0 {
            v[[i, 0]]
        } else if j == n {
            v[[i, n - 1]]
        } else {
            0.5 * (v[[i, j - 1]] + v[[i, j]])
        }
    });
    FluxField { grid, x, y }
}

/// Exact transpose of [`average_to_faces`] (faces and cells carry the same
/// `h^2` weight, so this is also the adjoint).
pub fn average_to_faces_adjoint(w: &FluxField) -> ScalarField {
    let grid = w.grid;
    let n = grid.n;
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        out[[0, j]] += w.x[[0, j]];
        out[[n - 1, j]] += w.x[[n, j]];
        for i in 1..n {
            let half = 0.5 * w.x[[i, j]];
            out[[i - 1, j]] += half;
            out[[i, j]] += half;
        }
    }
    for i in 0..n {
        out[[i, 0]] += w.y[[i, 0]];
        out[[i, n - 1]] += w.y[[i, n]];
        for j in 1..n {
            let half = 0.5 * w.y[[i, j]];
            out[[i, j - 1]] += half;
            out[[i, j]] += half;
        }
    }
    ScalarField { grid, values: out }
}

/// Piecewise-constant trace: the boundary-adjacent cell values.
pub fn boundary_trace(u: &ScalarField) -> BoundaryData {
    let grid = u.grid;
    let values = Array1::from_shape_fn(grid.boundary_len(), |k| {
        let (i, j) = grid.boundary_cell(k);
        u.values[[i, j]]
    });
    BoundaryData { grid, values }
}

/// Transpose of [`boundary_trace`]: scatters each boundary sample into its
/// adjacent cell. Corner cells receive two samples.
pub fn trace_transpose(b: &BoundaryData) -> ScalarField {
    let grid = b.grid;
    let mut out = ScalarField::zeros(grid);
    for (k, &v) in b.values.iter().enumerate() {
        let (i, j) = grid.boundary_cell(k);
        out.values[[i, j]] += v;
    }
    out
}

/// Riesz representative of the boundary functional `v -> <h, trace(v)>`:
/// `h_k / h` on the boundary layer of cells, zero in the interior.
pub fn neumann_to_source(h_data: &BoundaryData) -> ScalarField {
    let mut out = trace_transpose(h_data);
    out.scale(h_data.grid.n as f64);
    out
}
