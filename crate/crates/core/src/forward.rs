//! Forward model `-div(sigma grad u) + mu u = g` with Neumann flux data, used
//! to synthesize measurements.
//!
//! The discretization is the five-point staggered stencil with face-averaged
//! `sigma`. Boundary flux enters as a source in the boundary layer of cells
//! through [`neumann_to_source`], so the discrete solution is an exact zero of
//! the first-order residuals used by the reconstruction.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    average_to_faces, boundary_trace, divergence_to_cells, gradient_to_faces, neumann_to_source,
    BoundaryData, FluxField, ScalarField, StaggeredGrid,
};
use crate::linalg::pcg;

/// Relative residual used for data synthesis.
pub const DEFAULT_FORWARD_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ForwardProblem {
    pub sigma: ScalarField,
    pub mu: ScalarField,
    pub neumann: BoundaryData,
    pub volumetric_source: Option<ScalarField>,
}

impl ForwardProblem {
    pub fn new(sigma: ScalarField, mu: ScalarField, neumann: BoundaryData) -> Self {
        ForwardProblem {
            sigma,
            mu,
            neumann,
            volumetric_source: None,
        }
    }

    pub fn with_source(mut self, g: ScalarField) -> Self {
        self.volumetric_source = Some(g);
        self
    }

    pub fn grid(&self) -> StaggeredGrid {
        self.sigma.grid()
    }

    fn validate(&self) -> Result<()> {
        let grid = self.grid();
        grid.check_same(&self.mu.grid())?;
        grid.check_same(&self.neumann.grid())?;
        if let Some(g) = &self.volumetric_source {
            grid.check_same(&g.grid())?;
        }
        if !(self.sigma.min() > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(
                "sigma must be finite and strictly positive".into(),
            ));
        }
        if !(self.mu.min() >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(
                "mu must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Total right-hand side: volumetric source plus the Neumann flux layer.
    fn rhs(&self) -> ScalarField {
        let mut b = neumann_to_source(&self.neumann);
        if let Some(g) = &self.volumetric_source {
            b.axpy(1.0, g);
        }
        b
    }
}

/// `-div(s grad u) + mu u` with `s` the face-averaged diffusion.
pub(crate) fn apply_elliptic(face_sigma: &FluxField, mu: &ScalarField, u: &ScalarField) -> ScalarField {
    let flux = face_sigma.hadamard(&gradient_to_faces(u));
    let mut out = divergence_to_cells(&flux);
    out.scale(-1.0);
    out.axpy(1.0, &mu.hadamard(u));
    out
}

fn elliptic_diagonal(face_sigma: &FluxField, mu: &ScalarField) -> ScalarField {
    let grid = mu.grid();
    let n = grid.n();
    let inv_h2 = (n * n) as f64;
    let (sx, sy) = (face_sigma.x(), face_sigma.y());
    let d = Array2::from_shape_fn((n, n), |(i, j)| {
        let mut acc = mu.get(i, j);
        if i > 0 {
            acc += sx[[i, j]] * inv_h2;
        }
        if i + 1 < n {
            acc += sx[[i + 1, j]] * inv_h2;
        }
        if j > 0 {
            acc += sy[[i, j]] * inv_h2;
        }
        if j + 1 < n {
            acc += sy[[i, j + 1]] * inv_h2;
        }
        acc
    });
    ScalarField::from_array(grid, d).expect("shape matches grid")
}

/// Solves the forward problem to relative residual `tol` using diagonally
/// preconditioned CG (iteration cap `20 N^2`).
pub fn solve_forward(problem: &ForwardProblem, tol: f64) -> Result<ScalarField> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    problem.validate()?;
    let grid = problem.grid();
    let n = grid.n();
    let b = problem.rhs();

    let pure_neumann = problem.mu.max() == 0.0;
    if pure_neumann {
        let net = b.integral();
        let scale = b.map(f64::abs).integral().max(f64::MIN_POSITIVE);
        if net.abs() > 1e-12 * scale {
            return Err(Error::Incompatible(net));
        }
    }

    let face_sigma = average_to_faces(&problem.sigma);
    let diag = elliptic_diagonal(&face_sigma, &problem.mu);
    let mut u = ScalarField::zeros(grid);
    pcg(
        |v: &ScalarField| apply_elliptic(&face_sigma, &problem.mu, v),
        |r: &ScalarField| {
            let mut z = r.clone();
            ndarray::Zip::from(z.values_mut())
                .and(diag.values())
                .for_each(|z, &d| *z /= d);
            z
        },
        &b,
        &mut u,
        tol,
        20 * n * n,
    )?;
    if pure_neumann {
        // gauge: zero mean
        let mean = u.integral();
        u.values_mut().mapv_inplace(|v| v - mean);
    }
    Ok(u)
}

/// One excitation: applied Neumann flux `h` and observed Dirichlet trace `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub neumann: BoundaryData,
    pub dirichlet: BoundaryData,
}

impl MeasurementSet {
    pub fn grid(&self) -> StaggeredGrid {
        self.neumann.grid()
    }

    /// Volumetric source equivalent of the Neumann data.
    pub fn source(&self) -> ScalarField {
        neumann_to_source(&self.neumann)
    }
}

/// Default excitation patterns: the first applies `+1` on the left side and
/// `-1` on the right; the second is the same pattern rotated by 90 degrees
/// (`+1` bottom, `-1` top). Further patterns alternate these.
pub fn default_excitations(grid: StaggeredGrid, count: usize) -> Vec<BoundaryData> {
    let n = grid.n();
    (0..count)
        .map(|e| {
            let mut h = BoundaryData::zeros(grid);
            let (plus, minus) = if e % 2 == 0 { (3, 1) } else { (0, 2) };
            let v = h.values_mut();
            for t in 0..n {
                v[plus * n + t] = 1.0;
                v[minus * n + t] = -1.0;
            }
            h
        })
        .collect()
}

/// Piecewise-constant prolongation onto a grid `factor` times finer.
pub fn refine_field(q: &ScalarField, factor: usize) -> Result<ScalarField> {
    let fine = StaggeredGrid::new(q.grid().n() * factor)?;
    let nf = fine.n();
    let values = Array2::from_shape_fn((nf, nf), |(i, j)| q.get(i / factor, j / factor));
    ScalarField::from_array(fine, values)
}

/// Repeats each boundary sample `factor` times along its side.
pub fn refine_boundary(b: &BoundaryData, factor: usize) -> Result<BoundaryData> {
    let n = b.grid().n();
    let fine = StaggeredGrid::new(n * factor)?;
    let values = (0..fine.boundary_len())
        .map(|k| {
            let (side, t) = (k / (n * factor), k % (n * factor));
            b.values()[side * n + t / factor]
        })
        .collect();
    BoundaryData::from_vec(fine, values)
}

/// Block average of a fine field onto `coarse`.
pub fn restrict_field(u: &ScalarField, coarse: StaggeredGrid) -> Result<ScalarField> {
    let nf = u.grid().n();
    let nc = coarse.n();
    if nf % nc != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot restrict N = {nf} onto N = {nc}"
        )));
    }
    let r = nf / nc;
    let w = 1.0 / (r * r) as f64;
    let values = Array2::from_shape_fn((nc, nc), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..r {
            for b in 0..r {
                acc += u.get(i * r + a, j * r + b);
            }
        }
        acc * w
    });
    ScalarField::from_array(coarse, values)
}

/// Synthesizes `(h, f)` pairs. Each excitation is solved on a grid refined by
/// `oversample`; the observed trace is the boundary-layer trace of the block
/// averaged solution, which agrees with the coarse trace definition.
pub fn generate_measurements(
    true_sigma: &ScalarField,
    true_mu: &ScalarField,
    excitations: &[BoundaryData],
    oversample: usize,
) -> Result<Vec<MeasurementSet>> {
    if oversample == 0 {
        return Err(Error::InvalidArgument("oversample must be at least 1".into()));
    }
    let grid = true_sigma.grid();
    grid.check_same(&true_mu.grid())?;
    let sigma = refine_field(true_sigma, oversample)?;
    let mu = refine_field(true_mu, oversample)?;
    excitations
        .par_iter()
        .map(|h| {
            grid.check_same(&h.grid())?;
            let problem = ForwardProblem::new(sigma.clone(), mu.clone(), refine_boundary(h, oversample)?);
            let u = solve_forward(&problem, DEFAULT_FORWARD_TOL)?;
            let coarse_u = restrict_field(&u, grid)?;
            Ok(MeasurementSet {
                neumann: h.clone(),
                dirichlet: boundary_trace(&coarse_u),
            })
        })
        .collect()
}
