//! Direct sampling: index functions that image inclusions from the scattered
//! boundary data, and the initial guess built from them.
//!
//! Monopole probes (a fundamental solution centered at the sampling point)
//! respond to absorption inclusions, dipole probes (its gradient in the
//! sampling point) to diffusion inclusions.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{generate_measurements, solve_forward, ForwardProblem, DEFAULT_FORWARD_TOL};
use crate::grid::{BoundaryData, ScalarField, StaggeredGrid};

pub const DEFAULT_THETA: f64 = 0.55;
pub const DEFAULT_C_PHI: f64 = 20.0;

/// Normalized index functions, both with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexResult {
    /// Dipole index.
    pub phi_sigma: ScalarField,
    /// Monopole index.
    pub phi_mu: ScalarField,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubdomainMask {
    pub mask: Array2<bool>,
}

impl SubdomainMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn is_subset_of(&self, other: &SubdomainMask) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// Dirichlet traces of the background medium for each excitation, computed
/// with the same oversampling as the measurements so the difference only
/// carries the inclusions.
pub fn homogeneous_reference(
    background_sigma: f64,
    background_mu: f64,
    excitations: &[BoundaryData],
    oversample: usize,
) -> Result<Vec<BoundaryData>> {
    if !(background_sigma > 0.0) || !(background_mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "backgrounds must be positive, got sigma = {background_sigma}, mu = {background_mu}"
        )));
    }
    let Some(first) = excitations.first() else {
        return Ok(Vec::new());
    };
    let grid = first.grid();
    let sigma = ScalarField::constant(grid, background_sigma);
    let mu = ScalarField::constant(grid, background_mu);
    Ok(generate_measurements(&sigma, &mu, excitations, oversample)?
        .into_iter()
        .map(|m| m.dirichlet)
        .collect())
}

/// Which fundamental solution the probes are built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeFamily {
    /// `-ln|xi - x| / (2 pi)` and its gradient in `x`.
    FreeSpace,
    /// The discrete Neumann Green's function of the constant background
    /// medium, obtained by reciprocity from one forward solve per boundary
    /// sample, and its cell-centered gradient.
    Background { sigma: f64, mu: f64 },
}

/// Probe values at the boundary samples for every sampling point.
#[derive(Clone, Debug)]
pub struct Probes {
    family: ProbeFamily,
    boundary: StaggeredGrid,
    sampling: StaggeredGrid,
    green: Vec<ScalarField>,
}

impl Probes {
    pub fn free_space(boundary: StaggeredGrid, sampling: StaggeredGrid) -> Self {
        Probes {
            family: ProbeFamily::FreeSpace,
            boundary,
            sampling,
            green: Vec::new(),
        }
    }

    /// Background probes sample on the data grid itself.
    pub fn background(grid: StaggeredGrid, sigma: f64, mu: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "backgrounds must be positive, got sigma = {sigma}, mu = {mu}"
            )));
        }
        let s = ScalarField::constant(grid, sigma);
        let m = ScalarField::constant(grid, mu);
        let h = grid.spacing();
        let green = (0..grid.boundary_len())
            .into_par_iter()
            .map(|k| {
                let mut flux = BoundaryData::zeros(grid);
                flux.values_mut()[k] = 1.0 / h;
                solve_forward(&ForwardProblem::new(s.clone(), m.clone(), flux), DEFAULT_FORWARD_TOL)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Probes {
            family: ProbeFamily::Background { sigma, mu },
            boundary: grid,
            sampling: grid,
            green,
        })
    }

    pub fn family(&self) -> ProbeFamily {
        self.family
    }

    pub fn sampling_grid(&self) -> StaggeredGrid {
        self.sampling
    }

    /// Monopole and the two dipole probes at sampling cell `(i, j)`.
    fn at(&self, i: usize, j: usize) -> [Vec<f64>; 3] {
        let m = self.boundary.boundary_len();
        match self.family {
            ProbeFamily::FreeSpace => {
                let (x, y) = self.sampling.cell_center(i, j);
                let mut out = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
                for k in 0..m {
                    let (px, py) = self.boundary.boundary_point(k);
                    let (rx, ry) = (px - x, py - y);
                    let r2 = rx * rx + ry * ry;
                    out[0][k] = -0.25 * r2.ln() / PI;
                    out[1][k] = rx / (2.0 * PI * r2);
                    out[2][k] = ry / (2.0 * PI * r2);
                }
                out
            }
            ProbeFamily::Background { .. } => {
                let n = self.sampling.n();
                let h = self.sampling.spacing();
                let (il, ir) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let (jl, jr) = (j.saturating_sub(1), (j + 1).min(n - 1));
                let (hx, hy) = ((ir - il) as f64 * h, (jr - jl) as f64 * h);
                [
                    self.green.iter().map(|w| w.get(i, j)).collect(),
                    self.green.iter().map(|w| (w.get(ir, j) - w.get(il, j)) / hx).collect(),
                    self.green.iter().map(|w| (w.get(i, jr) - w.get(i, jl)) / hy).collect(),
                ]
            }
        }
    }
}

/// Monopole and dipole indices on the sampling grid of `probes`.
///
/// Each raw index is the normalized boundary correlation
/// `|<df, eta_x>| / (|df| |eta_x|)`; the dipole index takes the larger of its
/// two directions. Both are summed over excitations, clamped at zero and
/// scaled to a maximum of one.
pub fn compute_index(delta_f: &[BoundaryData], probes: &Probes) -> Result<IndexResult> {
    let data: Vec<&BoundaryData> = delta_f.iter().filter(|d| d.max_abs() > 0.0).collect();
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for d in &data {
        probes.boundary.check_same(&d.grid())?;
    }
    let norms: Vec<f64> = data.iter().map(|d| d.values().dot(d.values()).sqrt()).collect();

    let sampling = probes.sampling;
    let n = sampling.n();
    let raw: Vec<(f64, f64)> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let eta = probes.at(idx % n, idx / n);
            let eta_norm: Vec<f64> = eta.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let score = |d: &BoundaryData, norm: f64, c: usize| {
                if eta_norm[c] > 0.0 {
                    let pair: f64 = d.values().iter().zip(&eta[c]).map(|(a, b)| a * b).sum();
                    pair.abs() / (norm * eta_norm[c])
                } else {
                    0.0
                }
            };
            data.iter().zip(&norms).fold((0.0, 0.0), |(dip, mono), (d, &norm)| {
                (dip + score(d, norm, 1).max(score(d, norm, 2)), mono + score(d, norm, 0))
            })
        })
        .collect();

    let field = |pick: fn(&(f64, f64)) -> f64| {
        let values = Array2::from_shape_fn((n, n), |(i, j)| pick(&raw[j * n + i]).max(0.0));
        normalize(ScalarField::from_array(sampling, values).expect("shape matches grid"))
    };
    Ok(IndexResult {
        phi_sigma: field(|r| r.0),
        phi_mu: field(|r| r.1),
    })
}

fn normalize(mut phi: ScalarField) -> ScalarField {
    let max = phi.max();
    if max > 0.0 {
        phi.scale(1.0 / max);
    }
    phi
}

/// Cells where `phi >= theta`. An empty mask is returned as is (with a
/// warning); the initial guess then stays at the background.
pub fn threshold_subdomain(phi: &ScalarField, theta: f64) -> Result<SubdomainMask> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    let mask = SubdomainMask {
        mask: phi.values().mapv(|v| v >= theta),
    };
    if mask.is_empty() {
        log::warn!("index below theta = {theta} everywhere; subdomain is empty");
    }
    Ok(mask)
}

/// `c_phi * phi` on the mask, `background` elsewhere.
pub fn build_initial_guess(
    phi: &ScalarField,
    mask: &SubdomainMask,
    c_phi: f64,
    background: f64,
) -> Result<ScalarField> {
    if !(c_phi > 0.0) {
        return Err(Error::InvalidArgument(format!("c_phi must be positive, got {c_phi}")));
    }
    let n = phi.grid().n();
    if mask.mask.dim() != (n, n) {
        return Err(Error::InvalidArgument("mask does not match the index grid".into()));
    }
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        if mask.mask[[i, j]] {
            c_phi * phi.get(i, j)
        } else {
            background
        }
    });
    ScalarField::from_array(phi.grid(), values)
}
