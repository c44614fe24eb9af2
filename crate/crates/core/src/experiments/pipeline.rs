//! The two stages wired together for the built-in examples.

use crate::dsm::{
    build_initial_guess, compute_index, homogeneous_reference, threshold_subdomain, IndexResult,
    Probes, SubdomainMask, DEFAULT_C_PHI, DEFAULT_THETA,
};
use crate::error::{Error, Result};
use crate::experiments::noise::add_noise;
use crate::experiments::setups::ExampleSpec;
use crate::forward::{default_excitations, generate_measurements, MeasurementSet};
use crate::grid::{ScalarField, StaggeredGrid};
use crate::model::CoefficientPair;
use crate::optimizer::{adi_reconstruct, AdiConfig, ReconstructionReport};
use crate::regularization::RegConfig;

/// Synthetic data for one example: truth on the inversion grid and noisy
/// measurements.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub truth: CoefficientPair,
    pub measurements: Vec<MeasurementSet>,
}

/// Rasterizes `spec` on an `n x n` grid, simulates its excitations on a grid
/// `oversample` times finer and perturbs each Dirichlet trace with noise of
/// level `noise` (excitation `k` uses seed `seed + k`).
pub fn synthesize(spec: &ExampleSpec, n: usize, oversample: usize, noise: f64, seed: u64) -> Result<SyntheticData> {
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {noise}")));
    }
    let grid = StaggeredGrid::new(n)?;
    let truth = spec.rasterize(grid);
    let excitations = default_excitations(grid, spec.excitation_count);
    let mut measurements = generate_measurements(&truth.sigma, &truth.mu, &excitations, oversample)?;
    for (k, m) in measurements.iter_mut().enumerate() {
        m.dirichlet = add_noise(&m.dirichlet, noise, seed.wrapping_add(k as u64));
    }
    Ok(SyntheticData { truth, measurements })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DsmSettings {
    pub theta: f64,
    pub c_phi: f64,
    /// Oversampling of the background reference; match the data's.
    pub oversample: usize,
    pub backgrounds: (f64, f64),
    /// Box the initial guess is clipped into.
    pub bounds: (f64, f64),
}

impl Default for DsmSettings {
    fn default() -> Self {
        DsmSettings {
            theta: DEFAULT_THETA,
            c_phi: DEFAULT_C_PHI,
            oversample: 1,
            backgrounds: (1.0, 1.0),
            bounds: (0.5, 30.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DsmOutcome {
    pub index: IndexResult,
    pub mask_sigma: SubdomainMask,
    pub mask_mu: SubdomainMask,
    /// Box-feasible starting point for the second stage.
    pub initial: CoefficientPair,
}

/// Stage one. With `mu_known`, the returned initial `mu` is the given field
/// instead of the one built from the monopole index.
pub fn run_dsm(
    measurements: &[MeasurementSet],
    settings: &DsmSettings,
    mu_known: Option<&ScalarField>,
) -> Result<DsmOutcome> {
    let Some(first) = measurements.first() else {
        return Err(Error::InvalidArgument("at least one measurement set is required".into()));
    };
    let grid = first.grid();
    let (bg_sigma, bg_mu) = settings.backgrounds;
    let excitations: Vec<_> = measurements.iter().map(|m| m.neumann.clone()).collect();
    let reference = homogeneous_reference(bg_sigma, bg_mu, &excitations, settings.oversample)?;
    let delta: Vec<_> = measurements
        .iter()
        .zip(&reference)
        .map(|(m, f0)| m.dirichlet.lincomb(1.0, -1.0, f0))
        .collect();
    let probes = Probes::background(grid, bg_sigma, bg_mu)?;
    let index = compute_index(&delta, &probes)?;
    let mask_sigma = threshold_subdomain(&index.phi_sigma, settings.theta)?;
    let mask_mu = threshold_subdomain(&index.phi_mu, settings.theta)?;
    let clip = |f: ScalarField| f.map(|v| v.clamp(settings.bounds.0, settings.bounds.1));
    let sigma = clip(build_initial_guess(&index.phi_sigma, &mask_sigma, settings.c_phi, bg_sigma)?);
    let mu = match mu_known {
        Some(mu) => mu.clone(),
        None => clip(build_initial_guess(&index.phi_mu, &mask_mu, settings.c_phi, bg_mu)?),
    };
    Ok(DsmOutcome {
        index,
        mask_sigma,
        mask_mu,
        initial: CoefficientPair { sigma, mu },
    })
}

/// Everything a full run of one example produces.
#[derive(Clone, Debug)]
pub struct ExampleRun {
    pub data: SyntheticData,
    pub dsm: DsmOutcome,
    pub report: ReconstructionReport,
}

/// Options of [`run_example`]; `None` regularization entries fall back to
/// the example's table for the chosen noise column.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub n: usize,
    pub oversample: usize,
    pub noise: f64,
    pub seed: u64,
    pub theta: f64,
    pub c_phi: f64,
    pub max_outer: usize,
    pub reg_sigma: Option<(f64, f64)>,
    pub reg_mu: Option<(f64, f64)>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            n: 50,
            oversample: 2,
            noise: 0.0,
            seed: 0,
            theta: DEFAULT_THETA,
            c_phi: DEFAULT_C_PHI,
            max_outer: 50,
            reg_sigma: None,
            reg_mu: None,
        }
    }
}

/// Regularizers for a run: the example's table column (noisy when
/// `noise > 0`), overridden entry by entry.
pub fn regularizers(
    spec: &ExampleSpec,
    noise: f64,
    sigma: Option<(f64, f64)>,
    mu: Option<(f64, f64)>,
) -> Result<(RegConfig, Option<RegConfig>)> {
    let (default_sigma, default_mu) = spec.reg_configs(noise > 0.0)?;
    let (lo, hi) = spec.bounds();
    let reg_sigma = match sigma {
        Some((a, b)) => RegConfig::new(a, b, lo, hi)?,
        None => default_sigma,
    };
    let reg_mu = match (default_mu, mu) {
        (Some(_), Some((a, b))) => Some(RegConfig::new(a, b, lo, hi)?),
        (d, _) => d,
    };
    Ok((reg_sigma, reg_mu))
}

/// Synthesizes data, runs both stages and returns all intermediate results.
pub fn run_example(spec: &ExampleSpec, opts: &RunOptions) -> Result<ExampleRun> {
    let data = synthesize(spec, opts.n, opts.oversample, opts.noise, opts.seed)?;
    let (reg_sigma, reg_mu) = regularizers(spec, opts.noise, opts.reg_sigma, opts.reg_mu)?;
    let settings = DsmSettings {
        theta: opts.theta,
        c_phi: opts.c_phi,
        oversample: opts.oversample,
        backgrounds: spec.backgrounds,
        bounds: spec.bounds(),
    };
    let mu_known = if reg_mu.is_none() { Some(&data.truth.mu) } else { None };
    let dsm = run_dsm(&data.measurements, &settings, mu_known)?;
    let mut cfg = AdiConfig::new(reg_sigma, reg_mu);
    cfg.max_outer = opts.max_outer;
    let report = adi_reconstruct(&data.measurements, &dsm.initial, &cfg)?;
    Ok(ExampleRun { data, dsm, report })
}
