//! Alternating minimization of the total least-squares functional.
//!
//! Each outer iteration first minimizes over the states `(u, p)` (one
//! independent linear least-squares problem per excitation, solved by
//! Jacobi-preconditioned CG on the normal equations) and then over the
//! coefficients (two independent problems for `sigma` and `mu`, solved by a
//! monotone accelerated proximal gradient method with periodic Newton steps
//! on the cells the prox step leaves free). Both blocks are warm started, so
//! the functional never increases.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{solve_forward, ForwardProblem, MeasurementSet, DEFAULT_FORWARD_TOL};
use crate::grid::{
    average_to_faces, average_to_faces_adjoint, boundary_trace, divergence_to_cells,
    gradient_to_faces, FluxField, ScalarField,
};
use crate::linalg::{pcg, CgOutcome};
use crate::model::{coefficient_increment_norm_sq, eval_j, CoefficientPair, StateOperator, StatePair};
use crate::regularization::{
    bregman_distance, eval_h1, eval_phi, h1_gradient, prox_l1_box, select_subgradient, RegConfig,
};

/// Power iterations used to estimate the coefficient-block Lipschitz constant.
const POWER_ITERATIONS: usize = 20;
/// Safety factor applied to the power-iteration estimate.
const LIPSCHITZ_MARGIN: f64 = 1.05;
/// Prox-gradient iterations between Newton refinements.
const NEWTON_EVERY: usize = 5;
const NEWTON_CG_TOL: f64 = 1e-13;
const NEWTON_BACKTRACKS: usize = 12;
const MAX_LIPSCHITZ: f64 = 1e30;
/// Relative change of J below which the run is declared stagnant.
const STAGNATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AdiConfig {
    pub max_outer: usize,
    pub state_tol: f64,
    pub coeff_inner_max: usize,
    pub coeff_tol: f64,
    pub reg_sigma: RegConfig,
    /// `None` keeps `mu` fixed at its initial value.
    pub reg_mu: Option<RegConfig>,
    /// Stop early once successive J values agree to `1e-12 (1 + J_0)`.
    pub stop_on_stagnation: bool,
}

impl AdiConfig {
    pub fn new(reg_sigma: RegConfig, reg_mu: Option<RegConfig>) -> Self {
        AdiConfig {
            max_outer: 50,
            state_tol: 1e-8,
            coeff_inner_max: 200,
            coeff_tol: 1e-8,
            reg_sigma,
            reg_mu,
            stop_on_stagnation: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be at least 1".into()));
        }
        if !(self.state_tol > 0.0) || !(self.coeff_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Stagnation,
    SubproblemFailure,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::Stagnation => "stagnation",
            StopReason::SubproblemFailure => "subproblem_failure",
        })
    }
}

/// Diagnostics of one outer iteration `k -> k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// `J(v_{k+1}, q_k)`
    pub j_after_state: f64,
    /// `J(v_{k+1}, q_{k+1})`
    pub j_after_coeff: f64,
    pub state_iterations: usize,
    /// Largest normal-equation relative residual over the excitations.
    pub state_residual: f64,
    pub coeff_iterations: usize,
    /// Relative prox fixed-point residual of the coefficient block.
    pub coeff_residual: f64,
    /// `E(q_k, q_{k+1})`, summed over `sigma` and `mu`.
    pub bregman: f64,
    /// `|L_{q_k}(v_{k+1} - v_k)|^2 + |C(u_{k+1} - u_k)|^2`
    pub state_decrement: f64,
    /// `|L(v_{k+1}, q_{k+1}) - L(v_{k+1}, q_k)|^2`
    pub coeff_decrement: f64,
}

#[derive(Clone, Debug)]
pub struct ReconstructionReport {
    pub states: Vec<StatePair>,
    pub coefficients: CoefficientPair,
    /// `j_history[0]` is the initial value; entry `k` is J after outer
    /// iteration `k`.
    pub j_history: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub failure: Option<String>,
    /// Residual of the last state solve (block optimality).
    pub final_state_residual: f64,
    /// Residual of the last coefficient solve (block optimality).
    pub final_coeff_residual: f64,
    /// Normal-equation residual of the final states against the final
    /// coefficients, i.e. the first optimality condition at the returned pair.
    pub stationarity_state_residual: f64,
}

impl ReconstructionReport {
    pub fn j0(&self) -> f64 {
        self.j_history[0]
    }

    /// Largest increase between consecutive J values, relative to `1 + J_0`.
    pub fn max_relative_increase(&self) -> f64 {
        let scale = 1.0 + self.j0();
        let mut worst = f64::NEG_INFINITY;
        let mut prev = self.j0();
        for rec in &self.iterations {
            worst = worst.max((rec.j_after_state - prev) / scale);
            worst = worst.max((rec.j_after_coeff - rec.j_after_state) / scale);
            prev = rec.j_after_coeff;
        }
        worst
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_relative_increase() <= slack
    }
}

/// Minimizes the state misfit for one excitation with the coefficients
/// frozen, starting from `warm_start`.
pub fn solve_state_subproblem(
    q: &CoefficientPair,
    measurement: &MeasurementSet,
    cfg: &AdiConfig,
    warm_start: &StatePair,
) -> Result<(StatePair, CgOutcome)> {
    let op = StateOperator::new(q);
    solve_state_with(&op, measurement, cfg.state_tol, warm_start)
}

fn solve_state_with(
    op: &StateOperator,
    m: &MeasurementSet,
    tol: f64,
    warm_start: &StatePair,
) -> Result<(StatePair, CgOutcome)> {
    let n = m.grid().n();
    let b = op.normal_rhs(&m.source(), &m.dirichlet);
    let diag = op.diagonal();
    let mut v = warm_start.clone();
    v.p.clear_boundary();
    let outcome = pcg(
        |x: &StatePair| op.normal_apply(x),
        |r: &StatePair| divide(r, &diag),
        &b,
        &mut v,
        tol,
        20 * n * n,
    )?;
    Ok((v, outcome))
}

fn divide(r: &StatePair, d: &StatePair) -> StatePair {
    let mut z = r.clone();
    ndarray::Zip::from(z.u.values_mut())
        .and(d.u.values())
        .for_each(|z, &d| *z /= d);
    ndarray::Zip::from(z.p.x_mut())
        .and(d.p.x())
        .for_each(|z, &d| *z /= d);
    ndarray::Zip::from(z.p.y_mut())
        .and(d.p.y())
        .for_each(|z, &d| *z /= d);
    z
}

fn state_normal_residual(op: &StateOperator, m: &MeasurementSet, v: &StatePair) -> f64 {
    use crate::linalg::KrylovVector;
    let b = op.normal_rhs(&m.source(), &m.dirichlet);
    let mut r = op.normal_apply(v);
    r.axpy(-1.0, &b);
    let bn = b.dot(&b).sqrt();
    if bn == 0.0 {
        r.dot(&r).sqrt()
    } else {
        r.dot(&r).sqrt() / bn
    }
}

/// Quadratic misfit of one coefficient at frozen states, `sum_e |A_e q - c_e|^2`.
///
/// For `sigma`, `A_e q = avg(q) grad u_e` and `c_e = p_e`; for `mu`,
/// `A_e q = q u_e` and `c_e = div p_e + g_e`.
enum CoefficientBlock {
    Sigma {
        grad_u: Vec<FluxField>,
        target: Vec<FluxField>,
    },
    Mu {
        u: Vec<ScalarField>,
        target: Vec<ScalarField>,
    },
}

impl CoefficientBlock {
    fn sigma(states: &[StatePair]) -> Self {
        CoefficientBlock::Sigma {
            grad_u: states.iter().map(|v| gradient_to_faces(&v.u)).collect(),
            target: states.iter().map(|v| v.p.clone()).collect(),
        }
    }

    fn mu(states: &[StatePair], measurements: &[MeasurementSet]) -> Self {
        CoefficientBlock::Mu {
            u: states.iter().map(|v| v.u.clone()).collect(),
            target: states
                .iter()
                .zip(measurements)
                .map(|(v, m)| divergence_to_cells(&v.p).lincomb(1.0, 1.0, &m.source()))
                .collect(),
        }
    }

    fn value(&self, q: &ScalarField) -> f64 {
        match self {
            CoefficientBlock::Sigma { grad_u, target } => {
                let s = average_to_faces(q);
                grad_u
                    .iter()
                    .zip(target)
                    .map(|(gu, t)| {
                        let mut r = s.hadamard(gu);
                        r.axpy(-1.0, t);
                        r.norm_sq()
                    })
                    .sum()
            }
            CoefficientBlock::Mu { u, target } => u
                .iter()
                .zip(target)
                .map(|(u, t)| q.hadamard(u).lincomb(1.0, -1.0, t).norm_sq())
                .sum(),
        }
    }

    fn gradient(&self, q: &ScalarField) -> ScalarField {
        match self {
            CoefficientBlock::Sigma { grad_u, target } => {
                let s = average_to_faces(q);
                let mut acc = FluxField::zeros(q.grid());
                for (gu, t) in grad_u.iter().zip(target) {
                    let mut r = s.hadamard(gu);
                    r.axpy(-1.0, t);
                    acc.axpy(2.0, &r.hadamard(gu));
                }
                average_to_faces_adjoint(&acc)
            }
            CoefficientBlock::Mu { u, target } => {
                let mut acc = ScalarField::zeros(q.grid());
                for (u, t) in u.iter().zip(target) {
                    let r = q.hadamard(u).lincomb(1.0, -1.0, t);
                    acc.axpy(2.0, &r.hadamard(u));
                }
                acc
            }
        }
    }

    /// Hessian of the misfit applied to `d`.
    fn hessian(&self, d: &ScalarField) -> ScalarField {
        match self {
            CoefficientBlock::Sigma { grad_u, .. } => {
                let s = average_to_faces(d);
                let mut acc = FluxField::zeros(d.grid());
                for gu in grad_u {
                    acc.axpy(2.0, &s.hadamard(gu).hadamard(gu));
                }
                average_to_faces_adjoint(&acc)
            }
            CoefficientBlock::Mu { u, .. } => {
                let mut acc = ScalarField::zeros(d.grid());
                for u in u {
                    acc.axpy(2.0, &d.hadamard(u).hadamard(u));
                }
                acc
            }
        }
    }
}

/// Outcome of a single-coefficient proximal gradient solve.
#[derive(Clone, Debug)]
pub struct BlockSolution {
    pub q: ScalarField,
    pub iterations: usize,
    /// `|q - prox(q - tau grad F(q))| / |q|`
    pub residual: f64,
    pub converged: bool,
    /// Step size used at exit.
    pub step: f64,
}

fn lipschitz_estimate(block: &CoefficientBlock, alpha: f64, like: &ScalarField) -> f64 {
    let grid = like.grid();
    // deterministic, non-degenerate start vector
    let mut x = ScalarField::from_fn(grid, |x, y| 1.0 + 0.5 * (7.0 * x + 3.0 * y).sin());
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut y = block.hessian(&x);
        y.axpy(1.0, &h1_gradient(&x, alpha));
        let xn = x.norm_sq();
        lambda = y.dot(&x).expect("same grid") / xn;
        let yn = y.norm();
        if yn == 0.0 {
            break;
        }
        y.scale(1.0 / yn);
        x = y;
    }
    (LIPSCHITZ_MARGIN * lambda).max(f64::MIN_POSITIVE)
}

/// Newton step on the cells left free by the prox point `trial`.
///
/// Cells that the prox step sends to a bound or to zero stay fixed there;
/// on the rest the L1 term is linear, so the block is a quadratic whose
/// minimizer is one CG solve away. The result is projected back onto the
/// feasible set and accepted only if the objective does not increase.
fn newton_refinement(
    block: &CoefficientBlock,
    reg: &RegConfig,
    x: &ScalarField,
    fx: f64,
    trial: &ScalarField,
    objective: &impl Fn(&ScalarField) -> f64,
) -> Option<(ScalarField, f64)> {
    let grid = x.grid();
    let n = grid.n();
    let free = trial.values().mapv(|v| v > reg.lo && v < reg.hi && v != 0.0);
    if !free.iter().any(|&f| f) {
        return None;
    }
    let sign = trial.values().mapv(f64::signum);
    let restrict = |d: &mut ScalarField| {
        ndarray::Zip::from(d.values_mut()).and(&free).for_each(|v, &f| {
            if !f {
                *v = 0.0;
            }
        })
    };
    let hess = |d: &ScalarField| {
        let mut hd = block.hessian(d);
        hd.axpy(1.0, &h1_gradient(d, reg.alpha));
        restrict(&mut hd);
        hd
    };
    let mut rhs = block.gradient(trial);
    rhs.axpy(1.0, &h1_gradient(trial, reg.alpha));
    ndarray::Zip::from(rhs.values_mut()).and(&sign).for_each(|r, &s| *r = -(*r + reg.beta * s));
    restrict(&mut rhs);
    let mut d = ScalarField::zeros(grid);
    let cg = pcg(hess, |r: &ScalarField| r.clone(), &rhs, &mut d, NEWTON_CG_TOL, 20 * n * n);
    cg.ok()?;

    let project = |step: f64| {
        let mut q = trial.lincomb(1.0, step, &d);
        ndarray::Zip::from(q.values_mut()).and(trial.values()).for_each(|v, &t| {
            // do not let a free cell cross zero
            if t * *v < 0.0 {
                *v = 0.0;
            }
        });
        reg.clip(&q)
    };
    let mut step = 1.0;
    for _ in 0..NEWTON_BACKTRACKS {
        let q = project(step);
        let fq = objective(&q);
        if fq <= fx {
            return Some((q, fq));
        }
        step *= 0.5;
    }
    None
}

fn solve_block(block: &CoefficientBlock, reg: &RegConfig, warm: &ScalarField, tol: f64, max_iter: usize) -> BlockSolution {
    let smooth = |q: &ScalarField| block.value(q) + eval_h1(q, reg.alpha);
    let grad = |q: &ScalarField| {
        let mut g = block.gradient(q);
        g.axpy(1.0, &h1_gradient(q, reg.alpha));
        g
    };
    let objective = |q: &ScalarField| block.value(q) + eval_phi(q, reg);
    let mut lip = lipschitz_estimate(block, reg.alpha, warm);

    let prox_step = |y: &ScalarField, gy: &ScalarField, lip: f64| {
        let tau = 1.0 / lip;
        prox_l1_box(&y.lincomb(1.0, -tau, gy), tau * reg.beta, reg.lo, reg.hi)
    };
    let fixed_point_residual = |q: &ScalarField, lip: f64| {
        let t = prox_step(q, &grad(q), lip);
        let num = q.lincomb(1.0, -1.0, &t).norm();
        let den = q.norm();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    };

    let mut x = reg.clip(warm);
    let mut fx = objective(&x);
    let mut y = x.clone();
    let mut t: f64 = 1.0;
    let mut iterations = 0;
    let mut residual = fixed_point_residual(&x, lip);
    while residual > tol && iterations < max_iter {
        iterations += 1;
        if iterations % NEWTON_EVERY == 0 {
            if let Some((z, fz)) = newton_refinement(block, reg, &x, fx, &prox_step(&x, &grad(&x), lip), &objective) {
                x = z;
                fx = fz;
                y = x.clone();
                t = 1.0;
                residual = fixed_point_residual(&x, lip);
                continue;
            }
        }
        let gy = grad(&y);
        let fy = smooth(&y);
        let z = loop {
            let z = prox_step(&y, &gy, lip);
            let d = z.lincomb(1.0, -1.0, &y);
            let model = fy + gy.dot(&d).expect("same grid") + 0.5 * lip * d.norm_sq();
            // slack at round-off level only; anything looser lets steps that
            // raise the objective through and stalls the monotone iteration
            if smooth(&z) <= model + 1e-15 * fy.abs() || lip > MAX_LIPSCHITZ {
                break z;
            }
            lip *= 2.0;
        };
        let fz = objective(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if fz <= fx {
            // accelerated step
            let momentum = (t - 1.0) / t_next;
            y = z.lincomb(1.0 + momentum, -momentum, &x);
            x = z;
            fx = fz;
            t = t_next;
        } else {
            // restart from the best point
            y = x.clone();
            t = 1.0;
        }
        residual = fixed_point_residual(&x, lip);
    }
    BlockSolution {
        q: x,
        iterations,
        residual,
        converged: residual <= tol,
        step: 1.0 / lip,
    }
}

/// Coefficient block result, with the subgradients used for diagnostics.
#[derive(Clone, Debug)]
pub struct CoefficientSolution {
    pub q: CoefficientPair,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Minimizes the coefficient block at frozen states. `sigma` and `mu` are
/// solved independently; with `cfg.reg_mu == None`, `mu` is returned as is.
pub fn solve_coefficient_subproblem(
    states: &[StatePair],
    measurements: &[MeasurementSet],
    cfg: &AdiConfig,
    warm_start: &CoefficientPair,
) -> CoefficientSolution {
    assert!(!states.is_empty(), "at least one state pair is required");
    let sigma_block = CoefficientBlock::sigma(states);
    let sigma = solve_block(&sigma_block, &cfg.reg_sigma, &warm_start.sigma, cfg.coeff_tol, cfg.coeff_inner_max);
    let mu = cfg.reg_mu.as_ref().map(|reg| {
        let block = CoefficientBlock::mu(states, measurements);
        solve_block(&block, reg, &warm_start.mu, cfg.coeff_tol, cfg.coeff_inner_max)
    });
    let (mu_q, mu_it, mu_res, mu_conv) = match mu {
        Some(s) => (s.q, s.iterations, s.residual, s.converged),
        None => (warm_start.mu.clone(), 0, 0.0, true),
    };
    CoefficientSolution {
        q: CoefficientPair {
            sigma: sigma.q,
            mu: mu_q,
        },
        iterations: sigma.iterations.max(mu_it),
        residual: sigma.residual.max(mu_res),
        converged: sigma.converged && mu_conv,
    }
}

/// Bregman distance `E(q_prev, q_next)` of the regularizer, with the
/// subgradient at `q_next` chosen as close as possible to the negative misfit
/// gradient (the optimizer's own optimality residual).
fn bregman_step(
    states: &[StatePair],
    measurements: &[MeasurementSet],
    cfg: &AdiConfig,
    prev: &CoefficientPair,
    next: &CoefficientPair,
) -> f64 {
    let sigma_block = CoefficientBlock::sigma(states);
    let target = sigma_block.gradient(&next.sigma).scaled(-1.0);
    let xi = select_subgradient(&next.sigma, &cfg.reg_sigma, Some(&target));
    let mut e = bregman_distance(&prev.sigma, &next.sigma, &xi, &cfg.reg_sigma);
    if let Some(reg) = &cfg.reg_mu {
        let block = CoefficientBlock::mu(states, measurements);
        let target = block.gradient(&next.mu).scaled(-1.0);
        let xi = select_subgradient(&next.mu, reg, Some(&target));
        e += bregman_distance(&prev.mu, &next.mu, &xi, reg);
    }
    e
}

fn state_decrement(q: &CoefficientPair, prev: &[StatePair], next: &[StatePair]) -> f64 {
    let op = StateOperator::new(q);
    prev.iter()
        .zip(next)
        .map(|(a, b)| {
            let d = b.difference(a);
            let (r1, r2) = op.apply_l(&d);
            r1.norm_sq() + r2.norm_sq() + boundary_trace(&d.u).norm_sq()
        })
        .sum()
}

fn coefficient_decrement(states: &[StatePair], prev: &CoefficientPair, next: &CoefficientPair) -> f64 {
    let ds = next.sigma.lincomb(1.0, -1.0, &prev.sigma);
    let dm = next.mu.lincomb(1.0, -1.0, &prev.mu);
    states
        .iter()
        .map(|v| coefficient_increment_norm_sq(v, &ds, &dm))
        .sum()
}

/// Initial states: forward solutions for the initial coefficients.
fn initial_states(measurements: &[MeasurementSet], q: &CoefficientPair) -> Result<Vec<StatePair>> {
    measurements
        .par_iter()
        .map(|m| {
            let problem = ForwardProblem::new(q.sigma.clone(), q.mu.clone(), m.neumann.clone());
            let u = solve_forward(&problem, DEFAULT_FORWARD_TOL)?;
            Ok(StatePair::from_potential(u, &q.sigma))
        })
        .collect()
}

/// Runs the alternating iteration from `initial_q`.
///
/// Subproblem failures do not discard the work done so far: the report is
/// returned with [`StopReason::SubproblemFailure`] and a message.
pub fn adi_reconstruct(
    measurements: &[MeasurementSet],
    initial_q: &CoefficientPair,
    cfg: &AdiConfig,
) -> Result<ReconstructionReport> {
    cfg.validate()?;
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("at least one measurement set is required".into()));
    }
    let grid = initial_q.grid();
    for m in measurements {
        grid.check_same(&m.grid())?;
    }
    if !cfg.reg_sigma.contains(&initial_q.sigma)
        || cfg.reg_mu.as_ref().is_some_and(|r| !r.contains(&initial_q.mu))
    {
        return Err(Error::InvalidArgument(
            "initial coefficients violate the box constraints".into(),
        ));
    }

    let j = |states: &[StatePair], q: &CoefficientPair| {
        eval_j(states, q, measurements, &cfg.reg_sigma, cfg.reg_mu.as_ref())
    };

    let mut q = initial_q.clone();
    let mut states = initial_states(measurements, &q)?;
    let j0 = j(&states, &q)?;
    let mut report = ReconstructionReport {
        states: Vec::new(),
        coefficients: q.clone(),
        j_history: vec![j0],
        iterations: Vec::new(),
        stop_reason: StopReason::MaxIterations,
        failure: None,
        final_state_residual: f64::NAN,
        final_coeff_residual: f64::NAN,
        stationarity_state_residual: f64::NAN,
    };

    for k in 0..cfg.max_outer {
        let op = StateOperator::new(&q);
        let solved: Vec<Result<(StatePair, CgOutcome)>> = measurements
            .par_iter()
            .zip(states.par_iter())
            .map(|(m, warm)| solve_state_with(&op, m, cfg.state_tol, warm))
            .collect();
        let mut next_states = Vec::with_capacity(states.len());
        let mut state_iterations = 0;
        let mut state_residual: f64 = 0.0;
        for s in solved {
            match s {
                Ok((v, out)) => {
                    state_iterations = state_iterations.max(out.iterations);
                    state_residual = state_residual.max(out.relative_residual);
                    next_states.push(v);
                }
                Err(e) => {
                    log::warn!("state subproblem failed at outer iteration {k}: {e}");
                    report.stop_reason = StopReason::SubproblemFailure;
                    report.failure = Some(e.to_string());
                    break;
                }
            }
        }
        if report.failure.is_some() {
            break;
        }
        let j_half = j(&next_states, &q)?;
        let state_dec = state_decrement(&q, &states, &next_states);

        let coeff = solve_coefficient_subproblem(&next_states, measurements, cfg, &q);
        if !coeff.converged {
            log::debug!(
                "coefficient block hit the inner cap at outer iteration {k} (residual {:e})",
                coeff.residual
            );
        }
        let j_full = j(&next_states, &coeff.q)?;
        let bregman = bregman_step(&next_states, measurements, cfg, &q, &coeff.q);
        let coeff_dec = coefficient_decrement(&next_states, &q, &coeff.q);

        report.iterations.push(IterationRecord {
            j_after_state: j_half,
            j_after_coeff: j_full,
            state_iterations,
            state_residual,
            coeff_iterations: coeff.iterations,
            coeff_residual: coeff.residual,
            bregman,
            state_decrement: state_dec,
            coeff_decrement: coeff_dec,
        });
        let prev_j = *report.j_history.last().expect("nonempty");
        report.j_history.push(j_full);
        report.final_state_residual = state_residual;
        report.final_coeff_residual = coeff.residual;
        states = next_states;
        q = coeff.q;
        log::debug!("outer {k}: J = {j_full:.6e} (state {state_iterations} it, coeff {} it)", coeff.iterations);

        if cfg.stop_on_stagnation && (prev_j - j_full).abs() <= STAGNATION_TOL * (1.0 + j0) {
            report.stop_reason = StopReason::Stagnation;
            break;
        }
    }

    let op = StateOperator::new(&q);
    report.stationarity_state_residual = measurements
        .iter()
        .zip(&states)
        .map(|(m, v)| state_normal_residual(&op, m, v))
        .fold(0.0, f64::max);
    report.states = states;
    report.coefficients = q;
    Ok(report)
}

/// Per-iteration Bregman terms and the telescoped energy bound
/// `J_m + sum_{k<m} (E_k + state_dec_k + coeff_dec_k) <= J_0`.
#[derive(Clone, Debug)]
pub struct BregmanDiagnostics {
    pub bregman: Vec<f64>,
    /// Left-hand side of the bound after each iteration.
    pub energy: Vec<f64>,
    /// `J_0 + 1e-8 (1 + J_0)`
    pub bound: f64,
}

impl BregmanDiagnostics {
    pub fn min_bregman(&self) -> f64 {
        self.bregman.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn bound_holds(&self) -> bool {
        self.energy.iter().all(|&e| e <= self.bound)
    }

    /// Largest violation of the bound relative to `1 + J_0` (negative when
    /// it holds with room to spare).
    pub fn worst_excess(&self, j0: f64) -> f64 {
        self.energy
            .iter()
            .map(|&e| (e - j0) / (1.0 + j0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn bregman_diagnostics(report: &ReconstructionReport) -> BregmanDiagnostics {
    let j0 = report.j0();
    let mut acc = 0.0;
    let mut energy = Vec::with_capacity(report.iterations.len());
    for rec in &report.iterations {
        acc += rec.bregman + rec.state_decrement + rec.coeff_decrement;
        energy.push(rec.j_after_coeff + acc);
    }
    BregmanDiagnostics {
        bregman: report.iterations.iter().map(|r| r.bregman).collect(),
        energy,
        bound: j0 + 1e-8 * (1.0 + j0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{default_excitations, generate_measurements};
    use crate::grid::StaggeredGrid;

    fn inclusion_media(grid: StaggeredGrid) -> CoefficientPair {
        CoefficientPair {
            sigma: ScalarField::from_fn(grid, |x, y| if (x - 0.3).abs() < 0.1 && (y - 0.6).abs() < 0.1 { 5.0 } else { 1.0 }),
            mu: ScalarField::from_fn(grid, |x, y| if (x - 0.65).abs() < 0.1 && (y - 0.35).abs() < 0.1 { 5.0 } else { 1.0 }),
        }
    }

    fn setup(n: usize) -> (StaggeredGrid, CoefficientPair, Vec<MeasurementSet>) {
        let grid = StaggeredGrid::new(n).unwrap();
        let truth = inclusion_media(grid);
        let m = generate_measurements(&truth.sigma, &truth.mu, &default_excitations(grid, 1), 1).unwrap();
        (grid, truth, m)
    }

    fn wide() -> RegConfig {
        RegConfig::new(0.0, 0.0, -1e6, 1e6).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let grid = StaggeredGrid::new(8).unwrap();
        let m = MeasurementSet {
            neumann: crate::grid::BoundaryData::zeros(grid),
            dirichlet: crate::grid::BoundaryData::zeros(grid),
        };
        let cfg = AdiConfig::new(wide(), Some(wide()));
        let q = CoefficientPair::constant(grid, 2.0, 1.0);
        let warm = StatePair {
            u: ScalarField::constant(grid, 1.0),
            p: FluxField::zeros(grid),
        };
        let (v, _) = solve_state_subproblem(&q, &m, &cfg, &warm).unwrap();
        assert!(v.u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn state_solve_beats_forward_state_at_truth() {
        let (_, truth, m) = setup(16);
        let cfg = AdiConfig::new(wide(), Some(wide()));
        let fwd = initial_states(&m, &truth).unwrap();
        let (v, out) = solve_state_subproblem(&truth, &m[0], &cfg, &StatePair::zeros(truth.grid())).unwrap();
        assert!(out.relative_residual <= cfg.state_tol);
        let j_fwd = crate::model::state_misfit(&fwd[0], &truth, &m[0]).unwrap();
        let j_new = crate::model::state_misfit(&v, &truth, &m[0]).unwrap();
        assert!(j_new <= j_fwd + 1e-10, "{j_new} > {j_fwd}");
    }

    #[test]
    fn zero_state_coefficient_block_is_clip_of_zero() {
        let grid = StaggeredGrid::new(8).unwrap();
        let zero = StatePair::zeros(grid);
        let m = MeasurementSet {
            neumann: crate::grid::BoundaryData::zeros(grid),
            dirichlet: crate::grid::BoundaryData::zeros(grid),
        };
        let reg = RegConfig::new(0.1, 0.2, 0.5, 30.0).unwrap();
        let cfg = AdiConfig::new(reg, Some(reg));
        let warm = CoefficientPair::constant(grid, 7.0, 3.0);
        let sol = solve_coefficient_subproblem(&[zero], &[m], &cfg, &warm);
        for v in sol.q.sigma.values().iter().chain(sol.q.mu.values().iter()) {
            assert!((v - 0.5).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn coefficient_block_recovers_truth_from_exact_state() {
        let (grid, truth, m) = setup(16);
        let states = initial_states(&m, &truth).unwrap();
        let reg = RegConfig::new(1e-12, 0.0, 1e-3, 100.0).unwrap();
        let mut cfg = AdiConfig::new(reg, Some(reg));
        cfg.coeff_inner_max = 20_000;
        cfg.coeff_tol = 1e-12;
        let sol = solve_coefficient_subproblem(&states, &m, &cfg, &CoefficientPair::constant(grid, 1.0, 1.0));
        // mu is identifiable wherever u does not vanish
        let u = &states[0].u;
        let mut checked = 0;
        for i in 0..16 {
            for j in 0..16 {
                if u.get(i, j).abs() > 0.1 {
                    assert!((sol.q.mu.get(i, j) - truth.mu.get(i, j)).abs() < 1e-4, "mu at {i},{j}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);

        // avg(.) grad u annihilates the checkerboard mode, so sigma is
        // compared after projecting it out, on cells whose faces all carry
        // a clear gradient
        let checker = ScalarField::from_fn(grid, |x, y| {
            let (i, j) = ((x * 16.0) as usize, (y * 16.0) as usize);
            if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let mut err = sol.q.sigma.lincomb(1.0, -1.0, &truth.sigma);
        let c = err.dot(&checker).unwrap() / checker.norm_sq();
        err.axpy(-c, &checker);
        let gu = gradient_to_faces(u);
        let gmax = gu.x().iter().chain(gu.y().iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let mut checked = 0;
        for i in 1..15 {
            for j in 1..15 {
                let faces = [gu.x()[[i, j]], gu.x()[[i + 1, j]], gu.y()[[i, j]], gu.y()[[i, j + 1]]];
                if faces.iter().all(|f| f.abs() > 0.05 * gmax) {
                    assert!(err.get(i, j).abs() < 1e-4, "sigma at {i},{j}: {}", err.get(i, j));
                    checked += 1;
                }
            }
        }
        assert!(checked > 20, "only {checked} cells checked");
    }

    #[test]
    fn alternation_is_monotone() {
        let (grid, _, m) = setup(20);
        let reg_s = RegConfig::new(1e-2, 2e-2, 0.5, 30.0).unwrap();
        let reg_m = RegConfig::new(5e-4, 5e-4, 0.5, 30.0).unwrap();
        let mut cfg = AdiConfig::new(reg_s, Some(reg_m));
        cfg.max_outer = 8;
        let report = adi_reconstruct(&m, &CoefficientPair::constant(grid, 1.0, 1.0), &cfg).unwrap();
        assert_eq!(report.j_history.len(), 9);
        assert!(report.is_monotone(1e-10), "{:?}", report.j_history);
        let diag = bregman_diagnostics(&report);
        assert!(diag.min_bregman() >= -1e-10);
        assert!(report.coefficients.sigma.values().iter().all(|&v| (0.5..=30.0).contains(&v)));
    }

    #[test]
    fn restart_from_fixed_point_stagnates() {
        let (grid, _, m) = setup(12);
        let reg = RegConfig::new(1e-2, 1e-2, 0.5, 30.0).unwrap();
        let mut cfg = AdiConfig::new(reg, Some(reg));
        cfg.max_outer = 400;
        cfg.coeff_inner_max = 2000;
        cfg.coeff_tol = 1e-12;
        cfg.state_tol = 1e-12;
        cfg.stop_on_stagnation = true;
        let first = adi_reconstruct(&m, &CoefficientPair::constant(grid, 1.0, 1.0), &cfg).unwrap();
        assert_eq!(first.stop_reason, StopReason::Stagnation);
        let second = adi_reconstruct(&m, &first.coefficients, &cfg).unwrap();
        assert_eq!(second.stop_reason, StopReason::Stagnation);
        assert!(second.iterations.len() <= 2, "took {}", second.iterations.len());
    }

    #[test]
    fn rejects_infeasible_start() {
        let (grid, _, m) = setup(8);
        let reg = RegConfig::new(1e-2, 1e-2, 0.5, 30.0).unwrap();
        let cfg = AdiConfig::new(reg, Some(reg));
        assert!(adi_reconstruct(&m, &CoefficientPair::constant(grid, 0.1, 1.0), &cfg).is_err());
    }

    #[test]
    fn deterministic_history() {
        let (grid, _, m) = setup(12);
        let reg = RegConfig::new(1e-2, 1e-2, 0.5, 30.0).unwrap();
        let mut cfg = AdiConfig::new(reg, Some(reg));
        cfg.max_outer = 4;
        let a = adi_reconstruct(&m, &CoefficientPair::constant(grid, 1.0, 1.0), &cfg).unwrap();
        let b = adi_reconstruct(&m, &CoefficientPair::constant(grid, 1.0, 1.0), &cfg).unwrap();
        assert_eq!(a.j_history, b.j_history);
    }
}
