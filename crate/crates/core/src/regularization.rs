//! Mixed L1 / H1 / box regularizer
//!
//! ```text
//! phi(q) = alpha/2 (|grad q|^2 + |q|^2) + beta |q|_1 + chi_[lo, hi](q)
//! ```
//!
//! split into the smooth H1 part (handled by gradient steps) and the
//! pointwise L1 + box part, whose proximal map is `clip(shrink(v))`.

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::grid::{divergence_to_cells, gradient_to_faces, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegConfig {
    /// Weight of the H1 term (the `alpha/2` multiplier).
    pub alpha: f64,
    /// Weight of the L1 term.
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl RegConfig {
    pub fn new(alpha: f64, beta: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization weights must be nonnegative (alpha = {alpha}, beta = {beta})"
            )));
        }
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "box bounds must satisfy lo < hi (got [{lo}, {hi}])"
            )));
        }
        Ok(RegConfig { alpha, beta, lo, hi })
    }

    pub fn contains(&self, q: &ScalarField) -> bool {
        q.values().iter().all(|&v| v >= self.lo && v <= self.hi)
    }

    pub fn clip(&self, q: &ScalarField) -> ScalarField {
        q.map(|v| v.clamp(self.lo, self.hi))
    }
}

/// `alpha/2 (|grad q|^2 + |q|^2)` on the grid norms.
pub fn eval_h1(q: &ScalarField, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    0.5 * alpha * (gradient_to_faces(q).norm_sq() + q.norm_sq())
}

pub fn eval_phi(q: &ScalarField, cfg: &RegConfig) -> f64 {
    if !cfg.contains(q) {
        return f64::INFINITY;
    }
    let l1 = q.values().iter().map(|v| v.abs()).sum::<f64>() * q.grid().spacing().powi(2);
    eval_h1(q, cfg.alpha) + cfg.beta * l1
}

/// Gradient of the H1 part, `alpha (-lap q + q)`, with the Laplacian built
/// from the face-gradient stencil (natural Neumann boundary).
pub fn smooth_grad_phi(q: &ScalarField, cfg: &RegConfig) -> ScalarField {
    h1_gradient(q, cfg.alpha)
}

pub(crate) fn h1_gradient(q: &ScalarField, alpha: f64) -> ScalarField {
    if alpha == 0.0 {
        return ScalarField::zeros(q.grid());
    }
    let mut out = divergence_to_cells(&gradient_to_faces(q));
    out.scale(-alpha);
    out.axpy(alpha, q);
    out
}

pub fn soft_threshold(t: f64, s: f64) -> f64 {
    t.signum() * (t.abs() - s).max(0.0)
}

/// Proximal map of `tau_beta |.| + chi_[lo, hi]` at a scalar.
pub fn prox_scalar(v: f64, tau_beta: f64, lo: f64, hi: f64) -> f64 {
    soft_threshold(v, tau_beta).clamp(lo, hi)
}

/// Pointwise `clip(shrink(v, tau_beta), lo, hi)`.
pub fn prox_l1_box(v: &ScalarField, tau_beta: f64, lo: f64, hi: f64) -> ScalarField {
    v.map(|t| prox_scalar(t, tau_beta, lo, hi))
}

/// Chooses `xi` in the subdifferential of `phi` at `p`.
///
/// The nonsmooth part contributes an interval per cell (a point in the
/// interior away from zero, `[-beta, beta]` at zero, a half line at an active
/// bound). With `target` given, each cell takes the point of its interval
/// closest to `target - smooth_grad`; otherwise the point closest to zero.
pub fn select_subgradient(p: &ScalarField, cfg: &RegConfig, target: Option<&ScalarField>) -> ScalarField {
    let smooth = smooth_grad_phi(p, cfg);
    let beta = cfg.beta;
    let mut xi = smooth.clone();
    let sign_or = |v: f64, at_zero: f64| if v == 0.0 { at_zero } else { beta * v.signum() };
    Zip::indexed(xi.values_mut()).for_each(|(i, j), xi| {
        let q = p.get(i, j);
        let (lo, hi) = if q >= cfg.hi {
            (sign_or(q, -beta), f64::INFINITY)
        } else if q <= cfg.lo {
            (f64::NEG_INFINITY, sign_or(q, beta))
        } else if q == 0.0 {
            (-beta, beta)
        } else {
            let s = beta * q.signum();
            (s, s)
        };
        let want = target.map_or(0.0, |t| t.get(i, j) - smooth.get(i, j));
        *xi += want.clamp(lo, hi);
    });
    xi
}

/// `phi(q) - phi(p) - <xi, q - p>`; `xi` must be a subgradient of `phi` at `p`.
pub fn bregman_distance(q: &ScalarField, p: &ScalarField, xi: &ScalarField, cfg: &RegConfig) -> f64 {
    let fq = eval_phi(q, cfg);
    let fp = eval_phi(p, cfg);
    if !fq.is_finite() || !fp.is_finite() {
        return f64::INFINITY;
    }
    let diff = q.lincomb(1.0, -1.0, p);
    fq - fp - xi.dot(&diff).expect("fields share a grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StaggeredGrid;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: StaggeredGrid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarField {
        let n = grid.n();
        ScalarField::from_array(grid, Array2::from_shape_fn((n, n), |_| rng.random_range(lo..hi))).unwrap()
    }

    #[test]
    fn constant_field_value() {
        let g = StaggeredGrid::new(10).unwrap();
        let cfg = RegConfig::new(0.3, 0.2, 1.0, 20.0).unwrap();
        let v = eval_phi(&ScalarField::constant(g, 4.0), &cfg);
        assert!((v - (0.15 * 16.0 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn box_violation_is_infinite() {
        let g = StaggeredGrid::new(6).unwrap();
        let cfg = RegConfig::new(1e-2, 2e-2, 0.5, 30.0).unwrap();
        let mut q = ScalarField::constant(g, 1.0);
        assert!(eval_phi(&q, &cfg).is_finite());
        q.values_mut()[[2, 3]] = 30.1;
        assert_eq!(eval_phi(&q, &cfg), f64::INFINITY);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(RegConfig::new(-1.0, 0.0, 0.0, 1.0).is_err());
        assert!(RegConfig::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(RegConfig::new(0.0, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn smooth_gradient_values() {
        let g = StaggeredGrid::new(8).unwrap();
        let cfg = RegConfig::new(0.5, 1.0, -10.0, 10.0).unwrap();
        let s = smooth_grad_phi(&ScalarField::constant(g, 3.0), &cfg);
        assert!(s.values().iter().all(|&v| (v - 1.5).abs() < 1e-12));
        let zero = RegConfig { alpha: 0.0, ..cfg };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_field(g, &mut rng, -1.0, 1.0);
        assert!(smooth_grad_phi(&q, &zero).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let alpha = rng.random_range(0.01..1.0);
            let q = random_field(g, &mut rng, 0.0, 5.0);
            let d = random_field(g, &mut rng, -1.0, 1.0);
            let step = 1e-5;
            let fd = (eval_h1(&q.lincomb(1.0, step, &d), alpha) - eval_h1(&q.lincomb(1.0, -step, &d), alpha))
                / (2.0 * step);
            let an = h1_gradient(&q, alpha).dot(&d).unwrap();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "{fd} vs {an}");
        }
    }

    #[test]
    fn prox_examples() {
        assert_eq!(prox_scalar(5.0, 1.0, 1.0, 20.0), 4.0);
        assert_eq!(prox_scalar(0.5, 1.0, 1.0, 20.0), 1.0);
        assert_eq!(prox_scalar(-3.0, 1.0, -20.0, 20.0), -2.0);
        assert_eq!(prox_scalar(25.0, 1.0, 1.0, 20.0), 20.0);
    }

    #[test]
    fn prox_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-5.0..5.0);
            let tb: f64 = rng.random_range(0.0..2.0);
            let lo: f64 = rng.random_range(-4.0..3.0);
            let hi = lo + rng.random_range(0.1..4.0);
            let obj = |q: f64| 0.5 * (q - v).powi(2) + tb * q.abs();
            let steps = ((hi - lo) / 1e-3).floor() as usize;
            let best = (0..=steps)
                .map(|k| lo + k as f64 * 1e-3)
                .chain(std::iter::once(hi))
                .min_by(|a, b| obj(*a).partial_cmp(&obj(*b)).unwrap())
                .unwrap();
            assert!((prox_scalar(v, tb, lo, hi) - best).abs() <= 2e-3);
        }
    }

    #[test]
    fn prox_is_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let (a, b): (f64, f64) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let tb = rng.random_range(0.0..3.0);
            let d = (prox_scalar(a, tb, -2.0, 7.0) - prox_scalar(b, tb, -2.0, 7.0)).abs();
            assert!(d <= (a - b).abs() + 1e-15);
        }
    }

    #[test]
    fn bregman_of_identical_points_is_zero() {
        let g = StaggeredGrid::new(8).unwrap();
        let cfg = RegConfig::new(0.1, 0.2, 0.5, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_field(g, &mut rng, 0.5, 30.0);
        let xi = select_subgradient(&q, &cfg, None);
        assert_eq!(bregman_distance(&q, &q, &xi, &cfg), 0.0);
    }

    #[test]
    fn bregman_nonnegative_with_true_subgradient() {
        let g = StaggeredGrid::new(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let cfg = RegConfig::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.1), -1.0, 2.0).unwrap();
            // p with some cells on the bounds and at zero
            let p = random_field(g, &mut rng, -1.5, 2.5).map(|v| {
                if v.abs() < 0.2 {
                    0.0
                } else {
                    v.clamp(cfg.lo, cfg.hi)
                }
            });
            let q = random_field(g, &mut rng, -1.0, 2.0);
            let target = random_field(g, &mut rng, -3.0, 3.0);
            let xi = select_subgradient(&p, &cfg, Some(&target));
            assert!(bregman_distance(&q, &p, &xi, &cfg) >= -1e-10);
        }
    }

    #[test]
    fn quadratic_bregman_identity() {
        let g = StaggeredGrid::new(10).unwrap();
        let cfg = RegConfig::new(0.4, 0.0, -100.0, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, p) = (random_field(g, &mut rng, -1.0, 1.0), random_field(g, &mut rng, -1.0, 1.0));
        let xi = select_subgradient(&p, &cfg, None);
        let e = bregman_distance(&q, &p, &xi, &cfg);
        let expect = eval_h1(&q.lincomb(1.0, -1.0, &p), cfg.alpha);
        assert!((e - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn strictly_convex_with_margin() {
        let g = StaggeredGrid::new(10).unwrap();
        let cfg = RegConfig::new(0.2, 0.05, 0.5, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = random_field(g, &mut rng, 0.5, 30.0);
            let b = random_field(g, &mut rng, 0.5, 30.0);
            let mid = a.lincomb(0.5, 0.5, &b);
            let margin = cfg.alpha / 8.0 * a.lincomb(1.0, -1.0, &b).norm_sq();
            assert!(eval_phi(&mid, &cfg) <= 0.5 * (eval_phi(&a, &cfg) + eval_phi(&b, &cfg)) - margin + 1e-10);
        }
    }

    #[test]
    fn coercive_in_h1() {
        let g = StaggeredGrid::new(10).unwrap();
        let cfg = RegConfig::new(0.3, 0.1, -5.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q = random_field(g, &mut rng, -5.0, 5.0);
            let h1 = gradient_to_faces(&q).norm_sq() + q.norm_sq();
            assert!(eval_phi(&q, &cfg) >= cfg.alpha / 2.0 * h1 - 1e-12);
        }
    }
}
