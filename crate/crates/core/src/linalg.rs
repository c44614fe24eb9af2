//! Matrix-free preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Minimal vector-space interface used by [`pcg`]. `dot` is the plain
/// Euclidean sum over the stored unknowns.
pub trait KrylovVector: Clone {
    fn dot(&self, other: &Self) -> f64;
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&mut self, a: f64);
}

impl KrylovVector for ScalarField {
    fn dot(&self, other: &Self) -> f64 {
        self.raw_dot(other)
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        ScalarField::axpy(self, a, x)
    }

    fn scale(&mut self, a: f64) {
        ScalarField::scale(self, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// True relative residual `|b - A x| / |b|` at exit.
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting from
/// the contents of `x`. `precond` applies the inverse preconditioner.
///
/// Convergence is declared on the recomputed residual, never on the
/// recursively updated one, so the returned residual is what the caller gets.
pub fn pcg<V, A, P>(
    apply: A,
    precond: P,
    b: &V,
    x: &mut V,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    V: KrylovVector,
    A: Fn(&V) -> V,
    P: Fn(&V) -> V,
{
    let b_norm = b.dot(b).sqrt();
    if b_norm == 0.0 {
        x.scale(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let true_residual = |x: &V| {
        let mut r = b.clone();
        r.axpy(-1.0, &apply(x));
        r
    };

    let mut r = true_residual(x);
    let mut rel = r.dot(&r).sqrt() / b_norm;
    let mut iterations = 0;
    while rel > tol && iterations < max_iter {
        // (re)start
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        while iterations < max_iter {
            let ap = apply(&p);
            let pap = p.dot(&ap);
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let step = rz / pap;
            x.axpy(step, &p);
            r.axpy(-step, &ap);
            iterations += 1;
            if r.dot(&r).sqrt() <= tol * b_norm {
                break;
            }
            z = precond(&r);
            let rz_next = r.dot(&z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.scale(beta);
            p.axpy(1.0, &z);
        }
        let fresh = true_residual(x);
        let fresh_rel = fresh.dot(&fresh).sqrt() / b_norm;
        if fresh_rel >= rel && fresh_rel > tol {
            // no progress since the last restart
            rel = fresh_rel;
            break;
        }
        r = fresh;
        rel = fresh_rel;
    }
    if rel > tol {
        return Err(Error::NotConverged {
            iterations,
            residual: rel,
        });
    }
    Ok(CgOutcome {
        iterations,
        relative_residual: rel,
    })
}
