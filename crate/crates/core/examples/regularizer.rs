//! The mixed L1 / H1 / box regularizer: value, smooth gradient, proximal map
//! and Bregman distance.

use medrec::regularization::{bregman_distance, eval_phi, prox_scalar, select_subgradient, smooth_grad_phi};
use medrec::{RegConfig, ScalarField, StaggeredGrid};

fn main() -> medrec::Result<()> {
    let grid = StaggeredGrid::new(32)?;
    let cfg = RegConfig::new(1e-2, 2e-2, 0.5, 30.0)?;
    let bump = |c: f64| ScalarField::from_fn(grid, move |x, y| 1.0 + c * (-40.0 * ((x - 0.3).powi(2) + (y - 0.6).powi(2))).exp());

    let p = bump(10.0);
    let q = bump(12.0);
    println!("phi(p) = {:.6}", eval_phi(&p, &cfg));
    println!("phi(background) = {:.6}", eval_phi(&ScalarField::constant(grid, 1.0), &cfg));
    println!("phi(outside box) = {}", eval_phi(&ScalarField::constant(grid, 0.1), &cfg));
    println!("|grad of smooth part| = {:.4e}", smooth_grad_phi(&p, &cfg).norm());

    let xi = select_subgradient(&p, &cfg, None);
    println!("E(q, p) = {:.4e}", bregman_distance(&q, &p, &xi, &cfg));

    for (v, tb) in [(5.0, 1.0), (0.7, 0.5), (40.0, 1.0)] {
        println!("prox({v}, {tb}) on [{}, {}] = {}", cfg.lo, cfg.hi, prox_scalar(v, tb, cfg.lo, cfg.hi));
    }
    Ok(())
}
