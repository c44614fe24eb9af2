//! Second-order convergence of the forward solver on a manufactured
//! solution `u = cos(pi x) cos(pi y)` with `sigma = mu = 1`.

use std::f64::consts::PI;

use medrec::forward::{solve_forward, ForwardProblem};
use medrec::{BoundaryData, ScalarField, StaggeredGrid};

fn main() -> medrec::Result<()> {
    let exact = |x: f64, y: f64| (PI * x).cos() * (PI * y).cos();
    let mut prev: Option<f64> = None;
    println!("{:>5} {:>12} {:>7}", "N", "L2 error", "ratio");
    for n in [8, 16, 32, 64, 128] {
        let grid = StaggeredGrid::new(n)?;
        let source = ScalarField::from_fn(grid, |x, y| (2.0 * PI * PI + 1.0) * exact(x, y));
        let problem = ForwardProblem::new(
            ScalarField::constant(grid, 1.0),
            ScalarField::constant(grid, 1.0),
            BoundaryData::zeros(grid),
        )
        .with_source(source);
        let u = solve_forward(&problem, 1e-12)?;
        let err = u.lincomb(1.0, -1.0, &ScalarField::from_fn(grid, exact)).norm();
        match prev {
            Some(p) => println!("{n:>5} {err:>12.4e} {:>7.3}", p / err),
            None => println!("{n:>5} {err:>12.4e} {:>7}", "-"),
        }
        prev = Some(err);
    }
    Ok(())
}
