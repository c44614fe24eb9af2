//! Both stages on Example 1 (one excitation, N = 50) with the tabulated
//! regularization.
//!
//! ```text
//! cargo run --release --example reconstruct_example1 [noise] [max_outer]
//! ```

use medrec::experiments::compute_metrics;
use medrec::experiments::make_example;
use medrec::experiments::pipeline::{run_example, RunOptions};
use medrec::optimizer::bregman_diagnostics;

fn main() -> medrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let noise: f64 = args.next().map_or(0.0, |s| s.parse().expect("noise must be a number"));
    let max_outer: usize = args.next().map_or(50, |s| s.parse().expect("max_outer must be an integer"));

    let spec = make_example("ex1")?;
    let run = run_example(
        &spec,
        &RunOptions {
            noise,
            max_outer,
            ..RunOptions::default()
        },
    )?;
    let r = &run.report;
    println!("dsm masks: sigma {} cells, mu {} cells", run.dsm.mask_sigma.count(), run.dsm.mask_mu.count());
    for (k, j) in r.j_history.iter().enumerate().step_by(5) {
        println!("  J[{k:>3}] = {j:.6e}");
    }
    let breg = bregman_diagnostics(r);
    println!(
        "stop {}; monotone {}; min Bregman {:.2e}; residuals state {:.2e} coefficient {:.2e}",
        r.stop_reason,
        r.is_monotone(1e-10),
        breg.min_bregman(),
        r.final_state_residual,
        r.final_coeff_residual
    );
    let m = compute_metrics(&r.coefficients, &run.data.truth)?;
    println!(
        "sigma in [{:.3}, {:.3}], relative error {:.3}, centers {:?}",
        r.coefficients.sigma.min(),
        r.coefficients.sigma.max(),
        m.sigma.relative_l2_error,
        m.sigma.center_of_mass_errors
    );
    println!(
        "mu    in [{:.3}, {:.3}], relative error {:.3}, centers {:?}",
        r.coefficients.mu.min(),
        r.coefficients.mu.max(),
        m.mu.relative_l2_error,
        m.mu.center_of_mass_errors
    );
    Ok(())
}
