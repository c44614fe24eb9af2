//! Direct sampling index for Example 1 with both probe families.
//!
//! ```text
//! cargo run --release --example dsm_index [example] [theta]
//! ```

use medrec::dsm::{compute_index, homogeneous_reference, threshold_subdomain, Probes};
use medrec::experiments::make_example;
use medrec::experiments::pipeline::synthesize;
use medrec::ScalarField;

fn peak(phi: &ScalarField) -> (f64, f64) {
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for ((i, j), &v) in phi.values().indexed_iter() {
        if v > best {
            best = v;
            at = (i, j);
        }
    }
    phi.grid().cell_center(at.0, at.1)
}

fn main() -> medrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "ex1".into());
    let theta: f64 = args.next().map_or(0.55, |s| s.parse().expect("theta must be a number"));

    let spec = make_example(&name)?;
    let data = synthesize(&spec, 50, 2, 0.0, 0)?;
    let grid = data.truth.grid();
    let excitations: Vec<_> = data.measurements.iter().map(|m| m.neumann.clone()).collect();
    let reference = homogeneous_reference(1.0, 1.0, &excitations, 2)?;
    let delta: Vec<_> = data
        .measurements
        .iter()
        .zip(&reference)
        .map(|(m, f0)| m.dirichlet.lincomb(1.0, -1.0, f0))
        .collect();

    for s in &spec.sigma_inclusions {
        println!("true sigma inclusion at {:?}", s.center());
    }
    for s in &spec.mu_inclusions {
        println!("true mu inclusion at {:?}", s.center());
    }
    for (label, probes) in [
        ("free space", Probes::free_space(grid, grid)),
        ("background", Probes::background(grid, 1.0, 1.0)?),
    ] {
        let index = compute_index(&delta, &probes)?;
        let ms = threshold_subdomain(&index.phi_sigma, theta)?;
        let mm = threshold_subdomain(&index.phi_mu, theta)?;
        println!(
            "{label:>10}: sigma peak {:?} ({} cells), mu peak {:?} ({} cells)",
            peak(&index.phi_sigma),
            ms.count(),
            peak(&index.phi_mu),
            mm.count()
        );
    }
    Ok(())
}
