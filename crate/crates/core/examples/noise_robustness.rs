//! How the DSM peaks of Example 2.1 move as the data noise grows.

use medrec::experiments::make_example;
use medrec::experiments::pipeline::{run_dsm, synthesize, DsmSettings};

fn main() -> medrec::Result<()> {
    let spec = make_example("ex2_1")?;
    let settings = DsmSettings {
        oversample: 2,
        ..DsmSettings::default()
    };
    let centers: Vec<_> = spec.sigma_inclusions.iter().map(|s| s.center()).collect();
    println!("true sigma inclusions at {centers:?}");
    for noise in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let data = synthesize(&spec, 50, 2, noise, 1)?;
        let out = run_dsm(&data.measurements, &settings, Some(&data.truth.mu))?;
        let phi = &out.index.phi_sigma;
        let grid = phi.grid();
        let h = grid.spacing();
        let at_centers: Vec<f64> = centers
            .iter()
            .map(|c| phi.get((c.0 / h) as usize, (c.1 / h) as usize))
            .collect();
        let (mut best, mut peak) = (f64::NEG_INFINITY, (0, 0));
        for ((i, j), &v) in phi.values().indexed_iter() {
            if v > best {
                best = v;
                peak = (i, j);
            }
        }
        let (px, py) = grid.cell_center(peak.0, peak.1);
        println!(
            "noise {noise:>4.2}: peak at ({px:.2}, {py:.2}), index at true centers {:.3?}, mask {} cells",
            at_centers,
            out.mask_sigma.count()
        );
    }
    Ok(())
}
