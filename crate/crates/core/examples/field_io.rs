//! Writing, reading and rendering fields and measurements.

use medrec::experiments::io::{
    format_key_values, parse_key_values, read_measurements, read_scalar, render_pgm, write_field,
    write_measurements, Field,
};
use medrec::experiments::make_example;
use medrec::experiments::pipeline::synthesize;

fn main() -> medrec::Result<()> {
    let dir = std::env::temp_dir().join("medrec_io_example");
    let data = synthesize(&make_example("ex3")?, 32, 2, 0.05, 7)?;

    let path = dir.join("truth_sigma.txt");
    write_field(&path, &Field::Scalar(data.truth.sigma.clone()))?;
    let back = read_scalar(&path)?;
    println!("scalar round trip exact: {}", back == data.truth.sigma);

    write_measurements(&dir, &data.measurements)?;
    let sets = read_measurements(&dir)?;
    println!("measurement round trip exact: {}", sets == data.measurements);

    let image = render_pgm(&data.truth.mu);
    println!("PGM: {} bytes, header {:?}", image.len(), String::from_utf8_lossy(&image[..13]));

    let report = format_key_values(&[("example", "ex3"), ("grid", "32")]);
    print!("{report}");
    let parsed = parse_key_values(&report, &dir.join("report.txt"))?;
    println!("parsed {} entries", parsed.len());
    Ok(())
}
