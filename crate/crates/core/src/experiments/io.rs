//! Text field files, key-value reports and 16-bit PGM images.
//!
//! A field file starts with three header lines
//!
//! ```text
//! medrec-field 1
//! kind scalar
//! n 50
//! ```
//!
//! followed by the values. Scalar fields are written one grid row per line
//! (`j` fixed, `i` increasing from left to right, rows from bottom to top);
//! boundary data is written one sample per line in boundary order. Values use
//! Rust's shortest round-trip exponent formatting, so reading a file back
//! gives bit-identical numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::forward::MeasurementSet;
use crate::grid::{BoundaryData, ScalarField, StaggeredGrid};

pub const FIELD_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "medrec-field";

/// Either kind of field that can be stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Boundary(BoundaryData),
}

impl Field {
    pub fn kind(&self) -> &'static str {
        match self {
            Field::Scalar(_) => "scalar",
            Field::Boundary(_) => "boundary",
        }
    }

    pub fn grid(&self) -> StaggeredGrid {
        match self {
            Field::Scalar(f) => f.grid(),
            Field::Boundary(b) => b.grid(),
        }
    }
}

pub fn serialize_field(field: &Field) -> String {
    let n = field.grid().n();
    let mut out = format!("{MAGIC} {FIELD_FORMAT_VERSION}\nkind {}\nn {n}\n", field.kind());
    match field {
        Field::Scalar(f) => {
            for j in 0..n {
                for i in 0..n {
                    if i > 0 {
                        out.push(' ');
                    }
                    write!(out, "{:e}", f.get(i, j)).unwrap();
                }
                out.push('\n');
            }
        }
        Field::Boundary(b) => {
            for v in b.values() {
                writeln!(out, "{v:e}").unwrap();
            }
        }
    }
    out
}

/// Parses a field file. `path` is only used in error messages.
pub fn deserialize_field(text: &str, path: &Path) -> Result<Field> {
    let err = |line: usize, msg: String| Error::parse(path, line, msg);
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let mut header = |key: &str| -> Result<String> {
        match lines.next() {
            Some((k, l)) => match l.split_once(char::is_whitespace) {
                Some((a, b)) if a == key => Ok(b.trim().to_string()),
                _ => Err(err(k, format!("expected '{key} <value>', found '{l}'"))),
            },
            None => Err(err(0, format!("missing '{key}' header"))),
        }
    };
    let version = header(MAGIC)?;
    if version != FIELD_FORMAT_VERSION.to_string() {
        return Err(err(1, format!("unsupported format version '{version}'")));
    }
    let kind = header("kind")?;
    let n: usize = header("n")?
        .parse()
        .map_err(|e| err(3, format!("bad grid size: {e}")))?;
    let grid = StaggeredGrid::new(n).map_err(|e| err(3, e.to_string()))?;

    let mut values = Vec::new();
    let mut rows = 0usize;
    for (k, l) in lines {
        if l.is_empty() {
            continue;
        }
        let before = values.len();
        for (col, tok) in l.split_whitespace().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(k, format!("column {}: invalid number '{tok}'", col + 1)))?;
            values.push(v);
        }
        if kind == "scalar" && values.len() - before != n {
            return Err(err(k, format!("expected {n} values per row, found {}", values.len() - before)));
        }
        rows += 1;
    }
    match kind.as_str() {
        "scalar" => {
            if rows != n {
                return Err(err(3 + rows, format!("expected {n} rows, found {rows}")));
            }
            let arr = Array2::from_shape_fn((n, n), |(i, j)| values[j * n + i]);
            Ok(Field::Scalar(ScalarField::from_array(grid, arr)?))
        }
        "boundary" => {
            if values.len() != grid.boundary_len() {
                return Err(err(
                    3 + rows,
                    format!("expected {} boundary values, found {}", grid.boundary_len(), values.len()),
                ));
            }
            Ok(Field::Boundary(BoundaryData::from_vec(grid, values)?))
        }
        other => Err(err(2, format!("unknown field kind '{other}'"))),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    write_text(path, &serialize_field(field))
}

pub fn read_field(path: &Path) -> Result<Field> {
    deserialize_field(&read_text(path)?, path)
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    match read_field(path)? {
        Field::Scalar(f) => Ok(f),
        Field::Boundary(_) => Err(Error::parse(path, 2, "expected a scalar field")),
    }
}

pub fn read_boundary(path: &Path) -> Result<BoundaryData> {
    match read_field(path)? {
        Field::Boundary(b) => Ok(b),
        Field::Scalar(_) => Err(Error::parse(path, 2, "expected boundary data")),
    }
}

/// File names `neumann_<k>.txt`, `dirichlet_<k>.txt` for excitation `k`.
pub fn measurement_paths(dir: &Path, k: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("neumann_{k}.txt")), dir.join(format!("dirichlet_{k}.txt")))
}

pub fn write_measurements(dir: &Path, sets: &[MeasurementSet]) -> Result<()> {
    for (k, m) in sets.iter().enumerate() {
        let (hp, fp) = measurement_paths(dir, k);
        write_field(&hp, &Field::Boundary(m.neumann.clone()))?;
        write_field(&fp, &Field::Boundary(m.dirichlet.clone()))?;
    }
    Ok(())
}

/// Reads consecutive excitations starting at 0 until a Neumann file is
/// missing. Fails if none are present.
pub fn read_measurements(dir: &Path) -> Result<Vec<MeasurementSet>> {
    let mut sets = Vec::new();
    loop {
        let (hp, fp) = measurement_paths(dir, sets.len());
        if !hp.exists() {
            break;
        }
        let neumann = read_boundary(&hp)?;
        let dirichlet = read_boundary(&fp)?;
        neumann.grid().check_same(&dirichlet.grid())?;
        sets.push(MeasurementSet { neumann, dirichlet });
    }
    if sets.is_empty() {
        let (hp, _) = measurement_paths(dir, 0);
        return Err(Error::io(hp, std::io::ErrorKind::NotFound.into()));
    }
    Ok(sets)
}

/// Flat `key = value` text. Blank lines and lines starting with `#` are
/// ignored; later duplicates override earlier ones.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, k + 1, format!("expected 'key = value', found '{line}'")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::parse(path, k + 1, "empty key"));
        }
        let value = value.trim().to_string();
        match out.iter_mut().find(|(name, _)| name == key) {
            Some(entry) => entry.1 = value,
            None => out.push((key.to_string(), value)),
        }
    }
    Ok(out)
}

pub fn format_key_values<K: AsRef<str>, V: AsRef<str>>(entries: &[(K, V)]) -> String {
    entries.iter().fold(String::new(), |mut s, (k, v)| {
        writeln!(s, "{} = {}", k.as_ref(), v.as_ref()).unwrap();
        s
    })
}

/// Binary PGM (P5) with 16-bit big-endian samples. `[min, max]` maps linearly
/// onto `[0, 65535]`; a constant field renders as mid-gray. The top image row
/// is the top of the domain.
pub fn render_pgm(field: &ScalarField) -> Vec<u8> {
    let n = field.grid().n();
    let (lo, hi) = (field.min(), field.max());
    let mut out = format!("P5\n{n} {n}\n65535\n").into_bytes();
    for j in (0..n).rev() {
        for i in 0..n {
            let level = if hi > lo {
                ((field.get(i, j) - lo) / (hi - lo) * 65535.0).round() as u16
            } else {
                32768
            };
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

pub fn write_pgm(path: &Path, field: &ScalarField) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, render_pgm(field)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::add_noise;

    fn grid(n: usize) -> StaggeredGrid {
        StaggeredGrid::new(n).unwrap()
    }

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let f = ScalarField::from_fn(grid(9), |x, y| (x * 7.1).exp() / (y + 0.3) - 1e-300);
        let back = deserialize_field(&serialize_field(&Field::Scalar(f.clone())), Path::new("f")).unwrap();
        match back {
            Field::Scalar(g) => {
                for (a, b) in f.values().iter().zip(g.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("kind changed"),
        }
    }

    #[test]
    fn noisy_boundary_round_trip() {
        let b = BoundaryData::from_fn(grid(12), |x, y| x * x - y);
        let noisy = add_noise(&b, 0.1, 5);
        let text = serialize_field(&Field::Boundary(noisy.clone()));
        assert_eq!(deserialize_field(&text, Path::new("b")).unwrap(), Field::Boundary(noisy));
    }

    #[test]
    fn malformed_files_report_lines() {
        let p = Path::new("bad.txt");
        let text = "medrec-field 1\nkind scalar\nn 4\n1 2 3 4\n1 2 x 4\n";
        match deserialize_field(text, p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("column 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            deserialize_field("medrec-field 2\n", p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            deserialize_field("medrec-field 1\nkind scalar\nn 4\n1 2 3 4\n", p),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn key_values() {
        let p = Path::new("c");
        let kv = parse_key_values("# run\nversion = 1\n\ngrid=50\ngrid = 60\n", p).unwrap();
        assert_eq!(kv, vec![("version".into(), "1".into()), ("grid".into(), "60".into())]);
        assert!(matches!(parse_key_values("grid 50", p), Err(Error::Parse { line: 1, .. })));
        let text = format_key_values(&kv);
        assert_eq!(parse_key_values(&text, p).unwrap(), kv);
    }

    #[test]
    fn pgm_layout() {
        let f = ScalarField::from_fn(grid(4), |x, _| x);
        let img = render_pgm(&f);
        let header = b"P5\n4 4\n65535\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(img.len(), header.len() + 2 * 16);
        let px = &img[header.len()..];
        assert_eq!(u16::from_be_bytes([px[0], px[1]]), 0);
        assert_eq!(u16::from_be_bytes([px[6], px[7]]), 65535);

        let c = render_pgm(&ScalarField::constant(grid(4), 3.0));
        assert!(c[header.len()..].chunks(2).all(|p| u16::from_be_bytes([p[0], p[1]]) == 32768));
    }

    #[test]
    fn measurement_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(6);
        let sets: Vec<_> = (0..2)
            .map(|k| MeasurementSet {
                neumann: BoundaryData::constant(g, k as f64),
                dirichlet: BoundaryData::from_fn(g, |x, y| x + y * k as f64),
            })
            .collect();
        write_measurements(dir.path(), &sets).unwrap();
        assert_eq!(read_measurements(dir.path()).unwrap(), sets);
        assert!(matches!(read_measurements(&dir.path().join("none")), Err(Error::Io { .. })));
    }
}
