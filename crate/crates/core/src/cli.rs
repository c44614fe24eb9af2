//! Batch command line: `generate`, `dsm`, `reconstruct`, `evaluate`,
//! `render`. Every subcommand reads and writes files in one output
//! directory, so the stages can be run separately and rerun.
//!
//! Settings are resolved from built-in defaults, then an optional config
//! file (`--config`), then command line flags. The effective settings are
//! written to `config.txt` in the output directory and can be fed back with
//! `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dsm::{DEFAULT_C_PHI, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::experiments::io::{
    format_key_values, parse_key_values, read_field, read_measurements, read_scalar, read_text,
    write_field, write_measurements, write_pgm, write_text, Field,
};
use crate::experiments::metrics::{background_deviation, compute_metrics, CoefficientMetrics};
use crate::experiments::pipeline::{regularizers, run_dsm, synthesize, DsmSettings};
use crate::experiments::{make_example, ExampleSpec, EXAMPLE_NAMES};
use crate::grid::ScalarField;
use crate::model::CoefficientPair;
use crate::optimizer::{adi_reconstruct, bregman_diagnostics, AdiConfig, ReconstructionReport};

pub const CONFIG_VERSION: u32 = 1;
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MEDREC_THREADS";
/// Dilation (in cells) of the true support outside which the background
/// deviation is measured.
pub const BACKGROUND_DILATION: usize = 3;

pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const METRICS_FILE: &str = "metrics.txt";

/// Everything a run depends on. `None` regularization entries come from the
/// example's table (noisy column when `noise > 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub example: String,
    pub grid: usize,
    pub noise: f64,
    pub seed: u64,
    pub theta: f64,
    pub c_phi: f64,
    pub alpha_sigma: Option<f64>,
    pub beta_sigma: Option<f64>,
    pub alpha_mu: Option<f64>,
    pub beta_mu: Option<f64>,
    pub oversample: usize,
    pub max_outer: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            example: "ex1".into(),
            grid: 50,
            noise: 0.0,
            seed: 0,
            theta: DEFAULT_THETA,
            c_phi: DEFAULT_C_PHI,
            alpha_sigma: None,
            beta_sigma: None,
            alpha_mu: None,
            beta_mu: None,
            oversample: 2,
            max_outer: 50,
            out: PathBuf::from("out"),
        }
    }
}

fn config_error(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("{}: {msg}", path.display()))
}

fn parse_value<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_error(path, format!("invalid value '{value}' for key '{key}'")))
}

impl RunConfig {
    /// Applies the entries of a config file on top of `self`. The file must
    /// carry `version = 1`; unknown keys are rejected.
    pub fn apply_file_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let entries = parse_key_values(text, path)?;
        match entries.iter().find(|(k, _)| k == "version") {
            Some((_, v)) if v.parse::<u32>().ok() == Some(CONFIG_VERSION) => {}
            Some((_, v)) => {
                return Err(config_error(path, format!("unsupported config version '{v}'")));
            }
            None => return Err(config_error(path, "missing 'version' key")),
        }
        for (key, value) in &entries {
            let v = value.as_str();
            match key.as_str() {
                "version" => {}
                "example" => self.example = v.to_string(),
                "grid" => self.grid = parse_value(path, key, v)?,
                "noise" => self.noise = parse_value(path, key, v)?,
                "seed" => self.seed = parse_value(path, key, v)?,
                "theta" => self.theta = parse_value(path, key, v)?,
                "cphi" => self.c_phi = parse_value(path, key, v)?,
                "alpha_sigma" => self.alpha_sigma = Some(parse_value(path, key, v)?),
                "beta_sigma" => self.beta_sigma = Some(parse_value(path, key, v)?),
                "alpha_mu" => self.alpha_mu = Some(parse_value(path, key, v)?),
                "beta_mu" => self.beta_mu = Some(parse_value(path, key, v)?),
                "oversample" => self.oversample = parse_value(path, key, v)?,
                "max_outer" => self.max_outer = parse_value(path, key, v)?,
                "out" => self.out = PathBuf::from(v),
                other => return Err(config_error(path, format!("unknown key '{other}'"))),
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = read_text(path)?;
        self.apply_file_text(&text, path)
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = o.$field.clone() { self.$field = v; } )* };
        }
        set!(example, grid, noise, seed, theta, c_phi, oversample, max_outer, out);
        macro_rules! set_opt {
            ($($field:ident),*) => { $( if o.$field.is_some() { self.$field = o.$field; } )* };
        }
        set_opt!(alpha_sigma, beta_sigma, alpha_mu, beta_mu);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !EXAMPLE_NAMES.contains(&self.example.as_str()) {
            return Err(Error::UnknownExample(self.example.clone()));
        }
        if self.grid < 4 {
            return Err(Error::GridTooSmall(self.grid));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and nonnegative, got {}", self.noise));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if !(self.c_phi > 0.0 && self.c_phi.is_finite()) {
            return bad(format!("cphi must be positive, got {}", self.c_phi));
        }
        for (name, v) in [
            ("alpha_sigma", self.alpha_sigma),
            ("beta_sigma", self.beta_sigma),
            ("alpha_mu", self.alpha_mu),
            ("beta_mu", self.beta_mu),
        ] {
            if let Some(v) = v.filter(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.oversample == 0 {
            return bad("oversample must be at least 1".into());
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut entries = vec![
            ("version".to_string(), CONFIG_VERSION.to_string()),
            ("example".into(), self.example.clone()),
            ("grid".into(), self.grid.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("theta".into(), self.theta.to_string()),
            ("cphi".into(), self.c_phi.to_string()),
        ];
        for (key, v) in [
            ("alpha_sigma", self.alpha_sigma),
            ("beta_sigma", self.beta_sigma),
            ("alpha_mu", self.alpha_mu),
            ("beta_mu", self.beta_mu),
        ] {
            if let Some(v) = v {
                entries.push((key.into(), v.to_string()));
            }
        }
        entries.push(("oversample".into(), self.oversample.to_string()));
        entries.push(("max_outer".into(), self.max_outer.to_string()));
        entries.push(("out".into(), self.out.display().to_string()));
        format_key_values(&entries)
    }

    pub fn spec(&self) -> Result<ExampleSpec> {
        make_example(&self.example)
    }

    /// The example's table for the chosen noise column with this config's
    /// overrides applied.
    pub fn regularizers(&self, spec: &ExampleSpec) -> Result<AdiConfig> {
        let table = spec.params(self.noise > 0.0);
        let sigma = (
            self.alpha_sigma.unwrap_or(table.sigma.0),
            self.beta_sigma.unwrap_or(table.sigma.1),
        );
        let mu = table
            .mu
            .map(|(a, b)| (self.alpha_mu.unwrap_or(a), self.beta_mu.unwrap_or(b)));
        let (reg_sigma, reg_mu) = regularizers(spec, self.noise, Some(sigma), mu)?;
        let mut cfg = AdiConfig::new(reg_sigma, reg_mu);
        cfg.max_outer = self.max_outer;
        Ok(cfg)
    }

    fn dsm_settings(&self, spec: &ExampleSpec) -> DsmSettings {
        DsmSettings {
            theta: self.theta,
            c_phi: self.c_phi,
            oversample: self.oversample,
            backgrounds: spec.backgrounds,
            bounds: spec.bounds(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Flags shared by all subcommands; each overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Built-in example: ex1, ex2_1, ex2_2, ex3, ex4
    #[arg(long, global = true)]
    pub example: Option<String>,
    /// Cells per side of the inversion grid
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Relative noise level of the Dirichlet data
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// DSM threshold in (0, 1)
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Scale of the DSM initial guess
    #[arg(long = "cphi", global = true)]
    pub c_phi: Option<f64>,
    #[arg(long, global = true)]
    pub alpha_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub beta_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha_mu: Option<f64>,
    #[arg(long, global = true)]
    pub beta_mu: Option<f64>,
    /// Refinement factor of the grid the data is simulated on
    #[arg(long, global = true)]
    pub oversample: Option<usize>,
    /// Number of alternating iterations
    #[arg(long, global = true)]
    pub max_outer: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(name = "medrec", version, about = "Diffuse optical tomography reconstruction")]
pub struct Cli {
    /// Flat `key = value` config file with `version = 1`
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the true coefficients and the (noisy) boundary measurements
    Generate,
    /// Run the direct sampling method on the measurements
    Dsm,
    /// Run the alternating reconstruction from the DSM initial guess
    Reconstruct,
    /// Compare a reconstruction with the truth and write metrics
    Evaluate {
        /// Reconstructed sigma (default: rec_sigma.txt in the output directory)
        #[arg(long)]
        sigma: Option<PathBuf>,
        /// Reconstructed mu (default: rec_mu.txt in the output directory)
        #[arg(long)]
        mu: Option<PathBuf>,
    },
    /// Write a 16-bit PGM next to every scalar field in the output directory
    Render,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(&self.overrides);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit status for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}

/// Caps rayon's global pool at `MEDREC_THREADS` when it is set. Has no effect
/// if the pool was already built.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialized; {THREADS_ENV} ignored");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Generate => generate(&cfg),
        Command::Dsm => dsm(&cfg),
        Command::Reconstruct => reconstruct(&cfg).map(|_| ()),
        Command::Evaluate { sigma, mu } => evaluate(&cfg, sigma.as_deref(), mu.as_deref()).map(|_| ()),
        Command::Render => render(&cfg).map(|_| ()),
    }
}

fn write_scalar(path: &Path, f: &ScalarField) -> Result<()> {
    write_field(path, &Field::Scalar(f.clone()))
}

fn read_truth(cfg: &RunConfig) -> Result<CoefficientPair> {
    Ok(CoefficientPair {
        sigma: read_scalar(&cfg.path("truth_sigma.txt"))?,
        mu: read_scalar(&cfg.path("truth_mu.txt"))?,
    })
}

/// Writes `truth_{sigma,mu}.txt`, `neumann_k.txt`, `dirichlet_k.txt` and
/// `config.txt`.
pub fn generate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let data = synthesize(&spec, cfg.grid, cfg.oversample, cfg.noise, cfg.seed)?;
    write_scalar(&cfg.path("truth_sigma.txt"), &data.truth.sigma)?;
    write_scalar(&cfg.path("truth_mu.txt"), &data.truth.mu)?;
    write_measurements(&cfg.out, &data.measurements)?;
    write_text(&cfg.path(CONFIG_FILE), &cfg.to_text())?;
    log::info!("{}: {} excitation(s) written to {}", spec.name, data.measurements.len(), cfg.out.display());
    Ok(())
}

/// Writes the index functions `phi_{sigma,mu}.txt`, the masks
/// `mask_{sigma,mu}.txt` (0/1 fields) and the initial guesses
/// `init_{sigma,mu}.txt`. When `mu` is known it is read from `truth_mu.txt`.
pub fn dsm(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec()?;
    let measurements = read_measurements(&cfg.out)?;
    let known = if spec.reconstructs_mu() {
        None
    } else {
        Some(read_scalar(&cfg.path("truth_mu.txt"))?)
    };
    let out = run_dsm(&measurements, &cfg.dsm_settings(&spec), known.as_ref())?;
    let grid = out.initial.sigma.grid();
    let as_field = |m: &ndarray::Array2<bool>| ScalarField::from_array(grid, m.mapv(|b| if b { 1.0 } else { 0.0 }));
    write_scalar(&cfg.path("phi_sigma.txt"), &out.index.phi_sigma)?;
    write_scalar(&cfg.path("phi_mu.txt"), &out.index.phi_mu)?;
    write_scalar(&cfg.path("mask_sigma.txt"), &as_field(&out.mask_sigma.mask)?)?;
    write_scalar(&cfg.path("mask_mu.txt"), &as_field(&out.mask_mu.mask)?)?;
    write_scalar(&cfg.path("init_sigma.txt"), &out.initial.sigma)?;
    write_scalar(&cfg.path("init_mu.txt"), &out.initial.mu)?;
    log::info!(
        "dsm: {} sigma cells, {} mu cells above theta = {}",
        out.mask_sigma.count(),
        out.mask_mu.count(),
        cfg.theta
    );
    Ok(())
}

/// Runs the alternating reconstruction from `init_{sigma,mu}.txt` (running
/// the DSM first if they are missing) and writes `rec_{sigma,mu}.txt` and
/// `report.txt`. A failed subproblem is reported after the outputs are
/// written.
pub fn reconstruct(cfg: &RunConfig) -> Result<ReconstructionReport> {
    let spec = cfg.spec()?;
    let measurements = read_measurements(&cfg.out)?;
    let (init_sigma, init_mu) = (cfg.path("init_sigma.txt"), cfg.path("init_mu.txt"));
    if !init_sigma.exists() || !init_mu.exists() {
        dsm(cfg)?;
    }
    let initial = CoefficientPair {
        sigma: read_scalar(&init_sigma)?,
        mu: read_scalar(&init_mu)?,
    };
    let adi = cfg.regularizers(&spec)?;
    let report = adi_reconstruct(&measurements, &initial, &adi)?;
    write_scalar(&cfg.path("rec_sigma.txt"), &report.coefficients.sigma)?;
    write_scalar(&cfg.path("rec_mu.txt"), &report.coefficients.mu)?;
    write_text(&cfg.path(REPORT_FILE), &report_text(&report))?;
    log::info!(
        "reconstruct: {} iterations, J {:e} -> {:e} ({})",
        report.iterations.len(),
        report.j0(),
        report.j_history.last().copied().unwrap_or(f64::NAN),
        report.stop_reason
    );
    match &report.failure {
        Some(msg) => Err(Error::ReconstructionFailed(msg.clone())),
        None => Ok(report),
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn report_text(report: &ReconstructionReport) -> String {
    let breg = bregman_diagnostics(report);
    let mut entries = vec![
        ("stop_reason", report.stop_reason.to_string()),
        ("outer_iterations", report.iterations.len().to_string()),
        ("j_initial", format!("{:e}", report.j0())),
        ("j_final", format!("{:e}", report.j_history.last().copied().unwrap_or(f64::NAN))),
        ("max_relative_increase", format!("{:e}", report.max_relative_increase())),
        ("min_bregman", format!("{:e}", breg.min_bregman())),
        ("energy_bound_holds", breg.bound_holds().to_string()),
        ("final_state_residual", format!("{:e}", report.final_state_residual)),
        ("final_coeff_residual", format!("{:e}", report.final_coeff_residual)),
        ("stationarity_state_residual", format!("{:e}", report.stationarity_state_residual)),
        ("j_history", join(report.j_history.iter().copied())),
    ];
    if let Some(msg) = &report.failure {
        entries.push(("failure", msg.clone()));
    }
    format_key_values(&entries)
}

fn metric_entries(prefix: &str, m: &CoefficientMetrics, bg_dev: f64) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}_relative_l2_error"), format!("{:e}", m.relative_l2_error)),
        (format!("{prefix}_support_jaccard"), format!("{:e}", m.support_jaccard)),
        (format!("{prefix}_center_errors"), join(m.center_of_mass_errors.iter().copied())),
        (format!("{prefix}_background_deviation"), format!("{bg_dev:e}")),
    ]
}

/// Compares the given reconstruction (default `rec_{sigma,mu}.txt`) with
/// `truth_{sigma,mu}.txt` and writes `metrics.txt`. Returns its contents.
pub fn evaluate(cfg: &RunConfig, sigma: Option<&Path>, mu: Option<&Path>) -> Result<String> {
    let truth = read_truth(cfg)?;
    let rec = CoefficientPair {
        sigma: read_scalar(&sigma.map_or_else(|| cfg.path("rec_sigma.txt"), Path::to_path_buf))?,
        mu: read_scalar(&mu.map_or_else(|| cfg.path("rec_mu.txt"), Path::to_path_buf))?,
    };
    let m = compute_metrics(&rec, &truth)?;
    let mut entries = metric_entries(
        "sigma",
        &m.sigma,
        background_deviation(&rec.sigma, &truth.sigma, BACKGROUND_DILATION),
    );
    entries.extend(metric_entries(
        "mu",
        &m.mu,
        background_deviation(&rec.mu, &truth.mu, BACKGROUND_DILATION),
    ));
    let text = format_key_values(&entries);
    write_text(&cfg.path(METRICS_FILE), &text)?;
    print!("{text}");
    Ok(text)
}

/// Renders every scalar field file in the output directory to a PGM with the
/// same stem. Returns the written image paths in sorted order.
pub fn render(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let listing = fs::read_dir(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut inputs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    inputs.sort();
    let mut written = Vec::new();
    for path in inputs {
        let is_field = read_text(&path)?.starts_with("medrec-field");
        if !is_field {
            continue;
        }
        if let Field::Scalar(f) = read_field(&path)? {
            let target = path.with_extension("pgm");
            write_pgm(&target, &f)?;
            written.push(target);
        }
    }
    log::info!("render: {} image(s)", written.len());
    Ok(written)
}
