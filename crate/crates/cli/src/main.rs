//! `lcafix`: recover, apply and measure lateral chromatic aberration
//! corrections.
//!
//! Exit status is 0 on success, 1 on any error and 2 when recovery stops
//! without converging (unless `--allow-nonconverged`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcafix::optim::GradientScheme;
use lcafix::{Coefficients, QueryWeights, RecoverySettings};

#[derive(Debug, Parser)]
#[command(
    name = "lcafix",
    version,
    about = "Lateral chromatic aberration recovery and correction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Recover R-G and B-G coefficients from an image and store them.
    Recover(RecoverArgs),
    /// Correct an image with coefficients looked up in the database.
    Correct(CorrectArgs),
    /// Apply a known aberration to an image.
    Distort(DistortArgs),
    /// Write the spatial-frequency change between two images as CSV.
    Quantify(QuantifyArgs),
    /// Brute-force the error over an (a, b) grid with c = d = 0.
    Sweep(SweepArgs),
    /// Inspect the lens database.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Render a synthetic chequerboard with a known aberration.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
enum DbCommand {
    /// Print every record, optionally for one lens.
    List {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        lens: Option<String>,
    },
}

#[derive(Debug, Args)]
struct RecoverArgs {
    image: PathBuf,
    #[arg(long)]
    db: PathBuf,
    /// Per-evaluation CSV of both runs.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the corrected image to `--out`.
    #[arg(long, requires = "out")]
    write_corrected: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recover even if the sidecar says the image is already corrected.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    allow_nonconverged: bool,
    /// Record timestamp (RFC 3339). Falls back to SOURCE_DATE_EPOCH, then now.
    #[arg(long)]
    created_at: Option<String>,
    #[arg(long, value_parser = parse_centre, allow_hyphen_values = true)]
    centre: Option<(f64, f64)>,
    #[command(flatten)]
    settings: SettingsArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scheme {
    Forward,
    Central,
}

#[derive(Debug, Args)]
struct SettingsArgs {
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    fd_step: Option<f64>,
    #[arg(long)]
    f_rel_tol: Option<f64>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long, value_enum)]
    gradient: Option<Scheme>,
    /// Starting point a,b,c,d.
    #[arg(long, value_parser = parse_coeffs, allow_hyphen_values = true)]
    init: Option<Coefficients>,
}

impl SettingsArgs {
    fn resolve(&self) -> RecoverySettings {
        let mut s = RecoverySettings::default();
        if let Some(v) = self.max_evals {
            s.max_evals = v;
        }
        if let Some(v) = self.fd_step {
            s.fd_step = v;
        }
        if let Some(v) = self.f_rel_tol {
            s.f_rel_tol = v;
        }
        if let Some(v) = self.history {
            s.history = v;
        }
        if let Some(v) = self.gradient {
            s.gradient = match v {
                Scheme::Forward => GradientScheme::Forward,
                Scheme::Central => GradientScheme::Central,
            };
        }
        if let Some(v) = self.init {
            s.init = v;
        }
        s
    }
}

#[derive(Debug, Args)]
struct CorrectArgs {
    image: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Blend bracketing records instead of taking the nearest one.
    #[arg(long, conflicts_with = "weights")]
    interpolate: bool,
    /// Nearest-neighbour weights for focal length, aperture, focus distance.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<QueryWeights>,
    #[arg(long, value_parser = parse_centre, allow_hyphen_values = true)]
    centre: Option<(f64, f64)>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct DistortArgs {
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_coeffs, allow_hyphen_values = true)]
    coeffs_rg: Coefficients,
    #[arg(long, value_parser = parse_coeffs, allow_hyphen_values = true)]
    coeffs_bg: Coefficients,
    #[arg(long, value_parser = parse_centre, allow_hyphen_values = true)]
    centre: Option<(f64, f64)>,
}

#[derive(Debug, Args)]
struct QuantifyArgs {
    before: PathBuf,
    after: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hann smoothing length in bins.
    #[arg(long, default_value_t = lcafix::quantify::DEFAULT_HANN_WINDOW)]
    window: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlaneArg {
    R,
    B,
}

#[derive(Debug, Args)]
struct SweepArgs {
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "r")]
    plane: PlaneArg,
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "0.95,1.05")]
    a_range: (f64, f64),
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true, default_value = "-0.05,0.05")]
    b_range: (f64, f64),
    /// Grid points per axis.
    #[arg(long, default_value_t = 41)]
    steps: usize,
    #[arg(long, value_parser = parse_centre, allow_hyphen_values = true)]
    centre: Option<(f64, f64)>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = lcafix::synth::DEFAULT_WIDTH)]
    width: usize,
    #[arg(long, default_value_t = lcafix::synth::DEFAULT_HEIGHT)]
    height: usize,
    #[arg(long, default_value_t = lcafix::synth::DEFAULT_CELL)]
    cell: usize,
    #[arg(long, value_parser = parse_coeffs, allow_hyphen_values = true)]
    coeffs_rg: Option<Coefficients>,
    #[arg(long, value_parser = parse_coeffs, allow_hyphen_values = true)]
    coeffs_bg: Option<Coefficients>,
    /// Pass the result through a simulated Bayer sensor.
    #[arg(long)]
    sensor: bool,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value = "synthetic")]
    lens_id: String,
    #[arg(long, default_value_t = 50.0)]
    focal_length: f64,
    #[arg(long, default_value_t = 8.0)]
    aperture: f64,
    #[arg(long, default_value_t = 3000.0)]
    focus_distance: f64,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!(
            "expected {N} comma-separated numbers, got {}",
            parts.len()
        ));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

fn parse_coeffs(s: &str) -> Result<Coefficients, String> {
    let [a, b, c, d] = parse_floats::<4>(s)?;
    Ok(Coefficients::new(a, b, c, d))
}

fn parse_centre(s: &str) -> Result<(f64, f64), String> {
    let [x, y] = parse_floats::<2>(s)?;
    Ok((x, y))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let [lo, hi] = parse_floats::<2>(s)?;
    if lo > hi {
        return Err(format!("range {lo},{hi} is reversed"));
    }
    Ok((lo, hi))
}

fn parse_weights(s: &str) -> Result<QueryWeights, String> {
    let [w_focal, w_aperture, w_focus] = parse_floats::<3>(s)?;
    let w = QueryWeights {
        w_focal,
        w_aperture,
        w_focus,
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
