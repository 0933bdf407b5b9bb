//! Command-line front end for the benchmark suites.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use floodstream_core::bench::{
    render_rate_map, run_dual_buffer_suite, run_kernel_comparison, run_transfer_baseline, run_transform_sweep,
    welch_t_test, BenchError, BenchReport, CsvRow, Environment, Scale, SweepSpec,
};
use floodstream_core::calibration::{calibrate_profile, CalibrationTargets};
use floodstream_core::{AlgorithmVariant, DeviceProfile};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROFILE: &str = "paper-hd7950";

#[derive(Debug, Parser)]
#[command(name = "bench", version, about = "Benchmark suites on the simulated transfer/transform/compute device")]
pub struct Cli {
    /// Built-in profile name (paper-hd7950, synthetic) or path to a profile JSON file.
    #[arg(long, global = true, default_value = DEFAULT_PROFILE)]
    pub profile: String,
    /// `csv` or `json` to print to stdout, or a file path (`.json` selects JSON, anything else CSV).
    #[arg(long, global = true, default_value = "csv")]
    pub out: String,
    #[arg(long, global = true, default_value_t = Scale::Desk)]
    pub scale: Scale,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Buffer copy rate against transfer size.
    Transfer(TransferArgs),
    /// Single- and double-buffered streaming variants.
    Dual(DualArgs),
    /// Buffer-to-image transform rate over a grid of image sizes.
    Sweep(SweepArgs),
    /// The four accumulation kernels.
    Kernels(KernelArgs),
    /// Welch's t-test between two variants' per-run samples.
    Ttest(TtestArgs),
    /// Fit a profile to a table of published timings; the profile is written as JSON.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long, default_value_t = 65_536)]
    pub min: u64,
    #[arg(long, default_value_t = 67_108_864)]
    pub max: u64,
    #[arg(long, default_value_t = 65_536)]
    pub step: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: u32,
}

#[derive(Debug, Args)]
pub struct DualArgs {
    /// Comma-separated variants; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<AlgorithmVariant>,
    /// Comma-separated dims: 2k, 4k, 8k or WxH.
    #[arg(long, value_delimiter = ',', default_value = "2k,4k,8k")]
    pub dims: Vec<String>,
    /// Comma-separated item counts; defaults to 10,100,1000 (plus 10000 at paper scale).
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: u32,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 128)]
    pub start: u32,
    #[arg(long, default_value_t = 128)]
    pub step: u32,
    /// Largest side; defaults to 4096 at desk scale and 16384 at paper scale.
    #[arg(long)]
    pub max: Option<u32>,
    /// Write the rendered rate map to this PNG file.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long, default_value = "4k")]
    pub dims: String,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: u64,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[arg(long, default_value = "1b-final")]
    pub a: AlgorithmVariant,
    #[arg(long, default_value = "2b-final")]
    pub b: AlgorithmVariant,
    #[arg(long, default_value = "8k")]
    pub dims: String,
    #[arg(long, default_value_t = 1_000)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub repeats: u32,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Targets JSON; defaults to the built-in published table.
    #[arg(long)]
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtestRow {
    pub a: AlgorithmVariant,
    pub b: AlgorithmVariant,
    pub n: usize,
    pub width: u32,
    pub height: u32,
    pub repeats: u32,
    pub mean_a_us: f64,
    pub mean_b_us: f64,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
}

impl CsvRow for TtestRow {
    fn header() -> Vec<&'static str> {
        vec!["a", "b", "n", "width", "height", "repeats", "mean_a_us", "mean_b_us", "t", "dof", "p"]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.a.label().to_string(),
            self.b.label().to_string(),
            self.n.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.repeats.to_string(),
            self.mean_a_us.to_string(),
            self.mean_b_us.to_string(),
            self.t.to_string(),
            self.dof.to_string(),
            format!("{:e}", self.p),
        ]
    }
}

/// Where and how a result is written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Stdout { json: bool },
    File { path: PathBuf, json: bool },
}

impl Output {
    pub fn parse(spec: &str) -> Output {
        match spec {
            "csv" => Output::Stdout { json: false },
            "json" => Output::Stdout { json: true },
            path => {
                let path = PathBuf::from(path);
                let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                Output::File { path, json }
            }
        }
    }

    fn json(&self) -> bool {
        match self {
            Output::Stdout { json } | Output::File { json, .. } => *json,
        }
    }

    fn emit(&self, text: &str, stdout: &mut dyn Write) -> anyhow::Result<()> {
        match self {
            Output::Stdout { .. } => stdout.write_all(text.as_bytes()).context("writing stdout"),
            Output::File { path, .. } => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        }
    }

    fn report<R: CsvRow + Serialize>(&self, report: &BenchReport<R>, stdout: &mut dyn Write) -> anyhow::Result<()> {
        let text = if self.json() { report.to_json_pretty() + "\n" } else { report.to_csv_string() };
        self.emit(&text, stdout)
    }
}

/// Resolves a built-in profile name or a JSON file.
pub fn load_profile(spec: &str) -> anyhow::Result<DeviceProfile> {
    match spec {
        DEFAULT_PROFILE => Ok(DeviceProfile::paper_calibrated()),
        "synthetic" => Ok(DeviceProfile::synthetic_default()),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading profile {path}"))?;
            DeviceProfile::from_json(&text).map_err(|e| BenchError::Validation(format!("profile {path}: {e}")).into())
        }
    }
}

/// `2k`, `4k`, `8k` or `WxH`.
pub fn parse_dims(spec: &str) -> Result<(u32, u32), BenchError> {
    match spec.trim().to_ascii_lowercase().as_str() {
        "2k" => Ok((1856, 2208)),
        "4k" => Ok((3712, 4416)),
        "8k" => Ok((7424, 8832)),
        other => {
            let parsed = other.split_once('x').and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)));
            match parsed {
                Some((w, h)) if w > 0 && h > 0 => Ok((w, h)),
                _ => Err(BenchError::Validation(format!("bad dims `{spec}` (expected 2k, 4k, 8k or WxH)"))),
            }
        }
    }
}

/// True when the error should map to exit code 2.
pub fn is_validation(err: &anyhow::Error) -> bool {
    err.downcast_ref::<BenchError>().is_some_and(BenchError::is_validation)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let out = Output::parse(&cli.out);
    if let Command::Calibrate(args) = &cli.command {
        return calibrate(args, &out, stdout);
    }
    let profile = load_profile(&cli.profile)?;
    match &cli.command {
        Command::Transfer(a) => {
            let report = run_transfer_baseline(&profile, a.min, a.max, a.step, a.repeats, cli.seed)?;
            out.report(&report, stdout)
        }
        Command::Dual(a) => {
            let variants = if a.variants.is_empty() { AlgorithmVariant::ALL.to_vec() } else { a.variants.clone() };
            let dims = a.dims.iter().map(|d| parse_dims(d)).collect::<Result<Vec<_>, _>>()?;
            let ns = if !a.n.is_empty() {
                a.n.clone()
            } else if cli.scale == Scale::Paper {
                vec![10, 100, 1_000, 10_000]
            } else {
                vec![10, 100, 1_000]
            };
            let report = run_dual_buffer_suite(&profile, &variants, &dims, &ns, a.repeats, cli.seed, cli.scale)?;
            out.report(&report, stdout)
        }
        Command::Sweep(a) => {
            let max = a.max.unwrap_or(match cli.scale {
                Scale::Desk => Scale::DESK_SWEEP_MAX_PX,
                Scale::Paper => 16_384,
            });
            let map = run_transform_sweep(&profile, SweepSpec::new(a.start, a.step, max), cli.scale.sweep_limits())?;
            if let Some(path) = &a.map {
                render_rate_map(&map).save(path).with_context(|| format!("writing {}", path.display()))?;
            }
            let text = if out.json() {
                serde_json::to_string_pretty(&map)? + "\n"
            } else {
                let mut buf = Vec::new();
                map.write_csv(&mut buf)?;
                String::from_utf8(buf)?
            };
            out.emit(&text, stdout)
        }
        Command::Kernels(a) => {
            let (w, h) = parse_dims(&a.dims)?;
            let report = run_kernel_comparison(&profile, w, h, a.iterations, cli.seed)?;
            out.report(&report, stdout)
        }
        Command::Ttest(a) => {
            let (w, h) = parse_dims(&a.dims)?;
            if a.a == a.b {
                bail!(BenchError::Validation("t-test needs two different variants".into()));
            }
            let suite = run_dual_buffer_suite(&profile, &[a.a, a.b], &[(w, h)], &[a.n], a.repeats, cli.seed, cli.scale)?;
            let (ra, rb) = (&suite.rows[0], &suite.rows[1]);
            if ra.samples.is_empty() || rb.samples.is_empty() {
                bail!(BenchError::Validation(format!("{w}x{h} is not supported by profile {}", profile.name)));
            }
            let welch = welch_t_test(&ra.samples, &rb.samples)?;
            let row = TtestRow {
                a: a.a,
                b: a.b,
                n: a.n,
                width: w,
                height: h,
                repeats: a.repeats,
                mean_a_us: ra.mean_sample_us.unwrap_or_default(),
                mean_b_us: rb.mean_sample_us.unwrap_or_default(),
                t: welch.t,
                dof: welch.dof,
                p: welch.p,
            };
            let report = BenchReport::new("ttest", Environment::simulated(&profile.name, cli.seed), vec![row]);
            out.report(&report, stdout)
        }
        Command::Calibrate(_) => unreachable!("handled above"),
    }
}

fn calibrate(args: &CalibrateArgs, out: &Output, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let targets = match &args.targets {
        None => CalibrationTargets::paper(),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading targets {}", path.display()))?;
            CalibrationTargets::from_json(&text).map_err(|e| BenchError::Validation(e.to_string()))?
        }
    };
    let cal = calibrate_profile(&targets).map_err(|e| BenchError::Validation(e.to_string()))?;
    for r in &cal.residuals.streams {
        eprintln!(
            "{:<28} total {:+.3}%  efficiency {:.2}% (target {:.2}%){}",
            r.row,
            100.0 * r.total_rel_error,
            100.0 * r.predicted_efficiency,
            100.0 * r.target_efficiency,
            if r.fitted { "" } else { "  [predicted]" }
        );
    }
    out.emit(&(cal.profile.to_json_pretty() + "\n"), stdout)
}
