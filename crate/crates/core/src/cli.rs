//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration or usage error,
//! 3 unreadable or inconsistent input data.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::geometry::GroundTruth;
use crate::harness::{
    self, BoundsSource, FixtureConfig, HarnessError, ReportFormat, SweepResult, VerificationConfig,
};
use crate::iou_bounds::{
    optimal_lower, optimal_upper, vanilla_bounds, BoxBounds, LowerWitness, Method,
};
use crate::network::{self, NetworkError};
use crate::oracle::{self, CampaignConfig, CampaignReport, OracleError};
use crate::perturbation::{
    sweep_magnitudes, ContrastMode, PerturbationError, PerturbationKind, PerturbationSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "certbox",
    version,
    about = "Certified IoU bounds for object localisation under image perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify a dataset against a perturbation sweep and report VBA.
    Verify(VerifyArgs),
    /// Print IoU bounds for a ground truth and a box-bounds set.
    IouBounds(IouBoundsArgs),
    /// Run the randomized exactness and soundness campaign.
    Oracle(OracleArgs),
    /// Write the synthetic rectangle dataset and its detector.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Vanilla,
    Optimal,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Vanilla => vec![Method::Vanilla],
            MethodArg::Optimal => vec![Method::Optimal],
            MethodArg::Both => vec![Method::Vanilla, Method::Optimal],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Whitenoise,
    Brightness,
    Contrast,
}

impl From<KindArg> for PerturbationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Whitenoise => PerturbationKind::WhiteNoise,
            KindArg::Brightness => PerturbationKind::Brightness,
            KindArg::Contrast => PerturbationKind::Contrast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ContrastArg {
    Literal,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TextFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Detector model file; step-1 bounds come from interval propagation.
    #[arg(long, conflicts_with = "bounds", required_unless_present = "bounds")]
    model: Option<PathBuf>,
    /// Precomputed box bounds keyed by image id.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    perturbation: KindArg,
    /// Smallest magnitude of the sweep.
    #[arg(long, default_value_t = 0.0)]
    min: f64,
    /// Largest magnitude of the sweep.
    #[arg(long)]
    max: f64,
    /// Number of evenly spaced magnitudes from min to max.
    #[arg(long, default_value_t = 11)]
    steps: usize,
    /// Safety threshold on the certified IoU lower bound, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    /// Contrast semantics: `literal` scales by alpha, `relative` by 1 + alpha.
    #[arg(long, value_enum, default_value_t = ContrastArg::Relative)]
    contrast_mode: ContrastArg,
    /// Perturb with parameters in [0, m] instead of [-m, m].
    #[arg(long)]
    one_sided: bool,
    /// Intersect perturbed pixel ranges with [0, 1].
    #[arg(long)]
    clamp_input: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "CERTBOX_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Per-record report destination.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Record zero timings so reports are byte-reproducible.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Debug, Args)]
struct IouBoundsArgs {
    /// Ground truth `z0,z1,z2,z3`.
    #[arg(long, allow_hyphen_values = true)]
    gt: String,
    /// Lower corner of the coordinate intervals, `z0,z1,z2,z3`.
    #[arg(long, allow_hyphen_values = true)]
    lower: String,
    /// Upper corner of the coordinate intervals, `z0,z1,z2,z3`.
    #[arg(long, allow_hyphen_values = true)]
    upper: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    format: TextFormat,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Lattice divisions per coordinate for the grid oracle.
    #[arg(long, default_value_t = oracle::DEFAULT_DIVISIONS)]
    divisions: usize,
    /// Interior samples per instance for the soundness check.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    format: TextFormat,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 24)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with its exit code and one-line message.
struct Failure(i32, String);

fn config(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_CONFIG, msg.to_string())
}

fn data(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_DATA, msg.to_string())
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => config(e),
            HarnessError::Perturbation(ref p) => Failure::from(p.clone()),
            _ => data(e),
        }
    }
}

impl From<PerturbationError> for Failure {
    fn from(e: PerturbationError) -> Self {
        match e {
            PerturbationError::Magnitude(_)
            | PerturbationError::Sweep { .. }
            | PerturbationError::NoSamples => config(e),
            _ => data(e),
        }
    }
}

impl From<NetworkError> for Failure {
    fn from(e: NetworkError) -> Self {
        data(e)
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        config(e)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Output goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::IouBounds(a) => cmd_iou_bounds(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<i32, Failure> {
    let kind = PerturbationKind::from(a.perturbation);
    let mode = match a.contrast_mode {
        ContrastArg::Literal => ContrastMode::Literal,
        ContrastArg::Relative => ContrastMode::Relative,
    };
    let sweep = sweep_magnitudes(a.min, a.max, a.steps)?
        .into_iter()
        .map(|m| {
            PerturbationSpec::new(kind, m)
                .map(|s| s.with_contrast_mode(mode).with_one_sided(a.one_sided))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = VerificationConfig::new(sweep);
    cfg.threshold = a.threshold;
    cfg.methods = a.method.methods().into_iter().collect();
    cfg.clamp01 = a.clamp_input;
    cfg.seed = a.seed;
    cfg.workers = a.workers;
    cfg.record_timings = !a.no_timings;
    cfg.validate()?;
    if a.bounds.is_some() && cfg.sweep.len() != 1 {
        return Err(config(
            "--bounds holds one perturbation per image; use --steps 1 with --min equal to --max",
        ));
    }

    let dataset = harness::load_dataset(&a.dataset)?;
    let result = match (&a.model, &a.bounds) {
        (Some(path), None) => {
            let net = network::load_network(path)?;
            harness::run_sweep(&dataset, BoundsSource::Ibp(&net), &cfg)?
        }
        (None, Some(path)) => {
            let ext = network::load_external_bounds(path)?;
            harness::run_sweep(&dataset, BoundsSource::External(&ext), &cfg)?
        }
        _ => return Err(config("exactly one of --model and --bounds is required")),
    };
    print_table(&result, &cfg);
    if let Some(path) = &a.report {
        let format = match a.format {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        };
        harness::write_report(&result.records, path, format)?;
        println!(
            "wrote {} records to {}",
            result.records.len(),
            path.display()
        );
    }
    Ok(EXIT_OK)
}

fn print_table(result: &SweepResult, cfg: &VerificationConfig) {
    println!("threshold {}", cfg.threshold);
    println!(
        "{:<11} {:>12} {:>7} {:>7} {:>11} {:>11} {:>11} {:>11} {:>11}",
        "kind",
        "magnitude",
        "images",
        "vba",
        "vanilla_vba",
        "optimal_vba",
        "vanilla_lo",
        "optimal_lo",
        "optimal_hi"
    );
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for row in &result.table {
        println!(
            "{:<11} {:>12} {:>7} {:>7.4} {:>11} {:>11} {:>11} {:>11} {:>11}",
            row.spec.kind.name(),
            row.spec.magnitude,
            row.images,
            row.vba,
            cell(row.vanilla.map(|s| s.vba)),
            cell(row.optimal.map(|s| s.vba)),
            cell(row.vanilla.map(|s| s.mean_lo)),
            cell(row.optimal.map(|s| s.mean_lo)),
            cell(row.optimal.map(|s| s.mean_hi)),
        );
    }
}

fn parse_coords(flag: &str, s: &str) -> Result<[f64; 4], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(config(format!(
            "--{flag} needs four comma-separated numbers, got `{s}`"
        )));
    }
    let mut z = [0.0; 4];
    for (slot, p) in z.iter_mut().zip(&parts) {
        *slot = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| config(format!("--{flag}: `{p}` is not a finite number")))?;
    }
    Ok(z)
}

fn cmd_iou_bounds(a: IouBoundsArgs) -> Result<i32, Failure> {
    let gt =
        GroundTruth::new(parse_coords("gt", &a.gt)?).map_err(|e| config(format!("--gt: {e}")))?;
    let bb = BoxBounds::from_corners(
        parse_coords("lower", &a.lower)?,
        parse_coords("upper", &a.upper)?,
    )
    .map_err(config)?;
    let methods = a.method.methods();
    let mut out = serde_json::Map::new();
    out.insert("gt".into(), json!(gt.coords()));
    out.insert("box_bounds".into(), json!(bb));
    let mut text = Vec::new();
    for m in methods {
        match m {
            Method::Vanilla => {
                let v = vanilla_bounds(&gt, &bb);
                text.push(format!("vanilla lo {} hi {}", v.lo, v.hi));
                out.insert("vanilla".into(), json!({"lo": v.lo, "hi": v.hi}));
            }
            Method::Optimal => {
                let (hi, argmax) = optimal_upper(&gt, &bb);
                let (lo, witness) = optimal_lower(&gt, &bb);
                let mut entry = json!({"lo": lo, "hi": hi, "argmax": argmax.coords()});
                match witness {
                    LowerWitness::Collapsed => {
                        entry["reason"] = json!("collapsed");
                        text.push(format!(
                            "optimal lo {lo} hi {hi} argmax {:?} (lo: collapsed)",
                            argmax.coords()
                        ));
                    }
                    LowerWitness::Vertex(b) => {
                        entry["argmin"] = json!(b.coords());
                        text.push(format!(
                            "optimal lo {lo} hi {hi} argmin {:?} argmax {:?}",
                            b.coords(),
                            argmax.coords()
                        ));
                    }
                }
                out.insert("optimal".into(), entry);
            }
        }
    }
    match a.format {
        TextFormat::Text => text.iter().for_each(|l| println!("{l}")),
        TextFormat::Json => println!("{}", serde_json::Value::Object(out)),
    }
    Ok(EXIT_OK)
}

fn oracle_lines(r: &CampaignReport, cfg: &CampaignConfig) -> Vec<String> {
    vec![
        format!(
            "trials {} (collapsed {}), seed {}, divisions {}",
            r.trials, r.collapsed_instances, cfg.seed, cfg.divisions
        ),
        format!(
            "max optimal-vs-vertex deviation {:e} (tolerance {:e})",
            r.max_exactness_deviation,
            oracle::EXACTNESS_TOL
        ),
        format!(
            "grid containment violations {}, max grid gap {:.6} (tolerance {}), max bare-lattice gap {:.6}",
            r.grid_containment_violations,
            r.max_grid_gap,
            oracle::GRID_GAP_TOL,
            r.max_lattice_gap
        ),
        format!("dominance violations {}", r.dominance_violations),
        format!(
            "soundness violations: vanilla {}, optimal {} over {} samples",
            r.vanilla_soundness_violations, r.optimal_soundness_violations, r.samples_checked
        ),
        format!(
            "two-vertex probe: min over {{lower, upper}} exceeds the 16-vertex minimum on {} of {} instances (max gap {:.6}); two-vertex optimal lower bound differs on {}",
            r.extremes_looser, r.extremes_probed, r.max_extremes_gap, r.extremes_variant_differs
        ),
        format!("result: {}", if r.passed() { "pass" } else { "FAIL" }),
    ]
}

fn cmd_oracle(a: OracleArgs) -> Result<i32, Failure> {
    if a.trials == 0 {
        return Err(config("--trials must be at least 1"));
    }
    let cfg = CampaignConfig {
        trials: a.trials,
        seed: a.seed,
        divisions: a.divisions,
        samples: a.samples,
        grid: true,
    };
    let report = oracle::run_campaign(&cfg)?;
    match a.format {
        TextFormat::Text => oracle_lines(&report, &cfg)
            .iter()
            .for_each(|l| println!("{l}")),
        TextFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serialises")
        ),
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK })
}

fn cmd_fixture(a: FixtureArgs) -> Result<i32, Failure> {
    let cfg = FixtureConfig {
        images: a.images,
        ..FixtureConfig::default()
    };
    let files = harness::write_fixture(&a.out, &cfg, a.seed)?;
    println!("manifest {}", files.manifest.display());
    println!("model {}", files.model.display());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn coordinate_parsing() {
        assert_eq!(
            parse_coords("gt", "3, 1,6,4").ok().unwrap(),
            [3.0, 1.0, 6.0, 4.0]
        );
        assert!(parse_coords("gt", "1,2,3").is_err());
        assert!(parse_coords("gt", "1,2,3,nan").is_err());
        assert!(parse_coords("gt", "1,2,3,x").is_err());
    }
}
