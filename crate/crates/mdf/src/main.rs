//! Command-line front end: run selection rules on p-value files, certify
//! configurations by simulation, build power-optimal size families, and
//! validate families against their structural conditions.
//!
//! Exit codes are a stable contract:
//!   0 success (and all checked bounds held)
//!   1 input parse error (CSV/IO)
//!   2 invalid configuration (bad flags, rejected or malformed family)
//!   3 a simulated error-rate bound check failed
//!   4 optimizer non-convergence or repair failure
//!   5 family validation verdict failed

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use mdf::error::{Error, Result};
use mdf::optsize::{build_optimal_family, uniform_interior_grid, RocModel};
use mdf::procedures::{run_procedure, Procedure};
use mdf::pvalues::TestBattery;
use mdf::simlab::{check_bounds, run_experiment_with_counts, write_replicates_csv, SimConfig};
use mdf::sizefam::{
    knot_grid, validate_family, validate_family_at, FamilySpec, SizeFamily, ValidationReport,
};

#[derive(Parser)]
#[command(
    name = "mdf",
    version,
    about = "Simultaneous hypothesis testing with per-test size functions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a selection rule on a CSV of p-values and report the decisions.
    Test(TestArgs),
    /// Estimate error rates for a configured data model by simulation.
    Simulate(SimulateArgs),
    /// Build a power-optimal tabulated size family for known effects.
    Optimize(OptimizeArgs),
    /// Check a size family against its structural conditions.
    ValidateSizes(ValidateArgs),
}

#[derive(Args)]
struct TestArgs {
    /// CSV with header `id,p` or `id,p,z`.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the outcome JSON (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Error budget for the selection rule.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// One of: dagger, star, holm-sidak, bh.
    #[arg(long, default_value = "dagger")]
    procedure: String,
    /// Size family: inline JSON, a JSON file path, or a builtin
    /// (`sidak`, `bonferroni`) sized to the battery.
    #[arg(long, default_value = "sidak")]
    sizes: String,
    /// Also write `<output>.plot.csv` with the rejection count at
    /// q = 0.001, 0.002, ..., 0.250.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config, TOML or JSON (sniffed by leading `{`).
    #[arg(long)]
    input: PathBuf,
    /// Where to write the result JSON (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the config's error budget.
    #[arg(long)]
    q: Option<f64>,
    /// Override the config's procedure.
    #[arg(long)]
    procedure: Option<String>,
    /// Override the config's size family (inline JSON, file, or builtin).
    #[arg(long)]
    sizes: Option<String>,
    /// Override the config's RNG seed.
    #[arg(long, env = "MDF_SEED")]
    seed: Option<u64>,
    /// Override the config's bound-check width (multiples of the SE).
    #[arg(long)]
    k_sigma: Option<f64>,
    /// Also write `<output>.replicates.csv` with per-replicate tallies.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Comma-separated effect sizes, e.g. `3.0,0.5`.
    #[arg(long, conflicts_with = "input")]
    thetas: Option<String>,
    /// JSON file {"thetas": [...], "grid": [...]} (grid optional).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Where to write the family JSON (stdout when omitted); a validation
    /// report goes to `<output>.report.json` when a path is given.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of uniform interior grid levels when no grid is supplied.
    #[arg(long, default_value_t = 999)]
    grid_size: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Family JSON file to check.
    #[arg(long, conflicts_with = "sizes")]
    input: Option<PathBuf>,
    /// Family as inline JSON instead of a file.
    #[arg(long)]
    sizes: Option<String>,
    /// Where to write the report JSON (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Test(args) => cmd_test(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Optimize(args) => cmd_optimize(args),
        Cmd::ValidateSizes(args) => cmd_validate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::CsvParse { .. } | Error::EmptyBattery | Error::Io(_) | Error::Json(_) => 1,
        Error::Domain(_)
        | Error::Config(_)
        | Error::InvalidFamily(_)
        | Error::LengthMismatch { .. }
        | Error::IdMismatch(_)
        | Error::FamilyRejected(_) => 2,
        Error::NoConvergence { .. }
        | Error::RepairBudget { .. }
        | Error::RepairInfeasible { .. } => 4,
    }
}

/// Interpret `--sizes`: inline JSON (leading `{`), then a path to a JSON
/// file, then a builtin name sized to the battery at hand.
fn resolve_family(sizes: &str, m_hint: Option<usize>) -> Result<SizeFamily> {
    let trimmed = sizes.trim();
    if trimmed.starts_with('{') {
        return family_from_json(trimmed);
    }
    let path = Path::new(trimmed);
    if path.exists() {
        return family_from_json(&fs::read_to_string(path)?);
    }
    let m = || {
        m_hint.map(|m| m as u32).ok_or_else(|| {
            Error::Config(format!(
                "builtin family `{trimmed}` needs a battery or config to size it"
            ))
        })
    };
    match trimmed {
        "sidak" => SizeFamily::sidak(m()?),
        "bonferroni" => SizeFamily::bonferroni(m()?),
        other => Err(Error::Config(format!(
            "--sizes must be inline JSON, a JSON file path, or one of \
             `sidak`, `bonferroni`; got `{other}`"
        ))),
    }
}

/// Family-JSON syntax problems count as a malformed family (config error),
/// not an input parse failure.
fn family_from_json(s: &str) -> Result<SizeFamily> {
    let spec: FamilySpec =
        serde_json::from_str(s).map_err(|e| Error::InvalidFamily(format!("family JSON: {e}")))?;
    SizeFamily::from_spec(&spec)
}

/// Check a family on its natural grid: the knots for tabulated kinds, a
/// uniform sweep for analytic ones.
fn validate_on_natural_grid(family: &SizeFamily) -> ValidationReport {
    let k_max = family.len() as u32;
    match knot_grid(family) {
        Some(grid) => validate_family_at(family, &grid, k_max, 1e-9),
        None => validate_family(family, 1001, k_max, 1e-9),
    }
}

fn write_or_stdout(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn sidecar(path: Option<&Path>, suffix: &str, what: &str) -> Result<PathBuf> {
    let base = path.ok_or_else(|| {
        Error::Config(format!(
            "--emit-plot-data writes {what} next to --output; give --output"
        ))
    })?;
    let mut name = base.as_os_str().to_owned();
    name.push(suffix);
    Ok(PathBuf::from(name))
}

fn cmd_test(args: &TestArgs) -> Result<u8> {
    let battery = TestBattery::from_csv_path(&args.input)?;
    let procedure = Procedure::from_str(&args.procedure)?;
    let family = resolve_family(&args.sizes, Some(battery.len()))?;
    let outcome = run_procedure(&battery, &family, procedure, args.q)?;

    let json = serde_json::to_string_pretty(&outcome)? + "\n";
    write_or_stdout(args.output.as_deref(), &json)?;

    if args.emit_plot_data {
        let plot_path = sidecar(args.output.as_deref(), ".plot.csv", "the rejection curve")?;
        let mut csv = String::from("q,J\n");
        for k in 1..=250u32 {
            let q = k as f64 / 1000.0;
            let at_q = run_procedure(&battery, &family, procedure, q)?;
            csv.push_str(&format!("{q},{}\n", at_q.j));
        }
        fs::write(plot_path, csv)?;
    }
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let raw = fs::read_to_string(&args.input)?;
    let mut config = if raw.trim_start().starts_with('{') {
        SimConfig::from_json_str(&raw)?
    } else {
        SimConfig::from_toml_str(&raw)?
    };

    // flags override file values
    if let Some(q) = args.q {
        config.q = q;
    }
    if let Some(p) = &args.procedure {
        config.procedure = Procedure::from_str(p)?;
    }
    if let Some(s) = &args.sizes {
        config.size_family = resolve_family(s, Some(config.m as usize))?.to_spec();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k_sigma {
        config.k_sigma = k;
    }

    let (result, counts) = run_experiment_with_counts(&config)?;
    let json = serde_json::to_string_pretty(&result)? + "\n";
    write_or_stdout(args.output.as_deref(), &json)?;

    if args.emit_plot_data {
        let path = sidecar(
            args.output.as_deref(),
            ".replicates.csv",
            "per-replicate tallies",
        )?;
        let mut buf = Vec::new();
        write_replicates_csv(&mut buf, &counts)?;
        fs::write(path, buf)?;
    }

    if check_bounds(&result) {
        Ok(0)
    } else {
        eprintln!(
            "bound check failed: procedure {} estimated fwer {:.5} / fdr {:.5} against q = {}",
            result.config.procedure.as_str(),
            result.rates.fwer_hat,
            result.rates.fdr_hat,
            result.config.q
        );
        Ok(3)
    }
}

#[derive(serde::Deserialize)]
struct OptimizeInput {
    thetas: Vec<f64>,
    grid: Option<Vec<f64>>,
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<u8> {
    let input: OptimizeInput = match (&args.thetas, &args.input) {
        (Some(list), None) => {
            let thetas = list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad effect `{t}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            OptimizeInput { thetas, grid: None }
        }
        (None, Some(path)) => {
            let raw = fs::read_to_string(path)?;
            serde_json::from_str(&raw)
                .map_err(|e| Error::Config(format!("optimize input JSON: {e}")))?
        }
        _ => {
            return Err(Error::Config(
                "give exactly one of --thetas or --input".into(),
            ))
        }
    };

    let roc = RocModel::normal_shift(input.thetas)?;
    let grid = match input.grid {
        Some(g) => g,
        None => uniform_interior_grid(args.grid_size),
    };
    let family = build_optimal_family(&roc, &grid)?;
    let json = family.to_json_string()? + "\n";
    write_or_stdout(args.output.as_deref(), &json)?;

    let report = validate_on_natural_grid(&family);
    if let Some(out) = &args.output {
        let mut name = out.as_os_str().to_owned();
        name.push(".report.json");
        fs::write(name, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if report.core_pass() {
        Ok(0)
    } else {
        eprintln!(
            "built family failed validation: [{}]",
            report.failed_conditions().join(", ")
        );
        Ok(5)
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let family = match (&args.input, &args.sizes) {
        (Some(path), None) => family_from_json(&fs::read_to_string(path)?)?,
        (None, Some(s)) => resolve_family(s, None)?,
        _ => {
            return Err(Error::Config(
                "give exactly one of --input or --sizes".into(),
            ))
        }
    };
    let report = validate_on_natural_grid(&family);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_or_stdout(args.output.as_deref(), &json)?;
    if report.core_pass() {
        Ok(0)
    } else {
        eprintln!(
            "family failed validation: [{}]",
            report.failed_conditions().join(", ")
        );
        Ok(5)
    }
}
