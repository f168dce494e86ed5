use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use stratope::error::OpeError;
use stratope::experiment::{run_benchmark, run_theorem_suite, write_outputs, ExperimentConfig, TheoremSuiteConfig};
use stratope::oracle::{find_dilemma_instances, monte_carlo_variances, DilemmaSearch};
use stratope::pipeline::{synthetic_fixture, write_classification_csv, FixtureSpec};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "stratope", version, about = "Off-policy evaluation with stratified logging policies")]
struct Cli {
    /// JSON config for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (bench) or file (gen-fixture, dilemma).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the classification-to-bandit benchmark.
    Bench,
    /// Run the exact theorem checks on random finite instances.
    Verify,
    /// Write a synthetic multiclass dataset as CSV.
    GenFixture,
    /// Search for instances on both sides of the IS versus IS-PW dilemma.
    Dilemma {
        /// Monte Carlo replications used to confirm each instance; 0 skips it.
        #[arg(long, default_value_t = 1_000_000)]
        replications: usize,
    },
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<OpeError> for Failure {
    fn from(e: OpeError) -> Self {
        let code = match e {
            OpeError::Config(_) | OpeError::Json(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        OpeError::from(e).into()
    }
}

fn config_error(message: String) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message,
    }
}

/// Parses the `--config` file, or returns `fallback` when none was given.
fn read_config<T: serde::de::DeserializeOwned>(path: Option<&Path>, fallback: impl FnOnce() -> T) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(fallback());
    };
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn bench(cli: &Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let report = run_benchmark(&config)?;
    let written = write_outputs(&config, &report, &dir)?;

    let mut out = io::stdout().lock();
    writeln!(out, "J = {:.6} on {} evaluation rows", report.truth, report.eval_size)?;
    writeln!(out, "{:<8} {:>6} {:>12} {:>10} {:>5}", "estimator", "ratio", "rel_rmse", "se", "M")?;
    for r in &report.rows {
        writeln!(
            out,
            "{:<8} {:>6} {:>12.6} {:>10.6} {:>5}",
            r.estimator, r.ratio, r.relative_rmse, r.rmse_se, r.m
        )?;
    }
    for path in written {
        writeln!(out, "wrote {}", path.display())?;
    }
    if !report.failures.is_empty() {
        writeln!(out, "{} failed cells (see manifest.json)", report.failures.len())?;
    }
    let dead = report.totally_failed();
    if !dead.is_empty() {
        return Err(Failure {
            code: EXIT_FAILURE,
            message: format!("estimators failed in every replication: {}", dead.join(", ")),
        });
    }
    Ok(())
}

fn verify(cli: &Cli) -> Result<(), Failure> {
    let mut config: TheoremSuiteConfig = read_config(cli.config.as_deref(), TheoremSuiteConfig::standard)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let report = run_theorem_suite(&config)?;
    print!("{report}");
    if let Some(out) = &cli.out {
        fs::write(out, serde_json::to_string_pretty(&report).map_err(OpeError::from)?)?;
    }
    if report.all_passed() {
        println!("{} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            message: "some checks failed".into(),
        })
    }
}

fn gen_fixture(cli: &Cli) -> Result<(), Failure> {
    let mut spec: FixtureSpec = read_config(cli.config.as_deref(), FixtureSpec::default)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let data = synthetic_fixture(&spec)?;
    match &cli.out {
        Some(path) => {
            write_classification_csv(File::create(path)?, &data)?;
            info!("wrote {} rows to {}", data.len(), path.display());
        }
        None => write_classification_csv(io::stdout().lock(), &data)?,
    }
    Ok(())
}

fn dilemma(cli: &Cli, replications: usize) -> Result<(), Failure> {
    let search: DilemmaSearch = read_config(cli.config.as_deref(), DilemmaSearch::default)?;
    let (is_better, pw_better) = find_dilemma_instances(&search)?;
    let seed = cli.seed.unwrap_or(0);
    let mut summary = Vec::new();
    for (label, found) in [("is_better", &is_better), ("pw_better", &pw_better)] {
        println!(
            "{label}: var IS {:.6e}, var IS-PW {:.6e}, lambda* {:?}",
            found.var_is, found.var_pw, found.lambda_star
        );
        let mc = if replications > 0 {
            let mc = monte_carlo_variances(found, replications, seed)?;
            let verdict = if mc.agrees_with(found) { "agrees" } else { "DISAGREES" };
            println!(
                "  Monte Carlo ({} reps): var IS {:.6e}, var IS-PW {:.6e}, {verdict}",
                mc.replications, mc.var_is, mc.var_pw
            );
            if !mc.agrees_with(found) {
                return Err(Failure {
                    code: EXIT_FAILURE,
                    message: format!("Monte Carlo ordering disagrees for {label}"),
                });
            }
            Some(mc)
        } else {
            None
        };
        summary.push(serde_json::json!({ "side": label, "instance": found, "monte_carlo": mc }));
    }
    if let Some(out) = &cli.out {
        fs::write(out, serde_json::to_string_pretty(&summary).map_err(OpeError::from)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot set thread count: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Bench => bench(&cli),
        Command::Verify => verify(&cli),
        Command::GenFixture => gen_fixture(&cli),
        Command::Dilemma { replications } => dilemma(&cli, *replications),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
