mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cfedit_core::batch::{load_dir, run_batch, sweep, write_sweep_csv, SweepParameter};
use cfedit_core::metrics::{write_instances_csv, MetricsReport};
use cfedit_core::synthetic::{write_suite, SyntheticConfig};
use cfedit_core::{discover_manifests, report, EvalMode, InstanceRecord, TensorBundle};

use settings::SearchFlags;

const EXIT_BAD_CONFIG: u8 = 2;
const EXIT_NO_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "cfedit", version, about = "Counterfactual feature-cell editing for image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a counterfactual on every bundle in a directory.
    Run {
        /// Directory searched recursively for manifests.
        #[arg(long)]
        input: PathBuf,
        /// Directory for results.csv, results.json and summary.json.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Repeat a run for several values of `t` or `u`, one summary row each.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        /// Parameter to vary: `t` or `u`.
        #[arg(long)]
        param: SweepParameter,
        /// Comma-separated values, e.g. `1.0,0.2,0.1`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// CSV file for the table; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Write a seeded suite of synthetic bundles.
    GenSynthetic {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long = "H", default_value_t = 4)]
        height: usize,
        #[arg(long = "W", default_value_t = 4)]
        width: usize,
        /// Feature channels.
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// Number of classes.
        #[arg(long = "C", default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        /// Plant a single-edit flip whose query cell has the highest attribution.
        #[arg(long)]
        planted: bool,
        /// Foreground probability per cell; no masks are written when omitted.
        #[arg(long)]
        mask_density: Option<f64>,
        /// Initial margin range in units of 1/HW, as `lo,hi`.
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 8.0])]
        margin: Vec<f64>,
        /// Visible keypoints per image (0 disables keypoint files).
        #[arg(long, default_value_t = 3)]
        keypoints: usize,
    },
    /// Recompute the summary from a results.json written by `run`.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "all")]
        mode: EvalMode,
        /// Where to write the summary JSON; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check every bundle in a directory and list the problems found.
    Validate {
        #[arg(long)]
        input: PathBuf,
    },
}

/// An error together with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, error: e.into() }
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure { code, error: error.into() }
}

fn bad_config(error: impl Into<anyhow::Error>) -> Failure {
    fail(EXIT_BAD_CONFIG, error)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run { input, output, search } => cmd_run(&input, &output, &search),
        Command::Sweep { input, param, values, output, search } => {
            cmd_sweep(&input, param, &values, output.as_deref(), &search)
        }
        Command::GenSynthetic {
            output,
            seed,
            count,
            height,
            width,
            d,
            classes,
            distractors,
            planted,
            mask_density,
            margin,
            keypoints,
        } => {
            if margin.len() != 2 {
                return Err(bad_config(anyhow::anyhow!("--margin takes exactly two values, lo,hi")));
            }
            let config = SyntheticConfig {
                seed,
                count,
                height,
                width,
                channels: d,
                classes,
                distractors,
                planted,
                mask_density,
                margin: (margin[0], margin[1]),
                keypoints,
                ..SyntheticConfig::default()
            };
            cmd_gen_synthetic(&config, &output)
        }
        Command::Report { results, mode, output } => cmd_report(&results, mode, output.as_deref()),
        Command::Validate { input } => cmd_validate(&input),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("CFEDIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| bad_config(anyhow::anyhow!("CFEDIT_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn load_bundles(input: &Path) -> Result<Vec<TensorBundle>, Failure> {
    if !input.is_dir() {
        return Err(fail(EXIT_NO_DATA, anyhow::anyhow!("{} is not a directory", input.display())));
    }
    let bundles = load_dir(input)?;
    if bundles.is_empty() {
        return Err(fail(EXIT_NO_DATA, anyhow::anyhow!("no manifests found under {}", input.display())));
    }
    Ok(bundles)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_summary(r: &MetricsReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "instances {}  CFs {}  Near-KP {:.4}  Same-KP {:.4}  #Edits {}  APD {}  evaluations {:.1}  time/instance {:.3} ms",
        r.instances,
        r.n_cfs,
        r.near_kp,
        r.same_kp,
        opt(r.mean_edits),
        opt(r.apd),
        r.mean_evaluations,
        r.time_per_instance_ms
    );
}

fn cmd_run(input: &Path, output: &Path, flags: &SearchFlags) -> Result<(), Failure> {
    let settings = flags.resolve().map_err(bad_config)?;
    let bundles = load_bundles(input)?;
    let records = run_batch(&bundles, &settings.search)?;
    let summary = report(&records, settings.mode)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let csv_path = output.join("results.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_instances_csv(&records, file)?;
    write_json(&output.join("results.json"), &records)?;
    write_json(&output.join("summary.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_sweep(
    input: &Path,
    param: SweepParameter,
    values: &[f64],
    output: Option<&Path>,
    flags: &SearchFlags,
) -> Result<(), Failure> {
    let settings = flags.resolve().map_err(bad_config)?;
    for &v in values {
        param.apply(&settings.search, v).validate().map_err(bad_config)?;
    }
    let bundles = load_bundles(input)?;
    let rows = sweep(&bundles, &settings.search, param, values)?;
    match output {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_sweep_csv(&rows, file)?;
        }
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_gen_synthetic(config: &SyntheticConfig, output: &Path) -> Result<(), Failure> {
    config.validate().map_err(bad_config)?;
    let written = write_suite(config, output)?;
    println!("wrote {} bundles to {}", written.len(), output.display());
    Ok(())
}

fn cmd_report(results: &Path, mode: EvalMode, output: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(results)
        .map_err(|e| fail(EXIT_NO_DATA, anyhow::anyhow!("reading {}: {e}", results.display())))?;
    let records: Vec<InstanceRecord> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
    let summary = report(&records, mode).map_err(|e| fail(EXIT_NO_DATA, e))?;
    match output {
        Some(path) => write_json(path, &summary)?,
        None => writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&summary)?)?,
    }
    Ok(())
}

fn cmd_validate(input: &Path) -> Result<(), Failure> {
    let manifests = discover_manifests(input).map_err(|e| fail(EXIT_NO_DATA, e))?;
    if manifests.is_empty() {
        return Err(fail(EXIT_NO_DATA, anyhow::anyhow!("no manifests found under {}", input.display())));
    }
    let mut invalid = 0;
    for path in &manifests {
        match TensorBundle::load(path) {
            Ok(_) => println!("ok      {}", path.display()),
            Err(e) => {
                invalid += 1;
                println!("invalid {}: {e}", path.display());
            }
        }
    }
    if invalid > 0 {
        return Err(anyhow::anyhow!("{invalid} of {} bundles invalid", manifests.len()).into());
    }
    Ok(())
}
