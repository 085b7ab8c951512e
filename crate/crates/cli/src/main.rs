use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use epivar::experiment::output::{rows_csv, rows_json, write_cell, write_table};
use epivar::experiment::{run_estimate, run_ground_truth, run_table, OutputFormat, ResultRow, RunConfig};
use epivar::selfcheck;
use epivar::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "epivar", version, about = "Epistemic variance of wide ReLU network predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected estimators (IF, EV, BA) on the configured dataset.
    Estimate(RunArgs),
    /// Retraining ground truth for a synthetic dataset.
    GroundTruth(RunArgs),
    /// Sweep the (d, n) grid with estimates, ground truth and differences.
    Table(RunArgs),
    /// Run the built-in invariant checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "EPIVAR_WORKERS")]
    workers: Option<usize>,
    /// Format of the rows printed to stdout.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fewer Monte Carlo draws and replications.
    #[arg(long)]
    quick: bool,
    #[arg(long, env = "EPIVAR_WORKERS")]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, Error> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.out_dir {
        cfg.output.out_dir = dir.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if let Some(f) = args.format {
        cfg.output.format = f.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to stdout, ignoring a closed pipe (e.g. `| head`).
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_rows(cfg: &RunConfig, rows: &[ResultRow]) {
    match cfg.output.format {
        OutputFormat::Csv => emit(&rows_csv(rows)),
        OutputFormat::Json => emit(&(rows_json(rows) + "\n")),
    }
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

enum Kind {
    Estimate,
    GroundTruth,
    Table,
}

fn run(kind: Kind, args: &RunArgs) -> Result<u8, Error> {
    let cfg = load_config(args)?;
    let pool = thread_pool(cfg.workers)?;
    pool.install(|| match kind {
        Kind::Estimate | Kind::GroundTruth => {
            let out = match kind {
                Kind::Estimate => run_estimate(&cfg)?,
                _ => run_ground_truth(&cfg)?,
            };
            let written = write_cell(&cfg, &out, &cfg.output.out_dir)?;
            print_rows(&cfg, &out.rows);
            report_files(&written.files);
            Ok(0)
        }
        Kind::Table => {
            let table = run_table(&cfg)?;
            let written = write_table(&cfg, &table, &cfg.output.out_dir)?;
            print_rows(&cfg, &table.rows());
            report_files(&written.files);
            for c in &table.cells {
                if let Err(e) = &c.result {
                    eprintln!("cell {} failed: {e}", c.cell.label());
                }
            }
            Ok(if table.failures() > 0 { EXIT_PARTIAL } else { 0 })
        }
    })
}

fn run_selfcheck(args: &SelfcheckArgs) -> Result<u8, Error> {
    let pool = thread_pool(args.workers)?;
    let checks = pool.install(|| selfcheck::run_all(args.seed, args.quick));
    let text = match args.format {
        Format::Csv => {
            let mut t = String::from("check,passed,detail\n");
            for c in &checks {
                t += &format!("\"{}\",{},\"{}\"\n", c.name, c.passed, c.detail.replace('"', "'"));
            }
            t
        }
        Format::Json => serde_json::to_string_pretty(&checks).expect("checks serialize") + "\n",
    };
    emit(&text);
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        Ok(EXIT_NUMERIC)
    } else {
        eprintln!("all {} checks passed", checks.len());
        Ok(0)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Estimate(a) => run(Kind::Estimate, a),
        Command::GroundTruth(a) => run(Kind::GroundTruth, a),
        Command::Table(a) => run(Kind::Table, a),
        Command::Selfcheck(a) => run_selfcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
