//! The `lcq` command-line front end.
//!
//! Every subcommand is deterministic given its flags and seed. Exit codes:
//! 0 success, 1 usage error, 2 verification failure, 3 runtime failure.

mod curves;
mod report;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::lut::{lut_elements, lut_memory_bytes, network_tables, EncodedModel, Lut};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Method, Mode, ModelConfig, Network};
use crate::train::{evaluate, load_datasets, run_training, TrainConfig};
use crate::verify::{check_lut_equivalence, compare_float_lut, gradcheck_suite, write_checks_csv, CheckRow};

pub use curves::{companding_curves, write_curves};
pub use report::{merge_runs, read_run, ReportRow, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Largest relative logit difference tolerated between the float and table paths.
pub const PATH_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "lcq", version, about = "Learnable companding quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint through the float and look-up-table paths.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Look-up-table export, verification and sizing.
    #[command(subcommand)]
    Lut(LutCommand),
    /// Merge the metrics of several runs into a comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Middle-layer bit-widths as `W/A`, e.g. `2/2`.
    #[arg(long)]
    pub bits: Option<String>,
    /// float, lcq, uniform or lcq-no-lwn.
    #[arg(long)]
    pub method: Option<String>,
    /// Checkpoint to continue from (its epoch counter is kept).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Config naming the dataset; defaults to `config.txt` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluate only the first N test samples (0: all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Write companding curve samples, one CSV per companding quantizer, into this directory.
    #[arg(long)]
    pub emit_curves: Option<PathBuf>,
    /// Samples per interval in the curve files.
    #[arg(long, default_value_t = 32)]
    pub curve_points: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "gradcheck.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LutCommand {
    /// Write the encoded weights and one table per layer.
    Export(LutExportArgs),
    /// Verify tables exhaustively, for a checkpoint or for random quantizers.
    Check(LutCheckArgs),
    /// Table memory in bytes.
    Size(LutSizeArgs),
}

#[derive(Debug, Args)]
pub struct LutExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LutCheckArgs {
    /// Checkpoint whose layers are checked; without it a random sweep over
    /// bit-widths 2..=4 and outer widths 4, 6, 8 runs.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Exported directory to compare against the checkpoint.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "lut_check.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LutSizeArgs {
    #[arg(long)]
    pub bw: u32,
    #[arg(long)]
    pub ba: u32,
    #[arg(long)]
    pub obw: u32,
    #[arg(long)]
    pub oba: u32,
    /// Also print the element count and the 32-bit float table size.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories (each with `metrics.csv` and `config.txt`).
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a subcommand, mapped onto an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the subcommand, and
/// returns the process exit code. Output goes to stdout, diagnostics to stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut out = String::new();
    let result = run(&cli.command, &mut out);
    print!("{out}");
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("lcq: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand, appending its report to `out`.
pub fn run(cmd: &Command, out: &mut String) -> CliResult {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Lut(LutCommand::Export(a)) => lut_export(a, out),
        Command::Lut(LutCommand::Check(a)) => lut_check(a, out),
        Command::Lut(LutCommand::Size(a)) => lut_size(a, out),
        Command::Report(a) => report_cmd(a, out),
    }
}

/// Builds the training config from the file and the command-line overrides.
pub fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    if !a.config.is_file() {
        return Err(CliError::Usage(format!("config file {} not found", a.config.display())));
    }
    let mut cfg = TrainConfig::from_file(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = &a.bits {
        cfg.set("bits", b)?;
    }
    if let Some(m) = &a.method {
        cfg.method = m.parse::<Method>()?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from(format!(
            "runs/{}-w{}a{}-seed{}",
            cfg.method.as_str(),
            cfg.w_bits,
            cfg.a_bits,
            cfg.seed
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: &TrainArgs, out: &mut String) -> CliResult {
    let cfg = train_config(a)?;
    let (model, outcome) = run_training(&cfg, a.resume.as_deref())?;
    let dir = cfg.out_dir.as_deref().expect("set by train_config");
    let _ = writeln!(out, "model: {model}");
    let _ = writeln!(out, "final test top-1: {:.2}%", outcome.final_top1);
    let _ = writeln!(out, "best test top-1: {:.2}% (epoch {})", outcome.best_top1, outcome.best_epoch);
    let _ = writeln!(out, "metrics: {}", dir.join("metrics.csv").display());
    Ok(())
}

/// Loads a checkpoint and rebuilds its network.
pub fn load_network(path: &Path) -> CliResult<(ModelConfig, Network<f32>, Checkpoint)> {
    if !path.is_file() {
        return Err(CliError::Runtime(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        )));
    }
    let ck = Checkpoint::load(path)?;
    let model: ModelConfig = ck
        .meta_value("model")
        .ok_or_else(|| Error::format("checkpoint", "metadata has no model line"))?
        .parse()?;
    let mut net = model.build::<f32>(0)?;
    ck.restore(&mut net, false)?;
    Ok((model, net, ck))
}

fn eval_config(a: &EvalArgs) -> CliResult<TrainConfig> {
    let path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join("config.txt"),
    };
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "no dataset config: pass --config or keep config.txt beside the checkpoint ({} missing)",
            path.display()
        )));
    }
    Ok(TrainConfig::from_file(&path)?)
}

fn eval(a: &EvalArgs, out: &mut String) -> CliResult {
    let (model, mut net, ck) = load_network(&a.checkpoint)?;
    if let Some(dir) = &a.emit_curves {
        let files = write_curves(&net, dir, a.curve_points)?;
        let _ = writeln!(out, "curves: {} file(s) in {}", files.len(), dir.display());
    }
    let mut cfg = eval_config(a)?;
    cfg.test_subset = a.limit;
    cfg.train_subset = 2;
    let (_, test) = load_datasets(&cfg)?;
    let _ = writeln!(out, "model: {model}");
    if model.method == Method::Float {
        let (loss, top1) = evaluate(&mut net, &test, a.batch, Mode::Eval)?;
        let _ = writeln!(out, "samples: {}\nfloat top-1: {top1:.2}%  loss {loss:.4}", test.len());
        let _ = writeln!(out, "lut path: not available for a float network");
        return Ok(());
    }
    // The float reference runs at 64 bits so that its own rounding stays well
    // below the tolerance; the table path is exact integer arithmetic.
    let mut wide = model.build::<f64>(0)?;
    ck.restore(&mut wide, false)?;
    let r = compare_float_lut(&mut wide, &test, a.batch)?;
    let _ = writeln!(out, "samples: {}", r.samples);
    let _ = writeln!(out, "float top-1: {:.2}%", r.float_top1);
    let _ = writeln!(out, "lut top-1: {:.2}%", r.lut_top1);
    let _ = writeln!(out, "max relative logit difference: {:.3e}", r.max_rel_err);
    let _ = writeln!(out, "prediction disagreements: {}", r.disagreements);
    if !(r.max_rel_err < PATH_TOLERANCE) {
        return Err(CliError::Verification(format!(
            "float and table paths differ by {:.3e} (tolerance {PATH_TOLERANCE:e})",
            r.max_rel_err
        )));
    }
    Ok(())
}

fn table(rows: &[CheckRow], out: &mut String) {
    let _ = writeln!(out, "{:<32} {:>11} {:>8} {:>9}  status", "operation", "max_rel_err", "points", "tolerance");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<32} {:>11.3e} {:>8} {:>9.0e}  {}",
            r.operation,
            r.max_rel_err,
            r.n_points,
            r.tolerance,
            if r.pass() { "ok" } else { "FAIL" }
        );
    }
}

fn verdict(rows: &[CheckRow]) -> CliResult {
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass()).map(|r| r.operation.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn gradcheck(a: &GradcheckArgs, out: &mut String) -> CliResult {
    let rows = gradcheck_suite(a.seed)?;
    write_checks_csv(&rows, &a.out)?;
    table(&rows, out);
    let _ = writeln!(out, "csv: {}", a.out.display());
    verdict(&rows)
}

fn lut_export(a: &LutExportArgs, out: &mut String) -> CliResult {
    let (_, net, _) = load_network(&a.checkpoint)?;
    let tables = network_tables(&net)?;
    if tables.is_empty() {
        return Err(CliError::Usage("the checkpoint has no quantized layers".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let model = EncodedModel {
        layers: tables.iter().map(|t| t.weights.clone()).collect(),
    };
    model.save(a.out.join("model.lcqe"))?;
    let _ = writeln!(out, "{:<16} {:>6} {:>6} {:>10} {:>12}", "layer", "bits", "outer", "entries", "table bytes");
    for t in &tables {
        let lut = t.lut()?;
        lut.save(a.out.join(format!("{}.lut", t.weights.name)))?;
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>10} {:>12.1}",
            t.weights.name,
            format!("{}/{}", lut.b_w, lut.b_a),
            format!("{}/{}", lut.ob_w, lut.ob_a),
            lut.entries.len(),
            lut.memory_bytes()
        );
    }
    let _ = writeln!(out, "wrote {} layer(s) to {}", tables.len(), a.out.display());
    Ok(())
}

fn lut_check(a: &LutCheckArgs, out: &mut String) -> CliResult {
    let mut rows = Vec::new();
    match &a.checkpoint {
        Some(ck) => {
            let (_, net, _) = load_network(ck)?;
            let exported = a.dir.as_ref().map(|d| EncodedModel::load(d.join("model.lcqe"))).transpose()?;
            for (i, t) in network_tables(&net)?.iter().enumerate() {
                let pairs = t.check()?;
                let mut mismatch = 0.0;
                if let (Some(dir), Some(model)) = (&a.dir, &exported) {
                    let lut = Lut::load(dir.join(format!("{}.lut", t.weights.name)))?;
                    let same_lut = lut == t.lut()?;
                    let same_w = model.layers.get(i) == Some(&t.weights);
                    mismatch = if same_lut && same_w { 0.0 } else { 1.0 };
                }
                // Pair products are exact; a nonzero entry here flags an
                // exported file that differs from the checkpoint.
                rows.push(CheckRow {
                    operation: format!("{}_pairs", t.weights.name),
                    max_rel_err: mismatch,
                    n_points: pairs,
                    tolerance: 0.5,
                });
            }
        }
        None => {
            let mut seed = a.seed;
            for outer in [4, 6, 8] {
                for b_w in 2..=4 {
                    for b_a in 2..=4 {
                        if outer <= b_w.max(b_a) {
                            let _ = writeln!(out, "skipped w{b_w}a{b_a} at outer width {outer}: needs b′ > b");
                            continue;
                        }
                        let r = check_lut_equivalence(b_w, b_a, outer, seed)?;
                        seed += 1;
                        rows.push(CheckRow {
                            operation: format!("lut_w{b_w}a{b_a}_o{outer}"),
                            max_rel_err: if r.lattice_exact { r.max_rel_err } else { f64::INFINITY },
                            n_points: r.pairs,
                            tolerance: PATH_TOLERANCE,
                        });
                    }
                }
            }
        }
    }
    write_checks_csv(&rows, &a.out)?;
    table(&rows, out);
    let _ = writeln!(out, "csv: {}", a.out.display());
    verdict(&rows)
}

fn lut_size(a: &LutSizeArgs, out: &mut String) -> CliResult {
    if !(2..=8).contains(&a.bw) || !(2..=8).contains(&a.ba) || a.obw < a.bw || a.oba < a.ba || a.obw > 16 || a.oba > 16 {
        return Err(CliError::Usage("bit-widths must satisfy 2 ≤ b ≤ 8 and b ≤ b′ ≤ 16".into()));
    }
    let bytes = lut_memory_bytes(a.bw, a.ba, a.obw, a.oba);
    let _ = writeln!(out, "{bytes:.1}");
    if a.verbose {
        let _ = writeln!(out, "elements: {}", lut_elements(a.bw, a.ba));
        let _ = writeln!(out, "float table: {:.1}", crate::lut::float_lut_memory_bytes(a.bw, a.ba));
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs, out: &mut String) -> CliResult {
    let runs = a.runs.iter().map(|d| read_run(d)).collect::<crate::Result<Vec<_>>>()?;
    let rows = merge_runs(&runs);
    out.push_str(&report::render(&rows));
    if let Some(p) = &a.out {
        std::fs::write(p, report::to_csv(&rows)).map_err(|e| Error::io(p, e))?;
        let _ = writeln!(out, "csv: {}", p.display());
    }
    Ok(())
}
