use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lyapgen::dynamics::{lookup, Registered, SYSTEM_NAMES};
use lyapgen::expr::parse;
use lyapgen::falsifier::{CheckConfig, Status, VerificationReport};
use lyapgen::landscape::{self, Slice};
use lyapgen::neuralnet::LyapunovNet;
use lyapgen::orchestrator::{run_detailed, verify_with, write_epoch_csv, RunConfig, RunStatus, TrainedNet};
use lyapgen::report::ReportFile;

#[derive(Parser)]
#[command(name = "lyapgen", version, about = "Discover and check analytical Lyapunov functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a certificate and distill it until a candidate survives.
    Train(TrainArgs),
    /// Check one candidate expression.
    Verify(VerifyArgs),
    /// Dump V and its Lie derivative over a grid as CSV.
    Landscape(LandscapeArgs),
    /// Run several systems over several seeds and summarize.
    Bench(BenchArgs),
    /// List the registered systems.
    ListSystems,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    system: String,
    /// JSON run configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; the epoch log goes next to it with a `.csv` extension.
    #[arg(long, default_value = "run.json")]
    out: PathBuf,
    /// Also save the trained network (single systems only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    system: String,
    /// Candidate over x1..xn in the system's state order.
    #[arg(long)]
    expr: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Dense domain samples.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_seconds: Option<f64>,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    system: String,
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    expr: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Points per axis.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Two 1-based state indices spanning the grid, e.g. `1,3`; the other
    /// coordinates are held at 0.
    #[arg(long, value_delimiter = ',')]
    slice: Option<Vec<usize>>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated system names; may be empty.
    #[arg(long, value_delimiter = ',', default_value = "")]
    suite: Vec<String>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

const EXIT_ERROR: u8 = 1;
const EXIT_EXHAUSTED: u8 = 2;
const EXIT_INVALID: u8 = 3;

fn main() -> ExitCode {
    // usage errors exit with 1 like every other error; 2 means exhausted
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_ERROR);
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Landscape(a) => cmd_landscape(a).map(|_| 0),
        Command::Bench(a) => cmd_bench(a).map(|_| 0),
        Command::ListSystems => cmd_list().map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LYAPGEN_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("LYAPGEN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("LYAPGEN_THREADS must be a positive integer, got `{v}`");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok(cfg)
        }
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<u8> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.system = a.system;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    lookup(&cfg.system)?;
    cfg.validate()?;
    let quiet = a.quiet;
    let out = run_detailed(&cfg, |l| {
        if !quiet {
            let best = l.best_violation.map_or("-".into(), |v| format!("{v:.3e}"));
            eprintln!(
                "epoch {:>3}  risk {:.3e}  pool {:>6}  candidates {:>3}  new counterexamples {:>5}  best violation {best}",
                l.epoch, l.risk, l.pool_size, l.candidates, l.counterexamples
            );
        }
    })?;
    let r = &out.result;
    let report = ReportFile::new(&cfg, r);
    fs::write(&a.out, report.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    write_epoch_csv(&a.out.with_extension("csv"), &r.per_epoch)?;
    if let Some(path) = &a.checkpoint {
        match &out.net {
            TrainedNet::Single(net) => net.save(path)?,
            TrainedNet::Compositional(_) => bail!("checkpoints are only written for single systems"),
        }
    }
    match &r.expression {
        Some(e) => println!("{}: {} after {} epochs: V = {e}", r.system, r.status.as_str(), r.epochs),
        None => println!("{}: {} after {} epochs", r.system, r.status.as_str(), r.epochs),
    }
    Ok(match r.status {
        RunStatus::Found => 0,
        RunStatus::Exhausted | RunStatus::Indeterminate => EXIT_EXHAUSTED,
    })
}

fn print_verdict(r: &VerificationReport) {
    let fmt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.3e}"));
    println!("status: {:?}", r.status);
    if let Some(reason) = &r.reason {
        println!("reason: {reason}");
    }
    println!("candidate: {}", r.candidate);
    println!("lie derivative: {}", r.lie_derivative);
    println!("max -V: {}  max LfV: {}  probes: {}", fmt(r.max_neg_v), fmt(r.max_lie), r.probes);
    if !r.counterexamples.is_empty() {
        println!("counterexamples ({}):", r.counterexamples.len());
        for x in r.counterexamples.iter().take(10) {
            println!("  {x:?}");
        }
    }
}

fn cmd_verify(a: VerifyArgs) -> anyhow::Result<u8> {
    let cfg = CheckConfig { tol: a.tol, n_check: a.samples, seed: a.seed, max_seconds: a.max_seconds, ..CheckConfig::default() };
    let r = verify_with(&a.system, &a.expr, &cfg)?;
    print_verdict(&r);
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(match r.status {
        Status::Valid => 0,
        Status::Invalid => EXIT_INVALID,
        Status::Indeterminate => EXIT_EXHAUSTED,
    })
}

fn cmd_landscape(a: LandscapeArgs) -> anyhow::Result<()> {
    let reg = lookup(&a.system)?;
    let sys = match &reg {
        Registered::Single(s) => s,
        Registered::Networked(n) => &n.flat,
    };
    let slice = match a.slice.as_deref() {
        Some([p, q]) if *p >= 1 && *q >= 1 => Some(Slice { a: p - 1, b: q - 1 }),
        Some(_) => bail!("--slice takes two 1-based state indices"),
        None => None,
    };
    let slice = Slice::for_system(sys, slice)?;
    let rows = match (&a.expr, &a.checkpoint) {
        (Some(text), _) => landscape::expression_landscape(sys, &parse(text)?, slice, a.grid)?,
        (None, Some(path)) => landscape::network_landscape(sys, &LyapunovNet::load(path)?, slice, a.grid)?,
        (None, None) => bail!("pass --expr or --checkpoint"),
    };
    match &a.out {
        Some(path) => {
            let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
            landscape::write_csv(&mut f, &rows)?;
            f.flush()?;
        }
        None => landscape::write_csv(&mut std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let base = load_config(a.config.as_deref())?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let summary_path = a.out_dir.join("summary.csv");
    let mut summary = fs::File::create(&summary_path).with_context(|| format!("creating {}", summary_path.display()))?;
    writeln!(summary, "system,success_rate,median_epochs,median_time")?;
    for system in a.suite.iter().filter(|s| !s.is_empty()) {
        let (mut found, mut epochs, mut times) = (0usize, Vec::new(), Vec::new());
        let mut runs = 0usize;
        for seed in 0..a.seeds {
            runs += 1;
            let cfg = RunConfig { system: system.clone(), seed, ..base.clone() };
            let stem = a.out_dir.join(format!("{system}_seed{seed}"));
            match run_detailed(&cfg, |_| {}) {
                Ok(out) => {
                    let r = out.result;
                    fs::write(stem.with_extension("json"), ReportFile::new(&cfg, &r).to_json()?)?;
                    write_epoch_csv(&stem.with_extension("csv"), &r.per_epoch)?;
                    if r.status == RunStatus::Found {
                        found += 1;
                        epochs.push(r.epochs as f64);
                        times.push(r.wall_time_s);
                    }
                    eprintln!("{system} seed {seed}: {} in {} epochs", r.status.as_str(), r.epochs);
                }
                Err(e) => {
                    eprintln!("{system} seed {seed}: error: {e:#}");
                    fs::write(stem.with_extension("err"), format!("{e:#}\n"))?;
                }
            }
        }
        let rate = if runs == 0 { 0.0 } else { found as f64 / runs as f64 };
        let fmt = |m: Option<f64>| m.map_or(String::new(), |v| format!("{v}"));
        writeln!(summary, "{system},{rate},{},{}", fmt(median(&mut epochs)), fmt(median(&mut times)))?;
    }
    Ok(())
}

fn cmd_list() -> anyhow::Result<()> {
    for name in SYSTEM_NAMES {
        let reg = lookup(name)?;
        let (sys, kind) = match &reg {
            Registered::Single(s) => (s, "single".to_string()),
            Registered::Networked(n) => (&n.flat, format!("networked, {} subsystems", n.subsystems)),
        };
        let box_: Vec<String> = sys.domain.lower.iter().zip(&sys.domain.upper).map(|(l, u)| format!("[{l:.4}, {u:.4}]")).collect();
        let params: Vec<String> = sys.parameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{name}  dim {}  ({kind})  domain {}  {}", sys.dim, box_.join(" x "), params.join(" "));
    }
    Ok(())
}
