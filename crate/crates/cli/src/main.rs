use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use longshot::bench::{run_bench, run_sweep, ArmSpec};
use longshot::config::RunConfig;
use longshot::engine::run_episode_with;
use longshot::registry::Registry;
use longshot::trace::{read_trace, render, EpisodeTrace};
use longshot::Error;

#[derive(Parser)]
#[command(name = "longshot", version, about = "Tree search over long videos for question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; see the README for keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set max_rounds=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Episode seed (run) or base seed (bench, sweep).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, extra: Vec<String>) -> Result<RunConfig> {
        let mut overrides = self.sets.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        overrides.extend(extra);
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trace.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trace output path.
        #[arg(long, default_value = "trace.jsonl")]
        out: PathBuf,
        /// Record per-round wall-clock time in the trace.
        #[arg(long)]
        timing: bool,
    },
    /// Run ablation arms over paired seeds.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Arm to run (full, uniform, intrinsic-only, no-query-update). Repeatable.
        #[arg(long = "arm")]
        arms: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory for report.json and table.txt.
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Sweep the anchor budget with everything else fixed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Anchor budgets to try.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6")]
        values: Vec<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory for sweep.json and curve.txt.
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Render a trace round by round.
    Show { trace: PathBuf },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_trace(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    write(path, &trace.to_jsonl()?)
}

fn counts(episodes: Option<usize>, workers: Option<usize>) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(n) = episodes {
        v.push(format!("episodes={n}"));
    }
    if let Some(w) = workers {
        v.push(format!("workers={w}"));
    }
    v
}

fn cmd_run(common: &Common, out: &Path, timing: bool) -> Result<()> {
    let extra = if timing { vec!["timing=true".to_string()] } else { vec![] };
    let config = common.load(extra)?;
    let registry = Registry::standard();
    let prepared = registry.backend(&config.backend)?.prepare(&config, config.seed)?;
    let strategies = registry.strategies(&config)?;
    let result = run_episode_with(
        &prepared.video,
        &prepared.instruction,
        &prepared.backends,
        &config.episode_config(),
        &strategies,
    );
    match result {
        Ok(r) => {
            write_trace(out, &r.trace)?;
            println!("answer: {}", r.answer);
            if let Some(truth) = &prepared.ground_truth {
                println!("correct: {}", r.answer == truth.correct_option);
            }
            println!("rounds: {}", r.rounds_used);
            println!("frames observed: {}", r.frames_observed);
            println!("termination: {:?}", r.termination);
            println!("trace: {}", out.display());
            Ok(())
        }
        Err(Error::Episode { round, partial, source }) => {
            write_trace(out, &partial)?;
            bail!(
                "episode failed in round {round}: {source} (partial trace in {})",
                out.display()
            )
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_bench(common: &Common, arms: &[String], extra: Vec<String>, out: &Path) -> Result<()> {
    let config = common.load(extra)?;
    let names = if arms.is_empty() { &config.arms } else { arms };
    let specs = names
        .iter()
        .map(|n| ArmSpec::named(n))
        .collect::<longshot::Result<Vec<_>>>()?;
    let run = run_bench(&Registry::standard(), &config, &specs)?;
    let table = run.report.table();
    write(&out.join("report.json"), &run.report.to_json()?)?;
    write(&out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep(common: &Common, values: &[usize], extra: Vec<String>, out: &Path) -> Result<()> {
    let config = common.load(extra)?;
    let report = run_sweep(&Registry::standard(), &config, values)?;
    let curve = report.curve();
    write(&out.join("sweep.json"), &report.to_json()?)?;
    write(&out.join("curve.txt"), &curve)?;
    print!("{curve}");
    Ok(())
}

fn cmd_show(path: &Path) -> Result<()> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed = read_trace(BufReader::new(file)).with_context(|| path.display().to_string())?;
    print!("{}", render(&parsed));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { common, out, timing } => cmd_run(common, out, *timing),
        Command::Bench { common, arms, episodes, workers, out } => {
            cmd_bench(common, arms, counts(*episodes, *workers), out)
        }
        Command::Sweep { common, values, episodes, workers, out } => {
            cmd_sweep(common, values, counts(*episodes, *workers), out)
        }
        Command::Show { trace } => cmd_show(trace),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
