use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use micropack_cli::commands::{cmd_compare, cmd_gen_data, cmd_plan, cmd_simulate, cmd_sweep, simulate_doc};
use micropack_cli::config::{load_config, Overrides, RunConfig, Workload};
use micropack_cli::formats::{to_json, PlanDoc};
use micropack_cli::CliError;
use micropack_core::baselines::Strategy;
use micropack_core::workload::{LengthDistributionSpec, ManifestFormat};
use micropack_core::ScheduleKind;

#[derive(Parser)]
#[command(
    name = "micropack",
    version,
    about = "Plan and simulate slice-level MicroPacks for pipeline-parallel training"
)]
struct Cli {
    /// Worker threads for candidate evaluation. Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured strategy and emit plan JSON.
    Plan {
        #[command(flatten)]
        run: RunArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a plan (from a config or a plan file) and emit timeline JSON.
    Simulate {
        /// Plan JSON written by `plan`.
        #[arg(long, conflicts_with = "config")]
        plan: Option<PathBuf>,
        #[command(flatten)]
        run: OptRunArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one vertex CSV per rank (`rank<r>.csv`).
        #[arg(long)]
        csv_dir: Option<PathBuf>,
        /// Gantt chart SVG.
        #[arg(long)]
        gantt: Option<PathBuf>,
    },
    /// Compare SlimPack with every sample-level baseline.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every pack-count candidate of the SlimPack solver.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic length manifest.
    GenData {
        /// Take the length distribution from this config's synthetic workload.
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed [default: 42, or the config's].
        #[arg(long)]
        seed: Option<u64>,
        /// Number of samples [default: 10000, or the config's].
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum, default_value = "plain")]
        format: FormatArg,
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config JSON.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct OptRunArgs {
    /// Run config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// Data-parallel degree.
    #[arg(long)]
    dp: Option<usize>,
    /// Pipeline-parallel degree.
    #[arg(long)]
    pp: Option<usize>,
    /// Per-stage memory budget in bytes.
    #[arg(long)]
    mem_budget: Option<u64>,
    /// Slice boundary alignment in tokens.
    #[arg(long)]
    alignment: Option<u64>,
    /// Seed of a synthetic workload.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample count of a synthetic workload.
    #[arg(long)]
    count: Option<usize>,
    /// Packing strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Pipeline schedule.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Fixed pack count per rank instead of the sweep.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Slimpack,
    BestFit,
    Length,
    Tflops,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Gpipe,
    #[value(name = "1f1b")]
    OneFOneB,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Plain,
    Jsonl,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            dp: self.dp,
            pp: self.pp,
            mem_budget_bytes: self.mem_budget,
            alignment: self.alignment,
            seed: self.seed,
            count: self.count,
            strategy: self.strategy.map(|s| match s {
                StrategyArg::Slimpack => Strategy::Slimpack,
                StrategyArg::BestFit => Strategy::BestFit,
                StrategyArg::Length => Strategy::Length,
                StrategyArg::Tflops => Strategy::Tflops,
            }),
            schedule_kind: self.schedule.map(|s| match s {
                ScheduleArg::Gpipe => ScheduleKind::Gpipe,
                ScheduleArg::OneFOneB => ScheduleKind::OneFOneB,
            }),
            fixed_m: self.m,
        }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn prepare(path: &Path, flags: &Flags) -> Result<(RunConfig, micropack_core::GlobalBatch), CliError> {
    let mut cfg = load_config(path)?;
    cfg.apply(&flags.overrides())?;
    cfg.validate()?;
    let batch = cfg.load_batch(&base_dir(path))?;
    Ok((cfg, batch))
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    use std::io::Write;
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => match std::io::stdout().lock().write_all(bytes) {
            // the reader went away, e.g. `| head`
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(|e| CliError::Io(e.to_string())),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Invariant(e.to_string()))?;
    }
    match cli.command {
        Command::Plan { run, out } => {
            let (cfg, batch) = prepare(&run.config, &run.flags)?;
            emit(&cmd_plan(&cfg, &batch)?, out.as_deref())
        }
        Command::Simulate {
            plan,
            run,
            out,
            csv_dir,
            gantt,
        } => {
            let art = match (plan, run.config) {
                (Some(p), None) => {
                    let bytes = std::fs::read(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    simulate_doc(&PlanDoc::parse(&bytes)?)?
                }
                (None, Some(c)) => {
                    let (cfg, batch) = prepare(&c, &run.flags)?;
                    cmd_simulate(&cfg, &batch)?
                }
                _ => {
                    return Err(CliError::Config(
                        "simulate needs exactly one of --config or --plan".into(),
                    ))
                }
            };
            if let Some(dir) = csv_dir {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                for (r, csv) in art.rank_csv.iter().enumerate() {
                    let p = dir.join(format!("rank{r}.csv"));
                    std::fs::write(&p, csv).map_err(|e| CliError::io(&p, e))?;
                }
            }
            if let Some(p) = gantt {
                std::fs::write(&p, &art.gantt_svg).map_err(|e| CliError::io(&p, e))?;
            }
            emit(&art.timeline_json, out.as_deref())
        }
        Command::Compare { run, out } => {
            let (cfg, batch) = prepare(&run.config, &run.flags)?;
            emit(&to_json(&cmd_compare(&cfg, &batch)?), out.as_deref())
        }
        Command::Sweep { run, out } => {
            let (cfg, batch) = prepare(&run.config, &run.flags)?;
            emit(&to_json(&cmd_sweep(&cfg, &batch)?), out.as_deref())
        }
        Command::GenData {
            config,
            seed,
            count,
            format,
            out,
        } => {
            let (mut spec, mut s, mut n) = (LengthDistributionSpec::reference(), 42, 10_000);
            if let Some(path) = config {
                match load_config(&path)?.workload {
                    Workload::Synthetic {
                        spec: sp,
                        seed: sd,
                        count: c,
                    } => (spec, s, n) = (sp, sd, c),
                    Workload::Manifest { .. } => {
                        return Err(CliError::Config("gen-data needs a synthetic workload config".into()))
                    }
                }
            }
            let format = match format {
                FormatArg::Plain => ManifestFormat::Plain,
                FormatArg::Jsonl => ManifestFormat::Jsonl,
            };
            let bytes = cmd_gen_data(&spec, seed.unwrap_or(s), count.unwrap_or(n), format)?;
            emit(&bytes, Some(&out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("micropack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
