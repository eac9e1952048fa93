use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pflab::config::RunConfig;
use pflab::grid::Grid;
use pflab::mp::MpConfig;
use pflab::nn::ModelKind;
use pflab::pipeline::{self, ModelSource, SolveSpec};
use pflab::scenario::Split;
use pflab::Error;

#[derive(Parser)]
#[command(
    name = "pflab",
    version,
    about = "DC power-flow surrogates: data generation, training and benchmarking"
)]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Grid description file (defaults to the bundled IEEE 14-bus case).
    #[arg(long, global = true)]
    grid: Option<PathBuf>,
    /// Run directory (defaults to the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Deterministic mode (the default execution is already single-threaded and seeded).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, val, test and OOD datasets.
    Generate {
        /// Base seed; split `i` uses `seed + i`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model kind, once per seed.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint directory, `mp-opt` or `dc` on one split.
    Evaluate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Layer budget for `mp-opt`.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Train and evaluate every model and write the benchmark table and curves.
    Benchmark {
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        train_sizes: Option<Vec<usize>>,
    },
    /// Solve one operating point exactly and by message passing.
    Solve {
        #[arg(long)]
        layers: Option<usize>,
        /// Line indices to take out of service.
        #[arg(long, value_delimiter = ',')]
        disconnect: Vec<usize>,
        /// Scale nominal loads by this factor.
        #[arg(long)]
        load_scale: Option<f64>,
    },
    /// Re-render the benchmark table from benchmark.json.
    Report,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_)) => 2,
        Some(
            Error::InvalidGrid(_)
            | Error::DimensionMismatch { .. }
            | Error::IslandedGrid { .. }
            | Error::RetriesExhausted { .. }
            | Error::EmptySelection(_)
            | Error::MalformedData { .. }
            | Error::Io { .. }
            | Error::Json { .. },
        ) => 3,
        Some(Error::SingularSystem { .. } | Error::NonFiniteLoss { .. } | Error::NotConverged(_)) => 4,
        None => 1,
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(g) = &cli.grid {
        config.grid_path = Some(g.clone());
    }
    if let Some(o) = &cli.out {
        config.output_dir = o.clone();
    }
    config.validate()?;
    Ok(config)
}

fn emit<T: serde::Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) -> anyhow::Result<()> {
    let text = if json {
        serde_json::to_string_pretty(value)?
    } else {
        human()
    };
    print_out(&text)
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_out(text: &str) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = resolve_config(&cli)?;
    if cli.deterministic {
        log::info!("deterministic mode: single-threaded training with fixed seeds");
    }
    let out: PathBuf = config.output_dir.clone();
    match cli.command {
        Command::Generate { seed } => {
            if let Some(base) = seed {
                for (i, split) in Split::ALL.iter().enumerate() {
                    config.scenario.get_mut(split).expect("materialized").seed = base + i as u64;
                }
            }
            let splits = pipeline::cmd_generate(&config, &out)?;
            emit(cli.json, &splits, || {
                splits
                    .iter()
                    .map(|s| {
                        format!(
                            "{:<5} {:>6} samples -> {}",
                            s.split.name(),
                            s.n_samples,
                            s.path.display()
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Train { model, seeds } => {
            let seeds = seeds.unwrap_or_else(|| config.bench.seeds.clone());
            let runs = pipeline::cmd_train(&config, &out, model, &seeds)?;
            emit(cli.json, &runs, || {
                runs.iter()
                    .map(|r| {
                        format!(
                            "{} seed {}: best val loss {:.4e} after {} epochs -> {}",
                            r.kind,
                            r.seed,
                            r.best_val_loss,
                            r.epochs,
                            r.checkpoint.display()
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Evaluate { model, split, layers } => {
            if let Some(n) = layers {
                config.mp.n_layers = n;
            }
            let eval = pipeline::cmd_evaluate(&config, &out, &ModelSource::parse(&model), split)?;
            emit(cli.json, &eval, || {
                let m = &eval.metrics;
                let p = &eval.physics;
                format!(
                    "{} on {} ({} samples)\nMAE {:.4e}  MAPE90 {}\nP1 {:.4}  P2 {:.4}  P3 {:.4} (not applicable under DC)  P4 {}  P5 {:.4} (tau_lc {:e})",
                    eval.model,
                    split.name(),
                    eval.n_samples,
                    m.mae,
                    m.mape90.map_or("n/a".into(), |v| format!("{v:.4e}")),
                    p.p1,
                    p.p2,
                    p.p3,
                    p.p4.map_or(format!("n/a ({} balanced samples)", p.p4_excluded), |v| format!("{v:.4e}")),
                    p.p5,
                    p.thresholds.tau_lc
                )
            })
        }
        Command::Benchmark { seeds, train_sizes } => {
            if let Some(s) = seeds {
                config.bench.seeds = s;
            }
            let sizes = train_sizes.unwrap_or_else(|| config.bench.train_sizes.clone());
            let table = pipeline::cmd_benchmark(&config, &out, &sizes)?;
            emit(cli.json, &table, || table.to_markdown())
        }
        Command::Solve {
            layers,
            disconnect,
            load_scale,
        } => {
            let grid = config.grid()?;
            let mp = MpConfig {
                n_layers: layers.unwrap_or(config.mp.n_layers),
                ..config.mp
            };
            mp.validate()?;
            let spec = SolveSpec { disconnect, load_scale };
            let res = pipeline::cmd_solve(&grid, &spec, &mp)?;
            if !res.mp_converged && !cli.json {
                eprintln!(
                    "warning: message passing did not converge in {} layers (max residual {:.3e})",
                    res.mp_layers, res.mp_max_residual
                );
            }
            emit(cli.json, &res, || solve_table(&grid, &res))
        }
        Command::Report => {
            let md = pipeline::cmd_report(&out)?;
            print_out(&md)
        }
    }
}

fn solve_table(grid: &Grid, res: &pipeline::SolveOutput) -> String {
    let mut s = format!(
        "{}: {} buses, slack bus {}\n{:>4} {:>14} {:>14}\n",
        res.grid, res.n_buses, res.slack_bus, "bus", "theta_dc", "theta_mp"
    );
    for (i, (a, b)) in res.theta_dc.iter().zip(&res.theta_mp).enumerate() {
        s += &format!("{i:>4} {a:>14.8} {b:>14.8}\n");
    }
    s += &format!(
        "max |dtheta| {:.3e}; message passing {} after {} layers, max residual {:.3e}\n",
        res.max_abs_diff,
        if res.mp_converged { "converged" } else { "stopped" },
        res.mp_layers,
        res.mp_max_residual
    );
    s += &format!("{:>4} {:>12} {:>12}\n", "line", "p_or", "p_ex");
    for (k, line) in grid.lines.iter().enumerate() {
        s += &format!(
            "{:>4} {:>12.6} {:>12.6}  {}\n",
            k, res.flows.p_or[k], res.flows.p_ex[k], line.id
        );
    }
    s
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
