use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use opcc::dynamics::Ensemble;
use opcc::harness::pipeline::{answers_csv, build_dataset, build_queries, family_for, train};
use opcc::harness::sweep::{ensemble_pairs, ensemble_rows, read_metrics_csv, write_results};
use opcc::harness::{markdown_report, run_sweep, ExperimentConfig};
use opcc::querygen::QuerySet;

#[derive(Parser)]
#[command(
    name = "opcc",
    version,
    about = "Offline policy comparison with confidence"
)]
struct Cli {
    /// Seed of the stage being run (dataset, query or model seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML). Defaults to the built-in settings of `--env`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory. Defaults to a fixed name under $OPCC_OUT_DIR (or `.`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a transition dataset from behavior policies.
    GenData {
        #[arg(long)]
        env: Option<String>,
        /// Number of transitions.
        #[arg(long)]
        n: Option<usize>,
        /// Behavior mix: random, medium, expert, mixed or replay.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Generate, label and select policy-comparison queries.
    GenQueries {
        #[arg(long)]
        env: Option<String>,
    },
    /// Train a dynamics ensemble on a dataset file.
    Train {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// Ensemble size; the config's `model.ensemble_size` by default.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Answer a query file with a trained ensemble and score the answers.
    Evaluate {
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Include every member's value pair in answers.csv.
        #[arg(long)]
        dump_pairs: bool,
    },
    /// Run every ablation cell of a config for all of its seeds.
    Sweep {
        #[arg(long)]
        env: Option<String>,
    },
    /// Render a metrics CSV as a markdown table.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

/// Wrong flags or config contents; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(cli: &Cli, env: Option<&str>) -> anyhow::Result<ExperimentConfig> {
    let config = match (&cli.config, env) {
        (Some(path), env) => {
            let config = ExperimentConfig::load(path).map_err(|e| match e {
                opcc::Error::Config(msg) => usage(msg),
                other => other.into(),
            })?;
            if let Some(env) = env {
                if env != config.env {
                    return Err(usage(format!(
                        "--env {env} conflicts with env = \"{}\" in {}",
                        config.env,
                        path.display()
                    )));
                }
            }
            config
        }
        (None, Some(env)) => {
            ExperimentConfig::default_for(env).map_err(|e| usage(e.to_string()))?
        }
        (None, None) => return Err(usage("pass --env or --config")),
    };
    Ok(config)
}

fn out_path(cli: &Cli, default_name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let root =
            std::env::var_os("OPCC_OUT_DIR").map_or_else(|| PathBuf::from("."), PathBuf::from);
        root.join(default_name)
    })
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let started = Instant::now();
    match &cli.command {
        Command::GenData { env, n, dataset } => {
            let config = load_config(cli, env.as_deref())?;
            let kind = dataset
                .clone()
                .unwrap_or_else(|| config.dataset.kind.clone());
            let n = n.unwrap_or(config.dataset.size);
            if n == 0 {
                return Err(usage("--n must be positive"));
            }
            let data = build_dataset(
                &config.env_spec()?,
                &kind,
                n,
                cli.seed.unwrap_or(config.dataset.seed),
            )
            .map_err(|e| match e {
                opcc::Error::Config(msg) | opcc::Error::InvalidArgument(msg) => usage(msg),
                other => other.into(),
            })?;
            let out = out_path(cli, "data.txt");
            ensure_parent(&out)?;
            data.save(&out)?;
            eprintln!("wrote {} transitions to {}", data.len(), out.display());
        }
        Command::GenQueries { env } => {
            let mut config = load_config(cli, env.as_deref())?;
            if let Some(seed) = cli.seed {
                config.queries.seed = seed;
            }
            let (_, queries) = build_queries(&config.env_spec()?, &config.queries, cli.jobs)?;
            let out = out_path(cli, "queries.txt");
            ensure_parent(&out)?;
            queries.save(&out)?;
            eprintln!(
                "wrote {} queries (gap threshold {:.4}) to {}",
                queries.queries.len(),
                queries.gap_threshold,
                out.display()
            );
        }
        Command::Train { env, data, members } => {
            let config = load_config(cli, env.as_deref())?;
            let m = members.unwrap_or(config.model.ensemble_size);
            if m == 0 {
                return Err(usage("--members must be positive"));
            }
            let dataset = opcc::data::Dataset::load(data)?;
            let env = config.env_spec()?;
            let ensemble = train(
                &env,
                &dataset,
                &config.model.base,
                m,
                cli.seed.unwrap_or(0),
                cli.jobs,
            )?;
            let out = out_path(cli, "model.txt");
            ensure_parent(&out)?;
            ensemble.save(&out)?;
            eprintln!("wrote a {m}-member ensemble to {}", out.display());
        }
        Command::Evaluate {
            env,
            model,
            queries,
            dump_pairs,
        } => {
            let config = load_config(cli, env.as_deref())?;
            let env = config.env_spec()?;
            let queries = QuerySet::load(queries)?;
            let ensemble = Ensemble::load(model)?;
            let family = family_for(&env, &queries)?;
            let seed = cli.seed.unwrap_or(0);
            let pairs = ensemble_pairs(&config, &ensemble, &family, &queries, seed, cli.jobs)?;
            let result = ensemble_rows(&config, &ensemble, &queries, &pairs, seed)?;
            let out = out_path(cli, "eval");
            write_results(&result, &out)?;
            let eval = &config.evaluation;
            let answers = answers_csv(&pairs, &eval.methods, eval.upci_df, *dump_pairs)?;
            std::fs::write(out.join("answers.csv"), answers)?;
            eprintln!(
                "wrote {} metrics rows to {}",
                result.rows.len(),
                out.display()
            );
        }
        Command::Sweep { env } => {
            let mut config = load_config(cli, env.as_deref())?;
            if let Some(seed) = cli.seed {
                config.seeds = vec![seed];
            }
            let result = run_sweep(&config, cli.jobs)?;
            let out = out_path(cli, "sweep");
            write_results(&result, &out)?;
            std::fs::write(out.join("config.toml"), config.to_toml())?;
            eprintln!(
                "wrote {} metrics rows to {}",
                result.rows.len(),
                out.display()
            );
        }
        Command::Report { metrics } => {
            let rows = read_metrics_csv(metrics)?;
            if rows.is_empty() {
                bail!("{} has no rows", metrics.display());
            }
            let table = markdown_report(&rows)?;
            match &cli.out {
                Some(path) => {
                    ensure_parent(path)?;
                    std::fs::write(path, table)?;
                }
                None => print!("{table}"),
            }
        }
    }
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
