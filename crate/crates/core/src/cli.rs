//! Command implementations behind the `drcsim` binary.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::agents;
use crate::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::harness::{self, Phase, TrainedRun};
use crate::report::{self, write_atomic, Series};
use crate::selftest;

#[derive(Debug, Parser)]
#[command(name = "drcsim", version, about = "Radar/communication mode-selection simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured agent for every seed, then evaluate it greedily.
    Train(Invocation),
    /// Evaluate saved policies greedily.
    Eval {
        #[command(flatten)]
        inv: Invocation,
        /// Policy file used for every seed; defaults to
        /// `<out>/policy_seed<seed>.txt`.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Train and evaluate every sweep value × agent × seed.
    Sweep(Invocation),
    /// Run the fast invariant checks.
    Selftest,
}

#[derive(Debug, Clone, Args)]
pub struct Invocation {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "DRCSIM_OUT", default_value = "drcsim-out")]
    pub out: PathBuf,
    /// Overrides `agent` in the config.
    #[arg(long)]
    pub agent: Option<String>,
}

impl Invocation {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(path).map_err(|e| match e {
                Error::Io(io) => Error::Parse(format!("{}: {io}", path.display())),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(agent) = &self.agent {
            cfg.agent = agent.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// 1 for usage and config problems, 2 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::UnknownKey(_) | Error::Invalid { .. } | Error::UnknownAgent(_) => 1,
        Error::Policy(_) | Error::Io(_) => 2,
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn prepare_out(out: &Path, cfg: &ExperimentConfig, command: &str) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_atomic(
        &out.join(format!("manifest-{command}.toml")),
        &report::manifest_text(cfg, command, now_unix()),
    )?;
    Ok(())
}

fn write_plot(path: &Path, svg: &str) {
    if let Err(e) = write_atomic(path, svg) {
        eprintln!("warning: could not write plot {}: {e}", path.display());
    }
}

pub fn policy_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("policy_seed{seed}.txt"))
}

pub fn cmd_train(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    prepare_out(&inv.out, &cfg, "train")?;

    let mut runs: Vec<TrainedRun> = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        eprintln!("train: agent={} seed={seed}", cfg.agent);
        runs.push(harness::train_agent(&cfg, seed)?);
    }

    let rows = runs.iter().flat_map(|run| {
        run.train
            .iter()
            .map(move |r| (run.seed, Phase::Train, r))
            .chain(run.eval.iter().map(move |r| (run.seed, Phase::Eval, r)))
    });
    write_atomic(&inv.out.join("episodes.csv"), &report::episodes_csv(rows))?;
    let summary: Vec<_> = runs
        .iter()
        .map(|r| (r.seed, r.eval_metrics(&cfg), r.convergence(&cfg)))
        .collect();
    write_atomic(&inv.out.join("summary.csv"), &report::summary_csv(&cfg.agent, &summary))?;
    for run in &runs {
        write_atomic(&policy_path(&inv.out, run.seed), &run.agent.export())?;
    }

    let series: Vec<Series> = runs
        .iter()
        .map(|run| Series {
            label: format!("{} seed {}", cfg.agent, run.seed),
            points: run
                .train
                .iter()
                .map(|r| (r.episode as f64, r.total_reward))
                .collect(),
        })
        .collect();
    write_plot(
        &inv.out.join("reward_vs_episode.svg"),
        &report::line_chart("Total reward vs. episode", "episode", "total reward", &series),
    );
    Ok(())
}

pub fn cmd_eval(inv: &Invocation, policy: Option<&Path>) -> Result<()> {
    let cfg = inv.resolve()?;
    prepare_out(&inv.out, &cfg, "eval")?;
    let entry = agents::lookup(&cfg.agent)?;

    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &seed in &cfg.seeds {
        let path = policy.map_or_else(|| policy_path(&inv.out, seed), Path::to_path_buf);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Policy(format!("{}: {e}", path.display())))?;
        let mut agent = (entry.restore)(&cfg, seed, &text)?;
        let eval = harness::evaluate(&cfg, agent.as_mut(), seed);
        summary.push((seed, harness::compute_metrics(&eval, cfg.metrics_window), None));
        records.extend(eval.into_iter().map(|r| (seed, r)));
    }
    write_atomic(
        &inv.out.join("eval_episodes.csv"),
        &report::episodes_csv(records.iter().map(|(s, r)| (*s, Phase::Eval, r))),
    )?;
    write_atomic(&inv.out.join("eval_summary.csv"), &report::summary_csv(&cfg.agent, &summary))?;
    Ok(())
}

pub fn cmd_sweep(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    prepare_out(&inv.out, &cfg, "sweep")?;
    eprintln!(
        "sweep: {} over {} values x {} agents x {} seeds",
        cfg.sweep.parameter,
        cfg.sweep.values.len(),
        cfg.sweep.agents.len(),
        cfg.seeds.len()
    );
    let rows = harness::run_sweep(&cfg)?;
    write_atomic(&inv.out.join("sweep.csv"), &report::sweep_csv(&cfg.sweep.parameter, &rows))?;

    type Pick = fn(&harness::SweepRow) -> Option<f64>;
    let plots: [(&str, &str, Pick); 3] = [
        ("sweep_reward.svg", "average reward", |r| Some(r.average_reward.median)),
        ("sweep_throughput.svg", "throughput (packets/step)", |r| Some(r.throughput.median)),
        ("sweep_miss_detection.svg", "miss detection probability", |r| {
            r.miss_detection.map(|s| s.median)
        }),
    ];
    for (file, label, pick) in plots {
        let series: Vec<Series> = cfg
            .sweep
            .agents
            .iter()
            .map(|agent| Series {
                label: agent.clone(),
                points: rows
                    .iter()
                    .filter(|r| &r.agent == agent)
                    .filter_map(|r| pick(r).map(|y| (r.value, y)))
                    .collect(),
            })
            .collect();
        write_plot(
            &inv.out.join(file),
            &report::line_chart(&format!("{label} vs. {}", cfg.sweep.parameter), &cfg.sweep.parameter, label, &series),
        );
    }
    Ok(())
}

/// Prints one line per check; true iff all passed.
pub fn cmd_selftest() -> bool {
    let results = selftest::run_selftest();
    for r in &results {
        println!("{} {:<24} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if !failed.is_empty() {
        println!("failed checks: {}", failed.join(", "));
    }
    failed.is_empty()
}

pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(inv) => cmd_train(inv),
        Command::Eval { inv, policy } => cmd_eval(inv, policy.as_deref()),
        Command::Sweep(inv) => cmd_sweep(inv),
        Command::Selftest => return if cmd_selftest() { 0 } else { 2 },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
