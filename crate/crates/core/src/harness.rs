//! Episode runner, training/evaluation orchestration, metrics, convergence
//! detection, parameter sweeps and seed aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::agents::{self, Policy, Transition};
use crate::config::ExperimentConfig;
use crate::env::{Action, Environment, State, StepOutcome};
use crate::error::Result;
use crate::rng::{stream, STREAM_ENV_EVAL, STREAM_ENV_TRAIN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub total_reward: f64,
    pub packets_sent: usize,
    pub events_total: usize,
    pub events_missed: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Packets per step.
    pub throughput: f64,
    /// `None` when no event occurred in the window.
    pub miss_detection_probability: Option<f64>,
    /// Mean total reward per episode.
    pub average_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// Runs one episode of `steps` steps from a fresh reset. With `train` set
/// the agent explores and observes every transition; otherwise it acts
/// greedily and learns nothing. `on_step` sees every step in order.
pub fn run_episode_observed(
    env: &mut Environment,
    agent: &mut dyn Policy,
    steps: usize,
    train: bool,
    episode: usize,
    mut on_step: impl FnMut(&State, Action, &StepOutcome),
) -> EpisodeRecord {
    let mut state = env.reset();
    let mut rec = EpisodeRecord {
        episode,
        total_reward: 0.0,
        packets_sent: 0,
        events_total: 0,
        events_missed: 0,
        steps,
    };
    for _ in 0..steps {
        let action = agent.act(&state, train);
        let out = env.step(action);
        on_step(&state, action, &out);
        if train {
            agent.observe(&Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.next_state,
            });
        }
        rec.total_reward += out.reward;
        rec.packets_sent += out.packets_sent;
        if out.event_occurred {
            rec.events_total += 1;
            if !out.event_detected {
                rec.events_missed += 1;
            }
        }
        state = out.next_state;
    }
    agent.end_episode();
    rec
}

pub fn run_episode(
    env: &mut Environment,
    agent: &mut dyn Policy,
    steps: usize,
    train: bool,
    episode: usize,
) -> EpisodeRecord {
    run_episode_observed(env, agent, steps, train, episode, |_, _, _| {})
}

/// `Σ γᵗ r_{t+1}`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Metrics over the last `window` records (all of them if fewer).
pub fn compute_metrics(records: &[EpisodeRecord], window: usize) -> Metrics {
    let tail = &records[records.len().saturating_sub(window)..];
    let packets: usize = tail.iter().map(|r| r.packets_sent).sum();
    let steps: usize = tail.iter().map(|r| r.steps).sum();
    let events: usize = tail.iter().map(|r| r.events_total).sum();
    let missed: usize = tail.iter().map(|r| r.events_missed).sum();
    let reward: f64 = tail.iter().map(|r| r.total_reward).sum();
    Metrics {
        throughput: if steps == 0 { 0.0 } else { packets as f64 / steps as f64 },
        miss_detection_probability: (events > 0).then(|| missed as f64 / events as f64),
        average_reward: if tail.is_empty() { 0.0 } else { reward / tail.len() as f64 },
    }
}

pub struct TrainedRun {
    pub seed: u64,
    pub agent: Box<dyn Policy>,
    pub train: Vec<EpisodeRecord>,
    pub eval: Vec<EpisodeRecord>,
}

impl TrainedRun {
    pub fn eval_metrics(&self, cfg: &ExperimentConfig) -> Metrics {
        compute_metrics(&self.eval, cfg.metrics_window)
    }

    pub fn convergence(&self, cfg: &ExperimentConfig) -> Option<usize> {
        let rewards: Vec<f64> = self.train.iter().map(|r| r.total_reward).collect();
        convergence_episode(&rewards, cfg.convergence_window, cfg.convergence_tolerance)
    }
}

/// Greedy evaluation episodes on the evaluation environment stream.
pub fn evaluate(cfg: &ExperimentConfig, agent: &mut dyn Policy, seed: u64) -> Vec<EpisodeRecord> {
    let mut env = Environment::new(cfg.env, stream(seed, STREAM_ENV_EVAL));
    (0..cfg.eval_episodes)
        .map(|e| run_episode(&mut env, agent, cfg.steps_per_episode, false, e))
        .collect()
}

/// Trains `cfg.agent` for `cfg.episodes`, then evaluates it greedily.
pub fn train_agent(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    let mut agent = agents::build(&cfg.agent, cfg, seed)?;
    let mut env = Environment::new(cfg.env, stream(seed, STREAM_ENV_TRAIN));
    let train = (0..cfg.episodes)
        .map(|e| run_episode(&mut env, agent.as_mut(), cfg.steps_per_episode, true, e))
        .collect();
    let eval = evaluate(cfg, agent.as_mut(), seed);
    Ok(TrainedRun {
        seed,
        agent,
        train,
        eval,
    })
}

/// First episode from which every moving average of `window` episodes
/// stays within `tolerance·|plateau|` of the plateau, the mean of the
/// final `window` episodes. The final window trivially matches itself, so
/// a start later than `len − 2·window` counts as not converged, as does a
/// series shorter than `2·window`.
pub fn convergence_episode(rewards: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    let n = rewards.len();
    if window == 0 || n < 2 * window {
        return None;
    }
    let plateau = rewards[n - window..].iter().sum::<f64>() / window as f64;
    let band = tolerance * plateau.abs();
    let mut first = n - window;
    let mut sum: f64 = rewards[n - window..].iter().sum();
    // Walk window starts backwards until one leaves the band.
    for start in (0..n - window).rev() {
        sum += rewards[start] - rewards[start + window];
        if (sum / window as f64 - plateau).abs() > band {
            break;
        }
        first = start;
    }
    (first <= n - 2 * window).then_some(first)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median (mean of the middle pair for even counts), min and max.
pub fn aggregate_seeds(values: &[f64]) -> Spread {
    assert!(!values.is_empty(), "aggregate of no values");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    Spread {
        median,
        min: v[0],
        max: v[n - 1],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub agent: String,
    pub average_reward: Spread,
    pub throughput: Spread,
    /// Over the seeds where miss detection is defined; `None` if no seed
    /// saw an event.
    pub miss_detection: Option<Spread>,
    pub per_seed: Vec<(u64, Metrics)>,
}

pub fn summarize(value: f64, agent: &str, per_seed: Vec<(u64, Metrics)>) -> SweepRow {
    let rewards: Vec<f64> = per_seed.iter().map(|(_, m)| m.average_reward).collect();
    let tput: Vec<f64> = per_seed.iter().map(|(_, m)| m.throughput).collect();
    let miss: Vec<f64> = per_seed
        .iter()
        .filter_map(|(_, m)| m.miss_detection_probability)
        .collect();
    SweepRow {
        value,
        agent: agent.to_string(),
        average_reward: aggregate_seeds(&rewards),
        throughput: aggregate_seeds(&tput),
        miss_detection: (!miss.is_empty()).then(|| aggregate_seeds(&miss)),
        per_seed,
    }
}

/// Every sweep value × agent × seed gets a fresh train/eval run; rows come
/// back value-major, agents in `sweep.agents` order.
pub fn run_sweep(base: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let spec = &base.sweep;
    let mut jobs = Vec::new();
    for &value in &spec.values {
        let mut cfg = base.clone();
        cfg.set_number(&spec.parameter, value)?;
        for agent in &spec.agents {
            let mut cfg = cfg.clone();
            cfg.agent = agent.clone();
            for &seed in &base.seeds {
                jobs.push((value, cfg.clone(), seed));
            }
        }
    }
    let results = parallel_map(&jobs, |(_, cfg, seed)| {
        train_agent(cfg, *seed).map(|run| run.eval_metrics(cfg))
    });

    let mut rows = Vec::new();
    let mut it = jobs.iter().zip(results);
    for &value in &spec.values {
        for agent in &spec.agents {
            let mut per_seed = Vec::with_capacity(base.seeds.len());
            for _ in &base.seeds {
                let ((_, _, seed), metrics) = it.next().expect("one result per job");
                per_seed.push((*seed, metrics?));
            }
            rows.push(summarize(value, agent, per_seed));
        }
    }
    Ok(rows)
}

/// Order-preserving map over independent jobs on scoped threads.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
