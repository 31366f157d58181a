//! Fast invariant checks shared by the `selftest` command and the test
//! suites. Each check is independent of the code path it verifies where
//! an independent route exists (enumerated tables, finite differences,
//! value iteration).

use rand::Rng;

use crate::agents::QTable;
use crate::dqn::MlpParams;
use crate::env::{
    immediate_reward, queue_step, sample_exogenous, state_from_index, state_index, Action,
    EnvConfig, RewardParams,
};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult { name, passed, detail }
    }
}

pub type GradientFn = fn(&MlpParams, &[f64], Action, f64) -> MlpParams;

/// Reward table written out case by case, independent of the `match` in
/// the environment.
pub fn check_reward_table(params: &RewardParams) -> CheckResult {
    let mut mismatches = 0;
    let mut cases = 0;
    for a in Action::ALL {
        for channel_bad in [false, true] {
            for event in [false, true] {
                for b in 0..=4usize {
                    let expected = if a == Action::Communicate && !event && !channel_bad {
                        params.r1
                    } else if a == Action::Communicate && !event && channel_bad {
                        params.r2
                    } else if a == Action::Communicate && event {
                        -params.r3
                    } else if a == Action::Radar && event {
                        params.r4 * (b + 1) as f64
                    } else {
                        0.0
                    };
                    cases += 1;
                    if immediate_reward(params, a, channel_bad, event, b) != expected {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    CheckResult::new(
        "reward_table",
        mismatches == 0,
        format!("{cases} cases, {mismatches} mismatches"),
    )
}

/// Worst relative error between `grad_fn` and central finite differences
/// over `probes` random networks; every parameter is compared.
pub fn max_gradient_error(grad_fn: GradientFn, probes: usize, seed: u64) -> f64 {
    const H: f64 = 1e-5;
    let mut rng = stream(seed, 0);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < probes {
        let mut params = MlpParams::glorot(&[6, 8, 8, 2], &mut rng);
        for layer in &mut params.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let x: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        if near_kink(&params, &x, 1e-3) {
            continue;
        }
        let action = Action::from_index(rng.random_range(0..2));
        let y = rng.random_range(-5.0..5.0);
        let analytic: Vec<f64> = grad_fn(&params, &x, action, y).values().collect();
        let loss = |p: &MlpParams| {
            let q = p.forward(&x)[action.index()];
            0.5 * (y - q) * (y - q)
        };
        let count = params.parameter_count();
        for k in 0..count {
            let mut plus = params.clone();
            *plus.values_mut().nth(k).unwrap() += H;
            let mut minus = params.clone();
            *minus.values_mut().nth(k).unwrap() -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let a = analytic[k];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
        done += 1;
    }
    worst
}

/// True when some hidden pre-activation sits within `margin` of the ReLU
/// kink, where finite differences are not meaningful.
fn near_kink(params: &MlpParams, x: &[f64], margin: f64) -> bool {
    let mut h = x.to_vec();
    for layer in &params.layers[..params.layers.len() - 1] {
        let mut next = vec![0.0; layer.outputs];
        for (o, n) in next.iter_mut().enumerate() {
            let z: f64 = layer.bias[o]
                + (0..layer.inputs)
                    .map(|i| layer.weights[o * layer.inputs + i] * h[i])
                    .sum::<f64>();
            if z.abs() < margin {
                return true;
            }
            *n = z.max(0.0);
        }
        h = next;
    }
    false
}

pub fn check_gradient(grad_fn: GradientFn, probes: usize) -> CheckResult {
    let worst = max_gradient_error(grad_fn, probes, 2024);
    CheckResult::new(
        "gradient_check",
        worst < 1e-4,
        format!("{probes} probes, max relative error {worst:.3e}"),
    )
}

/// Randomized queue transitions against the conservation law and bounds.
pub fn check_queue_conservation(steps: usize, seed: u64) -> CheckResult {
    let mut rng = stream(seed, 0);
    let mut failures = 0usize;
    for _ in 0..steps {
        let cfg = EnvConfig {
            queue_capacity: rng.random_range(1..=30),
            tx_good: rng.random_range(0..=8),
            ..EnvConfig::default()
        };
        let cfg = EnvConfig {
            tx_bad: rng.random_range(0..=cfg.tx_good),
            ..cfg
        };
        let d = rng.random_range(0..=cfg.queue_capacity);
        let action = Action::from_index(rng.random_range(0..2));
        let bad = rng.random_bool(0.5);
        let arrivals = rng.random_range(0..=40);
        let q = queue_step(d, action, bad, arrivals, &cfg);
        let balanced = q.queue + q.dropped + q.sent == d + arrivals;
        let bounded = q.queue <= cfg.queue_capacity;
        let served = match action {
            Action::Radar => q.sent == 0,
            Action::Communicate => q.sent == d.min(if bad { cfg.tx_bad } else { cfg.tx_good }),
        };
        if !(balanced && bounded && served) {
            failures += 1;
        }
    }
    CheckResult::new(
        "queue_conservation",
        failures == 0,
        format!("{steps} steps, {failures} violations"),
    )
}

pub fn check_state_index_round_trip(cfg: &EnvConfig) -> CheckResult {
    let n = cfg.state_count();
    let mut bad = 0;
    for i in 0..n {
        let s = state_from_index(i, cfg);
        if s.queue > cfg.queue_capacity || state_index(&s, cfg) != i {
            bad += 1;
        }
    }
    CheckResult::new("state_index_round_trip", bad == 0, format!("{n} states, {bad} failures"))
}

/// Empirical means of the channel, every factor and the arrivals against
/// their distribution means, each within three standard errors.
pub fn check_sampling_means(cfg: &EnvConfig, samples: usize, seed: u64) -> CheckResult {
    let mut rng = stream(seed, 0);
    let mut bad_channel = 0usize;
    let mut factors = [0usize; 4];
    let mut arrivals = 0usize;
    for _ in 0..samples {
        let e = sample_exogenous(cfg, &mut rng);
        bad_channel += e.channel_bad as usize;
        for (count, u) in factors.iter_mut().zip(e.unfavorable) {
            *count += u as usize;
        }
        arrivals += e.arrivals;
    }
    let n = samples as f64;
    let mut worst = 0.0f64;
    let mut z = |count: usize, mean: f64, var: f64| {
        let se = (var / n).sqrt();
        let score = if se == 0.0 {
            if count as f64 / n == mean { 0.0 } else { f64::INFINITY }
        } else {
            (count as f64 / n - mean).abs() / se
        };
        worst = worst.max(score);
    };
    let pc = cfg.p_bad_channel;
    z(bad_channel, pc, pc * (1.0 - pc));
    for (i, &count) in factors.iter().enumerate() {
        let p = 1.0 - cfg.factors.tau[i];
        z(count, p, p * (1.0 - p));
    }
    z(arrivals, cfg.arrival_rate, cfg.arrival_rate);
    CheckResult::new(
        "sampling_means",
        worst < 3.0,
        format!("{samples} samples, worst |z| = {worst:.2}"),
    )
}

/// Deterministic two-state, two-action MDP used as a Q-learning oracle.
/// `next[s][a]` and `reward[s][a]`.
pub struct ToyMdp {
    pub next: [[usize; 2]; 2],
    pub reward: [[f64; 2]; 2],
    pub gamma: f64,
}

pub const TOY_MDP: ToyMdp = ToyMdp {
    next: [[0, 1], [0, 1]],
    reward: [[1.0, 0.0], [5.0, -1.0]],
    gamma: 0.9,
};

/// Value iteration to machine precision.
pub fn value_iteration(mdp: &ToyMdp) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        let mut next = [[0.0; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                next[s][a] = mdp.reward[s][a] + mdp.gamma * v[mdp.next[s][a]];
            }
        }
        let delta = (0..4).map(|k| (next[k / 2][k % 2] - q[k / 2][k % 2]).abs()).fold(0.0, f64::max);
        q = next;
        if delta == 0.0 {
            break;
        }
    }
    q
}

/// Tabular Q-learning on the toy MDP along a uniformly exploring
/// trajectory, with per-pair step size `1 / (1 + n/100)^0.6`.
pub fn toy_q_learning(mdp: &ToyMdp, updates: usize, rng: &mut SimRng) -> QTable {
    let mut table = QTable::new(2);
    let mut visits = [[0usize; 2]; 2];
    let mut s = 0;
    for _ in 0..updates {
        let a = rng.random_range(0..2);
        visits[s][a] += 1;
        let alpha = (1.0 + visits[s][a] as f64 / 100.0).powf(-0.6);
        let s_next = mdp.next[s][a];
        table.update(s, Action::from_index(a), mdp.reward[s][a], s_next, alpha, mdp.gamma);
        s = s_next;
    }
    table
}

pub fn toy_q_error(updates: usize, seed: u64) -> f64 {
    let q_star = value_iteration(&TOY_MDP);
    let table = toy_q_learning(&TOY_MDP, updates, &mut stream(seed, 0));
    (0..4)
        .map(|k| (table.row(k / 2)[k % 2] - q_star[k / 2][k % 2]).abs())
        .fold(0.0, f64::max)
}

pub fn check_toy_mdp() -> CheckResult {
    let err = toy_q_error(100_000, 17);
    CheckResult::new(
        "toy_mdp_q_learning",
        err < 1e-3,
        format!("100000 updates, max |Q - Q*| = {err:.3e}"),
    )
}

pub fn run_selftest() -> Vec<CheckResult> {
    run_selftest_with(crate::dqn::gradient)
}

/// The gradient routine is injectable so a broken implementation can be
/// shown to fail the suite.
pub fn run_selftest_with(grad_fn: GradientFn) -> Vec<CheckResult> {
    let cfg = EnvConfig::default();
    vec![
        check_reward_table(&cfg.rewards),
        check_gradient(grad_fn, 100),
        check_queue_conservation(1_000_000, 5),
        check_state_index_round_trip(&cfg),
        check_sampling_means(&cfg, 100_000, 6),
        check_toy_mdp(),
    ]
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}
