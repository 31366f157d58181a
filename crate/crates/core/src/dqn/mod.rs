//! Deep Q-network: online/target MLP pair, replay memory and plain SGD on
//! the half-squared TD error.

pub mod mlp;
mod replay;

pub use mlp::{forward, gradient, sgd_step, Dense, MlpParams, Workspace};
pub use replay::ReplayMemory;

use crate::agents::{epsilon_at, epsilon_greedy, greedy, EpsilonSchedule, Policy, Transition};
use crate::env::{encode_state, state_index, Action, EnvConfig, State};
use crate::error::{invalid, Result};
use crate::rng::{stream, SimRng, STREAM_EXPLORE, STREAM_INIT, STREAM_REPLAY};

pub const INPUTS: usize = 6;
pub const OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub schedule: EpsilonSchedule,
    pub memory_capacity: usize,
    pub batch_size: usize,
    /// Training steps between target-network copies.
    pub target_sync_interval: u64,
    pub hidden_sizes: [usize; 2],
    /// Stored transitions required before the first training step.
    pub warmup: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            alpha: 0.001,
            gamma: 0.99,
            schedule: EpsilonSchedule::default(),
            memory_capacity: 10_000,
            batch_size: 32,
            target_sync_interval: 100,
            hidden_sizes: [64, 64],
            warmup: 500,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("dqn.alpha", self.alpha, "(0, inf)"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("dqn.gamma", self.gamma, "(0, 1)"));
        }
        self.schedule.validate("dqn")?;
        if self.memory_capacity < 1 {
            return Err(invalid("dqn.memory_capacity", self.memory_capacity, ">= 1"));
        }
        if !(1..=self.memory_capacity).contains(&self.batch_size) {
            return Err(invalid(
                "dqn.batch_size",
                self.batch_size,
                &format!("[1, dqn.memory_capacity = {}]", self.memory_capacity),
            ));
        }
        if self.target_sync_interval < 1 {
            return Err(invalid("dqn.target_sync_interval", self.target_sync_interval, ">= 1"));
        }
        for (i, &h) in self.hidden_sizes.iter().enumerate() {
            if h < 1 {
                return Err(invalid(&format!("dqn.hidden{}", i + 1), h, ">= 1"));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        [INPUTS, self.hidden_sizes[0], self.hidden_sizes[1], OUTPUTS]
    }
}

/// Online weights, target weights and the training-step counter that
/// schedules target copies.
///
/// The target network is only replaced through [`target_sync`] or
/// [`OnlineTargetPair::set_target`], which lets training memoize
/// `max_a Q(s', a; θ⁻)` per state between copies.
#[derive(Debug, Clone)]
pub struct OnlineTargetPair {
    pub theta: MlpParams,
    theta_minus: MlpParams,
    pub train_steps: u64,
    ws: Workspace,
    grad: MlpParams,
    target_max: Vec<f64>,
}

impl OnlineTargetPair {
    pub fn new(theta: MlpParams) -> Self {
        let ws = Workspace::new(&theta);
        let grad = MlpParams::zeros(&theta.sizes());
        OnlineTargetPair {
            theta_minus: theta.clone(),
            theta,
            train_steps: 0,
            ws,
            grad,
            target_max: Vec::new(),
        }
    }

    pub fn target(&self) -> &MlpParams {
        &self.theta_minus
    }

    pub fn set_target(&mut self, params: MlpParams) {
        assert!(params.same_shape(&self.theta), "target shape mismatch");
        self.theta_minus = params;
        self.target_max.clear();
    }

    fn target_max(&mut self, next: &State, env: &EnvConfig) -> f64 {
        if self.target_max.len() != env.state_count() {
            self.target_max = vec![f64::NAN; env.state_count()];
        }
        let slot = state_index(next, env);
        let cached = self.target_max[slot];
        if !cached.is_nan() {
            return cached;
        }
        let q = self.theta_minus.forward_into(&encode_state(next, env), &mut self.ws);
        let best = q[0].max(q[1]);
        self.target_max[slot] = best;
        best
    }
}

/// `r + γ · max_a Q(s', a; θ⁻)`. Every step bootstraps; episode ends are
/// time limits, not terminal states.
pub fn td_target(t: &Transition, pair: &OnlineTargetPair, env: &EnvConfig, gamma: f64) -> f64 {
    let q_next = pair.theta_minus.forward(&encode_state(&t.next_state, env));
    t.reward + gamma * q_next[0].max(q_next[1])
}

pub fn target_sync(pair: &mut OnlineTargetPair) {
    pair.theta_minus.clone_from(&pair.theta);
    pair.target_max.clear();
}

/// One mini-batch SGD step. Returns the mean half-squared TD error, or
/// `None` without touching any parameter while the memory holds fewer
/// than `warmup` transitions.
pub fn train_step(
    pair: &mut OnlineTargetPair,
    memory: &ReplayMemory,
    env: &EnvConfig,
    cfg: &DqnConfig,
    rng: &mut SimRng,
) -> Option<f64> {
    if memory.is_empty() || memory.len() < cfg.warmup {
        return None;
    }
    pair.grad.fill(0.0);
    let scale = 1.0 / cfg.batch_size as f64;
    let mut loss = 0.0;
    for _ in 0..cfg.batch_size {
        let t = memory.sample(rng);
        let y = t.reward + cfg.gamma * pair.target_max(&t.next_state, env);
        let residual = pair.theta.accumulate_gradient(
            &encode_state(&t.state, env),
            t.action,
            y,
            scale,
            &mut pair.ws,
            &mut pair.grad,
        );
        loss += 0.5 * residual * residual;
    }
    sgd_step(&mut pair.theta, &pair.grad, cfg.alpha);
    pair.train_steps += 1;
    if pair.train_steps % cfg.target_sync_interval == 0 {
        target_sync(pair);
    }
    Some(loss * scale)
}

pub struct DqnAgent {
    pub pair: OnlineTargetPair,
    pub memory: ReplayMemory,
    env: EnvConfig,
    cfg: DqnConfig,
    explore_rng: SimRng,
    replay_rng: SimRng,
    episode: usize,
    last_loss: Option<f64>,
}

impl DqnAgent {
    pub fn new(env: EnvConfig, cfg: DqnConfig, seed: u64) -> Self {
        let theta = MlpParams::glorot(&cfg.layer_sizes(), &mut stream(seed, STREAM_INIT));
        Self::with_params(env, cfg, seed, theta)
    }

    fn with_params(env: EnvConfig, cfg: DqnConfig, seed: u64, theta: MlpParams) -> Self {
        DqnAgent {
            pair: OnlineTargetPair::new(theta),
            memory: ReplayMemory::new(cfg.memory_capacity),
            env,
            cfg,
            explore_rng: stream(seed, STREAM_EXPLORE),
            replay_rng: stream(seed, STREAM_REPLAY),
            episode: 0,
            last_loss: None,
        }
    }

    /// Loads exported online weights into both networks.
    pub fn restore(env: EnvConfig, cfg: DqnConfig, seed: u64, text: &str) -> Result<Self> {
        let theta = MlpParams::parse(text)?;
        if theta.input_size() != INPUTS || theta.output_size() != OUTPUTS {
            return Err(crate::error::Error::Policy(format!(
                "network maps {} -> {}, expected {INPUTS} -> {OUTPUTS}",
                theta.input_size(),
                theta.output_size()
            )));
        }
        Ok(Self::with_params(env, cfg, seed, theta))
    }

    pub fn q_values(&self, state: &State) -> [f64; 2] {
        self.pair.theta.forward(&encode_state(state, &self.env))
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

impl Policy for DqnAgent {
    fn name(&self) -> &'static str {
        "dqn"
    }

    fn act(&mut self, state: &State, explore: bool) -> Action {
        let x = encode_state(state, &self.env);
        let q = self.pair.theta.forward_into(&x, &mut self.pair.ws);
        let q = [q[0], q[1]];
        if explore {
            let eps = epsilon_at(&self.cfg.schedule, self.episode);
            epsilon_greedy(q, eps, &mut self.explore_rng)
        } else {
            greedy(q)
        }
    }

    fn observe(&mut self, t: &Transition) {
        self.memory.remember(*t);
        if let Some(loss) = train_step(
            &mut self.pair,
            &self.memory,
            &self.env,
            &self.cfg,
            &mut self.replay_rng,
        ) {
            self.last_loss = Some(loss);
        }
    }

    fn end_episode(&mut self) {
        self.episode += 1;
    }

    fn export(&self) -> String {
        self.pair.theta.to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::state_from_index;
    use rand::Rng;

    fn transition(reward: f64, next: usize) -> Transition {
        let env = EnvConfig::default();
        Transition {
            state: state_from_index(37, &env),
            action: Action::Radar,
            reward,
            next_state: state_from_index(next, &env),
        }
    }

    fn small_cfg() -> DqnConfig {
        DqnConfig {
            hidden_sizes: [8, 8],
            batch_size: 4,
            warmup: 1,
            memory_capacity: 64,
            ..Default::default()
        }
    }

    #[test]
    fn td_target_examples() {
        let env = EnvConfig::default();
        let mut pair = OnlineTargetPair::new(MlpParams::zeros(&[6, 4, 4, 2]));
        // Zero target network: y = r.
        assert_eq!(td_target(&transition(3.5, 100), &pair, &env, 0.99), 3.5);
        let mut target = MlpParams::zeros(&[6, 4, 4, 2]);
        target.layers[2].bias = vec![10.0, 4.0];
        pair.set_target(target);
        assert_eq!(td_target(&transition(2.0, 5), &pair, &env, 0.0), 2.0);
        let y = td_target(&transition(2.0, 5), &pair, &env, 0.99);
        assert!((y - 11.9).abs() < 1e-12);
    }

    #[test]
    fn gated_below_warmup() {
        let env = EnvConfig::default();
        let cfg = DqnConfig { warmup: 10, ..small_cfg() };
        let mut rng = stream(1, STREAM_REPLAY);
        let mut pair = OnlineTargetPair::new(MlpParams::glorot(&cfg.layer_sizes(), &mut stream(1, 3)));
        let before = pair.theta.clone();
        let mut mem = ReplayMemory::new(64);
        for _ in 0..9 {
            mem.remember(transition(1.0, 0));
        }
        assert_eq!(train_step(&mut pair, &mem, &env, &cfg, &mut rng), None);
        assert_eq!(pair.theta, before);
        assert_eq!(pair.train_steps, 0);
    }

    #[test]
    fn identical_batch_matches_single_sample_update() {
        let env = EnvConfig::default();
        let cfg = small_cfg();
        let theta = MlpParams::glorot(&cfg.layer_sizes(), &mut stream(5, 3));
        let t = transition(7.0, 200);

        let mut pair = OnlineTargetPair::new(theta.clone());
        let mut mem = ReplayMemory::new(8);
        mem.remember(t);
        train_step(&mut pair, &mem, &env, &cfg, &mut stream(5, 4)).unwrap();

        // Single-sample oracle: one gradient, one step.
        let oracle_pair = OnlineTargetPair::new(theta.clone());
        let y = td_target(&t, &oracle_pair, &env, cfg.gamma);
        let g = gradient(&theta, &encode_state(&t.state, &env), t.action, y);
        let mut expected = theta;
        sgd_step(&mut expected, &g, cfg.alpha);

        for (a, b) in pair.theta.values().zip(expected.values()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn fitted_batch_has_zero_loss() {
        let env = EnvConfig::default();
        let cfg = small_cfg();
        // Zero networks, zero rewards: every target is 0 and so is Q.
        let mut pair = OnlineTargetPair::new(MlpParams::zeros(&cfg.layer_sizes()));
        let mut mem = ReplayMemory::new(8);
        mem.remember(transition(0.0, 3));
        mem.remember(transition(0.0, 300));
        let loss = train_step(&mut pair, &mem, &env, &cfg, &mut stream(2, 4)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn target_sync_contract() {
        let env = EnvConfig::default();
        let cfg = DqnConfig { target_sync_interval: 1000, ..small_cfg() };
        let mut pair = OnlineTargetPair::new(MlpParams::glorot(&cfg.layer_sizes(), &mut stream(3, 3)));
        let mut mem = ReplayMemory::new(64);
        for i in 0..20 {
            mem.remember(transition(i as f64, i * 7));
        }
        let mut rng = stream(3, 4);
        train_step(&mut pair, &mem, &env, &cfg, &mut rng);
        assert_ne!(&pair.theta, pair.target());

        target_sync(&mut pair);
        let mut probe = stream(8, 0);
        for _ in 0..20 {
            let x: [f64; 6] = std::array::from_fn(|_| probe.random_range(0.0..1.0));
            assert_eq!(pair.theta.forward(&x), pair.target().forward(&x));
        }
        let synced = pair.target().clone();
        target_sync(&mut pair);
        assert_eq!(pair.target(), &synced);

        let fixed = transition(1.0, 99);
        let y0 = td_target(&fixed, &pair, &env, cfg.gamma);
        for _ in 0..5 {
            train_step(&mut pair, &mem, &env, &cfg, &mut rng);
            assert_eq!(pair.target(), &synced);
            assert_eq!(td_target(&fixed, &pair, &env, cfg.gamma), y0);
        }
    }

    #[test]
    fn periodic_sync_fires_on_interval() {
        let env = EnvConfig::default();
        let cfg = DqnConfig { target_sync_interval: 3, ..small_cfg() };
        let mut pair = OnlineTargetPair::new(MlpParams::glorot(&cfg.layer_sizes(), &mut stream(6, 3)));
        let mut mem = ReplayMemory::new(64);
        for i in 0..10 {
            mem.remember(transition(5.0 + i as f64, i * 11));
        }
        let mut rng = stream(6, 4);
        let initial = pair.target().clone();
        for step in 1..=6u64 {
            train_step(&mut pair, &mem, &env, &cfg, &mut rng);
            if step % 3 == 0 {
                assert_eq!(pair.target(), &pair.theta);
            } else {
                assert_ne!(pair.target(), &pair.theta);
            }
        }
        assert_ne!(pair.target(), &initial);
    }

    #[test]
    fn deterministic_training() {
        let env = EnvConfig::default();
        let run = || {
            let mut agent = DqnAgent::new(env, small_cfg(), 42);
            let mut rng = stream(42, 0);
            let mut s = crate::env::env_reset(&env, &mut rng);
            for _ in 0..200 {
                let a = agent.act(&s, true);
                let out = crate::env::env_step(&s, a, &env, &mut rng);
                agent.observe(&Transition { state: s, action: a, reward: out.reward, next_state: out.next_state });
                s = out.next_state;
            }
            agent.pair.theta
        };
        let a = run();
        let b = run();
        assert!(a.values().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn restore_round_trip() {
        let env = EnvConfig::default();
        let agent = DqnAgent::new(env, small_cfg(), 1);
        let restored = DqnAgent::restore(env, small_cfg(), 1, &agent.export()).unwrap();
        assert_eq!(restored.pair.theta, agent.pair.theta);
        assert_eq!(restored.pair.target(), &agent.pair.theta);
        let bad = MlpParams::zeros(&[5, 2]).to_text();
        assert!(DqnAgent::restore(env, small_cfg(), 1, &bad).is_err());
    }
}
