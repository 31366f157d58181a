//! Vehicle environment: factor states, unexpected events, the data queue,
//! the communication channel and the mode-selection reward.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Result};
use crate::rng::SimRng;

pub const ROAD: usize = 0;
pub const WEATHER: usize = 1;
pub const SPEED: usize = 2;
pub const OBJECT: usize = 3;

/// Short names used in config keys, in factor order.
pub const FACTOR_NAMES: [&str; 4] = ["r", "w", "v", "m"];

/// Number of distinct `(c, r, w, v, m)` combinations.
pub const BINARY_COMBINATIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorProbabilities {
    /// Event probability contributed by each factor while favorable.
    pub p0: [f64; 4],
    /// Event probability contributed by each factor while unfavorable.
    pub p1: [f64; 4],
    /// Probability that each factor is favorable on a given step.
    pub tau: [f64; 4],
}

impl Default for FactorProbabilities {
    fn default() -> Self {
        FactorProbabilities {
            p0: [0.005, 0.005, 0.005, 0.005],
            p1: [0.05, 0.046, 0.1, 0.05],
            tau: [0.8; 4],
        }
    }
}

impl FactorProbabilities {
    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            let name = FACTOR_NAMES[i];
            check_unit(&format!("env.factors.p0.{name}"), self.p0[i])?;
            check_unit(&format!("env.factors.p1.{name}"), self.p1[i])?;
            check_unit(&format!("env.factors.tau.{name}"), self.tau[i])?;
            if self.p0[i] > self.p1[i] {
                return Err(invalid(
                    &format!("env.factors.p1.{name}"),
                    self.p1[i],
                    &format!("[env.factors.p0.{name} = {}, 1]", self.p0[i]),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    pub r1: f64,
    pub r2: f64,
    /// Applied negated.
    pub r3: f64,
    pub r4: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            r1: 2.0,
            r2: 1.0,
            r3: 50.0,
            r4: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub factors: FactorProbabilities,
    /// Queue capacity `D` in packets.
    pub queue_capacity: usize,
    /// Mean Poisson packet arrivals per step.
    pub arrival_rate: f64,
    /// Packets sent per communication step on a good channel.
    pub tx_good: usize,
    /// Packets sent per communication step on a bad channel.
    pub tx_bad: usize,
    /// Probability that the channel is bad.
    pub p_bad_channel: f64,
    pub rewards: RewardParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            factors: FactorProbabilities::default(),
            queue_capacity: 10,
            arrival_rate: 1.0,
            tx_good: 4,
            tx_bad: 2,
            p_bad_channel: 0.1,
            rewards: RewardParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.factors.validate()?;
        if self.queue_capacity < 1 {
            return Err(invalid("env.queue_capacity", self.queue_capacity, ">= 1"));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(invalid("env.arrival_rate", self.arrival_rate, "(0, inf)"));
        }
        if self.tx_bad > self.tx_good {
            return Err(invalid(
                "env.tx_bad",
                self.tx_bad,
                &format!("[0, env.tx_good = {}]", self.tx_good),
            ));
        }
        check_unit("env.p_c", self.p_bad_channel)?;
        let r = &self.rewards;
        for (key, v) in [
            ("env.rewards.r1", r.r1),
            ("env.rewards.r2", r.r2),
            ("env.rewards.r3", r.r3),
            ("env.rewards.r4", r.r4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, v, "[0, inf)"));
            }
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        (self.queue_capacity + 1) * BINARY_COMBINATIONS
    }
}

fn check_unit(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(key, v, "[0, 1]"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct State {
    /// Packets waiting in the queue.
    pub queue: usize,
    pub channel_bad: bool,
    /// Road, weather, speed and nearby-object states; `true` is unfavorable.
    pub unfavorable: [bool; 4],
}

impl State {
    pub fn unfavorable_count(&self) -> usize {
        self.unfavorable.iter().filter(|&&u| u).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Communicate = 0,
    Radar = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Communicate, Action::Radar];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Communicate,
            _ => Action::Radar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub event_occurred: bool,
    pub event_detected: bool,
    pub packets_sent: usize,
    pub packets_dropped: usize,
}

/// One step's worth of exogenous randomness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exogenous {
    pub channel_bad: bool,
    pub unfavorable: [bool; 4],
    pub arrivals: usize,
    /// Uniform draw in `[0, 1)` compared against the event probability.
    pub event_draw: f64,
}

/// Per-step event probability conditioned on the realized factor states:
/// the clamped sum of each factor's active probability.
pub fn event_probability(factors: &FactorProbabilities, s: &State) -> f64 {
    let sum: f64 = (0..4)
        .map(|i| {
            if s.unfavorable[i] {
                factors.p1[i]
            } else {
                factors.p0[i]
            }
        })
        .sum();
    sum.clamp(0.0, 1.0)
}

/// Event probability marginalized over the factor distribution. Reporting
/// only; steps always use [`event_probability`].
pub fn mean_event_probability(factors: &FactorProbabilities) -> f64 {
    let sum: f64 = (0..4)
        .map(|i| factors.tau[i] * factors.p0[i] + (1.0 - factors.tau[i]) * factors.p1[i])
        .sum();
    sum.clamp(0.0, 1.0)
}

/// `unfavorable` is the number of unfavorable factors in the state the
/// action was taken in.
pub fn immediate_reward(
    params: &RewardParams,
    action: Action,
    channel_bad: bool,
    event: bool,
    unfavorable: usize,
) -> f64 {
    match (action, event) {
        (Action::Communicate, false) if !channel_bad => params.r1,
        (Action::Communicate, false) => params.r2,
        (Action::Communicate, true) => -params.r3,
        (Action::Radar, true) => params.r4 * (unfavorable as f64 + 1.0),
        (Action::Radar, false) => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueStep {
    pub queue: usize,
    pub sent: usize,
    pub dropped: usize,
}

/// Serve first, then admit arrivals; whatever exceeds capacity is dropped.
pub fn queue_step(
    queue: usize,
    action: Action,
    channel_bad: bool,
    arrivals: usize,
    cfg: &EnvConfig,
) -> QueueStep {
    let sent = match action {
        Action::Communicate => queue.min(if channel_bad { cfg.tx_bad } else { cfg.tx_good }),
        Action::Radar => 0,
    };
    let interim = queue - sent + arrivals;
    let next = interim.min(cfg.queue_capacity);
    QueueStep {
        queue: next,
        sent,
        dropped: interim - next,
    }
}

pub fn sample_exogenous(cfg: &EnvConfig, rng: &mut SimRng) -> Exogenous {
    let channel_bad = rng.random_bool(cfg.p_bad_channel);
    let mut unfavorable = [false; 4];
    for (i, u) in unfavorable.iter_mut().enumerate() {
        *u = rng.random_bool(1.0 - cfg.factors.tau[i]);
    }
    let arrivals = Poisson::new(cfg.arrival_rate)
        .expect("arrival rate validated positive")
        .sample(rng) as usize;
    let event_draw = rng.random::<f64>();
    Exogenous {
        channel_bad,
        unfavorable,
        arrivals,
        event_draw,
    }
}

/// Deterministic core of a step: applies one exogenous draw to `state`.
pub fn transition(state: &State, action: Action, cfg: &EnvConfig, exo: &Exogenous) -> StepOutcome {
    let event_occurred = exo.event_draw < event_probability(&cfg.factors, state);
    let reward = immediate_reward(
        &cfg.rewards,
        action,
        state.channel_bad,
        event_occurred,
        state.unfavorable_count(),
    );
    let q = queue_step(state.queue, action, state.channel_bad, exo.arrivals, cfg);
    StepOutcome {
        next_state: State {
            queue: q.queue,
            channel_bad: exo.channel_bad,
            unfavorable: exo.unfavorable,
        },
        reward,
        event_occurred,
        event_detected: event_occurred && action == Action::Radar,
        packets_sent: q.sent,
        packets_dropped: q.dropped,
    }
}

pub fn env_step(state: &State, action: Action, cfg: &EnvConfig, rng: &mut SimRng) -> StepOutcome {
    let exo = sample_exogenous(cfg, rng);
    transition(state, action, cfg, &exo)
}

pub fn env_reset(cfg: &EnvConfig, rng: &mut SimRng) -> State {
    let exo = sample_exogenous(cfg, rng);
    State {
        queue: 0,
        channel_bad: exo.channel_bad,
        unfavorable: exo.unfavorable,
    }
}

/// Network input: `[d/D, c, r, w, v, m]`.
pub fn encode_state(s: &State, cfg: &EnvConfig) -> [f64; 6] {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    [
        s.queue as f64 / cfg.queue_capacity as f64,
        b(s.channel_bad),
        b(s.unfavorable[ROAD]),
        b(s.unfavorable[WEATHER]),
        b(s.unfavorable[SPEED]),
        b(s.unfavorable[OBJECT]),
    ]
}

/// Mixed-radix index: queue-major, then `(c, r, w, v, m)` as a 5-bit number
/// with `c` as the most significant bit.
pub fn state_index(s: &State, _cfg: &EnvConfig) -> usize {
    let mut bits = s.channel_bad as usize;
    for &u in &s.unfavorable {
        bits = (bits << 1) | u as usize;
    }
    s.queue * BINARY_COMBINATIONS + bits
}

/// Inverse of [`state_index`].
pub fn state_from_index(index: usize, _cfg: &EnvConfig) -> State {
    let bits = index % BINARY_COMBINATIONS;
    let mut unfavorable = [false; 4];
    for (i, u) in unfavorable.iter_mut().enumerate() {
        *u = (bits >> (3 - i)) & 1 == 1;
    }
    State {
        queue: index / BINARY_COMBINATIONS,
        channel_bad: (bits >> 4) & 1 == 1,
        unfavorable,
    }
}

/// A stateful environment instance owning its random stream.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    rng: SimRng,
    state: State,
}

impl Environment {
    pub fn new(cfg: EnvConfig, rng: SimRng) -> Self {
        Environment {
            cfg,
            rng,
            state: State::default(),
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn reset(&mut self) -> State {
        self.state = env_reset(&self.cfg, &mut self.rng);
        self.state
    }

    pub fn step(&mut self, action: Action) -> StepOutcome {
        let out = env_step(&self.state, action, &self.cfg, &mut self.rng);
        self.state = out.next_state;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn state(queue: usize, c: bool, f: [bool; 4]) -> State {
        State {
            queue,
            channel_bad: c,
            unfavorable: f,
        }
    }

    #[test]
    fn event_probability_examples() {
        let f = FactorProbabilities::default();
        let p = event_probability(&f, &state(3, false, [false; 4]));
        assert!((p - 0.020).abs() < 1e-12);
        let p = event_probability(&f, &state(3, true, [true; 4]));
        assert!((p - 0.246).abs() < 1e-12);
        let hot = FactorProbabilities {
            p1: [0.3; 4],
            ..f
        };
        assert_eq!(event_probability(&hot, &state(0, false, [true; 4])), 1.0);
    }

    #[test]
    fn mean_event_probability_examples() {
        let mut f = FactorProbabilities::default();
        f.tau = [1.0; 4];
        assert!((mean_event_probability(&f) - 0.020).abs() < 1e-12);
        f.tau = [0.0; 4];
        assert!((mean_event_probability(&f) - 0.246).abs() < 1e-12);
        f.tau = [0.5; 4];
        assert!((mean_event_probability(&f) - 0.133).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let r = RewardParams::default();
        assert_eq!(immediate_reward(&r, Action::Communicate, false, false, 0), 2.0);
        assert_eq!(immediate_reward(&r, Action::Communicate, true, false, 2), 1.0);
        assert_eq!(immediate_reward(&r, Action::Communicate, false, true, 1), -50.0);
        assert_eq!(immediate_reward(&r, Action::Communicate, true, true, 4), -50.0);
        assert_eq!(immediate_reward(&r, Action::Radar, false, true, 3), 20.0);
        assert_eq!(immediate_reward(&r, Action::Radar, true, false, 4), 0.0);
    }

    #[test]
    fn queue_examples() {
        let cfg = EnvConfig::default();
        let q = queue_step(10, Action::Radar, false, 3, &cfg);
        assert_eq!((q.queue, q.sent, q.dropped), (10, 0, 3));
        let q = queue_step(5, Action::Communicate, false, 1, &cfg);
        assert_eq!((q.queue, q.sent, q.dropped), (2, 4, 0));
        let q = queue_step(1, Action::Communicate, true, 0, &cfg);
        assert_eq!((q.queue, q.sent, q.dropped), (0, 1, 0));
    }

    #[test]
    fn degenerate_bernoullis() {
        let mut cfg = EnvConfig::default();
        cfg.p_bad_channel = 0.0;
        cfg.factors.tau[SPEED] = 1.0;
        let mut rng = stream(3, 0);
        for _ in 0..1000 {
            let e = sample_exogenous(&cfg, &mut rng);
            assert!(!e.channel_bad);
            assert!(!e.unfavorable[SPEED]);
            assert!((0.0..1.0).contains(&e.event_draw));
        }
    }

    #[test]
    fn step_composes_reward_and_queue() {
        let mut cfg = EnvConfig::default();
        let s = state(5, false, [false; 4]);
        let exo = Exogenous {
            channel_bad: true,
            unfavorable: [true, false, true, false],
            arrivals: 1,
            event_draw: 0.5,
        };
        let out = transition(&s, Action::Communicate, &cfg, &exo);
        assert_eq!(out.reward, 2.0);
        assert_eq!(out.next_state.queue, 2);
        assert_eq!(out.packets_sent, 4);
        assert!(out.next_state.channel_bad);
        assert_eq!(out.next_state.unfavorable, exo.unfavorable);

        // Forced event in the all-unfavorable state: b = 4.
        cfg.factors.p1 = [0.3; 4];
        let s = state(5, false, [true; 4]);
        let out = transition(&s, Action::Radar, &cfg, &exo);
        assert!(out.event_occurred && out.event_detected);
        assert_eq!(out.reward, 25.0);
        assert_eq!(out.packets_sent, 0);
    }

    #[test]
    fn no_event_radar_gets_nothing() {
        let mut cfg = EnvConfig::default();
        cfg.factors.p0 = [0.0; 4];
        cfg.factors.p1 = [0.0; 4];
        let mut rng = stream(11, 0);
        let mut s = env_reset(&cfg, &mut rng);
        for a in [Action::Radar, Action::Communicate].repeat(50) {
            let out = env_step(&s, a, &cfg, &mut rng);
            assert!(!out.event_occurred);
            if a == Action::Radar {
                assert_eq!(out.reward, 0.0);
            }
            s = out.next_state;
        }
    }

    #[test]
    fn reset_examples() {
        let mut cfg = EnvConfig::default();
        cfg.p_bad_channel = 1.0;
        let s1 = env_reset(&cfg, &mut stream(5, 0));
        let s2 = env_reset(&cfg, &mut stream(5, 0));
        assert_eq!(s1, s2);
        assert_eq!(s1.queue, 0);
        assert!(s1.channel_bad);
    }

    #[test]
    fn encode_examples() {
        let cfg = EnvConfig::default();
        assert_eq!(encode_state(&state(0, false, [false; 4]), &cfg), [0.0; 6]);
        assert_eq!(encode_state(&state(10, true, [true; 4]), &cfg), [1.0; 6]);
        assert_eq!(
            encode_state(&state(5, false, [true, false, true, false]), &cfg),
            [0.5, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn state_index_examples() {
        let cfg = EnvConfig::default();
        assert_eq!(state_index(&state(0, false, [false; 4]), &cfg), 0);
        assert_eq!(state_index(&state(10, true, [true; 4]), &cfg), 351);
        // Exhaustive round trip, enumerated field by field.
        let mut seen = vec![false; cfg.state_count()];
        for d in 0..=10 {
            for bits in 0..32u32 {
                let s = state(
                    d,
                    bits & 16 != 0,
                    [bits & 8 != 0, bits & 4 != 0, bits & 2 != 0, bits & 1 != 0],
                );
                let i = state_index(&s, &cfg);
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(state_from_index(i, &cfg), s);
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn validation_names_key() {
        let mut cfg = EnvConfig::default();
        cfg.p_bad_channel = 1.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("p_c"), "{msg}");
        let mut cfg = EnvConfig::default();
        cfg.factors.p1[SPEED] = 0.001;
        assert!(cfg.validate().is_err());
    }
}
