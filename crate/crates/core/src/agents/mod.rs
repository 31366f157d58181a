//! Decision policies behind a common trait, registered by name.
//!
//! `roundrobin`, `qlearning` and `dqn` are looked up through [`lookup`];
//! the harness and CLI never name a concrete agent type.

mod q_learning;
mod round_robin;

pub use q_learning::{q_update, QLearningAgent, QLearningConfig, QTable};
pub use round_robin::{round_robin_act, RoundRobin};

use rand::Rng;

use crate::config::ExperimentConfig;
use crate::dqn::DqnAgent;
use crate::env::{Action, State};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// With `explore` off and no intervening `observe`, this is a pure
    /// function of the state (and, for round-robin, the step parity).
    fn act(&mut self, state: &State, explore: bool) -> Action;

    fn observe(&mut self, transition: &Transition);

    fn end_episode(&mut self);

    /// Policy persistence in the agent's flat numeric format.
    fn export(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub eps_min: f64,
    /// Multiplicative decay per episode.
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            eps0: 1.0,
            eps_min: 0.01,
            decay: 0.99,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        use crate::error::invalid;
        if !(0.0..=1.0).contains(&self.eps0) {
            return Err(invalid(&format!("{prefix}.eps0"), self.eps0, "[0, 1]"));
        }
        if !(0.0..=self.eps0).contains(&self.eps_min) {
            return Err(invalid(
                &format!("{prefix}.eps_min"),
                self.eps_min,
                &format!("[0, eps0 = {}]", self.eps0),
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid(&format!("{prefix}.decay"), self.decay, "(0, 1]"));
        }
        Ok(())
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, episode: usize) -> f64 {
    let decayed = schedule.eps0 * schedule.decay.powi(episode.min(i32::MAX as usize) as i32);
    decayed.max(schedule.eps_min)
}

/// Ties go to communication mode.
pub fn greedy(q: [f64; 2]) -> Action {
    if q[1] > q[0] {
        Action::Radar
    } else {
        Action::Communicate
    }
}

pub fn epsilon_greedy(q: [f64; 2], eps: f64, rng: &mut SimRng) -> Action {
    if rng.random::<f64>() < eps {
        Action::from_index(rng.random_range(0..2))
    } else {
        greedy(q)
    }
}

pub struct AgentEntry {
    pub name: &'static str,
    pub build: fn(&ExperimentConfig, u64) -> Box<dyn Policy>,
    /// Rebuilds a frozen policy from its exported text.
    pub restore: fn(&ExperimentConfig, u64, &str) -> Result<Box<dyn Policy>>,
}

pub static REGISTRY: &[AgentEntry] = &[
    AgentEntry {
        name: "roundrobin",
        build: |_, _| Box::new(RoundRobin::default()),
        restore: |_, _, _| Ok(Box::new(RoundRobin::default())),
    },
    AgentEntry {
        name: "qlearning",
        build: |cfg, seed| Box::new(QLearningAgent::new(cfg.env, cfg.qlearning, seed)),
        restore: |cfg, seed, text| {
            let mut agent = QLearningAgent::new(cfg.env, cfg.qlearning, seed);
            agent.table = QTable::parse(text, cfg.env.state_count())?;
            Ok(Box::new(agent))
        },
    },
    AgentEntry {
        name: "dqn",
        build: |cfg, seed| Box::new(DqnAgent::new(cfg.env, cfg.dqn.clone(), seed)),
        restore: |cfg, seed, text| Ok(Box::new(DqnAgent::restore(cfg.env, cfg.dqn.clone(), seed, text)?)),
    },
];

pub fn agent_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

pub fn lookup(name: &str) -> Result<&'static AgentEntry> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownAgent(name.to_string()))
}

pub fn build(name: &str, cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Policy>> {
    Ok((lookup(name)?.build)(cfg, seed))
}
