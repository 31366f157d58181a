use std::fmt::Write as _;

use super::{epsilon_at, epsilon_greedy, greedy, EpsilonSchedule, Policy, Transition};
use crate::env::{state_index, Action, EnvConfig, State};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, SimRng, STREAM_EXPLORE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearningConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub schedule: EpsilonSchedule,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            alpha: 0.1,
            gamma: 0.99,
            schedule: EpsilonSchedule::default(),
        }
    }
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("qlearning.alpha", self.alpha, "(0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("qlearning.gamma", self.gamma, "(0, 1)"));
        }
        self.schedule.validate("qlearning")
    }
}

/// Dense `states x 2` table of action values, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 2]>,
}

impl QTable {
    pub fn new(states: usize) -> Self {
        QTable {
            values: vec![[0.0; 2]; states],
        }
    }

    pub fn states(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, s: usize) -> [f64; 2] {
        self.values[s]
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s][a.index()]
    }

    /// One Q-learning backup on the `(s, a)` cell.
    pub fn update(&mut self, s: usize, a: Action, reward: f64, s_next: usize, alpha: f64, gamma: f64) {
        let next = self.values[s_next];
        let target = reward + gamma * next[0].max(next[1]);
        let cell = &mut self.values[s][a.index()];
        *cell += alpha * (target - *cell);
    }

    /// One row per state index, two whitespace-separated columns.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 48);
        for row in &self.values {
            writeln!(out, "{} {}", row[0], row[1]).unwrap();
        }
        out
    }

    pub fn parse(text: &str, states: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(states);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Policy(format!("line {}: {e}", lineno + 1)))?;
            if cols.len() != 2 || cols.iter().any(|v| !v.is_finite()) {
                return Err(Error::Policy(format!(
                    "line {}: expected two finite values",
                    lineno + 1
                )));
            }
            values.push([cols[0], cols[1]]);
        }
        if values.len() != states {
            return Err(Error::Policy(format!(
                "expected {states} rows, found {}",
                values.len()
            )));
        }
        Ok(QTable { values })
    }
}

pub fn q_update(table: &mut QTable, t: &Transition, env: &EnvConfig, cfg: &QLearningConfig) {
    table.update(
        state_index(&t.state, env),
        t.action,
        t.reward,
        state_index(&t.next_state, env),
        cfg.alpha,
        cfg.gamma,
    );
}

pub struct QLearningAgent {
    pub table: QTable,
    env: EnvConfig,
    cfg: QLearningConfig,
    rng: SimRng,
    episode: usize,
}

impl QLearningAgent {
    pub fn new(env: EnvConfig, cfg: QLearningConfig, seed: u64) -> Self {
        QLearningAgent {
            table: QTable::new(env.state_count()),
            env,
            cfg,
            rng: stream(seed, STREAM_EXPLORE),
            episode: 0,
        }
    }
}

impl Policy for QLearningAgent {
    fn name(&self) -> &'static str {
        "qlearning"
    }

    fn act(&mut self, state: &State, explore: bool) -> Action {
        let q = self.table.row(state_index(state, &self.env));
        if explore {
            let eps = epsilon_at(&self.cfg.schedule, self.episode);
            epsilon_greedy(q, eps, &mut self.rng)
        } else {
            greedy(q)
        }
    }

    fn observe(&mut self, t: &Transition) {
        q_update(&mut self.table, t, &self.env, &self.cfg);
    }

    fn end_episode(&mut self) {
        self.episode += 1;
    }

    fn export(&self) -> String {
        self.table.to_text()
    }
}
