//! Experiment configuration.
//!
//! The file format is TOML restricted to dotted keys, e.g.
//! `env.rewards.r3 = 50`. Every key has a default; unknown keys are
//! rejected. [`KEYS`] is the canonical key list and order.

use std::fmt::Write as _;
use std::path::Path;

use crate::agents::{self, QLearningConfig};
use crate::dqn::DqnConfig;
use crate::env::{EnvConfig, FACTOR_NAMES};
use crate::error::{invalid, Error, Result};

/// Keys under this prefix carry run provenance and are ignored on load.
pub const MANIFEST_PREFIX: &str = "manifest.";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Dotted key of a numeric parameter, e.g. `env.factors.p1.v`.
    pub parameter: String,
    pub values: Vec<f64>,
    pub agents: Vec<String>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            parameter: "env.factors.p1.v".to_string(),
            values: (1..=10).map(|i| i as f64 / 10.0).collect(),
            agents: agents::agent_names().iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: String,
    pub qlearning: QLearningConfig,
    pub dqn: DqnConfig,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Trailing evaluation episodes that feed the summary metrics.
    pub metrics_window: usize,
    pub convergence_window: usize,
    pub convergence_tolerance: f64,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            agent: "dqn".to_string(),
            qlearning: QLearningConfig::default(),
            dqn: DqnConfig::default(),
            episodes: 500,
            steps_per_episode: 200,
            eval_episodes: 100,
            seeds: vec![1, 2, 3, 4, 5],
            metrics_window: 50,
            convergence_window: 20,
            convergence_tolerance: 0.05,
            sweep: SweepSpec::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "agent",
    "episodes",
    "steps_per_episode",
    "eval_episodes",
    "seeds",
    "metrics_window",
    "convergence_window",
    "convergence_tolerance",
    "env.queue_capacity",
    "env.arrival_rate",
    "env.tx_good",
    "env.tx_bad",
    "env.p_c",
    "env.factors.p0.r",
    "env.factors.p0.w",
    "env.factors.p0.v",
    "env.factors.p0.m",
    "env.factors.p1.r",
    "env.factors.p1.w",
    "env.factors.p1.v",
    "env.factors.p1.m",
    "env.factors.tau.r",
    "env.factors.tau.w",
    "env.factors.tau.v",
    "env.factors.tau.m",
    "env.rewards.r1",
    "env.rewards.r2",
    "env.rewards.r3",
    "env.rewards.r4",
    "qlearning.alpha",
    "qlearning.gamma",
    "qlearning.eps0",
    "qlearning.eps_min",
    "qlearning.decay",
    "dqn.alpha",
    "dqn.gamma",
    "dqn.eps0",
    "dqn.eps_min",
    "dqn.decay",
    "dqn.memory_capacity",
    "dqn.batch_size",
    "dqn.target_sync_interval",
    "dqn.hidden1",
    "dqn.hidden2",
    "dqn.warmup",
    "sweep.parameter",
    "sweep.values",
    "sweep.agents",
];

enum Field<'a> {
    Float(&'a mut f64),
    Count(&'a mut usize),
    Long(&'a mut u64),
    Text(&'a mut String),
    Seeds(&'a mut Vec<u64>),
    Floats(&'a mut Vec<f64>),
    Names(&'a mut Vec<String>),
}

fn field<'a>(cfg: &'a mut ExperimentConfig, key: &str) -> Option<Field<'a>> {
    use Field::*;
    if let Some(rest) = key.strip_prefix("env.factors.") {
        let (table, name) = rest.split_once('.')?;
        let i = FACTOR_NAMES.iter().position(|&n| n == name)?;
        let f = &mut cfg.env.factors;
        return match table {
            "p0" => Some(Float(&mut f.p0[i])),
            "p1" => Some(Float(&mut f.p1[i])),
            "tau" => Some(Float(&mut f.tau[i])),
            _ => None,
        };
    }
    Some(match key {
        "agent" => Text(&mut cfg.agent),
        "episodes" => Count(&mut cfg.episodes),
        "steps_per_episode" => Count(&mut cfg.steps_per_episode),
        "eval_episodes" => Count(&mut cfg.eval_episodes),
        "seeds" => Seeds(&mut cfg.seeds),
        "metrics_window" => Count(&mut cfg.metrics_window),
        "convergence_window" => Count(&mut cfg.convergence_window),
        "convergence_tolerance" => Float(&mut cfg.convergence_tolerance),
        "env.queue_capacity" => Count(&mut cfg.env.queue_capacity),
        "env.arrival_rate" => Float(&mut cfg.env.arrival_rate),
        "env.tx_good" => Count(&mut cfg.env.tx_good),
        "env.tx_bad" => Count(&mut cfg.env.tx_bad),
        "env.p_c" => Float(&mut cfg.env.p_bad_channel),
        "env.rewards.r1" => Float(&mut cfg.env.rewards.r1),
        "env.rewards.r2" => Float(&mut cfg.env.rewards.r2),
        "env.rewards.r3" => Float(&mut cfg.env.rewards.r3),
        "env.rewards.r4" => Float(&mut cfg.env.rewards.r4),
        "qlearning.alpha" => Float(&mut cfg.qlearning.alpha),
        "qlearning.gamma" => Float(&mut cfg.qlearning.gamma),
        "qlearning.eps0" => Float(&mut cfg.qlearning.schedule.eps0),
        "qlearning.eps_min" => Float(&mut cfg.qlearning.schedule.eps_min),
        "qlearning.decay" => Float(&mut cfg.qlearning.schedule.decay),
        "dqn.alpha" => Float(&mut cfg.dqn.alpha),
        "dqn.gamma" => Float(&mut cfg.dqn.gamma),
        "dqn.eps0" => Float(&mut cfg.dqn.schedule.eps0),
        "dqn.eps_min" => Float(&mut cfg.dqn.schedule.eps_min),
        "dqn.decay" => Float(&mut cfg.dqn.schedule.decay),
        "dqn.memory_capacity" => Count(&mut cfg.dqn.memory_capacity),
        "dqn.batch_size" => Count(&mut cfg.dqn.batch_size),
        "dqn.target_sync_interval" => Long(&mut cfg.dqn.target_sync_interval),
        "dqn.hidden1" => Count(&mut cfg.dqn.hidden_sizes[0]),
        "dqn.hidden2" => Count(&mut cfg.dqn.hidden_sizes[1]),
        "dqn.warmup" => Count(&mut cfg.dqn.warmup),
        "sweep.parameter" => Text(&mut cfg.sweep.parameter),
        "sweep.values" => Floats(&mut cfg.sweep.values),
        "sweep.agents" => Names(&mut cfg.sweep.agents),
        _ => return None,
    })
}

fn as_float(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(invalid(key, other, "a number")),
    }
}

fn as_count(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(invalid(key, other, "a non-negative integer")),
    }
}

fn as_array<'v>(key: &str, v: &'v toml::Value) -> Result<&'v Vec<toml::Value>> {
    v.as_array().ok_or_else(|| invalid(key, v, "an array"))
}

impl ExperimentConfig {
    /// Sets one key from a parsed TOML value. Range checks happen in
    /// [`ExperimentConfig::validate`].
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let f = field(self, key).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        match f {
            Field::Float(x) => *x = as_float(key, value)?,
            Field::Count(x) => *x = as_count(key, value)? as usize,
            Field::Long(x) => *x = as_count(key, value)?,
            Field::Text(x) => {
                *x = value
                    .as_str()
                    .ok_or_else(|| invalid(key, value, "a string"))?
                    .to_string()
            }
            Field::Seeds(x) => {
                *x = as_array(key, value)?
                    .iter()
                    .map(|v| as_count(key, v))
                    .collect::<Result<_>>()?
            }
            Field::Floats(x) => {
                *x = as_array(key, value)?
                    .iter()
                    .map(|v| as_float(key, v))
                    .collect::<Result<_>>()?
            }
            Field::Names(x) => {
                *x = as_array(key, value)?
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| invalid(key, v, "a string"))
                    })
                    .collect::<Result<_>>()?
            }
        }
        Ok(())
    }

    /// Sets a numeric key; used by sweeps.
    pub fn set_number(&mut self, key: &str, value: f64) -> Result<()> {
        match field(self, key) {
            Some(Field::Float(x)) => *x = value,
            Some(Field::Count(x)) if value >= 0.0 && value.fract() == 0.0 => *x = value as usize,
            Some(Field::Long(x)) if value >= 0.0 && value.fract() == 0.0 => *x = value as u64,
            Some(_) => return Err(invalid(key, value, "a numeric key")),
            None => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_run()?;
        self.validate_sweep()
    }

    fn validate_run(&self) -> Result<()> {
        self.env.validate()?;
        self.qlearning.validate()?;
        self.dqn.validate()?;
        agents::lookup(&self.agent).map_err(|_| {
            invalid("agent", &self.agent, &agents::agent_names().join(" | "))
        })?;
        for (key, v) in [
            ("episodes", self.episodes),
            ("steps_per_episode", self.steps_per_episode),
            ("eval_episodes", self.eval_episodes),
            ("metrics_window", self.metrics_window),
            ("convergence_window", self.convergence_window),
        ] {
            if v < 1 {
                return Err(invalid(key, v, ">= 1"));
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "[]", "a non-empty list"));
        }
        if !(self.convergence_tolerance > 0.0 && self.convergence_tolerance.is_finite()) {
            return Err(invalid("convergence_tolerance", self.convergence_tolerance, "(0, inf)"));
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<()> {
        let s = &self.sweep;
        if s.values.is_empty() {
            return Err(invalid("sweep.values", "[]", "a non-empty list"));
        }
        if s.agents.is_empty() {
            return Err(invalid("sweep.agents", "[]", "a non-empty list"));
        }
        for a in &s.agents {
            agents::lookup(a)
                .map_err(|_| invalid("sweep.agents", a, &agents::agent_names().join(" | ")))?;
        }
        if s.parameter.starts_with("sweep.") || !KEYS.contains(&s.parameter.as_str()) {
            return Err(invalid("sweep.parameter", &s.parameter, "a numeric config key"));
        }
        for &v in &s.values {
            let mut probe = self.clone();
            probe
                .set_number(&s.parameter, v)
                .map_err(|_| invalid("sweep.parameter", &s.parameter, "a numeric config key"))?;
            probe.validate_run().map_err(|e| match e {
                Error::Invalid { range, .. } => invalid("sweep.values", v, &format!("{range} for {}", s.parameter)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Resolved configuration as config-file text, every key materialized.
    pub fn to_text(&self) -> String {
        let mut probe = self.clone();
        let mut out = String::new();
        for &key in KEYS {
            let rendered = match field(&mut probe, key).expect("every listed key resolves") {
                Field::Float(x) => fmt_float(*x),
                Field::Count(x) => x.to_string(),
                Field::Long(x) => x.to_string(),
                Field::Text(x) => toml::Value::String(x.clone()).to_string(),
                Field::Seeds(x) => fmt_list(x.iter().map(|v| v.to_string())),
                Field::Floats(x) => fmt_list(x.iter().map(|&v| fmt_float(v))),
                Field::Names(x) => fmt_list(x.iter().map(|v| toml::Value::String(v.clone()).to_string())),
            };
            writeln!(out, "{key} = {rendered}").unwrap();
        }
        out
    }
}

/// Shortest round-trip decimal, always with a fractional part or exponent
/// so TOML reads it back as a float.
fn fmt_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn fmt_list(items: impl Iterator<Item = String>) -> String {
    format!("[{}]", items.collect::<Vec<_>>().join(", "))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                Error::Parse(format!("line {line}: {msg}"))
            }
            None => Error::Parse(msg),
        }
    })?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);
    let mut cfg = ExperimentConfig::default();
    for (key, value) in &entries {
        if key.starts_with(MANIFEST_PREFIX) {
            continue;
        }
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.env.queue_capacity, 10);
        assert_eq!(cfg.env.arrival_rate, 1.0);
        assert_eq!((cfg.env.tx_good, cfg.env.tx_bad), (4, 2));
        assert_eq!(cfg.env.p_bad_channel, 0.1);
        let r = cfg.env.rewards;
        assert_eq!((r.r1, r.r2, r.r3, r.r4), (2.0, 1.0, 50.0, 5.0));
        let f = cfg.env.factors;
        assert_eq!((f.p0[2], f.p1[2], f.p0[1], f.p1[1]), (0.005, 0.1, 0.005, 0.046));
    }

    #[test]
    fn out_of_range_names_key() {
        let err = parse_config_str("env.p_c = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("env.p_c"), "{err}");
        assert!(matches!(err, Error::Invalid { .. }));
    }

    #[test]
    fn single_override() {
        let cfg = parse_config_str("env.rewards.r4 = 50\n").unwrap();
        let mut expected = ExperimentConfig::default();
        expected.env.rewards.r4 = 50.0;
        assert_eq!(cfg, expected);
        // Table syntax reaches the same key.
        let cfg2 = parse_config_str("[env.rewards]\nr4 = 50.0\n").unwrap();
        assert_eq!(cfg2, expected);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str("env.rewards.r5 = 1\n").unwrap_err();
        assert!(matches!(err, Error::UnknownKey(ref k) if k == "env.rewards.r5"));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_config_str("episodes = 3\nseeds = [1,\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse(_)));
        assert!(msg.contains("line "), "{msg}");
    }

    #[test]
    fn wrong_type_rejected() {
        assert!(parse_config_str("episodes = \"many\"\n").is_err());
        assert!(parse_config_str("episodes = -1\n").is_err());
        assert!(parse_config_str("agent = \"sarsa\"\n").is_err());
        assert!(parse_config_str("seeds = []\n").is_err());
        assert!(parse_config_str("dqn.batch_size = 20000\n").is_err());
    }

    #[test]
    fn sweep_values_checked_against_parameter_range() {
        let err = parse_config_str("sweep.values = [0.5, 1.5]\n").unwrap_err();
        assert!(err.to_string().contains("sweep.values"), "{err}");
        assert!(parse_config_str("sweep.parameter = \"agent\"\n").is_err());
        assert!(parse_config_str("sweep.parameter = \"env.queue_capacity\"\nsweep.values = [5, 20]\n").is_ok());
    }

    #[test]
    fn manifest_keys_ignored() {
        let cfg = parse_config_str("manifest.tool_version = \"0.1.0\"\nmanifest.created_unix = 5\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.env.factors.p1[3] = 0.1 + 0.2;
        cfg.seeds = vec![9, 1 << 40];
        cfg.agent = "qlearning".into();
        cfg.sweep.values = vec![0.25, 1.0 / 3.0];
        let text = cfg.to_text();
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), KEYS.len());
    }
}
