use super::{Policy, Transition};
use crate::env::{Action, State};

/// Communicate on even steps, sense on odd steps.
pub fn round_robin_act(step: usize) -> Action {
    if step % 2 == 0 {
        Action::Communicate
    } else {
        Action::Radar
    }
}

/// Alternates modes every step; the phase restarts with communication at
/// the start of each episode.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    step: usize,
}

impl Policy for RoundRobin {
    fn name(&self) -> &'static str {
        "roundrobin"
    }

    fn act(&mut self, _state: &State, _explore: bool) -> Action {
        let a = round_robin_act(self.step);
        self.step += 1;
        a
    }

    fn observe(&mut self, _transition: &Transition) {}

    fn end_episode(&mut self) {
        self.step = 0;
    }

    fn export(&self) -> String {
        "# roundrobin has no parameters\n".to_string()
    }
}
