//! Step loop shared by scripted demonstrations and policy rollouts.

use std::collections::VecDeque;

use crate::error::Result;
use crate::sim::{self, collar_trace, InitDescriptor, SimState};
use crate::types::{
    clamp_action, Episode, EpisodeMeta, EpisodeType, Frame, Observation, Outcome, SimConfig, Source, Stage,
    Termination,
};

/// Produces one absolute action row (physical units) per control step.
///
/// `state` is privileged; learned policies must ignore it.
pub trait Controller {
    fn act(&mut self, obs: &Observation, state: &SimState, cfg: &SimConfig) -> Result<[f64; 4]>;
}

/// Stall and hard-cap bookkeeping.
///
/// Phase 1 runs from reset to the first insertion, phase 2 from there to the
/// end. The stall window restarts at every stage transition.
#[derive(Debug, Clone)]
pub struct ProgressTracker {
    budget: usize,
    hard_cap: usize,
    min_step: f64,
    phase_steps: usize,
    window: VecDeque<f64>,
    window_sum: f64,
}

impl ProgressTracker {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            budget: cfg.stall_budget,
            hard_cap: cfg.hard_cap,
            min_step: cfg.stall_min_displacement,
            phase_steps: 0,
            window: VecDeque::with_capacity(cfg.stall_budget + 1),
            window_sum: 0.0,
        }
    }

    /// Records one step; returns a termination if the episode must stop.
    pub fn update(&mut self, displacement: f64, before: Stage, after: Stage) -> Option<Termination> {
        self.phase_steps += 1;
        if after != before {
            self.window.clear();
            self.window_sum = 0.0;
            if before == Stage::Approach1 {
                self.phase_steps = 0;
            }
            return None;
        }
        self.window.push_back(displacement);
        self.window_sum += displacement;
        if self.window.len() > self.budget {
            self.window_sum -= self.window.pop_front().unwrap_or(0.0);
        }
        if self.window.len() == self.budget {
            // recompute to avoid drift from the running sum
            let sum: f64 = self.window.iter().sum();
            self.window_sum = sum;
            if sum / (self.budget as f64) < self.min_step {
                return Some(Termination::Stall);
            }
        }
        if self.phase_steps >= self.hard_cap {
            return Some(Termination::HardCap);
        }
        None
    }
}

/// Runs one episode from `init` until a terminal event, the type's stage
/// target, a stall or the hard cap.
pub fn run_episode(
    cfg: &SimConfig,
    init: &InitDescriptor,
    episode_type: EpisodeType,
    source: Source,
    controller: &mut dyn Controller,
) -> Result<Episode> {
    let mut state = sim::reset_from(cfg, init);
    let initial_collar_trace = collar_trace(&state, cfg);
    let mut tracker = ProgressTracker::new(cfg);
    let mut frames = Vec::new();
    let termination = loop {
        let obs = sim::observe(&mut state, cfg);
        let action = clamp_action(&controller.act(&obs, &state, cfg)?, cfg)?;
        let before = state.stage;
        let p0 = state.hanger.position();
        let events = sim::step(&mut state, &action, cfg)?;
        let displacement = (state.hanger.position() - p0).norm();
        frames.push(Frame {
            obs,
            action,
            stage: state.stage,
            events,
        });
        if events.terminal() {
            break Termination::Event;
        }
        if episode_type.ends_after_first_insertion() && state.stage >= Stage::Inserted1 {
            break Termination::StageTarget;
        }
        if let Some(t) = tracker.update(displacement, before, state.stage) {
            break t;
        }
    };
    let mut episode = Episode {
        meta: EpisodeMeta {
            episode_type,
            source,
            outcome: Outcome::Truncated,
            seed: init.seed,
            termination,
            init: *init,
            initial_collar_trace,
        },
        frames,
    };
    episode.meta.outcome = sim::classify_outcome(&episode, cfg)?;
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_stalls_at_budget() {
        let cfg = SimConfig::default();
        let mut t = ProgressTracker::new(&cfg);
        for i in 1..cfg.stall_budget {
            assert_eq!(t.update(0.0, Stage::Approach1, Stage::Approach1), None, "step {i}");
        }
        assert_eq!(t.update(0.0, Stage::Approach1, Stage::Approach1), Some(Termination::Stall));
    }

    #[test]
    fn tracker_caps_moving_phase() {
        let cfg = SimConfig::default();
        let mut t = ProgressTracker::new(&cfg);
        for _ in 1..cfg.hard_cap {
            assert_eq!(t.update(0.002, Stage::Approach1, Stage::Approach1), None);
        }
        assert_eq!(t.update(0.002, Stage::Approach1, Stage::Approach1), Some(Termination::HardCap));
    }

    #[test]
    fn first_insertion_starts_a_new_phase() {
        let cfg = SimConfig::default();
        let mut t = ProgressTracker::new(&cfg);
        for _ in 0..1000 {
            assert_eq!(t.update(0.002, Stage::Approach1, Stage::Approach1), None);
        }
        assert_eq!(t.update(0.002, Stage::Approach1, Stage::Inserted1), None);
        for _ in 1..cfg.hard_cap {
            assert_eq!(t.update(0.002, Stage::Inserted1, Stage::Inserted1), None);
        }
        assert_eq!(t.update(0.002, Stage::Inserted1, Stage::Inserted1), Some(Termination::HardCap));
    }
}
