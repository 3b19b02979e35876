//! Outcome classification and collar traces.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::types::{Episode, FailureMode, Outcome, SimConfig, Stage, Termination};

use super::{wrist_window, SimState};

fn stuck_mode(stage: Stage) -> FailureMode {
    match stage {
        Stage::Approach1 => FailureMode::StuckFirst,
        Stage::Inserted1 => FailureMode::FailedLift,
        _ => FailureMode::StuckSecond,
    }
}

/// Maps a terminated episode to its outcome.
///
/// Terminal events are classified by the stage at which they occurred: before
/// the first insertion they count against the first insertion, afterwards
/// against the second. Stalls and hard-cap exhaustion map to the stuck mode of
/// the current stage.
pub fn classify_outcome(episode: &Episode, _cfg: &SimConfig) -> Result<Outcome> {
    let last = episode
        .frames
        .last()
        .ok_or_else(|| Error::contract("cannot classify an empty episode"))?;
    let ev = &last.events;
    let stage = last.stage;
    let outcome = match episode.meta.termination {
        Termination::Event => {
            if ev.released {
                if stage == Stage::Released && ev.covered.iter().all(|c| *c) {
                    Outcome::Success
                } else {
                    Outcome::Failure(FailureMode::DropSecond)
                }
            } else if ev.pulled_out {
                Outcome::Failure(FailureMode::PulledDrop)
            } else if ev.collision {
                Outcome::Failure(if stage < Stage::Inserted1 {
                    FailureMode::CollisionFirst
                } else {
                    FailureMode::CollisionSecond
                })
            } else if ev.shirt_dropped {
                Outcome::Failure(if stage < Stage::Inserted1 {
                    FailureMode::DropFirst
                } else {
                    FailureMode::DropSecond
                })
            } else {
                return Err(Error::contract(
                    "episode ended on an event but its last step has no terminal event",
                ));
            }
        }
        Termination::StageTarget => {
            if !episode.meta.episode_type.ends_after_first_insertion() || stage < Stage::Inserted1 {
                return Err(Error::contract("stage-target termination without reaching the target"));
            }
            Outcome::Truncated
        }
        Termination::Stall | Termination::HardCap => Outcome::Failure(stuck_mode(stage)),
    };
    Ok(outcome)
}

/// Neck band (collar opening plus its adjacent vertices) in wrist-window
/// coordinates, each in `[0, 1]`. Points outside the window are dropped.
pub fn collar_trace(state: &SimState, cfg: &SimConfig) -> Vec<Vec2> {
    let (origin, side) = wrist_window(cfg);
    state
        .cloth(cfg)
        .neck()
        .iter()
        .map(|p| Vec2::new((p.x - origin.x) / side, (p.y - origin.y) / side))
        .filter(|q| (0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y))
        .collect()
}
