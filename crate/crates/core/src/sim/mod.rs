//! Deterministic 2D kinematic simulation of hanger insertion.
//!
//! The hook `H` carries two rigid legs. Leg 1 points along `pi + droop + theta`,
//! leg 2 along `theta - droop`, so at `theta = 0` both legs hang symmetrically
//! and at `theta ~ 60 deg` leg 1 points almost straight down. The cloth is a
//! polygon held at its left shoulder; once leg 1 is through the collar and the
//! hook has dropped to the collar contact height, raising the hook lifts the
//! cloth with it.

mod cloth;
mod outcome;
mod render;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use cloth::{gripper_box, ClothModel};
pub use outcome::{classify_outcome, collar_trace};
pub use render::{render, wrist_window};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::types::{wrap_angle, EpisodeType, Observation, Pose2, SimConfig, Stage, NUM_SENSORS};

/// Hook pose at the start of Type I and IV episodes.
pub const HOME_POSE: Pose2 = Pose2 {
    x: 0.75,
    y: 0.85,
    theta: 0.0,
};

/// Hanger tilt used for the first insertion.
pub const INSERT_THETA: f64 = PI / 3.0;

/// How an episode starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StartKind {
    Home,
    MissedInsertion,
}

impl From<EpisodeType> for StartKind {
    fn from(t: EpisodeType) -> Self {
        if t.starts_missed() {
            StartKind::MissedInsertion
        } else {
            StartKind::Home
        }
    }
}

/// Everything needed to rebuild an initial state exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitDescriptor {
    pub seed: u64,
    pub start: StartKind,
    pub shoulder_offset: f64,
    pub hanger: Pose2,
    pub gripper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub collision: bool,
    pub shirt_dropped: bool,
    pub pulled_out: bool,
    pub insertion1: bool,
    pub lift_complete: bool,
    pub insertion2: bool,
    pub released: bool,
    /// Ground-truth coverage of each sensor after the step.
    pub covered: [bool; NUM_SENSORS],
}

impl StepEvents {
    pub fn terminal(&self) -> bool {
        self.collision || self.shirt_dropped || self.pulled_out || self.released
    }

    fn terminal_count(&self) -> usize {
        [self.collision, self.shirt_dropped, self.pulled_out, self.released]
            .iter()
            .filter(|b| **b)
            .count()
    }
}

/// Full privileged world state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub hanger: Pose2,
    /// 0 closed, 1 fully open.
    pub gripper: f64,
    pub shirt_held: bool,
    pub free_shoulder_offset: f64,
    /// Accumulated downward slip of the cloth in the left gripper.
    pub snag_displacement: f64,
    /// Set once the hook has reached the collar contact height after the first insertion.
    pub hook_engaged: bool,
    pub stage: Stage,
    pub step_count: u64,
    pub terminal: bool,
    pub init: InitDescriptor,
    pub rng: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from the master seed, an episode seed and a stream tag.
pub fn derive_seed(master: u64, seed: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(seed ^ splitmix64(tag)))
}

/// Episode PRNG: ChaCha20 keyed by `derive_seed(master_seed, seed, 0)`.
pub fn episode_rng(cfg: &SimConfig, seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, seed, 0))
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws the initial configuration. The draw sequence depends only on the start kind.
fn draw_init(cfg: &SimConfig, seed: u64, start: StartKind) -> (InitDescriptor, ChaCha20Rng) {
    let mut rng = episode_rng(cfg, seed);
    let r = cfg.shoulder_offset_range;
    let offset = uniform(&mut rng, -r, r);
    let hanger = match start {
        StartKind::Home => HOME_POSE,
        StartKind::MissedInsertion => {
            let theta = INSERT_THETA + uniform(&mut rng, -5f64.to_radians(), 5f64.to_radians());
            let tip_x = cfg.collar_center_x + uniform(&mut rng, -0.09, -0.07);
            let below = uniform(&mut rng, 0.005, 0.02);
            let collar_y = ClothModel::new(cfg, offset, 0.0).collar_min_y();
            let tip = Vec2::new(tip_x, collar_y - below);
            let h = tip - leg_direction(cfg, theta, 0) * cfg.leg_length();
            Pose2 {
                x: h.x,
                y: h.y,
                theta: wrap_angle(theta).expect("finite"),
            }
        }
    };
    let init = InitDescriptor {
        seed,
        start,
        shoulder_offset: offset,
        hanger,
        gripper: 0.0,
    };
    (init, rng)
}

/// Resets the world for `(seed, kind)`. Types I and IV (and II and III) share draws.
pub fn reset(cfg: &SimConfig, seed: u64, kind: EpisodeType) -> SimState {
    let (init, rng) = draw_init(cfg, seed, kind.into());
    build_state(init, rng)
}

/// Rebuilds the initial state described by `init`.
pub fn reset_from(cfg: &SimConfig, init: &InitDescriptor) -> SimState {
    let (_, rng) = draw_init(cfg, init.seed, init.start);
    build_state(*init, rng)
}

fn build_state(init: InitDescriptor, rng: ChaCha20Rng) -> SimState {
    SimState {
        hanger: init.hanger,
        gripper: init.gripper,
        shirt_held: true,
        free_shoulder_offset: init.shoulder_offset,
        snag_displacement: 0.0,
        hook_engaged: false,
        stage: Stage::Approach1,
        step_count: 0,
        terminal: false,
        init,
        rng,
    }
}

/// Unit direction of leg `leg` (0 or 1) at hanger angle `theta`.
pub fn leg_direction(cfg: &SimConfig, theta: f64, leg: usize) -> Vec2 {
    if leg == 0 {
        Vec2::from_angle(PI + cfg.leg_droop + theta)
    } else {
        Vec2::from_angle(theta - cfg.leg_droop)
    }
}

/// Hook and the two leg tips.
pub fn hanger_points(cfg: &SimConfig, pose: &Pose2) -> (Vec2, [Vec2; 2]) {
    let h = pose.position();
    let l = cfg.leg_length();
    (
        h,
        [
            h + leg_direction(cfg, pose.theta, 0) * l,
            h + leg_direction(cfg, pose.theta, 1) * l,
        ],
    )
}

/// Sensor attachment points ordered `[leg1 inner, leg1 outer, leg2 inner, leg2 outer]`.
pub fn sensor_points(cfg: &SimConfig, pose: &Pose2) -> [Vec2; NUM_SENSORS] {
    let (h, tips) = hanger_points(cfg, pose);
    let [a, b] = cfg.sensor_positions;
    [h.lerp(tips[0], a), h.lerp(tips[0], b), h.lerp(tips[1], a), h.lerp(tips[1], b)]
}

impl SimState {
    /// Collar height the hook rests at once it carries the cloth.
    pub fn contact_rest_y(&self, cfg: &SimConfig) -> f64 {
        ClothModel::new(cfg, self.free_shoulder_offset, 0.0).collar_min_y()
            - cfg.hook_drop
            - self.snag_displacement
    }

    /// Current lift of the cloth by the hook.
    pub fn cloth_lift(&self, cfg: &SimConfig) -> f64 {
        if self.hook_engaged {
            (self.hanger.y - self.contact_rest_y(cfg)).max(0.0)
        } else {
            0.0
        }
    }

    pub fn cloth(&self, cfg: &SimConfig) -> ClothModel {
        let dy = self.cloth_lift(cfg) - self.snag_displacement;
        let mut c = ClothModel::new(cfg, self.free_shoulder_offset, dy);
        c.attached_to_hanger = self.hook_engaged;
        c
    }

    pub fn coverage(&self, cfg: &SimConfig) -> [bool; NUM_SENSORS] {
        let cloth = self.cloth(cfg);
        sensor_points(cfg, &self.hanger).map(|p| cloth.contains(p))
    }

    pub fn proprio(&self) -> [f64; 4] {
        [self.hanger.x, self.hanger.y, self.hanger.theta, self.gripper]
    }
}

/// Stage implied by the state. Stages latch, so this is the recorded stage.
pub fn stage_of(state: &SimState) -> Stage {
    state.stage
}

fn approach(current: f64, target: f64, limit: f64) -> f64 {
    current + (target - current).clamp(-limit, limit)
}

/// Advances the world by one control step toward the absolute target `action`.
pub fn step(state: &mut SimState, action: &[f64; 4], cfg: &SimConfig) -> Result<StepEvents> {
    if state.terminal {
        return Err(Error::contract("step called on a terminal state"));
    }
    if action.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite action {action:?}")));
    }

    // rate-limited tracking
    let mut d = Vec2::new(action[0] - state.hanger.x, action[1] - state.hanger.y);
    let n = d.norm();
    if n > cfg.max_linear_speed {
        d = d * (cfg.max_linear_speed / n);
    }
    let dtheta = wrap_angle(action[2] - state.hanger.theta)?;
    state.hanger = Pose2 {
        x: state.hanger.x + d.x,
        y: state.hanger.y + d.y,
        theta: wrap_angle(state.hanger.theta + dtheta.clamp(-cfg.max_angular_speed, cfg.max_angular_speed))?,
    };
    state.gripper = approach(state.gripper, action[3].clamp(0.0, 1.0), cfg.max_gripper_speed);
    state.step_count += 1;

    let stage = state.stage;
    if stage >= Stage::Inserted1 && !state.hook_engaged && state.hanger.y <= state.contact_rest_y(cfg) {
        state.hook_engaged = true;
    }

    // tips that press into the cloth away from the collar drag it down
    let (_, tips) = hanger_points(cfg, &state.hanger);
    for (leg, tip) in tips.iter().enumerate() {
        let threaded = match leg {
            0 => stage >= Stage::Inserted1,
            _ => stage >= Stage::Lifted,
        };
        if threaded {
            continue;
        }
        let cloth = state.cloth(cfg);
        if cloth.contains(*tip) && !cloth.in_collar_interior(*tip, cfg.collar_depth) {
            state.snag_displacement += cloth.depth_below_top(*tip);
        }
    }

    let cloth = state.cloth(cfg);
    let covered = sensor_points(cfg, &state.hanger).map(|p| cloth.contains(p));
    let mut ev = StepEvents {
        covered,
        ..StepEvents::default()
    };

    let boxed = gripper_box(cfg).inflate(cfg.collision_margin);
    let (h, tips) = hanger_points(cfg, &state.hanger);
    let released = state.gripper >= cfg.release_threshold + cfg.release_hysteresis;
    if tips.iter().any(|t| boxed.intersects_segment(h, *t)) {
        ev.collision = true;
    } else if state.snag_displacement > cfg.snag_slip_threshold {
        ev.pulled_out = true;
    } else if released {
        if stage == Stage::Inserted2 {
            ev.released = true;
        } else {
            ev.shirt_dropped = true;
        }
    } else {
        match stage {
            Stage::Approach1 => {
                if covered[0] && covered[1] && cloth.in_collar_interior(tips[0], cfg.collar_depth) {
                    ev.insertion1 = true;
                    state.stage = Stage::Inserted1;
                }
            }
            Stage::Inserted1 => {
                if state.hook_engaged && state.cloth_lift(cfg) >= cfg.lift_height {
                    ev.lift_complete = true;
                    state.stage = Stage::Lifted;
                }
            }
            Stage::Lifted => {
                if covered.iter().all(|c| *c) {
                    ev.insertion2 = true;
                    state.stage = Stage::Inserted2;
                }
            }
            Stage::Inserted2 | Stage::Released => {}
        }
    }
    debug_assert!(ev.terminal_count() <= 1);
    if ev.released {
        state.stage = Stage::Released;
    }
    if ev.terminal() {
        state.terminal = true;
        state.shirt_held = false;
    }
    Ok(ev)
}

/// Noisy coverage readings from the episode stream.
pub fn read_sensors(state: &mut SimState, cfg: &SimConfig) -> [f64; NUM_SENSORS] {
    let covered = state.coverage(cfg);
    let noise = Normal::new(0.0, cfg.sensor_sigma).expect("validated sigma");
    covered.map(|c| {
        let base = if c { cfg.sensor_high } else { cfg.sensor_low };
        let eps = if cfg.sensor_sigma > 0.0 {
            noise.sample(&mut state.rng)
        } else {
            0.0
        };
        (base + eps).clamp(0.0, 1.0)
    })
}

/// Renders the grids and reads the sensors. Always includes instrumentation;
/// callers strip it for vision-only consumers.
pub fn observe(state: &mut SimState, cfg: &SimConfig) -> Observation {
    let (scene, wrist) = render(state, cfg);
    let instr = read_sensors(state, cfg);
    Observation {
        scene,
        wrist,
        proprio: state.proprio(),
        instr: Some(instr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn reset_is_deterministic() {
        let c = cfg();
        assert_eq!(reset(&c, 0, EpisodeType::I), reset(&c, 0, EpisodeType::I));
        assert_eq!(reset(&c, 5, EpisodeType::I).init, {
            let mut i = reset(&c, 5, EpisodeType::IV).init;
            i.start = StartKind::Home;
            i
        });
        assert_ne!(reset(&c, 1, EpisodeType::I), reset(&c, 2, EpisodeType::I));
    }

    #[test]
    fn missed_start_is_below_collar_and_outside_cloth() {
        let c = cfg();
        for seed in 0..200 {
            let s = reset(&c, seed, EpisodeType::II);
            let (_, tips) = hanger_points(&c, &s.hanger);
            let cloth = s.cloth(&c);
            assert!(tips[0].y < cloth.collar_min_y(), "seed {seed}");
            assert!(!cloth.contains(tips[0]), "seed {seed}");
            assert!(s.coverage(&c).iter().all(|x| !x), "seed {seed}");
            assert_eq!(s.stage, Stage::Approach1);
        }
    }

    #[test]
    fn home_start() {
        let c = cfg();
        let s = reset(&c, 9, EpisodeType::I);
        assert_eq!(s.hanger, HOME_POSE);
        assert_eq!(stage_of(&s), Stage::Approach1);
        assert!(s.free_shoulder_offset.abs() <= c.shoulder_offset_range);
    }

    #[test]
    fn holding_still_is_a_fixed_point() {
        let c = cfg();
        for kind in EpisodeType::ALL {
            let mut s = reset(&c, 3, kind);
            let before = s.clone();
            let hold = s.proprio();
            let ev = step(&mut s, &hold, &c).unwrap();
            assert!(!ev.terminal());
            assert_eq!(s.step_count, 1);
            s.step_count = 0;
            assert_eq!(s, before);
        }
    }

    #[test]
    fn opening_gripper_early_drops_shirt() {
        let c = cfg();
        let mut s = reset(&c, 0, EpisodeType::I);
        s.gripper = 0.2;
        let mut target = s.proprio();
        target[3] = 0.8;
        let mut dropped = false;
        for _ in 0..10 {
            let ev = step(&mut s, &target, &c).unwrap();
            if ev.terminal() {
                dropped = ev.shirt_dropped;
                break;
            }
        }
        assert!(dropped);
        assert!(!s.shirt_held);
        assert!(step(&mut s, &target, &c).is_err());
    }

    #[test]
    fn rate_limits_hold() {
        let c = cfg();
        let mut s = reset(&c, 0, EpisodeType::I);
        let p0 = s.hanger;
        step(&mut s, &[0.0, 0.0, 3.0, 1.0], &c).unwrap();
        let moved = (s.hanger.position() - p0.position()).norm();
        assert!((moved - c.max_linear_speed).abs() < 1e-12);
        assert!((s.hanger.theta - c.max_angular_speed).abs() < 1e-12);
        assert!((s.gripper - c.max_gripper_speed).abs() < 1e-12);
    }

    #[test]
    fn sensors_noise_free() {
        let c = SimConfig {
            sensor_sigma: 0.0,
            ..cfg()
        };
        let mut s = reset(&c, 0, EpisodeType::I);
        assert_eq!(read_sensors(&mut s, &c), [c.sensor_low; 4]);
        // hang the hanger in its final pose inside the shirt
        let rest = s.contact_rest_y(&c);
        s.hanger = Pose2::new(c.collar_center_x, rest, 0.0).unwrap();
        assert_eq!(read_sensors(&mut s, &c), [c.sensor_high; 4]);
        // leg 1 only, pointing down through the collar
        s.hanger = Pose2::new(c.collar_center_x, rest, INSERT_THETA).unwrap();
        let r = read_sensors(&mut s, &c);
        assert_eq!(r, [c.sensor_high, c.sensor_high, c.sensor_low, c.sensor_low]);
    }

    #[test]
    fn snag_pulls_out() {
        let c = cfg();
        let mut s = reset(&c, 0, EpisodeType::II);
        let mut target = s.proprio();
        target[1] -= 0.2;
        let mut pulled = false;
        for _ in 0..100 {
            let ev = step(&mut s, &target, &c).unwrap();
            assert!(!ev.insertion1);
            if ev.terminal() {
                pulled = ev.pulled_out;
                break;
            }
        }
        assert!(pulled);
    }

    #[test]
    fn collision_with_gripper() {
        let c = cfg();
        let mut s = reset(&c, 0, EpisodeType::I);
        let target = [0.35, 0.62, 0.0, 0.0];
        let mut hit = false;
        for _ in 0..200 {
            let ev = step(&mut s, &target, &c).unwrap();
            if ev.terminal() {
                hit = ev.collision;
                break;
            }
        }
        assert!(hit);
    }
}
