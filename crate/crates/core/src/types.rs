//! Domain types, numeric conventions and normalization shared by every module.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::sim::{InitDescriptor, StepEvents};

/// Rows in a predicted action chunk.
pub const CHUNK_LEN: usize = 16;
/// Rows executed from each chunk before re-planning.
pub const EXEC_LEN: usize = 8;
/// `[x, y, theta, g]`.
pub const ACTION_DIM: usize = 4;
/// Coverage sensors on the hanger, two per leg.
pub const NUM_SENSORS: usize = 4;

/// Wraps an angle into `(-pi, pi]`.
///
/// Odd multiples of `pi` map to `+pi`, so `wrap_angle(3 * pi) == pi`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("angle must be finite, got {theta}")));
    }
    let two_pi = 2.0 * PI;
    let mut r = theta - two_pi * (theta / two_pi).round();
    if r <= -PI {
        r += two_pi;
    }
    if r > PI {
        r -= two_pi;
    }
    Ok(r)
}

/// Planar hanger pose: hook position in meters, orientation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("pose coordinates must be finite"));
        }
        Ok(Self {
            x,
            y,
            theta: wrap_angle(theta)?,
        })
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Simulation parameters. Lengths are meters, time is control steps at `control_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Horizontal reach of each hanger leg from the hook.
    pub leg_half_span: f64,
    /// Downward slope of each leg below horizontal, radians.
    pub leg_droop: f64,
    pub leg_thickness: f64,
    /// Rest position of the collar gap center.
    pub collar_center_x: f64,
    pub collar_center_y: f64,
    pub collar_width: f64,
    /// Depth of the region below the collar gap that a leg tip may enter freely.
    pub collar_depth: f64,
    /// Free shoulder vertical jitter is uniform in `[-range, range]`.
    pub shoulder_offset_range: f64,
    /// Hook rests this far below the collar once the shirt hangs on it.
    pub hook_drop: f64,
    /// Cloth lift required to count as lifted.
    pub lift_height: f64,
    pub sensor_high: f64,
    pub sensor_low: f64,
    pub sensor_sigma: f64,
    /// Fractions of leg length, from the hook, where the sensors sit.
    pub sensor_positions: [f64; 2],
    pub snag_slip_threshold: f64,
    pub collision_margin: f64,
    /// Release when the gripper opening reaches `release_threshold + release_hysteresis`.
    pub release_threshold: f64,
    pub release_hysteresis: f64,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub max_gripper_speed: f64,
    pub control_hz: u32,
    pub stall_budget: usize,
    pub hard_cap: usize,
    /// Average hanger displacement per step below which a window counts as a stall.
    pub stall_min_displacement: f64,
    pub scene_grid: usize,
    pub wrist_grid: usize,
    /// Side length of the square wrist-camera window centred on the rest collar.
    pub wrist_window: f64,
    pub rng_algorithm: String,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            leg_half_span: 0.21,
            leg_droop: 20f64.to_radians(),
            leg_thickness: 0.01,
            collar_center_x: 0.50,
            collar_center_y: 0.60,
            collar_width: 0.12,
            collar_depth: 0.30,
            shoulder_offset_range: 0.02,
            hook_drop: 0.025,
            lift_height: 0.08,
            sensor_high: 0.9,
            sensor_low: 0.05,
            sensor_sigma: 0.02,
            sensor_positions: [0.3, 0.8],
            snag_slip_threshold: 0.04,
            collision_margin: 0.01,
            release_threshold: 0.5,
            release_hysteresis: 0.05,
            max_linear_speed: 0.008,
            max_angular_speed: 0.05,
            max_gripper_speed: 0.1,
            control_hz: 10,
            stall_budget: 600,
            hard_cap: 1200,
            stall_min_displacement: 0.001,
            scene_grid: 32,
            wrist_grid: 16,
            wrist_window: 0.32,
            rng_algorithm: "chacha20".to_string(),
            master_seed: 0x5eed_4a46,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("leg_half_span", self.leg_half_span),
            ("leg_thickness", self.leg_thickness),
            ("collar_width", self.collar_width),
            ("collar_depth", self.collar_depth),
            ("hook_drop", self.hook_drop),
            ("lift_height", self.lift_height),
            ("snag_slip_threshold", self.snag_slip_threshold),
            ("collision_margin", self.collision_margin),
            ("max_linear_speed", self.max_linear_speed),
            ("max_angular_speed", self.max_angular_speed),
            ("max_gripper_speed", self.max_gripper_speed),
            ("wrist_window", self.wrist_window),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::invalid("workspace bounds are empty"));
        }
        if !(self.shoulder_offset_range >= 0.0) {
            return Err(Error::invalid("shoulder_offset_range must be non-negative"));
        }
        if !(self.sensor_high > 0.0 && self.sensor_high <= 1.0) {
            return Err(Error::invalid("sensor_high must lie in (0, 1]"));
        }
        if !(self.sensor_low >= 0.0 && self.sensor_low < 1.0) {
            return Err(Error::invalid("sensor_low must lie in [0, 1)"));
        }
        if !(self.sensor_sigma >= 0.0) {
            return Err(Error::invalid("sensor_sigma must be non-negative"));
        }
        if !(self.sensor_high > self.sensor_low + 5.0 * self.sensor_sigma) {
            return Err(Error::invalid(
                "covered and uncovered sensor levels must be separated by more than 5 sigma",
            ));
        }
        if self.stall_budget == 0 || self.stall_budget > self.hard_cap {
            return Err(Error::invalid("need 0 < stall_budget <= hard_cap"));
        }
        if self.scene_grid < 8 || self.wrist_grid < 8 {
            return Err(Error::invalid("grid sizes must be at least 8"));
        }
        if self.control_hz == 0 {
            return Err(Error::invalid("control_hz must be positive"));
        }
        if self.rng_algorithm != "chacha20" {
            return Err(Error::invalid(format!(
                "unsupported rng algorithm {:?}",
                self.rng_algorithm
            )));
        }
        Ok(())
    }

    /// Length of one hanger leg from hook to tip.
    pub fn leg_length(&self) -> f64 {
        self.leg_half_span / self.leg_droop.cos()
    }

    /// Length of the flat feature vector built by [`normalize_observation`].
    pub fn feature_len(&self, instrumented: bool) -> usize {
        let grids = self.scene_grid * self.scene_grid * 2 + self.wrist_grid * self.wrist_grid * 2;
        grids + 4 + if instrumented { NUM_SENSORS } else { 0 }
    }
}

/// Task progression. Ordered; transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Approach1,
    Inserted1,
    Lifted,
    Inserted2,
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeType {
    I,
    II,
    III,
    IV,
}

impl EpisodeType {
    pub const ALL: [EpisodeType; 4] = [EpisodeType::I, EpisodeType::II, EpisodeType::III, EpisodeType::IV];

    /// Types II and III start from a missed first insertion.
    pub fn starts_missed(self) -> bool {
        matches!(self, EpisodeType::II | EpisodeType::III)
    }

    /// Types III and IV end right after the first insertion.
    pub fn ends_after_first_insertion(self) -> bool {
        matches!(self, EpisodeType::III | EpisodeType::IV)
    }
}

impl fmt::Display for EpisodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EpisodeType::I => "I",
            EpisodeType::II => "II",
            EpisodeType::III => "III",
            EpisodeType::IV => "IV",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    ScriptedDemo,
    PolicyRollout,
    ExpertEnhancement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureMode {
    CollisionFirst,
    DropFirst,
    StuckFirst,
    PulledDrop,
    FailedLift,
    StuckSecond,
    CollisionSecond,
    DropSecond,
}

impl FailureMode {
    /// Column order of the failure table.
    pub const ALL: [FailureMode; 8] = [
        FailureMode::CollisionFirst,
        FailureMode::DropFirst,
        FailureMode::StuckFirst,
        FailureMode::PulledDrop,
        FailureMode::FailedLift,
        FailureMode::StuckSecond,
        FailureMode::CollisionSecond,
        FailureMode::DropSecond,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FailureMode::CollisionFirst => "Collision [1st insertion]",
            FailureMode::DropFirst => "Drop [1st insertion]",
            FailureMode::StuckFirst => "Stuck [1st insertion]",
            FailureMode::PulledDrop => "Pulled drop",
            FailureMode::FailedLift => "Failed lift",
            FailureMode::StuckSecond => "Stuck [2nd insertion]",
            FailureMode::CollisionSecond => "Collision [2nd insertion]",
            FailureMode::DropSecond => "Drop [2nd insertion]",
        }
    }

    pub fn index(self) -> usize {
        FailureMode::ALL.iter().position(|m| *m == self).expect("listed")
    }
}

/// Episode outcome. `Truncated` marks a Type III/IV episode that reached its
/// first-insertion target and was ended there; it counts as a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure(FailureMode),
    Truncated,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success | Outcome::Truncated)
    }

    pub fn failure(self) -> Option<FailureMode> {
        match self {
            Outcome::Failure(m) => Some(m),
            _ => None,
        }
    }
}

/// Bit-packed binary occupancy grid, `rows x cols x channels`, row 0 at the top.
///
/// Cell `(r, c, ch)` lives at flat index `(r * cols + c) * channels + ch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    bits: Vec<u64>,
}

impl BinaryGrid {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        let n = rows * cols * channels;
        Self {
            rows,
            cols,
            channels,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, r: usize, c: usize, ch: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols && ch < self.channels);
        (r * self.cols + c) * self.channels + ch
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> bool {
        self.get_flat(self.index(r, c, ch))
    }

    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: bool) {
        let i = self.index(r, c, ch);
        if v {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn get_flat(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn channel_count(&self, ch: usize) -> usize {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.get(r, c, ch))
            .count()
    }

    /// Flat indices of set cells, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + tz)
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    pub fn from_words(rows: usize, cols: usize, channels: usize, words: Vec<u64>) -> Result<Self> {
        let n = rows * cols * channels;
        if words.len() != n.div_ceil(64) {
            return Err(Error::shape(format!(
                "grid {rows}x{cols}x{channels} needs {} words, got {}",
                n.div_ceil(64),
                words.len()
            )));
        }
        if n % 64 != 0 {
            let tail = words[words.len() - 1] >> (n % 64);
            if tail != 0 {
                return Err(Error::shape("grid has bits set past its last cell"));
            }
        }
        Ok(Self {
            rows,
            cols,
            channels,
            bits: words,
        })
    }
}

/// What a policy sees at one control step.
///
/// `proprio` is `[x, y, theta, g]` in physical units; [`normalize_observation`]
/// maps it into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scene: BinaryGrid,
    pub wrist: BinaryGrid,
    pub proprio: [f64; 4],
    pub instr: Option<[f64; NUM_SENSORS]>,
}

impl Observation {
    pub fn instrumented(&self) -> bool {
        self.instr.is_some()
    }

    /// Copy with the instrumentation channels removed.
    pub fn without_instr(&self) -> Observation {
        Observation {
            instr: None,
            ..self.clone()
        }
    }
}

/// Normalized flat feature vector plus a flag raised when proprioception had to be clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub values: Vec<f64>,
    pub clamped: bool,
}

fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

fn from_unit(u: f64, lo: f64, hi: f64) -> f64 {
    lo + (u + 1.0) * 0.5 * (hi - lo)
}

/// Maps physical `[x, y, theta, g]` to `[-1, 1]^4` without clamping.
pub fn normalize_row(row: &[f64; 4], cfg: &SimConfig) -> [f64; 4] {
    [
        to_unit(row[0], cfg.x_min, cfg.x_max),
        to_unit(row[1], cfg.y_min, cfg.y_max),
        row[2] / PI,
        2.0 * row[3] - 1.0,
    ]
}

/// Inverse of [`normalize_row`].
pub fn denormalize_row(u: &[f64; 4], cfg: &SimConfig) -> [f64; 4] {
    [
        from_unit(u[0], cfg.x_min, cfg.x_max),
        from_unit(u[1], cfg.y_min, cfg.y_max),
        u[2] * PI,
        (u[3] + 1.0) * 0.5,
    ]
}

/// Flattens an observation: scene grid (row-major, channel fastest), wrist grid,
/// normalized proprioception, then the instrumentation readings when present.
pub fn normalize_observation(obs: &Observation, cfg: &SimConfig) -> Features {
    let mut values = Vec::with_capacity(cfg.feature_len(obs.instrumented()));
    write_features(obs, cfg, &mut values)
}

/// Appends the flat feature vector of `obs` to `out` (reusing its allocation).
pub fn write_features(obs: &Observation, cfg: &SimConfig, out: &mut Vec<f64>) -> Features {
    let mut values = std::mem::take(out);
    values.clear();
    for grid in [&obs.scene, &obs.wrist] {
        let start = values.len();
        values.resize(start + grid.len(), 0.0);
        for i in grid.ones() {
            values[start + i] = 1.0;
        }
    }
    let mut clamped = false;
    for u in normalize_row(&obs.proprio, cfg) {
        let c = u.clamp(-1.0, 1.0);
        if c != u || !u.is_finite() {
            clamped = true;
        }
        values.push(if c.is_finite() { c } else { 0.0 });
    }
    if let Some(instr) = obs.instr {
        values.extend_from_slice(&instr);
    }
    if clamped {
        log::warn!("proprioception outside workspace bounds was clamped");
    }
    Features { values, clamped }
}

/// Recovers physical proprioception from the normalized slot of a feature vector.
pub fn denormalize_proprio(features: &[f64], cfg: &SimConfig) -> Result<[f64; 4]> {
    let grids = cfg.scene_grid * cfg.scene_grid * 2 + cfg.wrist_grid * cfg.wrist_grid * 2;
    let slot = features
        .get(grids..grids + 4)
        .ok_or_else(|| Error::shape(format!("feature vector of length {} too short", features.len())))?;
    Ok(denormalize_row(&[slot[0], slot[1], slot[2], slot[3]], cfg))
}

/// Clamps an action row into the workspace, wraps theta and clamps `g` to `[0, 1]`.
pub fn clamp_action(row: &[f64; 4], cfg: &SimConfig) -> Result<[f64; 4]> {
    if row.iter().any(|v| v.is_nan()) {
        return Err(Error::Divergence(format!("NaN in action row {row:?}")));
    }
    let theta = if row[2].is_finite() { wrap_angle(row[2])? } else { 0.0 };
    Ok([
        row[0].clamp(cfg.x_min, cfg.x_max),
        row[1].clamp(cfg.y_min, cfg.y_max),
        theta,
        row[3].clamp(0.0, 1.0),
    ])
}

/// Sixteen absolute `[x, y, theta, g]` targets in normalized units
/// (same mapping as proprioception, see [`normalize_row`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub rows: Vec<[f64; 4]>,
}

impl ActionChunk {
    pub fn new(rows: Vec<[f64; 4]>) -> Result<Self> {
        if rows.len() != CHUNK_LEN {
            return Err(Error::shape(format!(
                "action chunk needs {CHUNK_LEN} rows, got {}",
                rows.len()
            )));
        }
        Ok(Self { rows })
    }

    /// Builds a chunk from physical-unit rows.
    pub fn from_physical(rows: &[[f64; 4]], cfg: &SimConfig) -> Result<Self> {
        Self::new(rows.iter().map(|r| normalize_row(r, cfg)).collect())
    }

    /// Rows executed before re-planning.
    pub fn executed(&self) -> &[[f64; 4]] {
        &self.rows[..EXEC_LEN]
    }

    /// Physical-unit targets for the executed rows, clamped to valid ranges.
    pub fn executed_physical(&self, cfg: &SimConfig) -> Result<Vec<[f64; 4]>> {
        self.executed()
            .iter()
            .map(|r| clamp_action(&denormalize_row(r, cfg), cfg))
            .collect()
    }
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// A terminal simulator event (collision, drop, pull-out, release).
    Event,
    /// Type III/IV episode reached the first insertion.
    StageTarget,
    /// No progress within the stall budget.
    Stall,
    /// Insertion phase exceeded the hard cap.
    HardCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_type: EpisodeType,
    pub source: Source,
    pub outcome: Outcome,
    pub seed: u64,
    pub termination: Termination,
    pub init: InitDescriptor,
    /// Collar polyline in wrist-window coordinates at the first frame.
    pub initial_collar_trace: Vec<Vec2>,
}

/// One control step: what was observed, what was commanded, and what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub obs: Observation,
    pub action: [f64; 4],
    /// Stage after the step.
    pub stage: Stage,
    pub events: StepEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn instrumented(&self) -> bool {
        self.frames.first().is_some_and(|f| f.obs.instrumented())
    }

    pub fn final_stage(&self) -> Option<Stage> {
        self.frames.last().map(|f| f.stage)
    }

    /// Checks the structural invariants: non-empty, bounded length and a
    /// uniform instrumentation flag.
    pub fn validate(&self, cfg: &SimConfig) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::contract("episode has no frames"));
        }
        let cap = 2 * cfg.hard_cap + cfg.stall_budget;
        if self.frames.len() > cap {
            return Err(Error::contract(format!(
                "episode has {} frames, more than the {cap} bound",
                self.frames.len()
            )));
        }
        let flag = self.instrumented();
        if self.frames.iter().any(|f| f.obs.instrumented() != flag) {
            return Err(Error::contract("frames disagree on instrumentation presence"));
        }
        Ok(())
    }
}
