//! Scripted demonstrator with privileged state access, and dataset presets.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{run_episode, Controller, RolloutPolicy};
use crate::persist::episode_hash;
use crate::sim::{self, derive_seed, hanger_points, SimState, INSERT_THETA};
use crate::types::{
    wrap_angle, ActionChunk, Episode, EpisodeType, Observation, SimConfig, Source, Stage, CHUNK_LEN, EXEC_LEN,
};

/// Default demonstrator jitter on position targets, meters.
pub const DEFAULT_NOISE: f64 = 0.002;
/// Angular jitter per meter of positional jitter (0.002 m pairs with 0.01 rad).
pub const ANGULAR_NOISE_RATIO: f64 = 5.0;
/// A failed demonstration is retried with `seed + k * RETRY_STRIDE`, `k < RETRY_CAP`.
pub const RETRY_CAP: u32 = 10;
pub const RETRY_STRIDE: u64 = 10_000;
/// Seeds of one episode type within a dataset are `base + type_index * TYPE_STRIDE + i`.
pub const TYPE_STRIDE: u64 = 100_000;

/// Hook height above the collar while lining up, chosen so the lowered leg clears the collar.
const ABOVE_COLLAR: f64 = 0.25;
/// Extra lift beyond the required lift height.
const LIFT_MARGIN: f64 = 0.012;
/// Depth below the contact height targeted during the descent.
const DESCENT_OVERSHOOT: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    LineUp,
    Descend,
}

/// Waypoint controller that reads the true state.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    noise: f64,
    rng: ChaCha20Rng,
    mode: Mode,
}

impl ScriptedExpert {
    /// Jitter stream is keyed by `derive_seed(master_seed, seed, 1)`.
    pub fn new(cfg: &SimConfig, seed: u64, noise: f64) -> Self {
        Self {
            noise,
            rng: ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, seed, 1)),
            mode: Mode::LineUp,
        }
    }

    /// Target pose and gripper opening for the current state.
    fn waypoint(&mut self, s: &SimState, cfg: &SimConfig) -> [f64; 4] {
        let cloth = s.cloth(cfg);
        let cx = 0.5 * (cloth.collar[0].x + cloth.collar[1].x);
        let top = cloth.collar[0].y.max(cloth.collar[1].y);
        let rest = s.contact_rest_y(cfg);
        let h = s.hanger;
        let lifted_y = rest + cfg.lift_height + LIFT_MARGIN;
        match s.stage {
            Stage::Approach1 => {
                let (_, tips) = hanger_points(cfg, &h);
                let dtheta = wrap_angle(h.theta - INSERT_THETA).unwrap_or(0.0).abs();
                if self.mode == Mode::Descend && (h.x - cx).abs() > 0.02 {
                    self.mode = Mode::LineUp;
                }
                if self.mode == Mode::LineUp && (h.x - cx).abs() < 0.01 && dtheta < 0.03 && tips[0].y > top + 0.005 {
                    self.mode = Mode::Descend;
                }
                if self.mode == Mode::Descend {
                    [cx, rest - DESCENT_OVERSHOOT, INSERT_THETA, 0.0]
                } else if tips[0].y < top + 0.02 {
                    // beside the collar after a missed insertion: back out upward first
                    [h.x, h.y + 0.05, h.theta, 0.0]
                } else {
                    [cx, top + ABOVE_COLLAR, INSERT_THETA, 0.0]
                }
            }
            Stage::Inserted1 => {
                if s.hook_engaged {
                    [cx, lifted_y, INSERT_THETA, 0.0]
                } else {
                    [cx, rest - DESCENT_OVERSHOOT, INSERT_THETA, 0.0]
                }
            }
            Stage::Lifted => [cx, lifted_y, 0.0, 0.0],
            Stage::Inserted2 | Stage::Released => {
                // finish the rotation before letting go
                let open = if h.theta.abs() < 0.03 { 1.0 } else { 0.0 };
                [cx, lifted_y, 0.0, open]
            }
        }
    }

    fn next_action(&mut self, s: &SimState, cfg: &SimConfig) -> [f64; 4] {
        let wp = self.waypoint(s, cfg);
        let (dx, dy) = (wp[0] - s.hanger.x, wp[1] - s.hanger.y);
        let n = dx.hypot(dy);
        let k = if n > cfg.max_linear_speed { cfg.max_linear_speed / n } else { 1.0 };
        let dtheta = wrap_angle(wp[2] - s.hanger.theta)
            .unwrap_or(0.0)
            .clamp(-cfg.max_angular_speed, cfg.max_angular_speed);
        let mut a = [
            s.hanger.x + k * dx,
            s.hanger.y + k * dy,
            s.hanger.theta + dtheta,
            wp[3],
        ];
        if self.noise > 0.0 {
            let lin = Normal::new(0.0, self.noise).expect("positive noise");
            let ang = Normal::new(0.0, ANGULAR_NOISE_RATIO * self.noise).expect("positive noise");
            a[0] += lin.sample(&mut self.rng);
            a[1] += lin.sample(&mut self.rng);
            a[2] += ang.sample(&mut self.rng);
        }
        a
    }
}

impl Controller for ScriptedExpert {
    fn act(&mut self, _obs: &Observation, state: &SimState, cfg: &SimConfig) -> Result<[f64; 4]> {
        Ok(self.next_action(state, cfg))
    }
}

/// The scripted expert exposed as a chunking policy: it plans 16 rows by
/// running itself on a copy of the true state.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    expert: ScriptedExpert,
}

impl ExpertPolicy {
    pub fn new(cfg: &SimConfig, seed: u64, noise: f64) -> Self {
        Self {
            expert: ScriptedExpert::new(cfg, seed, noise),
        }
    }
}

impl RolloutPolicy for ExpertPolicy {
    fn instrumented(&self) -> bool {
        true
    }

    fn begin_episode(&mut self, cfg: &SimConfig, seed: u64) {
        let noise = self.expert.noise;
        self.expert = ScriptedExpert::new(cfg, seed, noise);
    }

    fn plan(&mut self, _obs: &Observation, state: &SimState, cfg: &SimConfig) -> Result<ActionChunk> {
        let mut shadow = state.clone();
        let mut rows = Vec::with_capacity(CHUNK_LEN);
        let mut mode_after_exec = self.expert.mode;
        for i in 0..CHUNK_LEN {
            if shadow.terminal {
                let last = *rows.last().expect("terminal only after a step");
                rows.push(last);
                continue;
            }
            let a = crate::types::clamp_action(&self.expert.next_action(&shadow, cfg), cfg)?;
            sim::step(&mut shadow, &a, cfg)?;
            rows.push(a);
            if i + 1 == EXEC_LEN {
                mode_after_exec = self.expert.mode;
            }
        }
        self.expert.mode = mode_after_exec;
        ActionChunk::from_physical(&rows, cfg)
    }
}

/// Runs the scripted expert, retrying with shifted seeds until it succeeds.
pub fn scripted_demo(cfg: &SimConfig, seed: u64, episode_type: EpisodeType, noise: f64) -> Result<Episode> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be finite and non-negative, got {noise}")));
    }
    for k in 0..u64::from(RETRY_CAP) {
        let s = seed.wrapping_add(k * RETRY_STRIDE);
        let state = sim::reset(cfg, s, episode_type);
        let mut expert = ScriptedExpert::new(cfg, s, noise);
        let ep = run_episode(cfg, &state.init, episode_type, Source::ScriptedDemo, &mut expert)?;
        if ep.meta.outcome.is_success() {
            return Ok(ep);
        }
        log::debug!("demo type {episode_type} seed {s} failed: {:?}", ep.meta.outcome);
    }
    Err(Error::DemoFailed {
        episode_type: episode_type.to_string(),
        seed,
        attempts: RETRY_CAP,
    })
}

/// Counts per episode type, demonstrator noise and base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub counts: Vec<(EpisodeType, usize)>,
    pub noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Named subsets. Each preset draws from its own seed range, so the
    /// subsets are independent rather than nested.
    pub fn preset(name: &str) -> Result<Self> {
        let (counts, seed) = match name {
            "train180" => (vec![(EpisodeType::I, 50), (EpisodeType::II, 120), (EpisodeType::III, 10)], 180_000_000),
            "train100" => (vec![(EpisodeType::I, 20), (EpisodeType::II, 80)], 100_000_000),
            "train50" => (vec![(EpisodeType::II, 50)], 50_000_000),
            other => return Err(Error::invalid(format!("unknown dataset preset {other:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            counts,
            noise: DEFAULT_NOISE,
            seed,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("dataset noise must be finite and non-negative"));
        }
        let mut seen = Vec::new();
        for (t, _) in &self.counts {
            if seen.contains(t) {
                return Err(Error::invalid(format!("episode type {t} listed twice")));
            }
            seen.push(*t);
        }
        Ok(())
    }
}

/// One manifest line per stored episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub episode_type: EpisodeType,
    pub source: Source,
    pub seed: u64,
    pub frames: usize,
    pub hash: String,
}

/// Record of one targeted enhancement initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementLog {
    pub init_seed: u64,
    pub attempts: u32,
    pub successes: u32,
    /// Outcome label per attempt, in order.
    pub outcomes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub spec: Option<DatasetSpec>,
    pub counts: BTreeMap<String, usize>,
    pub sources: BTreeMap<String, usize>,
    pub total: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub enhancement: Vec<EnhancementLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
}

pub(crate) fn source_label(s: Source) -> &'static str {
    match s {
        Source::ScriptedDemo => "ScriptedDemo",
        Source::PolicyRollout => "PolicyRollout",
        Source::ExpertEnhancement => "ExpertEnhancement",
    }
}

impl Dataset {
    /// Builds a dataset and its manifest from episodes.
    pub fn from_episodes(name: &str, spec: Option<DatasetSpec>, episodes: Vec<Episode>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut sources = BTreeMap::new();
        let mut entries = Vec::with_capacity(episodes.len());
        for (index, ep) in episodes.iter().enumerate() {
            *counts.entry(ep.meta.episode_type.to_string()).or_insert(0) += 1;
            *sources.entry(source_label(ep.meta.source).to_string()).or_insert(0) += 1;
            entries.push(ManifestEntry {
                index,
                episode_type: ep.meta.episode_type,
                source: ep.meta.source,
                seed: ep.meta.seed,
                frames: ep.frames.len(),
                hash: episode_hash(ep)?,
            });
        }
        Ok(Self {
            manifest: DatasetManifest {
                format_version: crate::persist::FORMAT_VERSION,
                name: name.to_string(),
                spec,
                counts,
                sources,
                total: episodes.len(),
                entries,
                enhancement: Vec::new(),
            },
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Generates every demonstration of `spec`; only successful demos are kept.
pub fn build_dataset(cfg: &SimConfig, spec: &DatasetSpec) -> Result<Dataset> {
    cfg.validate()?;
    spec.validate()?;
    let mut episodes = Vec::with_capacity(spec.total());
    for (ty, count) in &spec.counts {
        let type_index = EpisodeType::ALL.iter().position(|t| t == ty).expect("listed") as u64;
        for i in 0..*count {
            let seed = spec.seed + type_index * TYPE_STRIDE + i as u64;
            episodes.push(scripted_demo(cfg, seed, *ty, spec.noise)?);
        }
    }
    Dataset::from_episodes(&spec.name, Some(spec.clone()), episodes)
}
