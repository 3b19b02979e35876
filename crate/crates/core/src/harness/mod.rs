//! Policy rollouts with timeout rules, evaluation campaigns and
//! failure-targeted dataset enhancement.

mod runner;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

pub use runner::{run_episode, Controller, ProgressTracker};

use crate::error::{Error, Result};
use crate::expert::{Dataset, EnhancementLog};
use crate::geometry::Vec2;
use crate::sim::{self, derive_seed, InitDescriptor, SimState, StartKind};
use crate::types::{
    ActionChunk, Episode, EpisodeType, FailureMode, Observation, Outcome, SimConfig, Source, Termination,
};

/// Successful targeted attempts kept per initialisation.
pub const ENHANCE_SUCCESSES: u32 = 5;
/// Attempts per initialisation.
pub const ENHANCE_ATTEMPTS: u32 = 10;

/// A chunking policy. `state` is privileged and only scripted policies may read it.
pub trait RolloutPolicy {
    fn instrumented(&self) -> bool;

    /// Called before each episode with that episode's policy seed.
    fn begin_episode(&mut self, _cfg: &SimConfig, _seed: u64) {}

    fn plan(&mut self, obs: &Observation, state: &SimState, cfg: &SimConfig) -> Result<ActionChunk>;
}

/// Executes the first rows of each chunk before asking for a new one.
/// Vision-only policies receive observations with the instrumentation removed.
pub struct ChunkExecutor<'a> {
    policy: &'a mut dyn RolloutPolicy,
    queue: VecDeque<[f64; 4]>,
}

impl<'a> ChunkExecutor<'a> {
    pub fn new(policy: &'a mut dyn RolloutPolicy) -> Self {
        Self {
            policy,
            queue: VecDeque::new(),
        }
    }
}

impl Controller for ChunkExecutor<'_> {
    fn act(&mut self, obs: &Observation, state: &SimState, cfg: &SimConfig) -> Result<[f64; 4]> {
        if self.queue.is_empty() {
            let chunk = if self.policy.instrumented() {
                self.policy.plan(obs, state, cfg)?
            } else {
                self.policy.plan(&obs.without_instr(), state, cfg)?
            };
            self.queue.extend(chunk.executed_physical(cfg)?);
        }
        Ok(self.queue.pop_front().expect("queue refilled"))
    }
}

/// Runs `policy` from an explicit initial state.
pub fn run_policy_episode(
    policy: &mut dyn RolloutPolicy,
    cfg: &SimConfig,
    init: &InitDescriptor,
    episode_type: EpisodeType,
    source: Source,
    policy_seed: u64,
) -> Result<Episode> {
    policy.begin_episode(cfg, policy_seed);
    let mut exec = ChunkExecutor::new(policy);
    run_episode(cfg, init, episode_type, source, &mut exec)
}

/// One Type I evaluation rollout. The policy seed equals the episode seed.
pub fn run_rollout(policy: &mut dyn RolloutPolicy, cfg: &SimConfig, seed: u64) -> Result<Episode> {
    let init = sim::reset(cfg, seed, EpisodeType::I).init;
    run_policy_episode(policy, cfg, &init, EpisodeType::I, Source::PolicyRollout, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub seed: u64,
    pub steps: usize,
    pub outcome: Outcome,
    pub termination: Termination,
    pub init: InitDescriptor,
    pub collar_trace: Vec<Vec2>,
}

/// Aggregated evaluation: `s` successes out of `n` rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub format_version: u32,
    pub policy_tag: String,
    pub n: usize,
    pub s: usize,
    pub failures: BTreeMap<FailureMode, usize>,
    pub rollouts: Vec<RolloutSummary>,
}

impl EvalRecord {
    /// Record with the given counts and no per-rollout detail.
    pub fn from_counts(tag: &str, n: usize, s: usize, failures: &[(FailureMode, usize)]) -> Result<Self> {
        let rec = Self {
            format_version: crate::persist::FORMAT_VERSION,
            policy_tag: tag.to_string(),
            n,
            s,
            failures: failures.iter().filter(|(_, c)| *c > 0).copied().collect(),
            rollouts: Vec::new(),
        };
        rec.check()?;
        Ok(rec)
    }

    pub fn failure_total(&self) -> usize {
        self.failures.values().sum()
    }

    pub fn count(&self, mode: FailureMode) -> usize {
        self.failures.get(&mode).copied().unwrap_or(0)
    }

    /// `s + sum(failures) = n` and `n >= 1`.
    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("evaluation record with N = 0"));
        }
        if self.s + self.failure_total() != self.n {
            return Err(Error::contract(format!(
                "record {}: s = {} plus {} failures does not equal N = {}",
                self.policy_tag,
                self.s,
                self.failure_total(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Aggregates finished Type I rollouts into a record.
pub fn record_from_episodes(tag: &str, episodes: &[Episode]) -> Result<EvalRecord> {
    let mut rec = EvalRecord {
        format_version: crate::persist::FORMAT_VERSION,
        policy_tag: tag.to_string(),
        n: episodes.len(),
        s: 0,
        failures: BTreeMap::new(),
        rollouts: Vec::with_capacity(episodes.len()),
    };
    for ep in episodes {
        if ep.meta.episode_type != EpisodeType::I {
            return Err(Error::contract("evaluation rollouts must be Type I"));
        }
        match ep.meta.outcome {
            Outcome::Success => rec.s += 1,
            Outcome::Failure(m) => *rec.failures.entry(m).or_insert(0) += 1,
            Outcome::Truncated => return Err(Error::contract("Type I rollout cannot be truncated")),
        }
        rec.rollouts.push(RolloutSummary {
            seed: ep.meta.seed,
            steps: ep.frames.len(),
            outcome: ep.meta.outcome,
            termination: ep.meta.termination,
            init: ep.meta.init,
            collar_trace: ep.meta.initial_collar_trace.clone(),
        });
    }
    rec.check()?;
    Ok(rec)
}

/// Runs `n` Type I rollouts on `seeds` and aggregates them.
pub fn evaluate(
    policy: &mut dyn RolloutPolicy,
    cfg: &SimConfig,
    tag: &str,
    n: usize,
    seeds: &[u64],
) -> Result<(EvalRecord, Vec<Episode>)> {
    if n == 0 {
        return Err(Error::invalid("evaluate needs at least one rollout"));
    }
    if seeds.len() != n {
        return Err(Error::invalid(format!("{n} rollouts requested but {} seeds given", seeds.len())));
    }
    let mut episodes = Vec::with_capacity(n);
    for &seed in seeds {
        let ep = run_rollout(policy, cfg, seed)?;
        log::info!("rollout seed {seed}: {:?} after {} steps", ep.meta.outcome, ep.frames.len());
        episodes.push(ep);
    }
    Ok((record_from_episodes(tag, &episodes)?, episodes))
}

/// Initial state of a failed episode, for exact re-simulation.
pub fn recreate_init(failed: &Episode) -> Result<InitDescriptor> {
    if failed.meta.outcome.is_success() {
        return Err(Error::invalid("only failed episodes can be recreated"));
    }
    Ok(failed.meta.init)
}

/// Policy seed of targeted attempt `attempt` on the initialisation with seed `init_seed`.
pub fn attempt_seed(cfg: &SimConfig, init_seed: u64, attempt: u32) -> u64 {
    derive_seed(cfg.master_seed, init_seed, 1000 + u64::from(attempt))
}

/// Base dataset plus the expert's successful evaluation rollouts plus
/// Type IV expert rollouts on each student failure's initial state (up to 5
/// successes in at most 10 attempts per initialisation).
pub fn enhance_dataset(
    base: &Dataset,
    expert: &mut dyn RolloutPolicy,
    expert_eval: &EvalRecord,
    expert_rollouts: &[Episode],
    student_failures: &[Episode],
    cfg: &SimConfig,
) -> Result<Dataset> {
    let inits = student_failures.iter().map(recreate_init).collect::<Result<Vec<_>>>()?;
    enhance_from_inits(base, expert, expert_eval, expert_rollouts, &inits, cfg)
}

/// Initial states of the failed rollouts of a record.
pub fn failure_inits(rec: &EvalRecord) -> Result<Vec<InitDescriptor>> {
    if rec.rollouts.len() != rec.n {
        return Err(Error::invalid(format!(
            "record {} carries {} rollout summaries for N = {}",
            rec.policy_tag,
            rec.rollouts.len(),
            rec.n
        )));
    }
    Ok(rec.rollouts.iter().filter(|r| !r.outcome.is_success()).map(|r| r.init).collect())
}

/// [`enhance_dataset`] with the failed initialisations given directly.
pub fn enhance_from_inits(
    base: &Dataset,
    expert: &mut dyn RolloutPolicy,
    expert_eval: &EvalRecord,
    expert_rollouts: &[Episode],
    failure_inits: &[InitDescriptor],
    cfg: &SimConfig,
) -> Result<Dataset> {
    if !expert.instrumented() {
        return Err(Error::invalid("the enhancement expert must be instrumented"));
    }
    expert_eval.check()?;
    let successes: Vec<&Episode> = expert_rollouts
        .iter()
        .filter(|e| e.meta.outcome == Outcome::Success)
        .collect();
    if successes.len() != expert_eval.s {
        return Err(Error::contract(format!(
            "expert record reports {} successes but {} successful rollouts were supplied",
            expert_eval.s,
            successes.len()
        )));
    }
    let mut episodes = base.episodes.clone();
    for ep in &successes {
        if ep.meta.episode_type != EpisodeType::I {
            return Err(Error::contract("expert evaluation rollouts must be Type I"));
        }
        episodes.push((*ep).clone());
    }

    let mut logs = Vec::with_capacity(failure_inits.len());
    for init in failure_inits {
        let mut init = *init;
        if init.start != StartKind::Home {
            log::warn!("student failure seed {} did not start at home; using its start as is", init.seed);
        }
        init.gripper = 0.0;
        let mut log_entry = EnhancementLog {
            init_seed: init.seed,
            attempts: 0,
            successes: 0,
            outcomes: Vec::new(),
        };
        while log_entry.attempts < ENHANCE_ATTEMPTS && log_entry.successes < ENHANCE_SUCCESSES {
            let seed = attempt_seed(cfg, init.seed, log_entry.attempts);
            let ep = run_policy_episode(expert, cfg, &init, EpisodeType::IV, Source::ExpertEnhancement, seed)?;
            log_entry.attempts += 1;
            log_entry.outcomes.push(format!("{:?}", ep.meta.outcome));
            if ep.meta.outcome.is_success() {
                log_entry.successes += 1;
                episodes.push(ep);
            }
        }
        logs.push(log_entry);
    }
    let name = format!("{}+enhanced", base.manifest.name);
    let mut out = Dataset::from_episodes(&name, None, episodes)?;
    out.manifest.enhancement = logs;
    Ok(out)
}
