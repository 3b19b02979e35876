use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;

use hanger_core::bayes::{self, Comparison, FailureRow};
use hanger_core::expert::{build_dataset, DatasetSpec};
use hanger_core::harness::{self, EvalRecord, RolloutPolicy};
use hanger_core::learner::{DiffusionPolicy, PolicyConfig, TrainConfig, Trainer, TrainingSet};
use hanger_core::persist::{self, Checkpoint, TraceFile};
use hanger_core::{Error, Scalar, SimConfig};

use crate::{
    sim_config_with_overrides, write_snapshot, CliError, CliResult, Cli, CollectArgs, Command, CompareArgs,
    EnhanceArgs, EvalArgs, ExportTracesArgs, ScalarArg, TrainArgs,
};

pub fn run(cli: &Cli) -> CliResult<()> {
    let overrides = match &cli.sim_config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            let v: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Usage(format!("{} is not valid JSON: {e}", p.display())))?;
            Some(v)
        }
        None => None,
    };
    match &cli.command {
        Command::Collect(a) => collect(a, &sim_config_with_overrides(overrides.as_ref())?),
        Command::Train(a) => train(a, overrides.as_ref()),
        Command::Eval(a) => eval(a),
        Command::Enhance(a) => enhance(a),
        Command::Compare(a) => compare(a),
        Command::ExportTraces(a) => export_traces(a),
    }
}

fn collect(args: &CollectArgs, sim: &SimConfig) -> CliResult<()> {
    let mut spec = DatasetSpec::preset(&args.preset).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(noise) = args.noise {
        spec.noise = noise;
    }
    if args.out.join(persist::MANIFEST_FILE).exists() && !args.overwrite {
        return Err(Error::invalid(format!("{} already holds a dataset; pass --overwrite", args.out.display())).into());
    }
    let ds = build_dataset(sim, &spec)?;
    persist::save_dataset(&args.out, &ds, args.payload.into(), args.overwrite)?;
    write_snapshot(&args.out, true, "collect", Some(sim), args, json!({ "spec": spec }))?;
    println!("{}: {} episodes {:?}", args.out.display(), ds.len(), ds.manifest.counts);
    Ok(())
}

/// Simulator settings of a dataset: `--sim-config` if given, else the
/// snapshot written by `collect`, else the defaults.
fn dataset_sim(dataset: &Path, overrides: Option<&serde_json::Value>) -> CliResult<SimConfig> {
    if overrides.is_some() {
        return sim_config_with_overrides(overrides);
    }
    let snap = crate::snapshot_path(dataset, true);
    if snap.exists() {
        let v: serde_json::Value = persist::load_json(&snap)?;
        if let Some(sim) = v.get("sim") {
            let cfg: SimConfig = serde_json::from_value(sim.clone())?;
            cfg.validate()?;
            return Ok(cfg);
        }
    }
    sim_config_with_overrides(None)
}

fn train(args: &TrainArgs, overrides: Option<&serde_json::Value>) -> CliResult<()> {
    if args.log_every == 0 || args.save_every == Some(0) {
        return Err(CliError::Usage("--log-every and --save-every must be positive".into()));
    }
    let scalar = match &args.resume {
        Some(p) => match persist::read_checkpoint_header(p)?.scalar.as_str() {
            "f32" => ScalarArg::F32,
            _ => ScalarArg::F64,
        },
        None => args.scalar,
    };
    match scalar {
        ScalarArg::F32 => train_with::<f32>(args, overrides),
        ScalarArg::F64 => train_with::<f64>(args, overrides),
    }
}

fn train_with<T: Scalar>(args: &TrainArgs, overrides: Option<&serde_json::Value>) -> CliResult<()> {
    let (mut trainer, sim) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            if ck.policy.config.instrumented != args.instrumented {
                return Err(CliError::Usage(format!(
                    "checkpoint {} has instrumented = {}",
                    path.display(),
                    ck.policy.config.instrumented
                )));
            }
            if overrides.is_some() && sim_config_with_overrides(overrides)? != ck.sim {
                return Err(CliError::Usage("--sim-config differs from the checkpoint being resumed".into()));
            }
            let sim = ck.sim.clone();
            let mut trainer = ck.into_trainer()?;
            if let Some(steps) = args.steps {
                trainer.train.steps = steps;
            }
            (trainer, sim)
        }
        None => {
            let sim = dataset_sim(&args.dataset, overrides)?;
            let defaults = TrainConfig::default();
            let train = TrainConfig {
                steps: args.steps.unwrap_or(defaults.steps),
                batch_size: args.batch_size.unwrap_or(defaults.batch_size),
                lr: args.lr.unwrap_or(defaults.lr),
                lr_final: args.lr_final.unwrap_or(defaults.lr_final),
                warmup: args.warmup.unwrap_or(defaults.warmup),
                seed: args.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let mut pc = PolicyConfig::new(args.instrumented);
            if let Some(h) = &args.hidden {
                pc.hidden = h.clone();
            }
            if let Some(d) = args.diffusion_steps {
                pc.diffusion_steps = d;
            }
            pc.seed = train.seed;
            let policy = DiffusionPolicy::<T>::new(pc, &sim)?;
            (Trainer::new(policy, train)?, sim)
        }
    };

    let dataset = persist::load_dataset(&args.dataset)?;
    let set = TrainingSet::from_dataset(&dataset, &sim, args.instrumented)?;
    log::info!(
        "training on {} frames from {} episodes, input length {}, {} parameters",
        set.len(),
        dataset.len(),
        trainer.policy.net.input_len(),
        trainer.policy.net.param_count()
    );

    let mut history: Vec<(u64, f64)> = Vec::new();
    let mut acc = 0.0;
    let mut count = 0u64;
    let log_every = args.log_every;
    trainer.run(&set, &sim, |t, loss| {
        acc += loss;
        count += 1;
        if t.step % log_every == 0 || t.step == t.train.steps {
            let mean = acc / count as f64;
            log::info!("step {} loss {mean:.5} lr {:.2e}", t.step, t.train.lr_at(t.step - 1));
            history.push((t.step, mean));
            acc = 0.0;
            count = 0;
        }
        if let Some(k) = args.save_every {
            if t.step % k == 0 && t.step < t.train.steps {
                Checkpoint::from_trainer(t, &sim).save(&periodic_path(&args.out, t.step))?;
            }
        }
        Ok(())
    })?;

    let ck = Checkpoint::from_trainer(&trainer, &sim);
    ck.save(&args.out)?;
    let resolved = json!({
        "scalar": T::NAME,
        "policy": trainer.policy.config,
        "train": trainer.train,
        "obs_len": trainer.policy.obs_len,
        "input_len": trainer.policy.net.input_len(),
        "loss": history,
    });
    write_snapshot(&args.out, false, "train", Some(&sim), args, resolved)?;
    println!(
        "{}: step {}, observation length {}, network input length {}",
        args.out.display(),
        trainer.step,
        trainer.policy.obs_len,
        trainer.policy.net.input_len()
    );
    Ok(())
}

pub fn periodic_path(out: &Path, step: u64) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".step{step}"));
    out.with_file_name(name)
}

/// A loaded policy of either scalar width.
enum LoadedPolicy {
    F32(DiffusionPolicy<f32>),
    F64(DiffusionPolicy<f64>),
}

impl LoadedPolicy {
    fn load(path: &Path) -> CliResult<(Self, SimConfig)> {
        let header = persist::read_checkpoint_header(path)?;
        Ok(if header.scalar == "f32" {
            let ck = Checkpoint::<f32>::load(path)?;
            (LoadedPolicy::F32(ck.policy), ck.sim)
        } else {
            let ck = Checkpoint::<f64>::load(path)?;
            (LoadedPolicy::F64(ck.policy), ck.sim)
        })
    }

    fn as_dyn(&mut self) -> &mut dyn RolloutPolicy {
        match self {
            LoadedPolicy::F32(p) => p,
            LoadedPolicy::F64(p) => p,
        }
    }
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => s.clone(),
        None => (0..args.n as u64).map(|i| args.seed_base + i).collect(),
    };
    if args.n == 0 || seeds.len() != args.n {
        return Err(CliError::Usage(format!("{} rollouts requested but {} seeds given", args.n, seeds.len())));
    }
    let tag = args.tag.clone().unwrap_or_else(|| {
        args.checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into())
    });
    let (mut policy, sim) = LoadedPolicy::load(&args.checkpoint)?;
    let (rec, _) = harness::evaluate(policy.as_dyn(), &sim, &tag, args.n, &seeds)?;
    persist::save_record(&args.out, &rec)?;
    let traces_path = args.traces.clone().unwrap_or_else(|| args.out.with_extension("traces.json"));
    let traces = TraceFile::from_record(&rec);
    persist::save_json(&traces_path, &traces)?;
    if let Some(svg) = &args.svg {
        persist::write_atomic(svg, traces.to_svg(512).as_bytes())?;
    }
    write_snapshot(&args.out, false, "eval", Some(&sim), args, json!({ "seeds": seeds, "tag": tag }))?;
    println!("{tag}: {}/{} successes, failures {:?}", rec.s, rec.n, rec.failures);
    Ok(())
}

fn enhance(args: &EnhanceArgs) -> CliResult<()> {
    let (mut expert, sim) = LoadedPolicy::load(&args.expert)?;
    if !expert.as_dyn().instrumented() {
        return Err(Error::invalid(format!("expert checkpoint {} is not instrumented", args.expert.display())).into());
    }
    let expert_rec = persist::load_record(&args.expert_record)?;
    let student_rec = persist::load_record(&args.student_record)?;
    let inits = harness::failure_inits(&student_rec)?;
    if expert_rec.rollouts.len() != expert_rec.n {
        return Err(Error::invalid("expert record carries no per-rollout detail").into());
    }
    // rollouts are deterministic in (checkpoint, seed), so the successful
    // evaluation episodes are recovered by re-running them
    let mut rollouts = Vec::with_capacity(expert_rec.s);
    for r in expert_rec.rollouts.iter().filter(|r| r.outcome.is_success()) {
        let ep = harness::run_rollout(expert.as_dyn(), &sim, r.seed)?;
        if ep.meta.outcome != r.outcome || ep.frames.len() != r.steps {
            return Err(Error::contract(format!(
                "seed {} does not reproduce the recorded rollout; was the record made with this checkpoint?",
                r.seed
            ))
            .into());
        }
        rollouts.push(ep);
    }
    let base = persist::load_dataset(&args.base)?;
    if args.out.join(persist::MANIFEST_FILE).exists() && !args.overwrite {
        return Err(Error::invalid(format!("{} already holds a dataset; pass --overwrite", args.out.display())).into());
    }
    let out = harness::enhance_from_inits(&base, expert.as_dyn(), &expert_rec, &rollouts, &inits, &sim)?;
    persist::save_dataset(&args.out, &out, args.payload.into(), args.overwrite)?;
    let targeted: u32 = out.manifest.enhancement.iter().map(|l| l.successes).sum();
    let summary = json!({
        "base": base.len(),
        "expert_eval_successes": rollouts.len(),
        "targeted_initialisations": inits.len(),
        "targeted_successes": targeted,
        "total": out.len(),
    });
    write_snapshot(&args.out, true, "enhance", Some(&sim), args, summary)?;
    println!(
        "{}: {} base + {} evaluation rollouts + {} targeted = {}",
        args.out.display(),
        base.len(),
        rollouts.len(),
        targeted,
        out.len()
    );
    Ok(())
}

/// One side of a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareInput {
    pub label: String,
    pub s: u64,
    pub n: u64,
    #[serde(skip)]
    pub record: Option<EvalRecord>,
}

fn parse_counts(text: &str) -> Option<(u64, u64)> {
    let (s, n) = text.split_once('/')?;
    Some((s.trim().parse().ok()?, n.trim().parse().ok()?))
}

fn compare_input(arg: &str) -> CliResult<CompareInput> {
    let path = Path::new(arg);
    if path.exists() {
        let rec = persist::load_record(path)?;
        return Ok(CompareInput {
            label: rec.policy_tag.clone(),
            s: rec.s as u64,
            n: rec.n as u64,
            record: Some(rec),
        });
    }
    match parse_counts(arg) {
        Some((s, n)) if s <= n && n > 0 => Ok(CompareInput {
            label: arg.to_string(),
            s,
            n,
            record: None,
        }),
        _ => Err(CliError::Usage(format!("{arg:?} is neither a record file nor counts like 7/20"))),
    }
}

const MODE_CODES: [&str; 8] = ["C1", "D1", "S1", "PD", "FL", "S2", "C2", "D2"];

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub format_version: u32,
    pub a: CompareInput,
    pub b: CompareInput,
    pub seed: u64,
    pub comparison: Comparison,
    pub agrees: bool,
    pub failure_table: Vec<FailureRow>,
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        let c = &self.comparison;
        let mut out = String::new();
        let _ = writeln!(out, "A = {} ({}/{}): Beta({}, {})", self.a.label, self.a.s, self.a.n, c.a.alpha, c.a.beta);
        let _ = writeln!(out, "B = {} ({}/{}): Beta({}, {})", self.b.label, self.b.s, self.b.n, c.b.alpha, c.b.beta);
        let pct = 100.0 * c.interval_mass;
        let _ = writeln!(out, "{pct}% interval A: [{:.4}, {:.4}]", c.interval_a.0, c.interval_a.1);
        let _ = writeln!(out, "{pct}% interval B: [{:.4}, {:.4}]", c.interval_b.0, c.interval_b.1);
        let _ = writeln!(out, "P(p_A > p_B) quadrature: {:.6} (error estimate {:.1e})", c.quadrature, c.quadrature_error);
        let _ = writeln!(out, "P(p_A > p_B) monte carlo: {:.6} ({} draws, seed {})", c.mc, c.mc_draws, self.seed);
        let _ = writeln!(
            out,
            "|difference|: {:.2e} (tolerance {:.2e}, {})",
            c.abs_difference,
            c.mc_tolerance,
            if self.agrees { "agree" } else { "DISAGREE" }
        );
        if !self.failure_table.is_empty() {
            let _ = writeln!(out, "failures, count (share of the row's failures):");
            for (code, m) in MODE_CODES.iter().zip(hanger_core::FailureMode::ALL) {
                let _ = writeln!(out, "  {code} = {}", m.label());
            }
            let mut header = format!("  {:<16}{:>4}{:>4}", "policy", "N", "s");
            for code in MODE_CODES {
                let _ = write!(header, " {code:>10}");
            }
            let _ = writeln!(out, "{header}");
            for row in &self.failure_table {
                let mut line = format!("  {:<16}{:>4}{:>4}", row.policy_tag, row.n, row.s);
                for (c, s) in row.counts.iter().zip(&row.shares) {
                    let _ = write!(line, " {:>4}({:>3.0}%)", c, 100.0 * s);
                }
                let _ = writeln!(out, "{line}");
            }
        }
        out
    }
}

pub fn compare_report(args: &CompareArgs) -> CliResult<CompareReport> {
    let a = compare_input(&args.a)?;
    let b = compare_input(&args.b)?;
    if !(args.mass > 0.0 && args.mass < 1.0) || args.samples == 0 {
        return Err(CliError::Usage("--mass must lie in (0, 1) and --samples must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let comparison = bayes::compare((a.s, a.n), (b.s, b.n), args.samples, args.mass, &mut rng)?;
    let records: Vec<EvalRecord> = [&a, &b].iter().filter_map(|x| x.record.clone()).collect();
    let failure_table = bayes::failure_table(&records)?;
    Ok(CompareReport {
        format_version: persist::FORMAT_VERSION,
        agrees: comparison.agrees(),
        a,
        b,
        seed: args.seed,
        comparison,
        failure_table,
    })
}

fn compare(args: &CompareArgs) -> CliResult<()> {
    let report = compare_report(args)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        persist::save_json(out, &report)?;
        write_snapshot(out, false, "compare", None, args, serde_json::Value::Null)?;
    }
    Ok(())
}

fn export_traces(args: &ExportTracesArgs) -> CliResult<()> {
    if args.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let rec = persist::load_record(&args.record)?;
    let traces = TraceFile::from_record(&rec);
    persist::save_json(&args.out, &traces)?;
    if let Some(svg) = &args.svg {
        persist::write_atomic(svg, traces.to_svg(args.size).as_bytes())?;
    }
    println!("{}: {} traces", args.out.display(), traces.traces.len());
    Ok(())
}
