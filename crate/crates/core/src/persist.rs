//! On-disk formats.
//!
//! Text artifacts are pretty JSON with shortest round-trip float rendering.
//! Episode frames are stored column-wise; their float columns can instead go
//! to a little-endian `f64` payload file. Checkpoints are a JSON header
//! followed by raw little-endian tensors in the network's scalar width.
//! Every write goes to a temporary file in the target directory and is then
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expert::{Dataset, DatasetManifest};
use crate::harness::EvalRecord;
use crate::learner::{Activation, Adam, Dense, DiffusionPolicy, Mlp, PolicyConfig, TrainConfig, Trainer};
use crate::num::Scalar;
use crate::sim::StepEvents;
use crate::types::{BinaryGrid, Episode, EpisodeMeta, Frame, Observation, Outcome, SimConfig, Stage, NUM_SENSORS};

pub const FORMAT_VERSION: u32 = 1;

const CHECKPOINT_MAGIC: &[u8; 8] = b"HNGRCKPT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPISODE_DIR: &str = "episodes";

/// SHA-256 of the canonical JSON encoding, hex encoded.
pub fn episode_hash(ep: &Episode) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(ep)?)))
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn format_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes `bytes` to a sibling temporary file, syncs it, and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let written = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Loads a JSON artifact after checking its `format_version`.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    let probe: VersionProbe = serde_json::from_slice(&bytes).map_err(|e| format_error(path, e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_slice(&bytes).map_err(|e| format_error(path, e.to_string()))
}

pub fn save_record(path: &Path, rec: &EvalRecord) -> Result<()> {
    rec.check()?;
    save_json(path, rec)
}

pub fn load_record(path: &Path) -> Result<EvalRecord> {
    let rec: EvalRecord = load_json(path)?;
    rec.check()?;
    Ok(rec)
}

// ---------------------------------------------------------------------------
// episodes and datasets

/// How an episode's float columns are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Text,
    Binary,
}

/// Flat row-major float array with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatArray {
    pub shape: Vec<usize>,
    /// Empty when the values live in the binary payload.
    #[serde(default)]
    pub data: Vec<f64>,
}

impl FloatArray {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Column-wise episode layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub format_version: u32,
    pub meta: EpisodeMeta,
    pub frames: usize,
    /// `[rows, cols, channels]`.
    pub scene_shape: [usize; 3],
    pub wrist_shape: [usize; 3],
    /// Packed grid words, `frames x words_per_grid`.
    pub scene_words: Vec<u64>,
    pub wrist_words: Vec<u64>,
    pub proprio: FloatArray,
    pub instr: Option<FloatArray>,
    pub action: FloatArray,
    pub stages: Vec<Stage>,
    pub events: Vec<StepEvents>,
    /// File name of the little-endian `f64` payload, relative to the record.
    pub payload: Option<String>,
}

fn grid_shape(g: &BinaryGrid) -> [usize; 3] {
    [g.rows, g.cols, g.channels]
}

impl EpisodeRecord {
    pub fn from_episode(ep: &Episode) -> Result<Self> {
        let n = ep.frames.len();
        let first = ep.frames.first().map(|f| &f.obs);
        let scene_shape = first.map_or([0; 3], |o| grid_shape(&o.scene));
        let wrist_shape = first.map_or([0; 3], |o| grid_shape(&o.wrist));
        let instrumented = first.is_some_and(|o| o.instrumented());
        let mut rec = Self {
            format_version: FORMAT_VERSION,
            meta: ep.meta.clone(),
            frames: n,
            scene_shape,
            wrist_shape,
            scene_words: Vec::new(),
            wrist_words: Vec::new(),
            proprio: FloatArray { shape: vec![n, 4], data: Vec::with_capacity(4 * n) },
            instr: instrumented.then(|| FloatArray {
                shape: vec![n, NUM_SENSORS],
                data: Vec::with_capacity(NUM_SENSORS * n),
            }),
            action: FloatArray { shape: vec![n, 4], data: Vec::with_capacity(4 * n) },
            stages: Vec::with_capacity(n),
            events: Vec::with_capacity(n),
            payload: None,
        };
        for f in &ep.frames {
            if grid_shape(&f.obs.scene) != scene_shape || grid_shape(&f.obs.wrist) != wrist_shape {
                return Err(Error::shape("grid shape changes within an episode"));
            }
            rec.scene_words.extend_from_slice(f.obs.scene.words());
            rec.wrist_words.extend_from_slice(f.obs.wrist.words());
            rec.proprio.data.extend_from_slice(&f.obs.proprio);
            match (&mut rec.instr, &f.obs.instr) {
                (Some(col), Some(v)) => col.data.extend_from_slice(v),
                (None, None) => {}
                _ => return Err(Error::contract("instrumentation present on only some frames")),
            }
            rec.action.data.extend_from_slice(&f.action);
            rec.stages.push(f.stage);
            rec.events.push(f.events);
        }
        Ok(rec)
    }

    fn float_columns_mut(&mut self) -> Vec<&mut FloatArray> {
        let mut cols = vec![&mut self.proprio];
        if let Some(i) = self.instr.as_mut() {
            cols.push(i);
        }
        cols.push(&mut self.action);
        cols
    }

    pub fn into_episode(self) -> Result<Episode> {
        let n = self.frames;
        let words = |shape: [usize; 3]| (shape[0] * shape[1] * shape[2]).div_ceil(64);
        let (sw, ww) = (words(self.scene_shape), words(self.wrist_shape));
        let expect = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::shape(format!("episode record column {what} has the wrong length")))
            }
        };
        expect(self.scene_words.len() == n * sw, "scene")?;
        expect(self.wrist_words.len() == n * ww, "wrist")?;
        expect(self.proprio.shape == [n, 4] && self.proprio.data.len() == 4 * n, "proprio")?;
        expect(self.action.shape == [n, 4] && self.action.data.len() == 4 * n, "action")?;
        if let Some(i) = &self.instr {
            expect(i.shape == [n, NUM_SENSORS] && i.data.len() == NUM_SENSORS * n, "instr")?;
        }
        expect(self.stages.len() == n && self.events.len() == n, "stages/events")?;
        let [sr, sc, sch] = self.scene_shape;
        let [wr, wc, wch] = self.wrist_shape;
        let mut frames = Vec::with_capacity(n);
        for k in 0..n {
            let row4 = |a: &FloatArray| -> [f64; 4] { a.data[4 * k..4 * k + 4].try_into().expect("four values") };
            frames.push(Frame {
                obs: Observation {
                    scene: BinaryGrid::from_words(sr, sc, sch, self.scene_words[k * sw..(k + 1) * sw].to_vec())?,
                    wrist: BinaryGrid::from_words(wr, wc, wch, self.wrist_words[k * ww..(k + 1) * ww].to_vec())?,
                    proprio: row4(&self.proprio),
                    instr: self.instr.as_ref().map(|i| {
                        i.data[NUM_SENSORS * k..NUM_SENSORS * (k + 1)]
                            .try_into()
                            .expect("sensor row")
                    }),
                },
                action: row4(&self.action),
                stage: self.stages[k],
                events: self.events[k],
            });
        }
        Ok(Episode { meta: self.meta, frames })
    }
}

fn f64_payload(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn parse_f64_payload(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(format_error(path, "payload length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Writes `ep` to `path` (JSON) and, for [`Payload::Binary`], its float
/// columns to `<path>.f64` next to it.
pub fn save_episode(path: &Path, ep: &Episode, payload: Payload) -> Result<()> {
    let mut rec = EpisodeRecord::from_episode(ep)?;
    if payload == Payload::Binary {
        let name = format!(
            "{}.f64",
            path.file_name()
                .ok_or_else(|| Error::invalid("episode path has no file name"))?
                .to_string_lossy()
        );
        let mut flat = Vec::new();
        for col in rec.float_columns_mut() {
            flat.append(&mut col.data);
        }
        write_atomic(&path.with_file_name(&name), &f64_payload(&flat))?;
        rec.payload = Some(name);
    }
    save_json(path, &rec)
}

pub fn load_episode(path: &Path) -> Result<Episode> {
    let mut rec: EpisodeRecord = load_json(path)?;
    if let Some(name) = rec.payload.take() {
        let payload_path = path.with_file_name(&name);
        let values = parse_f64_payload(&payload_path, &fs::read(&payload_path)?)?;
        let mut at = 0;
        for col in rec.float_columns_mut() {
            let n = col.numel();
            if !col.data.is_empty() || at + n > values.len() {
                return Err(format_error(&payload_path, "payload does not match the declared shapes"));
            }
            col.data = values[at..at + n].to_vec();
            at += n;
        }
        if at != values.len() {
            return Err(format_error(&payload_path, "payload has trailing values"));
        }
    }
    rec.into_episode()
}

fn episode_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(EPISODE_DIR).join(format!("{index:05}.json"))
}

/// Writes a dataset directory: `manifest.json` plus one record per episode.
/// An existing dataset is only replaced when `overwrite` is set.
pub fn save_dataset(dir: &Path, ds: &Dataset, payload: Payload, overwrite: bool) -> Result<()> {
    if ds.manifest.entries.len() != ds.episodes.len() {
        return Err(Error::contract("manifest and episode list differ in length"));
    }
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        if !overwrite {
            return Err(Error::invalid(format!("{} already holds a dataset", dir.display())));
        }
        fs::remove_file(&manifest)?;
        let episodes = dir.join(EPISODE_DIR);
        if episodes.exists() {
            fs::remove_dir_all(episodes)?;
        }
    }
    fs::create_dir_all(dir.join(EPISODE_DIR))?;
    for (entry, ep) in ds.manifest.entries.iter().zip(&ds.episodes) {
        save_episode(&episode_file(dir, entry.index), ep, payload)?;
    }
    // the manifest goes last so a half-written directory never looks complete
    save_json(&manifest, &ds.manifest)
}

/// Loads a dataset directory and verifies every episode against its manifest hash.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = load_json(&manifest_path)?;
    if manifest.total != manifest.entries.len() {
        return Err(format_error(&manifest_path, "total does not match the number of entries"));
    }
    let mut episodes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = episode_file(dir, entry.index);
        let ep = load_episode(&path)?;
        if episode_hash(&ep)? != entry.hash {
            return Err(format_error(&path, "episode hash differs from the manifest"));
        }
        episodes.push(ep);
    }
    Ok(Dataset { manifest, episodes })
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha20Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha20Rng> {
        let bad = |what: &str| Error::invalid(format!("bad RNG state: {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed is not hex"))?
            .try_into()
            .map_err(|_| bad("seed is not 32 bytes"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word position"))?;
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// `"f32"` or `"f64"`; width of every stored tensor value.
    pub scalar: String,
    pub sim: SimConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub obs_len: usize,
    /// Network input length, the same as `obs_len + 64 + time_embed_dim`.
    pub input_len: usize,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub schedule_betas: Vec<f64>,
    pub step: u64,
    pub adam: AdamState,
    pub rng: RngState,
    pub tensors: Vec<TensorInfo>,
}

/// Everything needed to resume training or to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub sim: SimConfig,
    pub policy: DiffusionPolicy<T>,
    pub adam: Adam<T>,
    pub train: TrainConfig,
    pub rng: ChaCha20Rng,
    pub step: u64,
}

fn push_scalars<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    if T::NAME == "f32" {
        out.extend(values.iter().flat_map(|v| (v.to_f64_lossy() as f32).to_le_bytes()));
    } else {
        out.extend(values.iter().flat_map(|v| v.to_f64_lossy().to_le_bytes()));
    }
}

fn read_scalars<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    if T::NAME == "f32" {
        bytes
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
            .collect()
    } else {
        bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect()
    }
}

fn scalar_width(name: &str) -> Option<usize> {
    match name {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_trainer(trainer: &Trainer<T>, sim: &SimConfig) -> Self {
        Self {
            sim: sim.clone(),
            policy: trainer.policy.clone(),
            adam: trainer.adam.clone(),
            train: trainer.train.clone(),
            rng: trainer.rng.clone(),
            step: trainer.step,
        }
    }

    pub fn into_trainer(self) -> Result<Trainer<T>> {
        Trainer::resume(self.policy, self.adam, self.train, self.rng, self.step)
    }

    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (k, l) in self.policy.net.layers.iter().enumerate() {
            out.push((format!("layer{k}.w"), &l.w));
            out.push((format!("layer{k}.b"), &l.b));
        }
        for (s, m) in self.adam.m.iter().enumerate() {
            out.push((format!("adam.m{s}"), m));
        }
        for (s, v) in self.adam.v.iter().enumerate() {
            out.push((format!("adam.v{s}"), v));
        }
        out
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            scalar: T::NAME.to_string(),
            sim: self.sim.clone(),
            policy: self.policy.config.clone(),
            train: self.train.clone(),
            obs_len: self.policy.obs_len,
            input_len: self.policy.net.input_len(),
            layer_sizes: self.policy.net.sizes(),
            activation: self.policy.net.activation,
            schedule_betas: self.policy.schedule.betas.iter().map(|b| b.to_f64_lossy()).collect(),
            step: self.step,
            adam: AdamState {
                beta1: self.adam.beta1.to_f64_lossy(),
                beta2: self.adam.beta2.to_f64_lossy(),
                eps: self.adam.eps.to_f64_lossy(),
                t: self.adam.t,
            },
            rng: RngState::capture(&self.rng),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, v)| TensorInfo { name, len: v.len() })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.policy.net.param_count() * 3);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, values) in self.tensors() {
            push_scalars(&mut out, values);
        }
        Ok(out)
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, body) = split_checkpoint(bytes, path)?;
        if header.scalar != T::NAME {
            return Err(format_error(
                path,
                format!("checkpoint stores {} values, {} requested", header.scalar, T::NAME),
            ));
        }
        let width = scalar_width(&header.scalar).expect("checked by split_checkpoint");
        let mut at = 0;
        let mut take = |info: &TensorInfo, name: &str, len: usize| -> Result<Vec<T>> {
            if info.name != name || info.len != len {
                return Err(format_error(path, format!("expected tensor {name} of length {len}, found {}", info.name)));
            }
            let end = at + len * width;
            let values = read_scalars::<T>(&body[at..end]);
            at = end;
            Ok(values)
        };
        let sizes = &header.layer_sizes;
        if sizes.len() < 2 {
            return Err(format_error(path, "network needs at least two layer sizes"));
        }
        let layers_n = sizes.len() - 1;
        if header.tensors.len() != 6 * layers_n {
            return Err(format_error(path, "tensor count does not match the layer count"));
        }
        let mut it = header.tensors.iter();
        let mut layers = Vec::with_capacity(layers_n);
        for k in 0..layers_n {
            let (i, o) = (sizes[k], sizes[k + 1]);
            let w = take(it.next().expect("counted"), &format!("layer{k}.w"), i * o)?;
            let b = take(it.next().expect("counted"), &format!("layer{k}.b"), o)?;
            layers.push(Dense { inputs: i, outputs: o, w, b });
        }
        let mut slots = |prefix: &str| -> Result<Vec<Vec<T>>> {
            (0..2 * layers_n)
                .map(|s| {
                    let len = if s % 2 == 0 { sizes[s / 2] * sizes[s / 2 + 1] } else { sizes[s / 2 + 1] };
                    take(it.next().expect("counted"), &format!("adam.{prefix}{s}"), len)
                })
                .collect()
        };
        let m = slots("m")?;
        let v = slots("v")?;
        if at != body.len() {
            return Err(format_error(path, "checkpoint has trailing bytes"));
        }
        let net = Mlp::from_layers(layers, header.activation)?;
        let policy = DiffusionPolicy::from_parts(header.policy.clone(), header.obs_len, net)?;
        if header.sim.feature_len(header.policy.instrumented) != header.obs_len {
            return Err(format_error(path, "observation length does not match the recorded sim config"));
        }
        let betas: Vec<f64> = policy.schedule.betas.iter().map(|b| b.to_f64_lossy()).collect();
        if betas != header.schedule_betas {
            return Err(format_error(path, "noise schedule differs from the recorded one"));
        }
        let mut adam = Adam::new(
            &policy.net,
            T::lit(header.adam.beta1),
            T::lit(header.adam.beta2),
            T::lit(header.adam.eps),
        )?;
        adam.t = header.adam.t;
        adam.m = m;
        adam.v = v;
        Ok(Self {
            sim: header.sim,
            policy,
            adam,
            train: header.train,
            rng: header.rng.restore()?,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

fn split_checkpoint<'a>(bytes: &'a [u8], path: &Path) -> Result<(CheckpointHeader, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(format_error(path, "not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + len {
        return Err(format_error(path, "truncated checkpoint header"));
    }
    let raw = &bytes[16..16 + len];
    let probe: VersionProbe = serde_json::from_slice(raw).map_err(|e| format_error(path, e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(raw).map_err(|e| format_error(path, e.to_string()))?;
    let width = scalar_width(&header.scalar)
        .ok_or_else(|| format_error(path, format!("unknown scalar type {:?}", header.scalar)))?;
    let body = &bytes[16 + len..];
    let expected: usize = header.tensors.iter().map(|t| t.len * width).sum();
    if body.len() != expected {
        return Err(format_error(
            path,
            format!("tensor data is {} bytes, header declares {expected}", body.len()),
        ));
    }
    Ok((header, body))
}

/// Reads only the header of a checkpoint file.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    Ok(split_checkpoint(&bytes, path)?.0)
}

// ---------------------------------------------------------------------------
// collar traces

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub outcome: Outcome,
    pub success: bool,
    /// Collar polyline at the start of the rollout, wrist-window coordinates.
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub format_version: u32,
    pub policy_tag: String,
    pub traces: Vec<Trace>,
}

impl TraceFile {
    pub fn from_record(rec: &EvalRecord) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            policy_tag: rec.policy_tag.clone(),
            traces: rec
                .rollouts
                .iter()
                .map(|r| Trace {
                    seed: r.seed,
                    outcome: r.outcome,
                    success: r.outcome.is_success(),
                    points: r.collar_trace.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        }
    }

    /// Overlay of all polylines: green for successes, red for failures.
    pub fn to_svg(&self, size: u32) -> String {
        let s = f64::from(size);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
             <title>{}</title>\n\
             <rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\" stroke=\"black\"/>\n",
            xml_escape(&self.policy_tag)
        );
        // failures first so successes stay visible on top
        let mut order: Vec<&Trace> = self.traces.iter().collect();
        order.sort_by_key(|t| t.success);
        for t in order {
            if t.points.is_empty() {
                continue;
            }
            let pts: Vec<String> = t
                .points
                .iter()
                .map(|[x, y]| format!("{:.2},{:.2}", x * s, (1.0 - y) * s))
                .collect();
            let colour = if t.success { "#2a9d3a" } else { "#d62828" };
            out.push_str(&format!(
                "<polyline data-seed=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" stroke-opacity=\"0.7\"/>\n",
                t.seed,
                pts.join(" ")
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
