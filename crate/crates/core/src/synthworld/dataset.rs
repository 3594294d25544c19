//! Demonstration records, dataset assembly and on-disk layout.
//!
//! A dataset directory holds `manifest.txt` (one `key=value` per line) and
//! `samples/NNNNNN.bin`, one binary record per demonstration:
//!
//! ```text
//! magic "EMBFDEMO" | u32 version | u32 frames | u32 size | u32 card_size
//! f32 video[frames·size·size·2]        (frame, row, column, channel)
//! u32 goal_token
//! f32 motion[frames·4]                 (x, y, angle, grip) per frame
//! f32 object[frames·3]                 (x, y, angle) per frame
//! f32 card[card_size·card_size]
//! u32 task_class | u32 embodiment | u32 background | u64 seed
//! ```
//!
//! All integers and floats are little-endian. Positions are in pixels,
//! angles in radians.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::geometry::{rot6d_from_pose, Pose};

use super::render::{render_background, render_card, render_frames};
use super::spec::{sample_task, EmbodimentKind, EmbodimentSpec, TaskClass, TaskSpec, WorldConfig};
use super::SynthError;

const RECORD_MAGIC: &[u8; 8] = b"EMBFDEMO";
const RECORD_VERSION: u32 = 1;
const MANIFEST_FORMAT: &str = "embodiflow-dataset";

/// Per-frame width of the planar motion annotation.
pub const MOTION_COLS: usize = 4;
/// Per-frame width of the planar object annotation.
pub const OBJECT_COLS: usize = 3;
/// Per-frame width of the lifted motion encoding: position (3), 6-D rotation, grip.
pub const LIFTED_MOTION_COLS: usize = 10;
/// Per-frame width of the lifted object encoding: position (3), 6-D rotation.
pub const LIFTED_OBJECT_COLS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test].into_iter().find(|x| x.name() == s)
    }
}

/// One rendered demonstration with its annotations and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoSample {
    pub world: WorldConfig,
    pub video: Vec<f32>,
    pub goal_token: usize,
    pub motion: Vec<f32>,
    pub object: Vec<f32>,
    pub card: Vec<f32>,
    pub task_class: TaskClass,
    pub embodiment: EmbodimentKind,
    pub background_id: usize,
    pub seed: u64,
}

fn lift(x: f64, y: f64, angle: f64, size: f64, out: &mut Vec<f64>) {
    out.extend([2.0 * x / size - 1.0, 2.0 * y / size - 1.0, 0.0]);
    out.extend(rot6d_from_pose(&Pose::planar(0.0, 0.0, angle)));
}

impl DemoSample {
    pub fn video_f64(&self) -> Vec<f64> {
        self.video.iter().map(|&v| v as f64).collect()
    }

    pub fn card_f64(&self) -> Vec<f64> {
        self.card.iter().map(|&v| v as f64).collect()
    }

    pub fn background(&self) -> Vec<f64> {
        render_background(self.background_id, self.world.size)
    }

    /// Motion lifted to the 3-D layout: normalized position with zero depth,
    /// 6-D rotation of the planar angle, grip.
    pub fn lifted_motion(&self) -> Vec<f64> {
        let s = self.world.size as f64;
        let mut out = Vec::with_capacity(self.world.frames * LIFTED_MOTION_COLS);
        for r in self.motion.chunks_exact(MOTION_COLS) {
            lift(r[0] as f64, r[1] as f64, r[2] as f64, s, &mut out);
            out.push(r[3] as f64);
        }
        out
    }

    /// Object trajectory lifted to position (3) and 6-D rotation.
    pub fn lifted_object(&self) -> Vec<f64> {
        let s = self.world.size as f64;
        let mut out = Vec::with_capacity(self.world.frames * LIFTED_OBJECT_COLS);
        for r in self.object.chunks_exact(OBJECT_COLS) {
            lift(r[0] as f64, r[1] as f64, r[2] as f64, s, &mut out);
        }
        out
    }
}

/// Renders one demonstration. The card is a noisy render seeded from
/// `card_seed`.
pub fn render_demo(
    task: &TaskSpec,
    emb: &EmbodimentSpec,
    background_id: usize,
    world: &WorldConfig,
    card_seed: u64,
) -> Result<DemoSample, SynthError> {
    world.validate()?;
    if background_id >= WorldConfig::BACKGROUNDS {
        return Err(SynthError::Config(format!("background id {background_id} out of range")));
    }
    let (plan, video) = render_frames(task, emb, background_id, world);
    let card = render_card(emb, world, Some(card_seed));
    Ok(DemoSample {
        world: *world,
        video: video.iter().map(|&v| v as f32).collect(),
        goal_token: task.goal_token,
        motion: plan.effector.iter().flat_map(|e| [e.0 as f32, e.1 as f32, e.2 as f32, e.3 as f32]).collect(),
        object: plan.object.iter().flat_map(|o| [o.0 as f32, o.1 as f32, o.2 as f32]).collect(),
        card: card.iter().map(|&v| v as f32).collect(),
        task_class: task.task_class,
        embodiment: emb.kind,
        background_id,
        seed: task.seed,
    })
}

/// What to generate: every listed task class is rendered with every listed
/// embodiment for `seeds_per_cell` task instances. All embodiments of one
/// instance share the object motion and background and land in the same
/// split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub world: WorldConfig,
    pub tasks: Vec<TaskClass>,
    pub embodiments: Vec<EmbodimentKind>,
    pub seeds_per_cell: usize,
    pub base_seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            tasks: TaskClass::ALL.to_vec(),
            embodiments: EmbodimentKind::ALL.to_vec(),
            seeds_per_cell: 50,
            base_seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.world.validate()?;
        if self.tasks.is_empty() || self.embodiments.is_empty() || self.seeds_per_cell == 0 {
            return Err(SynthError::Config("dataset would be empty: every cell count must be positive".into()));
        }
        let (nv, nt) = self.split_counts();
        if nv + nt >= self.seeds_per_cell {
            return Err(SynthError::Config(format!(
                "split fractions leave no training seeds ({} per cell)",
                self.seeds_per_cell
            )));
        }
        Ok(())
    }

    fn split_counts(&self) -> (usize, usize) {
        let n = self.seeds_per_cell as f64;
        ((self.val_fraction * n).round() as usize, (self.test_fraction * n).round() as usize)
    }

    fn split_of(&self, seed_index: usize) -> Split {
        let (nv, nt) = self.split_counts();
        let train = self.seeds_per_cell - nv - nt;
        if seed_index < train {
            Split::Train
        } else if seed_index < train + nv {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Seed of task instance `seed_index` for `task`.
    pub fn task_seed(&self, task: TaskClass, seed_index: usize) -> u64 {
        splitmix(self.base_seed ^ splitmix((task.index() as u64) << 32 | seed_index as u64))
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<DemoSample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        let sdir = dir.join("samples");
        fs::create_dir_all(&sdir)?;
        let c = &self.config;
        let list = |v: Vec<&str>| v.join(",");
        let mut m = String::new();
        m += &format!("format={MANIFEST_FORMAT}\nversion={RECORD_VERSION}\n");
        m += &format!("frames={}\nsize={}\ncard_size={}\n", c.world.frames, c.world.size, c.world.card_size);
        m += &format!("tasks={}\n", list(c.tasks.iter().map(|t| t.name()).collect()));
        m += &format!("embodiments={}\n", list(c.embodiments.iter().map(|e| e.name()).collect()));
        m += &format!("seeds_per_cell={}\nbase_seed={}\n", c.seeds_per_cell, c.base_seed);
        m += &format!("val_fraction={}\ntest_fraction={}\ncount={}\n", c.val_fraction, c.test_fraction, self.samples.len());
        for (i, (s, split)) in self.samples.iter().zip(&self.splits).enumerate() {
            m += &format!(
                "sample.{i:06}={} task={} embodiment={} background={} seed={}\n",
                split.name(),
                s.task_class,
                s.embodiment,
                s.background_id,
                s.seed
            );
            fs::write(sdir.join(format!("{i:06}.bin")), encode_record(s))?;
        }
        let mut f = fs::File::create(dir.join("manifest.txt"))?;
        f.write_all(m.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut kv = std::collections::BTreeMap::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SynthError::Manifest { line: i + 1, message: "expected key=value".into() })?;
            if let Some(idx) = k.strip_prefix("sample.") {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| SynthError::Manifest { line: i + 1, message: format!("bad sample index `{idx}`") })?;
                let split = v
                    .split_whitespace()
                    .next()
                    .and_then(Split::parse)
                    .ok_or_else(|| SynthError::Manifest { line: i + 1, message: format!("bad split in `{v}`") })?;
                entries.push((idx, split));
            } else {
                kv.insert(k.to_string(), (i + 1, v.to_string()));
            }
        }
        let get = |k: &str| -> Result<&(usize, String), SynthError> {
            kv.get(k).ok_or_else(|| SynthError::Manifest { line: 0, message: format!("missing key `{k}`") })
        };
        fn num<T: std::str::FromStr>(e: &(usize, String), k: &str) -> Result<T, SynthError> {
            e.1.parse().map_err(|_| SynthError::Manifest { line: e.0, message: format!("bad value for `{k}`: `{}`", e.1) })
        }
        if get("format")?.1 != MANIFEST_FORMAT {
            return Err(SynthError::Manifest { line: get("format")?.0, message: "not a dataset manifest".into() });
        }
        let version: u32 = num(get("version")?, "version")?;
        if version != RECORD_VERSION {
            return Err(SynthError::Manifest { line: get("version")?.0, message: format!("unsupported version {version}") });
        }
        let list = |k: &str| -> Result<Vec<String>, SynthError> {
            Ok(get(k)?.1.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        };
        let config = DatasetConfig {
            world: WorldConfig {
                frames: num(get("frames")?, "frames")?,
                size: num(get("size")?, "size")?,
                card_size: num(get("card_size")?, "card_size")?,
            },
            tasks: list("tasks")?.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
            embodiments: list("embodiments")?.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
            seeds_per_cell: num(get("seeds_per_cell")?, "seeds_per_cell")?,
            base_seed: num(get("base_seed")?, "base_seed")?,
            val_fraction: num(get("val_fraction")?, "val_fraction")?,
            test_fraction: num(get("test_fraction")?, "test_fraction")?,
        };
        config.validate()?;
        let count: usize = num(get("count")?, "count")?;
        entries.sort_by_key(|e| e.0);
        if entries.len() != count || entries.iter().enumerate().any(|(i, e)| e.0 != i) {
            return Err(SynthError::Manifest { line: 0, message: format!("expected samples 0..{count}") });
        }
        let mut samples = Vec::with_capacity(count);
        for i in 0..count {
            let bytes = fs::read(dir.join("samples").join(format!("{i:06}.bin")))?;
            samples.push(decode_record(&bytes, i, &config.world)?);
        }
        Ok(Self { config, samples, splits: entries.into_iter().map(|e| e.1).collect() })
    }
}

/// Renders the full dataset. Deterministic in the config.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let mut samples = Vec::new();
    let mut splits = Vec::new();
    for seed_index in 0..config.seeds_per_cell {
        for &task_class in &config.tasks {
            let seed = config.task_seed(task_class, seed_index);
            let task = sample_task(seed, Some(task_class), &config.world);
            let background = seed_index % WorldConfig::BACKGROUNDS;
            for &kind in &config.embodiments {
                let emb = EmbodimentSpec::canonical(kind, &config.world);
                let card_seed = splitmix(seed ^ (kind.index() as u64 + 1));
                samples.push(render_demo(&task, &emb, background, &config.world, card_seed)?);
                splits.push(config.split_of(seed_index));
            }
        }
    }
    Ok(Dataset { config: config.clone(), samples, splits })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_record(s: &DemoSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * (s.video.len() + s.motion.len() + s.object.len() + s.card.len()));
    out.extend_from_slice(RECORD_MAGIC);
    put_u32(&mut out, RECORD_VERSION as usize);
    put_u32(&mut out, s.world.frames);
    put_u32(&mut out, s.world.size);
    put_u32(&mut out, s.world.card_size);
    put_f32s(&mut out, &s.video);
    put_u32(&mut out, s.goal_token);
    put_f32s(&mut out, &s.motion);
    put_f32s(&mut out, &s.object);
    put_f32s(&mut out, &s.card);
    put_u32(&mut out, s.task_class.index());
    put_u32(&mut out, s.embodiment.index());
    put_u32(&mut out, s.background_id);
    out.extend_from_slice(&s.seed.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    sample: usize,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> SynthError {
        SynthError::Corrupt { sample: self.sample, offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], SynthError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, SynthError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, SynthError> {
        let at = self.pos;
        let v: Vec<f32> =
            self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(SynthError::Corrupt { sample: self.sample, offset: at + 4 * k, message: "non-finite value".into() });
        }
        Ok(v)
    }
}

pub fn decode_record(bytes: &[u8], sample: usize, world: &WorldConfig) -> Result<DemoSample, SynthError> {
    let mut r = Reader { bytes, pos: 0, sample };
    if r.take(8)? != RECORD_MAGIC {
        return Err(SynthError::Corrupt { sample, offset: 0, message: "bad magic".into() });
    }
    let version = r.u32()?;
    if version != RECORD_VERSION as usize {
        return Err(r.err(format!("unsupported record version {version}")));
    }
    let dims = (r.u32()?, r.u32()?, r.u32()?);
    if dims != (world.frames, world.size, world.card_size) {
        return Err(r.err(format!("record dims {dims:?} disagree with manifest")));
    }
    let video = r.f32s(world.video_len())?;
    let goal_token = r.u32()?;
    let motion = r.f32s(world.frames * MOTION_COLS)?;
    let object = r.f32s(world.frames * OBJECT_COLS)?;
    let card = r.f32s(world.card_size * world.card_size)?;
    let t = r.u32()?;
    let task_class = TaskClass::from_index(t).ok_or_else(|| r.err(format!("bad task class {t}")))?;
    let e = r.u32()?;
    let embodiment = EmbodimentKind::from_index(e).ok_or_else(|| r.err(format!("bad embodiment {e}")))?;
    let background_id = r.u32()?;
    let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(DemoSample { world: *world, video, goal_token, motion, object, card, task_class, embodiment, background_id, seed })
}
