use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SynthError;

/// Number of goal-token synonyms per task class.
pub const GOAL_SYNONYMS: usize = 4;
/// Size of the goal-token vocabulary.
pub const GOAL_VOCAB: usize = TaskClass::ALL.len() * GOAL_SYNONYMS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskClass {
    Grasp,
    PickPlace,
    Pour,
}

impl TaskClass {
    pub const ALL: [TaskClass; 3] = [TaskClass::Grasp, TaskClass::PickPlace, TaskClass::Pour];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskClass::Grasp => "grasp",
            TaskClass::PickPlace => "pick_place",
            TaskClass::Pour => "pour",
        }
    }
}

impl fmt::Display for TaskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskClass {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SynthError::Config(format!("unknown task class `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmbodimentKind {
    FiveFinger,
    ParallelJaw,
    Suction,
    ThreeFinger,
}

impl EmbodimentKind {
    pub const ALL: [EmbodimentKind; 4] =
        [EmbodimentKind::FiveFinger, EmbodimentKind::ParallelJaw, EmbodimentKind::Suction, EmbodimentKind::ThreeFinger];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbodimentKind::FiveFinger => "five_finger",
            EmbodimentKind::ParallelJaw => "parallel_jaw",
            EmbodimentKind::Suction => "suction",
            EmbodimentKind::ThreeFinger => "three_finger",
        }
    }

    /// Default grayscale intensity of the morphology.
    pub fn default_tint(self) -> f64 {
        match self {
            EmbodimentKind::FiveFinger => 0.95,
            EmbodimentKind::ParallelJaw => 0.7,
            EmbodimentKind::Suction => 0.55,
            EmbodimentKind::ThreeFinger => 0.82,
        }
    }
}

impl fmt::Display for EmbodimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbodimentKind {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| SynthError::Config(format!("unknown embodiment `{s}`")))
    }
}

/// Resolution and length of rendered demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    pub frames: usize,
    pub size: usize,
    pub card_size: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { frames: 16, size: 32, card_size: 32 }
    }
}

impl WorldConfig {
    pub const CHANNELS: usize = 2;
    pub const BACKGROUNDS: usize = 3;

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames < 4 {
            return Err(SynthError::Config(format!("need at least 4 frames, got {}", self.frames)));
        }
        if self.size < 16 || self.size % 8 != 0 || self.card_size < 16 || self.card_size % 8 != 0 {
            return Err(SynthError::Config(format!(
                "frame size {} and card size {} must be multiples of 8, at least 16",
                self.size, self.card_size
            )));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.size * self.size * Self::CHANNELS
    }

    pub fn video_len(&self) -> usize {
        self.frames * self.frame_len()
    }
}

/// Shape of the manipulated object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectShape {
    Bar,
    Capsule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectParams {
    /// Start position in pixels.
    pub start: (f64, f64),
    /// Final position in pixels.
    pub target: (f64, f64),
    /// Final rotation in radians (nonzero only for pouring).
    pub target_angle: f64,
    pub shape: ObjectShape,
    pub color_id: usize,
    /// Half length and half width of the object, pixels.
    pub half_extent: (f64, f64),
}

/// One task instance. The task class fixes the family of object motion; the
/// parameters fix the instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task_class: TaskClass,
    pub goal_token: usize,
    pub object: ObjectParams,
    /// End-effector start position, pixels.
    pub effector_start: (f64, f64),
    pub seed: u64,
}

impl TaskSpec {
    /// Per-frame object pose `(x, y, angle)` for `frames` frames.
    pub fn object_path(&self, frames: usize) -> Vec<(f64, f64, f64)> {
        super::render::plan(self, frames).object
    }
}

/// Color levels of the object channel, indexed by `color_id`.
pub const OBJECT_COLORS: [f64; 4] = [0.55, 0.7, 0.85, 1.0];

/// Draws a task instance. Deterministic in `(seed, class)`; a `None` class
/// is drawn from the seed.
pub fn sample_task(seed: u64, class: Option<TaskClass>, world: &WorldConfig) -> TaskSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0000_0000_0001);
    let task_class = class.unwrap_or_else(|| TaskClass::ALL[rng.random_range(0..TaskClass::ALL.len())]);
    let s = world.size as f64;
    let goal_token = task_class.index() * GOAL_SYNONYMS + rng.random_range(0..GOAL_SYNONYMS);
    let half_extent = (0.18 * s, 0.08 * s);
    let margin = 0.22 * s;
    let lift = 0.25 * s;
    let shape = if rng.random_bool(0.5) { ObjectShape::Bar } else { ObjectShape::Capsule };
    let color_id = rng.random_range(0..OBJECT_COLORS.len());
    // Objects rest in the lower part of the frame.
    let table_lo = 0.6 * s;
    let table_hi = s - margin;
    let (start, target, target_angle) = match task_class {
        TaskClass::Grasp => {
            let x = rng.random_range(margin..s - margin);
            let y = rng.random_range(table_lo..table_hi);
            ((x, y), (x, y - lift), 0.0)
        }
        TaskClass::PickPlace => {
            let y = rng.random_range(table_lo..table_hi);
            let travel = rng.random_range(0.3 * s..0.45 * s);
            let x0 = rng.random_range(margin..s - margin - travel);
            let (a, b) = if rng.random_bool(0.5) { (x0, x0 + travel) } else { (x0 + travel, x0) };
            ((a, y), (b, y), 0.0)
        }
        TaskClass::Pour => {
            let x = rng.random_range(margin..s - margin);
            let y = rng.random_range(table_lo..table_hi);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let angle = sign * rng.random_range(75f64..100.0).to_radians();
            ((x, y), (x, y - 0.6 * lift), angle)
        }
    };
    let effector_start = (rng.random_range(margin..s - margin), rng.random_range(0.12 * s..0.3 * s));
    TaskSpec {
        task_class,
        goal_token,
        object: ObjectParams { start, target, target_angle, shape, color_id, half_extent },
        effector_start,
        seed,
    }
}

/// End-effector identity and appearance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbodimentSpec {
    pub kind: EmbodimentKind,
    /// Characteristic size in pixels.
    pub scale: f64,
    /// Grayscale intensity.
    pub tint: f64,
}

impl EmbodimentSpec {
    pub fn canonical(kind: EmbodimentKind, world: &WorldConfig) -> Self {
        Self { kind, scale: 0.3 * world.size as f64, tint: kind.default_tint() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_task() {
        let w = WorldConfig::default();
        assert_eq!(sample_task(9, None, &w), sample_task(9, None, &w));
        assert_eq!(sample_task(9, Some(TaskClass::Pour), &w), sample_task(9, Some(TaskClass::Pour), &w));
    }

    #[test]
    fn pour_rotates() {
        let w = WorldConfig::default();
        for seed in 0..20 {
            let t = sample_task(seed, Some(TaskClass::Pour), &w);
            let path = t.object_path(w.frames);
            let (lo, hi) = path.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.2), hi.max(p.2)));
            assert!(hi - lo > 1.0, "seed {seed}: rotation profile is constant");
        }
    }

    #[test]
    fn object_paths_stay_in_frame() {
        for w in [WorldConfig::default(), WorldConfig { frames: 8, size: 16, card_size: 32 }] {
            let s = w.size as f64;
            for seed in 0..1000 {
                let t = sample_task(seed, None, &w);
                let reach = t.object.half_extent.0;
                for (x, y, _) in t.object_path(w.frames) {
                    assert!(x - reach >= 0.0 && x + reach <= s && y - reach >= 0.0 && y + reach <= s, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for t in TaskClass::ALL {
            assert_eq!(t.name().parse::<TaskClass>().unwrap(), t);
        }
        for e in EmbodimentKind::ALL {
            assert_eq!(e.name().parse::<EmbodimentKind>().unwrap(), e);
        }
        assert!("walk".parse::<TaskClass>().is_err());
    }
}
