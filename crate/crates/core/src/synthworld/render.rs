//! Kinematic planning and anti-aliased rasterization.
//!
//! Frames have two channels. Channel 0 holds the background and the
//! end-effector; channel 1 holds the object. Both are composited from
//! exact coverage estimated on an 8×8 sub-pixel grid.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{EmbodimentKind, EmbodimentSpec, ObjectShape, TaskClass, TaskSpec, WorldConfig, OBJECT_COLORS};

const SUBSAMPLES: usize = 8;

/// Intensity of each flat background, indexed by background id.
pub const BACKGROUND_LEVELS: [f64; 3] = [0.1, 0.2, 0.3];

/// Per-frame poses of the effector and the object.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// `(x, y, angle, grip)` per frame.
    pub effector: Vec<(f64, f64, f64, f64)>,
    /// `(x, y, angle)` per frame.
    pub object: Vec<(f64, f64, f64)>,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Approach, contact, manipulation, and (for pick-and-place) release and
/// retreat. The effector holds the object from the contact frame onward.
pub fn plan(task: &TaskSpec, frames: usize) -> Plan {
    let last = (frames - 1) as f64;
    let contact = (0.3 * last).round() as usize;
    let done = ((0.75 * last).round() as usize).max(contact + 1);
    let o = &task.object;
    let arc = 1.5 * o.half_extent.0;
    let mut effector = Vec::with_capacity(frames);
    let mut object = Vec::with_capacity(frames);
    for k in 0..frames {
        let s = smoothstep((k as f64 - contact as f64) / (done - contact) as f64);
        let ox = lerp(o.start.0, o.target.0, s);
        let mut oy = lerp(o.start.1, o.target.1, s);
        if task.task_class == TaskClass::PickPlace {
            oy -= arc * (PI * s).sin();
        }
        let oa = o.target_angle * s;
        object.push((ox, oy, oa));
        if k < contact {
            let a = smoothstep(k as f64 / contact as f64);
            effector.push((lerp(task.effector_start.0, o.start.0, a), lerp(task.effector_start.1, o.start.1, a), 0.0, 0.0));
        } else if k > done && task.task_class == TaskClass::PickPlace {
            let r = smoothstep((k - done) as f64 / (frames - 1 - done) as f64);
            effector.push((ox, oy - r * 2.0 * o.half_extent.0, 0.0, 0.0));
        } else {
            effector.push((ox, oy, oa, 1.0));
        }
    }
    Plan { effector, object }
}

#[derive(Clone, Copy, Debug)]
enum Prim {
    Disc { c: (f64, f64), r: f64 },
    /// Rectangle with center, half extents and rotation.
    Rect { c: (f64, f64), h: (f64, f64), a: f64 },
    /// Segment `p`–`q` thickened by `r`.
    Capsule { p: (f64, f64), q: (f64, f64), r: f64 },
}

impl Prim {
    fn contains(&self, (u, v): (f64, f64)) -> bool {
        match *self {
            Prim::Disc { c, r } => (u - c.0).powi(2) + (v - c.1).powi(2) <= r * r,
            Prim::Rect { c, h, a } => {
                let (s, co) = a.sin_cos();
                let (du, dv) = (u - c.0, v - c.1);
                let lu = co * du + s * dv;
                let lv = -s * du + co * dv;
                lu.abs() <= h.0 && lv.abs() <= h.1
            }
            Prim::Capsule { p, q, r } => {
                let (dx, dy) = (q.0 - p.0, q.1 - p.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 { (((u - p.0) * dx + (v - p.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (cx, cy) = (p.0 + t * dx, p.1 + t * dy);
                (u - cx).powi(2) + (v - cy).powi(2) <= r * r
            }
        }
    }
}

/// A union of primitives in unit local coordinates, placed in the image by
/// position, rotation and scale.
struct Shape {
    prims: Vec<Prim>,
    /// Radius of a disc around the origin containing every primitive.
    reach: f64,
}

impl Shape {
    fn new(prims: Vec<Prim>) -> Self {
        let reach = prims
            .iter()
            .map(|p| match *p {
                Prim::Disc { c, r } => c.0.hypot(c.1) + r,
                Prim::Rect { c, h, .. } => c.0.hypot(c.1) + h.0.hypot(h.1),
                Prim::Capsule { p, q, r } => p.0.hypot(p.1).max(q.0.hypot(q.1)) + r,
            })
            .fold(0.0, f64::max);
        Self { prims, reach }
    }

    fn contains(&self, pt: (f64, f64)) -> bool {
        self.prims.iter().any(|p| p.contains(pt))
    }
}

fn finger(angle_from_down: f64, len: f64, width: f64, base: (f64, f64)) -> Prim {
    let dir = (angle_from_down.sin(), angle_from_down.cos());
    Prim::Capsule { p: base, q: (base.0 + len * dir.0, base.1 + len * dir.1), r: width }
}

fn effector_shape(kind: EmbodimentKind) -> Shape {
    let prims = match kind {
        EmbodimentKind::FiveFinger => {
            let mut v = vec![Prim::Disc { c: (0.0, -0.18), r: 0.22 }];
            for deg in [-55.0f64, -25.0, 0.0, 25.0, 55.0] {
                v.push(finger(deg.to_radians(), 0.42, 0.055, (0.0, -0.18)));
            }
            v
        }
        EmbodimentKind::ParallelJaw => vec![
            Prim::Rect { c: (0.0, -0.4), h: (0.42, 0.08), a: 0.0 },
            Prim::Rect { c: (-0.34, -0.05), h: (0.07, 0.33), a: 0.0 },
            Prim::Rect { c: (0.34, -0.05), h: (0.07, 0.33), a: 0.0 },
        ],
        EmbodimentKind::Suction => vec![
            Prim::Rect { c: (0.0, -0.3), h: (0.06, 0.25), a: 0.0 },
            Prim::Disc { c: (0.0, 0.0), r: 0.2 },
        ],
        EmbodimentKind::ThreeFinger => {
            let mut v = vec![Prim::Disc { c: (0.0, 0.0), r: 0.14 }];
            for deg in [0.0f64, 120.0, 240.0] {
                v.push(finger(deg.to_radians(), 0.45, 0.07, (0.0, 0.0)));
            }
            v
        }
    };
    Shape::new(prims)
}

fn object_shape(shape: ObjectShape, half: (f64, f64)) -> Shape {
    match shape {
        ObjectShape::Bar => Shape::new(vec![Prim::Rect { c: (0.0, 0.0), h: half, a: 0.0 }]),
        ObjectShape::Capsule => {
            let d = half.0 - half.1;
            Shape::new(vec![Prim::Capsule { p: (-d, 0.0), q: (d, 0.0), r: half.1 }])
        }
    }
}

/// Adds `shape` placed at `(x, y, angle)` with `scale` into `cov` as
/// per-pixel coverage in `[0, 1]`.
fn rasterize(shape: &Shape, pose: (f64, f64, f64), scale: f64, size: usize, cov: &mut [f64]) {
    let (x, y, a) = pose;
    let (s, c) = a.sin_cos();
    let reach = shape.reach * scale + 1.0;
    let lo = |v: f64| ((v - reach).floor().max(0.0)) as usize;
    let hi = |v: f64| ((v + reach).ceil().min(size as f64)) as usize;
    let inv = 1.0 / scale;
    let step = 1.0 / SUBSAMPLES as f64;
    for py in lo(y)..hi(y) {
        for px in lo(x)..hi(x) {
            let mut hits = 0usize;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let wx = px as f64 + (sx as f64 + 0.5) * step - x;
                    let wy = py as f64 + (sy as f64 + 0.5) * step - y;
                    let u = (c * wx + s * wy) * inv;
                    let v = (-s * wx + c * wy) * inv;
                    if shape.contains((u, v)) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let k = py * size + px;
                cov[k] = (cov[k] + hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64).min(1.0);
            }
        }
    }
}

/// Flat background image for `background_id`.
pub fn render_background(background_id: usize, size: usize) -> Vec<f64> {
    vec![BACKGROUND_LEVELS[background_id % BACKGROUND_LEVELS.len()]; size * size]
}

/// Effector coverage mask for one pose.
pub fn effector_coverage(emb: &EmbodimentSpec, pose: (f64, f64, f64), size: usize) -> Vec<f64> {
    let mut cov = vec![0.0; size * size];
    rasterize(&effector_shape(emb.kind), pose, emb.scale, size, &mut cov);
    cov
}

/// Centroid of the effector shape in its local frame, pixels at `emb.scale`.
pub fn effector_local_centroid(emb: &EmbodimentSpec) -> (f64, f64) {
    let shape = effector_shape(emb.kind);
    let n = 400;
    let (mut su, mut sv, mut m) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let u = -shape.reach + (i as f64 + 0.5) * 2.0 * shape.reach / n as f64;
            let v = -shape.reach + (j as f64 + 0.5) * 2.0 * shape.reach / n as f64;
            if shape.contains((u, v)) {
                su += u;
                sv += v;
                m += 1.0;
            }
        }
    }
    (su / m * emb.scale, sv / m * emb.scale)
}

/// Rendered demonstration frames, `[frames, size, size, 2]` row-major.
pub fn render_frames(task: &TaskSpec, emb: &EmbodimentSpec, background_id: usize, world: &WorldConfig) -> (Plan, Vec<f64>) {
    let p = plan(task, world.frames);
    let n = world.size;
    let bg = render_background(background_id, n);
    let obj = object_shape(task.object.shape, task.object.half_extent);
    let eff = effector_shape(emb.kind);
    let color = OBJECT_COLORS[task.object.color_id % OBJECT_COLORS.len()];
    let mut out = vec![0.0; world.video_len()];
    let mut ecov = vec![0.0; n * n];
    let mut ocov = vec![0.0; n * n];
    for k in 0..world.frames {
        ecov.fill(0.0);
        ocov.fill(0.0);
        let (ex, ey, ea, _) = p.effector[k];
        rasterize(&eff, (ex, ey, ea), emb.scale, n, &mut ecov);
        rasterize(&obj, p.object[k], 1.0, n, &mut ocov);
        let frame = &mut out[k * world.frame_len()..(k + 1) * world.frame_len()];
        for i in 0..n * n {
            frame[2 * i] = bg[i] * (1.0 - ecov[i]) + emb.tint * ecov[i];
            frame[2 * i + 1] = color * ocov[i];
        }
    }
    (p, out)
}

/// Static image of an end-effector in canonical pose on a blank background.
/// A `noise_seed` jitters the tint and adds mild pixel noise, giving distinct
/// renders of the same morphology.
pub fn render_card(emb: &EmbodimentSpec, world: &WorldConfig, noise_seed: Option<u64>) -> Vec<f64> {
    let n = world.card_size;
    let scale = 0.6 * n as f64;
    let mut cov = vec![0.0; n * n];
    rasterize(&effector_shape(emb.kind), (n as f64 / 2.0, n as f64 / 2.0, 0.0), scale, n, &mut cov);
    match noise_seed {
        None => cov.iter().map(|c| c * emb.tint).collect(),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jitter = Normal::new(0.0, 0.04).expect("finite std");
            let pixel = Normal::new(0.0, 0.02).expect("finite std");
            let tint = (emb.tint * (1.0 + jitter.sample(&mut rng))).clamp(0.0, 1.0);
            cov.iter().map(|c| (c * tint + pixel.sample(&mut rng)).clamp(0.0, 1.0)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::spec::sample_task;

    fn moments(img: &[f64], size: usize, stride: usize, offset: usize) -> (f64, f64, f64, f64) {
        let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for py in 0..size {
            for px in 0..size {
                let w = img[(py * size + px) * stride + offset];
                m += w;
                sx += w * (px as f64 + 0.5);
                sy += w * (py as f64 + 0.5);
            }
        }
        let (cx, cy) = (sx / m, sy / m);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for py in 0..size {
            for px in 0..size {
                let w = img[(py * size + px) * stride + offset];
                let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                a += w * dx * dx;
                b += w * dx * dy;
                c += w * dy * dy;
            }
        }
        (cx, cy, 0.5 * (2.0 * b).atan2(a - c), m)
    }

    fn axis_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    #[test]
    fn object_channel_matches_plan() {
        for world in [WorldConfig::default(), WorldConfig { frames: 8, size: 16, card_size: 32 }] {
            for seed in 0..30 {
                let task = sample_task(seed, None, &world);
                let emb = EmbodimentSpec::canonical(EmbodimentKind::ALL[seed as usize % 4], &world);
                let (plan, frames) = render_frames(&task, &emb, 1, &world);
                for k in 0..world.frames {
                    let f = &frames[k * world.frame_len()..(k + 1) * world.frame_len()];
                    let (cx, cy, ang, _) = moments(f, world.size, 2, 1);
                    let (x, y, a) = plan.object[k];
                    assert!((cx - x).abs() < 0.5 && (cy - y).abs() < 0.5, "seed {seed} frame {k}");
                    assert!(axis_diff(ang, a) < 2f64.to_radians(), "{world:?} seed {seed} frame {k}: {ang} vs {a}");
                }
            }
        }
    }

    #[test]
    fn effector_channel_matches_plan() {
        let world = WorldConfig::default();
        for seed in 0..12 {
            let task = sample_task(seed, None, &world);
            let emb = EmbodimentSpec::canonical(EmbodimentKind::ALL[seed as usize % 4], &world);
            let (plan, _) = render_frames(&task, &emb, 0, &world);
            let (lu, lv) = effector_local_centroid(&emb);
            for k in 0..world.frames {
                let (x, y, a, _) = plan.effector[k];
                let cov = effector_coverage(&emb, (x, y, a), world.size);
                let (cx, cy, _, _) = moments(&cov, world.size, 1, 0);
                let (s, c) = a.sin_cos();
                let (ex, ey) = (x + c * lu - s * lv, y + s * lu + c * lv);
                assert!((cx - ex).abs() < 0.5 && (cy - ey).abs() < 0.5, "seed {seed} frame {k}");
            }
        }
    }

    #[test]
    fn values_in_unit_range() {
        let world = WorldConfig::default();
        let task = sample_task(3, None, &world);
        for kind in EmbodimentKind::ALL {
            let (_, f) = render_frames(&task, &EmbodimentSpec::canonical(kind, &world), 2, &world);
            assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn grip_flips() {
        let world = WorldConfig::default();
        for class in TaskClass::ALL {
            let p = plan(&sample_task(1, Some(class), &world), world.frames);
            let flips = p.effector.windows(2).filter(|w| w[0].3 != w[1].3).count();
            let expected = if class == TaskClass::PickPlace { 2 } else { 1 };
            assert_eq!(flips, expected, "{class}");
            assert_eq!(p.effector[0].3, 0.0);
        }
    }

    #[test]
    fn cards_differ_between_embodiments() {
        let world = WorldConfig::default();
        let cards: Vec<_> = EmbodimentKind::ALL
            .iter()
            .map(|&k| render_card(&EmbodimentSpec::canonical(k, &world), &world, None))
            .collect();
        for i in 0..cards.len() {
            for j in i + 1..cards.len() {
                let diff = cards[i].iter().zip(&cards[j]).filter(|(a, b)| (*a - *b).abs() > 1e-3).count();
                assert!(diff as f64 >= 0.05 * cards[i].len() as f64, "{i} vs {j}: {diff}");
            }
        }
    }
}
