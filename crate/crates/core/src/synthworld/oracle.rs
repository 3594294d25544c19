//! Oracle classifier for task class and embodiment of a video.
//!
//! Handcrafted, rotation-invariant image statistics feed two softmax
//! regressions. The object channel gives net displacement, peak lift and
//! orientation change; the effector channel gives brightness, mass and
//! spread of what stands out from the background. Training data are clean
//! renders plus noisy and blurred copies, so the classifier tolerates the
//! artifacts of generated videos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::splitmix;
use super::render::render_frames;
use super::spec::{sample_task, EmbodimentKind, EmbodimentSpec, TaskClass, WorldConfig};
use super::SynthError;

const TASK_FEATURES: usize = 6;
const EMB_FEATURES: usize = 6;
/// Object-channel level below which pixels count as empty.
const OBJECT_FLOOR: f64 = 0.15;
/// Effector excess over background below which pixels count as background.
const EFFECTOR_FLOOR: f64 = 0.1;
/// Minimum per-frame mass (in pixels) for a channel to count as evidence.
const MIN_MASS: f64 = 1.0;
/// Probability below which a prediction is flagged.
const MIN_CONFIDENCE: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleLabel {
    pub task: TaskClass,
    pub task_confidence: f64,
    pub embodiment: EmbodimentKind,
    pub embodiment_confidence: f64,
    /// Set when either prediction is uncertain or the video lacks visible
    /// object or effector pixels.
    pub low_confidence: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub seeds_per_cell: usize,
    pub heldout_per_cell: usize,
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { seeds_per_cell: 24, heldout_per_cell: 10, min_accuracy: 0.99, seed: 0x0_5eed }
    }
}

struct Moments {
    mass: f64,
    cx: f64,
    cy: f64,
    /// Second central moments.
    xx: f64,
    xy: f64,
    yy: f64,
}

fn moments(size: usize, weight: impl Fn(usize) -> f64) -> Moments {
    let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let w: Vec<f64> = (0..size * size).map(weight).collect();
    for (i, &wi) in w.iter().enumerate() {
        m += wi;
        sx += wi * ((i % size) as f64 + 0.5);
        sy += wi * ((i / size) as f64 + 0.5);
    }
    if m <= 0.0 {
        return Moments { mass: 0.0, cx: size as f64 / 2.0, cy: size as f64 / 2.0, xx: 0.0, xy: 0.0, yy: 0.0 };
    }
    let (cx, cy) = (sx / m, sy / m);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (i, &wi) in w.iter().enumerate() {
        let dx = (i % size) as f64 + 0.5 - cx;
        let dy = (i / size) as f64 + 0.5 - cy;
        xx += wi * dx * dx;
        xy += wi * dx * dy;
        yy += wi * dy * dy;
    }
    Moments { mass: m, cx, cy, xx: xx / m, xy: xy / m, yy: yy / m }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Features {
    task: [f64; TASK_FEATURES],
    emb: [f64; EMB_FEATURES],
    object_mass: f64,
    effector_mass: f64,
}

fn features(video: &[f64], world: &WorldConfig) -> Features {
    let n = world.size;
    let s = n as f64;
    let fl = world.frame_len();
    let mut obj = Vec::with_capacity(world.frames);
    let (mut e_mass, mut e_bright, mut e_l1, mut e_l2, mut e_peak, mut e_spread) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..world.frames {
        let f = &video[k * fl..(k + 1) * fl];
        obj.push(moments(n, |i| (f[2 * i + 1] - OBJECT_FLOOR).max(0.0)));
        let bg = median((0..n * n).map(|i| f[2 * i]).collect());
        let excess = |i: usize| (f[2 * i] - bg - EFFECTOR_FLOOR).max(0.0);
        let m = moments(n, excess);
        let (sum, sum2, peak) = (0..n * n).fold((0.0, 0.0, 0.0f64), |(a, b, p), i| {
            let e = f[2 * i] - bg;
            if e > EFFECTOR_FLOOR {
                (a + e, b + e * f[2 * i], p.max(f[2 * i]))
            } else {
                (a, b, p)
            }
        });
        let tr = m.xx + m.yy;
        let det = m.xx * m.yy - m.xy * m.xy;
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        e_mass += m.mass;
        e_bright += if sum > 0.0 { sum2 / sum } else { bg };
        e_peak += peak.max(bg);
        e_l1 += 0.5 * tr + disc;
        e_l2 += 0.5 * tr - disc;
        e_spread += tr.sqrt();
    }
    let nf = world.frames as f64;
    let first = &obj[0];
    let last = &obj[world.frames - 1];
    let lift = obj.iter().map(|m| (m.cy - first.cy) / s).fold(0.0, f64::min);
    let axis = |m: &Moments| (m.xx - m.yy, 2.0 * m.xy);
    let (a0, a1) = (axis(first), axis(last));
    let norm = (a0.0.hypot(a0.1) * a1.0.hypot(a1.1)).max(1e-12);
    let cos2 = (a0.0 * a1.0 + a0.1 * a1.1) / norm;
    let path: f64 = obj.windows(2).map(|w| (w[1].cx - w[0].cx).hypot(w[1].cy - w[0].cy) / s).sum();
    let object_mass = obj.iter().map(|m| m.mass).sum::<f64>() / nf;
    Features {
        task: [(last.cy - first.cy) / s, (last.cx - first.cx).abs() / s, lift, cos2, path, (last.cy - first.cy).abs() / s],
        emb: [
            e_mass / nf / (s * s),
            e_bright / nf,
            e_peak / nf,
            e_l1 / nf / (s * s),
            e_l2 / nf / (s * s),
            e_spread / nf / s,
        ],
        object_mass,
        effector_mass: e_mass / nf,
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
struct Softmax {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `[classes][features + 1]`, bias last.
    w: Vec<Vec<f64>>,
}

impl Softmax {
    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9))
            .collect();
        let z: Vec<Vec<f64>> = x.iter().map(|r| (0..d).map(|j| (r[j] - mean[j]) / std[j]).collect()).collect();
        let mut w = vec![vec![0.0; d + 1]; classes];
        let lr = 0.5;
        let l2 = 1e-4;
        for _ in 0..3000 {
            let mut g = vec![vec![0.0; d + 1]; classes];
            for (r, &label) in z.iter().zip(y) {
                let p = probs(&w, r);
                for c in 0..classes {
                    let diff = p[c] - if c == label { 1.0 } else { 0.0 };
                    for j in 0..d {
                        g[c][j] += diff * r[j];
                    }
                    g[c][d] += diff;
                }
            }
            for c in 0..classes {
                for j in 0..=d {
                    let reg = if j < d { l2 * w[c][j] } else { 0.0 };
                    w[c][j] -= lr * (g[c][j] / n + reg);
                }
            }
        }
        Self { mean, std, w }
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]).collect();
        probs(&self.w, &z)
    }
}

fn probs(w: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let logits: Vec<f64> = w.iter().map(|wc| wc[d] + z.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>()).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

/// Degrades a clean render like an imperfect generator would.
fn augment(video: &mut [f64], world: &WorldConfig, rng: &mut ChaCha8Rng) {
    let n = world.size;
    if rng.random_bool(0.5) {
        let src = video.to_vec();
        for k in 0..world.frames {
            for c in 0..WorldConfig::CHANNELS {
                for y in 0..n {
                    for x in 0..n {
                        let (mut acc, mut cnt) = (0.0, 0.0);
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                                if yy >= 0 && xx >= 0 && (yy as usize) < n && (xx as usize) < n {
                                    acc += src[k * world.frame_len() + (yy as usize * n + xx as usize) * 2 + c];
                                    cnt += 1.0;
                                }
                            }
                        }
                        let i = k * world.frame_len() + (y * n + x) * 2 + c;
                        video[i] = 0.5 * src[i] + 0.5 * acc / cnt;
                    }
                }
            }
        }
    }
    let sigma = [0.0, 0.02, 0.05][rng.random_range(0..3)];
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite std");
        for v in video.iter_mut() {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleClassifier {
    world: WorldConfig,
    task: Softmax,
    emb: Softmax,
    /// Accuracy on held-out clean renders, `(task, embodiment)`.
    pub heldout_accuracy: (f64, f64),
}

impl OracleClassifier {
    /// Trains on fresh renders and checks accuracy on held-out task
    /// instances. Fails when either accuracy is below `cfg.min_accuracy`.
    pub fn train(world: &WorldConfig, cfg: &OracleConfig) -> Result<Self, SynthError> {
        world.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tx = Vec::new();
        let mut ex = Vec::new();
        let mut ty = Vec::new();
        let mut ey = Vec::new();
        let render = |i: usize, class: TaskClass, kind: EmbodimentKind| {
            let task = sample_task(splitmix(cfg.seed ^ (i as u64) << 8 ^ class.index() as u64), Some(class), world);
            let emb = EmbodimentSpec::canonical(kind, world);
            render_frames(&task, &emb, i % WorldConfig::BACKGROUNDS, world).1
        };
        for i in 0..cfg.seeds_per_cell {
            for class in TaskClass::ALL {
                for kind in EmbodimentKind::ALL {
                    let mut v = render(i, class, kind);
                    if i % 3 != 0 {
                        augment(&mut v, world, &mut rng);
                    }
                    let f = features(&v, world);
                    tx.push(f.task.to_vec());
                    ex.push(f.emb.to_vec());
                    ty.push(class.index());
                    ey.push(kind.index());
                }
            }
        }
        let task = Softmax::fit(&tx, &ty, TaskClass::ALL.len());
        let emb = Softmax::fit(&ex, &ey, EmbodimentKind::ALL.len());
        let mut oracle = Self { world: *world, task, emb, heldout_accuracy: (0.0, 0.0) };
        let (mut ok_t, mut ok_e, mut total) = (0usize, 0usize, 0usize);
        for i in 0..cfg.heldout_per_cell {
            for class in TaskClass::ALL {
                for kind in EmbodimentKind::ALL {
                    let label = oracle.classify(&render(cfg.seeds_per_cell + 1000 + i, class, kind))?;
                    ok_t += (label.task == class) as usize;
                    ok_e += (label.embodiment == kind) as usize;
                    total += 1;
                }
            }
        }
        oracle.heldout_accuracy = (ok_t as f64 / total as f64, ok_e as f64 / total as f64);
        let worst = oracle.heldout_accuracy.0.min(oracle.heldout_accuracy.1);
        if worst < cfg.min_accuracy {
            return Err(SynthError::OracleTooWeak { accuracy: worst, required: cfg.min_accuracy });
        }
        Ok(oracle)
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn classify(&self, video: &[f64]) -> Result<OracleLabel, SynthError> {
        if video.len() != self.world.video_len() {
            return Err(SynthError::Config(format!(
                "video has {} values, oracle expects {}",
                video.len(),
                self.world.video_len()
            )));
        }
        if video.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::Config("video contains non-finite values".into()));
        }
        let f = features(video, &self.world);
        let pt = self.task.predict(&f.task);
        let pe = self.emb.predict(&f.emb);
        let (it, ie) = (argmax(&pt), argmax(&pe));
        let evidence = f.object_mass >= MIN_MASS && f.effector_mass >= MIN_MASS;
        Ok(OracleLabel {
            task: TaskClass::ALL[it],
            task_confidence: pt[it],
            embodiment: EmbodimentKind::ALL[ie],
            embodiment_confidence: pe[ie],
            low_confidence: !evidence || pt[it] < MIN_CONFIDENCE || pe[ie] < MIN_CONFIDENCE,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accurate_on_heldout_renders() {
        for world in [WorldConfig { frames: 8, size: 16, card_size: 32 }, WorldConfig::default()] {
            let o = OracleClassifier::train(&world, &OracleConfig::default()).unwrap();
            assert!(o.heldout_accuracy.0 >= 0.99 && o.heldout_accuracy.1 >= 0.99, "{:?}", o.heldout_accuracy);
        }
    }

    #[test]
    fn blank_video_flagged() {
        let world = WorldConfig { frames: 8, size: 16, card_size: 16 };
        let o = OracleClassifier::train(&world, &OracleConfig { seeds_per_cell: 6, min_accuracy: 0.0, ..Default::default() })
            .unwrap();
        assert!(o.classify(&vec![0.0; world.video_len()]).unwrap().low_confidence);
        assert!(o.classify(&[0.0; 3]).is_err());
    }
}
