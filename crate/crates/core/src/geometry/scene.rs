//! Ray-cast depth and mask frames of a rigid box moving in front of a flat
//! backdrop.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DepthFrame, GeometryError, Intrinsics, MaskFrame, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxScene {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Box half-sides in its own frame.
    pub half_extents: Vector3<f64>,
    /// Pose of the box at frame 0, camera frame.
    pub start: Pose,
    pub backdrop_depth: f64,
}

impl Default for BoxScene {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            intrinsics: Intrinsics { fx: 140.0, fy: 140.0, cx: 63.5, cy: 63.5 },
            half_extents: Vector3::new(0.22, 0.14, 0.09),
            start: Pose::new(Vector3::new(0.0, 0.0, 1.6), UnitQuaternion::from_euler_angles(0.35, -0.3, 0.2)),
            backdrop_depth: 2.4,
        }
    }
}

/// Distance along `dir` from `origin` to the first hit on the axis-aligned
/// box `[-h, h]`, if any.
fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, h: &Vector3<f64>) -> Option<f64> {
    let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let a = (-h[i] - origin[i]) / dir[i];
        let b = (h[i] - origin[i]) / dir[i];
        near = near.max(a.min(b));
        far = far.min(a.max(b));
    }
    (near <= far && near > 0.0).then_some(near)
}

impl BoxScene {
    /// Depth (box or backdrop) and box mask with the box at `pose`.
    pub fn render(&self, pose: &Pose) -> Result<(DepthFrame, MaskFrame), GeometryError> {
        let k = self.intrinsics;
        let inv = pose.inverse();
        let origin = inv.apply(&Vector3::zeros());
        let rot = inv.rotation();
        let mut depth = vec![self.backdrop_depth; self.width * self.height];
        let mut mask = MaskFrame::empty(self.width, self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                let ray = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                if let Some(s) = ray_box(&origin, &(rot * ray), &self.half_extents) {
                    depth[v * self.width + u] = s;
                    mask.set(u, v, true);
                }
            }
        }
        Ok((DepthFrame::new(self.width, self.height, depth, k)?, mask))
    }

    /// `frames` renders along a seeded random walk (per-frame rotation up to
    /// `max_deg`, translation up to `max_shift`). Returns the frames and the
    /// ground-truth motion relative to frame 0.
    pub fn sequence(
        &self,
        frames: usize,
        max_deg: f64,
        max_shift: f64,
        seed: u64,
    ) -> Result<(Vec<DepthFrame>, Vec<MaskFrame>, Vec<Pose>), GeometryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut motion = vec![Pose::identity()];
        while motion.len() < frames {
            let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let angle = rng.random_range(0.0..max_deg).to_radians();
            let shift = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 2.0 * max_shift;
            // The step rotates about the box centre.
            let c = motion.last().map(|m| m.compose(&self.start).translation()).unwrap_or_default();
            let r = Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle));
            let step = Pose::new(c + shift, UnitQuaternion::identity()).compose(&r).compose(&Pose::new(-c, UnitQuaternion::identity()));
            motion.push(step.compose(motion.last().expect("non-empty")));
        }
        let mut depths = Vec::with_capacity(frames);
        let mut masks = Vec::with_capacity(frames);
        for m in &motion {
            let (d, k) = self.render(&m.compose(&self.start))?;
            depths.push(d);
            masks.push(k);
        }
        Ok((depths, masks, motion))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lift_depth_to_cloud;

    #[test]
    fn lifted_points_lie_on_the_box() {
        let scene = BoxScene::default();
        let (d, m) = scene.render(&scene.start).unwrap();
        assert!(m.count() > 200);
        let cloud = lift_depth_to_cloud(&d, &m, 0).unwrap();
        let inv = scene.start.inverse();
        for p in &cloud.points {
            let q = inv.apply(p);
            let h = scene.half_extents;
            let inside = (0..3).all(|i| q[i].abs() <= h[i] + 1e-9);
            let on_face = (0..3).any(|i| (q[i].abs() - h[i]).abs() < 1e-9);
            assert!(inside && on_face, "{q:?}");
        }
    }

    #[test]
    fn backdrop_fills_unmasked_pixels() {
        let scene = BoxScene::default();
        let (d, m) = scene.render(&scene.start).unwrap();
        for (i, &z) in d.depth.iter().enumerate() {
            if !m.mask[i] {
                assert_eq!(z, scene.backdrop_depth);
            }
        }
    }

    #[test]
    fn first_pose_is_identity() {
        let (_, _, motion) = BoxScene::default().sequence(3, 4.0, 0.02, 1).unwrap();
        assert_eq!(motion.len(), 3);
        assert!(motion[0].approx_eq(&Pose::identity(), 0.0));
    }
}
