//! Rigid-body numerics and object-trajectory extraction: mask dilation,
//! depth back-projection, trimmed ICP and pose chaining.

mod frames;
mod icp;
mod kdtree;
mod pose;
mod scene;
pub mod textio;

pub use frames::{dilate_mask, lift_depth_to_cloud, DepthFrame, Intrinsics, MaskFrame, PointCloud};
pub use icp::{kabsch, trimmed_icp, IcpConfig, IcpResult};
pub use kdtree::NearestNeighbors;
pub use pose::{rot6d_from_pose, rot6d_to_matrix, rot6d_to_rotation, Pose};
pub use scene::BoxScene;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<GeometryError>,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Per-frame outcome of [`estimate_object_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// ICP residual for each consecutive pair (length `poses.len() − 1`).
    pub residuals: Vec<f64>,
    /// Indices of pairs where ICP hit `max_iters` without converging.
    pub unconverged: Vec<usize>,
}

/// Chains frame-to-frame registrations into poses relative to frame 0.
///
/// `poses[0]` is the identity and `poses[k]` maps the frame-0 cloud into
/// frame `k`: the registration of frame `k−1` onto frame `k` is applied
/// after `poses[k−1]`.
pub fn estimate_object_trajectory(clouds: &[PointCloud], cfg: &IcpConfig) -> Result<Trajectory, GeometryError> {
    if clouds.len() < 2 {
        return Err(GeometryError::Invalid(format!("need at least 2 clouds, got {}", clouds.len())));
    }
    let mut poses = vec![Pose::identity()];
    let mut residuals = Vec::with_capacity(clouds.len() - 1);
    let mut unconverged = Vec::new();
    for k in 1..clouds.len() {
        let r = trimmed_icp(&clouds[k - 1], &clouds[k], cfg)
            .map_err(|e| GeometryError::Frame { frame: k, source: Box::new(e) })?;
        if !r.converged {
            unconverged.push(k);
        }
        residuals.push(r.residual);
        let prev = poses[k - 1];
        poses.push(r.pose.compose(&prev));
    }
    Ok(Trajectory { poses, residuals, unconverged })
}

/// Full extraction from depth and mask frames: dilate each mask by
/// `dilation` pixels, lift the masked depth, then chain registrations.
pub fn trajectory_from_frames(
    depths: &[DepthFrame],
    masks: &[MaskFrame],
    dilation: usize,
    cfg: &IcpConfig,
) -> Result<Trajectory, GeometryError> {
    if depths.len() != masks.len() {
        return Err(GeometryError::Invalid(format!("{} depth frames but {} masks", depths.len(), masks.len())));
    }
    let clouds = depths
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(k, (d, m))| lift_depth_to_cloud(d, &dilate_mask(m, dilation), k).map_err(|e| GeometryError::Frame { frame: k, source: Box::new(e) }))
        .collect::<Result<Vec<_>, _>>()?;
    estimate_object_trajectory(&clouds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..400)
                .map(|_| Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.5), rng.random_range(0.0..0.25)))
                .collect(),
            0,
        )
    }

    #[test]
    fn constant_sequence_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = cloud(&mut rng);
        let t = estimate_object_trajectory(&[c.clone(), c.clone(), c], &IcpConfig::default()).unwrap();
        assert!(t.poses.iter().all(|p| p.approx_eq(&Pose::identity(), 1e-12)));
    }

    #[test]
    fn chained_known_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let base = cloud(&mut rng);
        let deltas = [
            Pose::new(Vector3::new(0.02, 0.0, 0.01), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.08)),
            Pose::new(Vector3::new(0.0, 0.03, 0.0), UnitQuaternion::from_euler_angles(0.07, 0.0, 0.0)),
            Pose::new(Vector3::new(-0.01, 0.0, 0.02), UnitQuaternion::from_euler_angles(0.0, -0.06, 0.03)),
        ];
        let mut truth = vec![Pose::identity()];
        let mut clouds = vec![base.clone()];
        for d in &deltas {
            let next = d.compose(truth.last().unwrap());
            clouds.push(base.transformed(&next));
            truth.push(next);
        }
        let cfg = IcpConfig { trim_fraction: 0.0, ..IcpConfig::default() };
        let t = estimate_object_trajectory(&clouds, &cfg).unwrap();
        for (est, gt) in t.poses.iter().zip(&truth) {
            assert!(est.rotation_angle_to(gt) < 1e-6 && est.translation_distance(gt) < 1e-6);
        }
    }

    #[test]
    fn single_cloud_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        assert!(estimate_object_trajectory(&[cloud(&mut rng)], &IcpConfig::default()).is_err());
    }

    #[test]
    fn frame_index_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let c = cloud(&mut rng);
        let tiny = PointCloud::new(vec![Vector3::zeros(); 2], 2);
        match estimate_object_trajectory(&[c.clone(), c, tiny], &IcpConfig::default()) {
            Err(GeometryError::Frame { frame, .. }) => assert_eq!(frame, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recovers_box_motion_from_dilated_masks() {
        let (depths, masks, truth) = BoxScene::default().sequence(6, 3.0, 0.01, 9).unwrap();
        let t = trajectory_from_frames(&depths, &masks, 1, &IcpConfig::default()).unwrap();
        for (p, q) in t.poses.iter().zip(&truth) {
            // Chained registrations of resampled partial views drift.
            assert!(p.rotation_angle_to(q).to_degrees() < 3.0, "{}", p.rotation_angle_to(q).to_degrees());
            assert!(p.translation_distance(q) < 0.08);
        }
    }
}
