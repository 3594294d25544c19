//! Trimmed iterative closest point (point-to-point).
//!
//! Each iteration matches every transformed source point to its nearest
//! destination point, keeps the `(1 − trim_fraction)` share of pairs with the
//! smallest distances, and refits the full rigid transform to those pairs in
//! closed form (Kabsch with a reflection guard). With a fixed retained count
//! the trimmed sum of squares cannot increase from one iteration to the next.

use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, NearestNeighbors, PointCloud, Pose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpConfig {
    pub trim_fraction: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { trim_fraction: 0.2, max_iters: 50, tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the destination cloud.
    pub pose: Pose,
    /// Mean squared distance over the retained pairs at `pose`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Trimmed mean squared distance observed at the start of each iteration.
    pub history: Vec<f64>,
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, GeometryError> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(GeometryError::TooFewPoints(src.len().min(dst.len())));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - cs, d - cd);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    // Collinear or coincident sources leave the rotation about their line undetermined.
    let sv = spread.symmetric_eigenvalues();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-12 * sorted[0].max(1e-300)) {
        return Err(GeometryError::Degenerate("retained source points are collinear".into()));
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let t = cd - r * cs;
    Ok(Pose::from_rotation_matrix(t, &r))
}

fn trimmed_pairs(
    src: &[Vector3<f64>],
    pose: &Pose,
    nn: &NearestNeighbors<'_>,
    keep: usize,
) -> (Vec<(usize, usize, f64)>, f64) {
    let mut pairs: Vec<(usize, usize, f64)> = src
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, d2) = nn.nearest(&pose.apply(p));
            (i, j, d2)
        })
        .collect();
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    pairs.truncate(keep);
    let mse = pairs.iter().map(|p| p.2).sum::<f64>() / keep as f64;
    (pairs, mse)
}

/// Registers `src` onto `dst`, starting from the identity.
pub fn trimmed_icp(src: &PointCloud, dst: &PointCloud, cfg: &IcpConfig) -> Result<IcpResult, GeometryError> {
    src.validate()?;
    dst.validate()?;
    if !(0.0..1.0).contains(&cfg.trim_fraction) {
        return Err(GeometryError::Invalid(format!("trim fraction {} outside [0, 1)", cfg.trim_fraction)));
    }
    let keep = ((1.0 - cfg.trim_fraction) * src.len() as f64).ceil() as usize;
    let keep = keep.clamp(3, src.len());
    let nn = NearestNeighbors::new(&dst.points);
    let mut pose = Pose::identity();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut prev = f64::INFINITY;
    while iterations < cfg.max_iters {
        let (pairs, mse) = trimmed_pairs(&src.points, &pose, &nn, keep);
        history.push(mse);
        if (prev - mse).abs() < cfg.tol || mse == 0.0 {
            converged = true;
            break;
        }
        prev = mse;
        let s: Vec<Vector3<f64>> = pairs.iter().map(|p| src.points[p.0]).collect();
        let d: Vec<Vector3<f64>> = pairs.iter().map(|p| dst.points[p.1]).collect();
        pose = kabsch(&s, &d)?;
        iterations += 1;
    }
    let (_, residual) = trimmed_pairs(&src.points, &pose, &nn, keep);
    if !converged {
        if let Some(&last) = history.last() {
            converged = (last - residual).abs() < cfg.tol;
        }
    }
    Ok(IcpResult { pose, residual, iterations, converged, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        let pts = (0..n)
            .map(|_| Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.6), rng.random_range(0.0..0.3)))
            .collect();
        PointCloud::new(pts, 0)
    }

    #[test]
    fn identical_clouds_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = box_cloud(200, &mut rng);
        let r = trimmed_icp(&c, &c, &IcpConfig::default()).unwrap();
        assert!(r.pose.approx_eq(&Pose::identity(), 1e-12));
        assert_eq!(r.residual, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn recovers_ten_degree_yaw() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let src = box_cloud(500, &mut rng);
        let truth = Pose::new(
            Vector3::new(0.05, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians()),
        );
        let dst = src.transformed(&truth);
        let cfg = IcpConfig { trim_fraction: 0.0, ..IcpConfig::default() };
        let r = trimmed_icp(&src, &dst, &cfg).unwrap();
        assert!(r.pose.rotation_angle_to(&truth).to_degrees() < 0.1);
        assert!(r.pose.translation_distance(&truth) < 1e-6);
    }

    #[test]
    fn residual_non_increasing_on_clean_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let src = box_cloud(300, &mut rng);
        let truth = Pose::new(
            Vector3::new(0.03, -0.02, 0.01),
            UnitQuaternion::from_euler_angles(0.05, -0.08, 0.12),
        );
        let r = trimmed_icp(&src, &src.transformed(&truth), &IcpConfig::default()).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{:?}", r.history);
        }
    }

    #[test]
    fn collinear_cloud_is_degenerate() {
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let c = PointCloud::new(pts, 0);
        let shifted = c.transformed(&Pose::planar(0.1, 0.0, 0.0));
        assert!(matches!(trimmed_icp(&c, &shifted, &IcpConfig::default()), Err(GeometryError::Degenerate(_))));
    }

    #[test]
    fn bad_trim_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let c = box_cloud(10, &mut rng);
        let cfg = IcpConfig { trim_fraction: 1.0, ..IcpConfig::default() };
        assert!(trimmed_icp(&c, &c, &cfg).is_err());
    }

    #[test]
    fn kabsch_guards_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let src = box_cloud(50, &mut rng).points;
        let mirrored: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let pose = kabsch(&src, &mirrored).unwrap();
        assert!((pose.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
    }
}
