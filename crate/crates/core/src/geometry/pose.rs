use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use super::GeometryError;

/// Rigid transform `x ↦ R x + t`.
///
/// The rotation is stored as a unit quaternion with non-negative scalar
/// part, so every rotation has exactly one representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation: canonical(rotation) }
    }

    pub fn from_rotation_matrix(translation: Vector3<f64>, r: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::new(translation, UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// Quaternion given as `(w, x, y, z)`; normalized on construction.
    pub fn from_wxyz(translation: [f64; 3], q: [f64; 4]) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::Degenerate("zero quaternion".into()));
        }
        Ok(Self::new(Vector3::from(translation), UnitQuaternion::from_quaternion(quat)))
    }

    /// Rotation about the z axis by `angle` radians followed by a translation.
    pub fn planar(x: f64, y: f64, angle: f64) -> Self {
        Self::new(Vector3::new(x, y, 0.0), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation * other.translation + self.translation, self.rotation * other.rotation)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(-(inv * self.translation), inv)
    }

    /// Angle of the relative rotation, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// True when both components agree within `tol`.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.translation_distance(other) <= tol && self.rotation_angle_to(other) <= tol
    }
}

/// First two columns of the rotation matrix, column-major:
/// `(r00, r10, r20, r01, r11, r21)`.
pub fn rot6d_from_pose(p: &Pose) -> [f64; 6] {
    let r = p.rotation_matrix();
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

/// Rotation from a 6-D encoding by Gram–Schmidt on its two columns.
pub fn rot6d_to_rotation(v: &[f64; 6]) -> Result<UnitQuaternion<f64>, GeometryError> {
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot6d_to_matrix(v)?)))
}

pub fn rot6d_to_matrix(v: &[f64; 6]) -> Result<Matrix3<f64>, GeometryError> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let na = a.norm();
    if !na.is_finite() || na < 1e-12 {
        return Err(GeometryError::Degenerate("first 6-D rotation column is zero".into()));
    }
    let e1 = a / na;
    let b_perp = b - e1 * e1.dot(&b);
    let nb = b_perp.norm();
    if !nb.is_finite() || nb < 1e-9 * b.norm().max(1e-300) || nb < 1e-12 {
        return Err(GeometryError::Degenerate("6-D rotation columns are parallel or zero".into()));
    }
    let e2 = b_perp / nb;
    let e3 = e1.cross(&e2);
    Ok(Matrix3::from_columns(&[e1, e2, e3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(-3.1..3.1);
        let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        Pose::new(t, UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle))
    }

    #[test]
    fn identity_encodes_to_first_two_columns() {
        assert_eq!(rot6d_from_pose(&Pose::identity()), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn parallel_columns_rejected() {
        assert!(rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(rot6d_to_matrix(&[0.0; 6]).is_err());
    }

    #[test]
    fn decode_encode_identity_on_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let back = rot6d_to_rotation(&rot6d_from_pose(&p)).unwrap();
            assert!(p.rotation().angle_to(&back) < 1e-9);
        }
    }

    #[test]
    fn canonical_hemisphere_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let q = p.wxyz();
            assert!(q[0] >= 0.0);
            let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            assert!(p.compose(&p.inverse()).approx_eq(&Pose::identity(), 1e-9));
        }
    }

    proptest! {
        #[test]
        fn encode_of_decode_is_orthonormalized_input(
            v in proptest::array::uniform6(-1.0f64..1.0),
        ) {
            let v: [f64; 6] = v;
            prop_assume!(rot6d_to_matrix(&v).is_ok());
            let m = rot6d_to_matrix(&v).unwrap();
            let p = Pose::from_rotation_matrix(Vector3::zeros(), &m);
            let enc = rot6d_from_pose(&p);
            let a = Vector3::new(v[0], v[1], v[2]).normalize();
            prop_assert!((Vector3::new(enc[0], enc[1], enc[2]) - a).norm() < 1e-9);
            let e2 = Vector3::new(enc[3], enc[4], enc[5]);
            prop_assert!(e2.dot(&a).abs() < 1e-9);
            prop_assert!(e2.dot(&Vector3::new(v[3], v[4], v[5])) > 0.0);
        }

        #[test]
        fn composition_associative_and_inverse_involution(s in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.approx_eq(&right, 1e-9));
            prop_assert!(a.inverse().inverse().approx_eq(&a, 1e-9));
        }
    }
}
