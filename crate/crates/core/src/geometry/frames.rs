use nalgebra::Vector3;

use super::GeometryError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::Invalid(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Pixel coordinates `(u, v)` of a camera-frame point with `z > 0`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Per-pixel depth, row-major; zero marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub intrinsics: Intrinsics,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, intrinsics: Intrinsics) -> Result<Self, GeometryError> {
        if depth.len() != width * height {
            return Err(GeometryError::Invalid(format!("{}x{} depth frame with {} values", width, height, depth.len())));
        }
        if depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(GeometryError::Invalid("depths must be finite and non-negative".into()));
        }
        Ok(Self { width, height, depth, intrinsics })
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

/// Binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskFrame {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl MaskFrame {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self, GeometryError> {
        if mask.len() != width * height {
            return Err(GeometryError::Invalid(format!("{}x{} mask with {} values", width, height, mask.len())));
        }
        Ok(Self { width, height, mask })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, mask: vec![false; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.mask[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Dilation by a disc of the given pixel radius (all offsets with
/// `du² + dv² ≤ radius²`). Radius 0 returns the input unchanged.
pub fn dilate_mask(m: &MaskFrame, radius: usize) -> MaskFrame {
    if radius == 0 {
        return m.clone();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dv| (-r..=r).map(move |du| (du, dv)))
        .filter(|(du, dv)| du * du + dv * dv <= r * r)
        .collect();
    let mut out = MaskFrame::empty(m.width, m.height);
    for v in 0..m.height {
        for u in 0..m.width {
            if !m.get(u, v) {
                continue;
            }
            for &(du, dv) in &offsets {
                let (x, y) = (u as isize + du, v as isize + dv);
                if x >= 0 && y >= 0 && (x as usize) < m.width && (y as usize) < m.height {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
    }
    out
}

/// Ordered 3-D points from one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub source_frame: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, source_frame: usize) -> Self {
        Self { points, source_frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &super::Pose) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| pose.apply(p)).collect(), source_frame: self.source_frame }
    }

    /// Largest axis-aligned bounding-box side.
    pub fn extent(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).max()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points.len() < 3 {
            return Err(GeometryError::TooFewPoints(self.points.len()));
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::Invalid("non-finite point coordinate".into()));
        }
        Ok(())
    }
}

/// Pinhole back-projection of every masked pixel with positive depth:
/// `x = (u − cx)·z/fx`, `y = (v − cy)·z/fy`.
pub fn lift_depth_to_cloud(d: &DepthFrame, m: &MaskFrame, frame_index: usize) -> Result<PointCloud, GeometryError> {
    if d.width != m.width || d.height != m.height {
        return Err(GeometryError::Invalid(format!(
            "mask {}x{} does not match depth {}x{}",
            m.width, m.height, d.width, d.height
        )));
    }
    let k = d.intrinsics;
    let mut points = Vec::new();
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.at(u, v);
            if m.get(u, v) && z > 0.0 {
                points.push(Vector3::new((u as f64 - k.cx) * z / k.fx, (v as f64 - k.cy) * z / k.fy, z));
            }
        }
    }
    if points.len() < 3 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }
    Ok(PointCloud::new(points, frame_index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_radius_zero_is_identity() {
        let mut m = MaskFrame::empty(5, 5);
        m.set(1, 3, true);
        assert_eq!(dilate_mask(&m, 0), m);
    }

    #[test]
    fn single_pixel_radius_one_is_plus_shape() {
        let mut m = MaskFrame::empty(5, 5);
        m.set(2, 2, true);
        let d = dilate_mask(&m, 1);
        // Oracle: every pixel within Euclidean distance 1 of (2, 2).
        for v in 0..5usize {
            for u in 0..5usize {
                let dist2 = (u as i32 - 2).pow(2) + (v as i32 - 2).pow(2);
                assert_eq!(d.get(u, v), dist2 <= 1, "({u},{v})");
            }
        }
        assert_eq!(d.count(), 5);
    }

    #[test]
    fn full_mask_stays_full_and_dilation_is_superset() {
        let full = MaskFrame::new(4, 3, vec![true; 12]).unwrap();
        assert_eq!(dilate_mask(&full, 2), full);
        let mut m = MaskFrame::empty(8, 8);
        m.set(0, 0, true);
        m.set(7, 5, true);
        let d = dilate_mask(&m, 2);
        assert!(m.mask.iter().zip(&d.mask).all(|(a, b)| !a || *b));
    }

    fn frame(w: usize, h: usize, k: Intrinsics, fill: f64) -> DepthFrame {
        DepthFrame::new(w, h, vec![fill; w * h], k).unwrap()
    }

    #[test]
    fn principal_ray_and_offset_pixel() {
        let k = Intrinsics::new(4.0, 4.0, 2.0, 2.0).unwrap();
        let mut d = frame(8, 8, k, 0.0);
        d.depth[2 * 8 + 2] = 1.0;
        d.depth[2 * 8 + 6] = 2.0; // u = cx + fx
        d.depth[0] = 3.0;
        let mut m = MaskFrame::empty(8, 8);
        m.set(2, 2, true);
        m.set(6, 2, true);
        m.set(0, 0, true);
        let cloud = lift_depth_to_cloud(&d, &m, 0).unwrap();
        assert!(cloud.points.contains(&Vector3::new(0.0, 0.0, 1.0)));
        assert!(cloud.points.contains(&Vector3::new(2.0, 0.0, 2.0)));
    }

    #[test]
    fn zero_depth_everywhere_rejected() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let d = frame(4, 4, k, 0.0);
        let m = MaskFrame::new(4, 4, vec![true; 16]).unwrap();
        assert!(matches!(lift_depth_to_cloud(&d, &m, 0), Err(GeometryError::TooFewPoints(0))));
    }

    #[test]
    fn lift_then_project_recovers_pixels() {
        let k = Intrinsics::new(30.0, 28.0, 15.5, 12.0).unwrap();
        let (w, h) = (32, 24);
        let depth = (0..w * h).map(|i| 0.5 + (i % 7) as f64 * 0.1).collect();
        let d = DepthFrame::new(w, h, depth, k).unwrap();
        let m = MaskFrame::new(w, h, vec![true; w * h]).unwrap();
        let cloud = lift_depth_to_cloud(&d, &m, 0).unwrap();
        for (i, p) in cloud.points.iter().enumerate() {
            let (u, v) = k.project(p);
            assert!((u - (i % w) as f64).abs() < 0.5 && (v - (i / w) as f64).abs() < 0.5);
        }
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }
}
