//! Pinhole camera model, rigid transforms and planar homographies.
//!
//! Pixel convention: `(col, row)` with the origin at the center of the top-left
//! pixel. Coordinates stay continuous everywhere in this module; rounding only
//! happens when keypoints are encoded into cell labels.

use nalgebra::{Matrix3, Matrix4, SMatrix, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("rotation matrix is not orthonormal with det +1")]
    NonOrthonormalRotation,
    #[error("warped point lies on the line at infinity")]
    PointAtInfinity,
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("degenerate point configuration for homography fit")]
    DegenerateConfiguration,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point with the given horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Result<Self, GeometryError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) * 0.5,
            (height as f64 - 1.0) * 0.5,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx outside image");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy outside image");
        }
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return bad("width and height must be non-zero multiples of 8");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Cell grid size `(rows, cols)` of the 8×8 keypoint encoding.
    pub fn cell_grid(&self) -> (usize, usize) {
        (self.height as usize / 8, self.width as usize / 8)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

/// World-to-camera rigid pose: `X_cam = rotation * X_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraView {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`; image rows grow along `-up`.
    pub fn look_at(
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).try_normalize(1e-12).ok_or(GeometryError::DegenerateConfiguration)?;
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            // up parallel to the viewing direction
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn homogeneous(&self) -> Matrix4<f64> {
        rigid_matrix(&self.rotation, &self.translation)
    }
}

/// Checks `RᵀR = I` and `det R = 1` within [`ROTATION_TOLERANCE`].
pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !ortho.is_finite() || ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(GeometryError::NonOrthonormalRotation);
    }
    Ok(())
}

pub fn rigid_matrix(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Projection of a world point: continuous pixel and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

pub fn project(
    point: &Vector3<f64>,
    view: &CameraView,
    k: &Intrinsics,
) -> Result<Projection, GeometryError> {
    let pc = view.to_camera(point);
    if !(pc.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    let pixel = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
    Ok(Projection { pixel, depth: pc.z })
}

/// Lifts a pixel with known camera-frame depth back into the world frame:
/// `P = Rᵀ(z·K⁻¹·[u, v, 1]ᵀ − t)`.
pub fn back_project(
    pixel: &Vector2<f64>,
    depth: f64,
    view: &CameraView,
    k: &Intrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let ray = k.inverse_matrix() * Vector3::new(pixel.x, pixel.y, 1.0);
    Ok(view.to_world(&(ray * depth)))
}

/// Maps each point to `R·p + t`.
pub fn apply_rigid(
    points: &[Vector3<f64>],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>, GeometryError> {
    check_rotation(rotation)?;
    Ok(points.iter().map(|p| rotation * p + translation).collect())
}

/// Uniformly distributed rotation over SO(3) via a random unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    // Shoemake's subgroup algorithm.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    orthonormalize(&m)
}

/// Projects a near-rotation onto SO(3) via SVD.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Planar projective transform, stored with `m[(2,2)] = 1` when that entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
}

impl Homography {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        let mut m = matrix;
        if m[(2, 2)].abs() > 1e-15 {
            m /= m[(2, 2)];
        }
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-12 {
            return Err(GeometryError::SingularHomography(det));
        }
        Ok(Self { matrix: m })
    }

    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { matrix: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0) }
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .matrix
            .try_inverse()
            .ok_or(GeometryError::SingularHomography(self.matrix.determinant()))?;
        Self::new(inv)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self, GeometryError> {
        Self::new(self.matrix * first.matrix)
    }

    pub fn warp(&self, pixel: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        warp_pixel(pixel, self)
    }

    /// Direct linear transform over ≥4 correspondences `src[i] -> dst[i]`,
    /// with Hartley normalization of both point sets.
    pub fn fit(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Result<Self, GeometryError> {
        if src.len() != dst.len() || src.len() < 4 {
            return Err(GeometryError::DegenerateConfiguration);
        }
        let (ts, ns) = normalize_points(src)?;
        let (td, nd) = normalize_points(dst)?;
        let n = src.len();
        // AᵀA accumulated directly keeps the solve at a fixed 9×9 size.
        let mut ata = SMatrix::<f64, 9, 9>::zeros();
        for i in 0..n {
            let (x, y) = (ns[i].x, ns[i].y);
            let (u, v) = (nd[i].x, nd[i].y);
            let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
            let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
            for r in [r1, r2] {
                for a in 0..9 {
                    for b in 0..9 {
                        ata[(a, b)] += r[a] * r[b];
                    }
                }
            }
        }
        let eig = ata.symmetric_eigen();
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nine eigenvalues");
        let h = eig.eigenvectors.column(imin);
        let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
        let td_inv = td.try_inverse().ok_or(GeometryError::DegenerateConfiguration)?;
        let m = td_inv * hn * ts;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::DegenerateConfiguration);
        }
        Self::new(m).map_err(|_| GeometryError::DegenerateConfiguration)
    }
}

fn normalize_points(pts: &[Vector2<f64>]) -> Result<(Matrix3<f64>, Vec<Vector2<f64>>), GeometryError> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    Ok((t, pts.iter().map(|p| (p - c) * s).collect()))
}

/// Projective warp with de-homogenization.
pub fn warp_pixel(pixel: &Vector2<f64>, h: &Homography) -> Result<Vector2<f64>, GeometryError> {
    let p = h.matrix * Vector3::new(pixel.x, pixel.y, 1.0);
    if p.z.abs() < 1e-12 {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(Vector2::new(p.x / p.z, p.y / p.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop, prop_assert, proptest, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k0() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 160.0, 120.0, 320, 240).unwrap()
    }

    fn rot_z(deg: f64) -> Matrix3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn project_principal_ray() {
        let p = project(&Vector3::new(0.0, 0.0, 2.0), &CameraView::identity(), &k0()).unwrap();
        assert_eq!(p.pixel, Vector2::new(160.0, 120.0));
        assert_eq!(p.depth, 2.0);
        let p = project(&Vector3::new(1.0, 0.0, 2.0), &CameraView::identity(), &k0()).unwrap();
        assert_eq!(p.pixel, Vector2::new(210.0, 120.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn project_behind_camera() {
        let e = project(&Vector3::new(0.0, 0.0, -1.0), &CameraView::identity(), &k0());
        assert!(matches!(e, Err(GeometryError::BehindCamera { .. })));
        let e = project(&Vector3::new(1.0, 0.0, 0.0), &CameraView::identity(), &k0());
        assert!(matches!(e, Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn project_matches_homogeneous_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = k0();
        for _ in 0..200 {
            let r = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(3.0..6.0));
            let view = CameraView::new(r, t).unwrap();
            let pw = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // oracle: [K | 0] · T · [p; 1]
            let mut proj = nalgebra::Matrix3x4::zeros();
            proj.fixed_view_mut::<3, 3>(0, 0).copy_from(&k.matrix());
            let h = proj * view.homogeneous() * nalgebra::Vector4::new(pw.x, pw.y, pw.z, 1.0);
            if h.z <= 0.0 {
                continue;
            }
            let got = project(&pw, &view, &k).unwrap();
            assert_relative_eq!(got.pixel.x, h.x / h.z, epsilon = 1e-9);
            assert_relative_eq!(got.pixel.y, h.y / h.z, epsilon = 1e-9);
            assert_relative_eq!(got.depth, h.z, epsilon = 1e-9);
        }
    }

    #[test]
    fn back_project_examples() {
        let v = CameraView::identity();
        let p = back_project(&Vector2::new(160.0, 120.0), 2.0, &v, &k0()).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        let p = back_project(&Vector2::new(210.0, 120.0), 2.0, &v, &k0()).unwrap();
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 2.0), epsilon = 1e-12);
        assert_eq!(
            back_project(&Vector2::new(0.0, 0.0), 0.0, &v, &k0()),
            Err(GeometryError::NonPositiveDepth(0.0))
        );
    }

    #[test]
    fn rigid_examples() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.3, -2.0, 5.0)];
        assert_eq!(apply_rigid(&pts, &Matrix3::identity(), &Vector3::zeros()).unwrap(), pts);
        let out = apply_rigid(&pts[..1], &rot_z(90.0), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(out[0], Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(apply_rigid(&pts, &bad, &Vector3::zeros()), Err(GeometryError::NonOrthonormalRotation));
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(apply_rigid(&pts, &reflect, &Vector3::zeros()).is_err());
    }

    #[test]
    fn rigid_composition_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (r1, r2) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let t1 = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let t2 = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let pts: Vec<_> = (0..10).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let two = apply_rigid(&apply_rigid(&pts, &r1, &t1).unwrap(), &r2, &t2).unwrap();
            let m = rigid_matrix(&r2, &t2) * rigid_matrix(&r1, &t1);
            for (p, q) in pts.iter().zip(&two) {
                let h = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
                assert_relative_eq!(*q, Vector3::new(h.x, h.y, h.z), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn warp_examples() {
        let px = Vector2::new(10.0, 10.0);
        assert_eq!(warp_pixel(&px, &Homography::identity()).unwrap(), px);
        assert_eq!(warp_pixel(&px, &Homography::translation(5.0, -3.0)).unwrap(), Vector2::new(15.0, 7.0));
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(warp_pixel(&Vector2::new(-1.0, 3.0), &h), Err(GeometryError::PointAtInfinity));
        assert!(Homography::new(Matrix3::zeros()).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let eye = Vector3::new(3.0, -2.0, 1.5);
        let v = CameraView::look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
        assert_relative_eq!(v.center(), eye, epsilon = 1e-12);
        let p = project(&Vector3::zeros(), &v, &k0()).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(160.0, 120.0), epsilon = 1e-9);
        // world up appears towards smaller row indices
        let up = project(&Vector3::new(0.0, 0.0, 0.2), &v, &k0()).unwrap();
        assert!(up.pixel.y < 120.0);
    }

    #[test]
    fn fit_recovers_exact_homography() {
        let h = Homography::new(Matrix3::new(1.1, 0.05, 4.0, -0.03, 0.95, -2.0, 1e-4, -2e-4, 1.0)).unwrap();
        let src: Vec<_> = [(0.0, 0.0), (100.0, 3.0), (7.0, 90.0), (120.0, 80.0), (50.0, 40.0)]
            .iter()
            .map(|&(x, y)| Vector2::new(x, y))
            .collect();
        let dst: Vec<_> = src.iter().map(|p| h.warp(p).unwrap()).collect();
        let est = Homography::fit(&src, &dst).unwrap();
        assert_relative_eq!(est.matrix, h.matrix, epsilon = 1e-9);
    }

    fn arb_view() -> impl Strategy<Value = CameraView> {
        (any::<u64>(), -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(s, x, y, z)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            CameraView::new(random_rotation(&mut rng), Vector3::new(x, y, z)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(view in arb_view(), u in 0.0..320.0f64, v in 0.0..240.0f64, z in 0.1..50.0f64) {
            let k = k0();
            let p = back_project(&Vector2::new(u, v), z, &view, &k).unwrap();
            let q = project(&p, &view, &k).unwrap();
            prop_assert!((q.pixel - Vector2::new(u, v)).norm() < 1e-6);
            prop_assert!((q.depth - z).abs() < 1e-6 * z.max(1.0));
        }

        #[test]
        fn rigid_preserves_distances(seed in any::<u64>(), t in prop::array::uniform3(-5.0..5.0f64)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rotation(&mut rng);
            let pts: Vec<_> = (0..8).map(|_| Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
            let out = apply_rigid(&pts, &r, &Vector3::from(t)).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert!(((pts[i] - pts[j]).norm() - (out[i] - out[j]).norm()).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn warp_unwarp_round_trip(
            a in prop::array::uniform8(-0.2..0.2f64),
            px in 0.0..320.0f64, py in 0.0..240.0f64,
        ) {
            let m = Matrix3::new(1.0 + a[0], a[1], 20.0 * a[2], a[3], 1.0 + a[4], 20.0 * a[5], 1e-3 * a[6], 1e-3 * a[7], 1.0);
            let h = Homography::new(m).unwrap();
            let p = Vector2::new(px, py);
            let q = h.warp(&p).unwrap();
            let back = h.inverse().unwrap().warp(&q).unwrap();
            prop_assert!((back - p).norm() < 1e-8);
        }
    }
}
