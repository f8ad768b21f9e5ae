//! Marker-based visual positioning.
//!
//! Pinhole projection (no lens distortion), camera pose by Gauss-Newton on
//! corner reprojection residuals seeded from a planar homography, multi-scale
//! marker selection, back-propagation of 3D reconstruction errors to the
//! intrinsic parameters, and propagation of intrinsic uncertainty into the
//! pose covariance. Corner detection itself is simulated upstream; this
//! module starts from pixel observations.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gauss-Newton stop threshold on the parameter step norm.
pub const POSE_STEP_TOLERANCE: f64 = 1e-10;
/// Gauss-Newton iteration cap.
pub const POSE_MAX_ITERATIONS: usize = 50;
/// Altitude above which small-marker fallback poses are not trusted.
pub const SMALL_MARKER_MAX_ALTITUDE_M: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum VisionError {
    #[error("point has non-positive depth in the camera frame")]
    BehindCamera,
    #[error("need at least {needed} corner observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },
    #[error("unknown marker id {0}")]
    UnknownMarker(u32),
    #[error("pose optimization failed to converge")]
    ConvergenceFailure,
    #[error("no usable marker detections")]
    NoDetection,
    #[error("intrinsic parameters unobservable from this corner layout")]
    UnobservableParameters,
    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, VisionError>;

/// Pinhole camera intrinsics with their uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx_px: f64,
    pub fy_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub image_width_px: u32,
    pub image_height_px: u32,
    /// Covariance over (fx, fy, cx, cy).
    #[serde(default = "Matrix4::zeros")]
    pub intrinsic_cov: Matrix4<f64>,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx_px > 0.0 && self.fy_px > 0.0) {
            return Err(VisionError::Domain("focal lengths must be positive".into()));
        }
        let inside = self.cx_px > 0.0
            && self.cx_px < self.image_width_px as f64
            && self.cy_px > 0.0
            && self.cy_px < self.image_height_px as f64;
        if !inside {
            return Err(VisionError::Domain(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0
            && px.x <= self.image_width_px as f64
            && px.y >= 0.0
            && px.y <= self.image_height_px as f64
    }

    fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx_px,
            0.0,
            -self.cx_px / self.fx_px,
            0.0,
            1.0 / self.fy_px,
            -self.cy_px / self.fy_px,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A square fiducial marker with surveyed corner positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerDefinition {
    pub id: u32,
    pub side_length_m: f64,
    /// Corner order: (-s/2,-s/2), (s/2,-s/2), (s/2,s/2), (-s/2,s/2) in the
    /// marker frame before yaw.
    pub corners_world_m: [Vector3<f64>; 4],
    pub family: String,
}

impl MarkerDefinition {
    /// Square marker on a horizontal surface at `center`, rotated by yaw.
    pub fn square(id: u32, side_length_m: f64, center: Vector3<f64>, yaw_rad: f64) -> Self {
        let h = side_length_m / 2.0;
        let local = [
            Vector2::new(-h, -h),
            Vector2::new(h, -h),
            Vector2::new(h, h),
            Vector2::new(-h, h),
        ];
        let (sin_y, cos_y) = yaw_rad.sin_cos();
        let corners_world_m = local.map(|c| {
            center + Vector3::new(cos_y * c.x - sin_y * c.y, sin_y * c.x + cos_y * c.y, 0.0)
        });
        Self {
            id,
            side_length_m,
            corners_world_m,
            family: "tag25h9".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_length_m > 0.0) {
            return Err(VisionError::Domain("side length must be positive".into()));
        }
        // Coplanarity: fourth corner must lie on the plane of the first three.
        let n = (self.corners_world_m[1] - self.corners_world_m[0])
            .cross(&(self.corners_world_m[2] - self.corners_world_m[0]));
        let n = n / n.norm();
        let d = n.dot(&(self.corners_world_m[3] - self.corners_world_m[0]));
        if d.abs() > 1e-9 {
            return Err(VisionError::Domain(format!(
                "marker {} corners deviate {d:.2e} m from a plane",
                self.id
            )));
        }
        Ok(())
    }
}

/// One detected marker corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub marker_id: u32,
    pub corner_index: u8,
    pub pixel: Vector2<f64>,
    pub sigma_px: f64,
}

/// Camera pose: camera center in the world plus world-to-camera rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub position_world_m: Vector3<f64>,
    pub rotation_world_to_camera: Rotation3<f64>,
}

impl CameraPose {
    /// Nadir-looking camera: camera x along world x, camera z pointing down.
    pub fn looking_down(position_world_m: Vector3<f64>, yaw_rad: f64) -> Self {
        let flip = Rotation3::from_matrix_unchecked(Matrix3::new(
            1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0,
        ));
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw_rad);
        Self {
            position_world_m,
            rotation_world_to_camera: flip * yaw.inverse(),
        }
    }

    pub fn camera_point(&self, world_point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_world_to_camera * (world_point - self.position_world_m)
    }
}

/// Pose estimate with covariance over [delta_position, delta_rotation]
/// (rotation perturbation applied on the right of the world-to-camera
/// rotation).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: CameraPose,
    pub covariance: SMatrix<f64, 6, 6>,
    pub reprojection_rms_px: f64,
    pub iterations: usize,
}

/// Standard pinhole projection.
pub fn project_point(
    world_point: &Vector3<f64>,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector2<f64>> {
    let p = pose.camera_point(world_point);
    if p.z <= 1e-12 {
        return Err(VisionError::BehindCamera);
    }
    Ok(Vector2::new(
        intrinsics.fx_px * p.x / p.z + intrinsics.cx_px,
        intrinsics.fy_px * p.y / p.z + intrinsics.cy_px,
    ))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

struct Correspondence {
    world: Vector3<f64>,
    pixel: Vector2<f64>,
    sigma_px: f64,
}

fn gather_correspondences(
    corners: &[CornerObservation],
    markers: &[MarkerDefinition],
) -> Result<Vec<Correspondence>> {
    corners
        .iter()
        .map(|obs| {
            let marker = markers
                .iter()
                .find(|m| m.id == obs.marker_id)
                .ok_or(VisionError::UnknownMarker(obs.marker_id))?;
            if obs.corner_index > 3 {
                return Err(VisionError::Domain(format!(
                    "corner index {} out of range",
                    obs.corner_index
                )));
            }
            Ok(Correspondence {
                world: marker.corners_world_m[obs.corner_index as usize],
                pixel: obs.pixel,
                sigma_px: obs.sigma_px,
            })
        })
        .collect()
}

/// Best-fit plane through a point set: (origin, e1, e2, normal).
#[allow(clippy::type_complexity)]
fn fit_plane(
    points: &[Vector3<f64>],
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    // Axes sorted by eigenvalue: the largest two span the plane.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    if eig.eigenvalues[idx[1]] < 1e-12 * eig.eigenvalues[idx[0]].max(1e-300) {
        // Collinear points cannot anchor a homography.
        return Err(VisionError::ConvergenceFailure);
    }
    let e1 = eig.eigenvectors.column(idx[0]).into_owned();
    let e2 = eig.eigenvectors.column(idx[1]).into_owned();
    let normal = e1.cross(&e2);
    Ok((centroid, e1, e2, normal))
}

/// Hartley-normalized DLT homography from in-plane coordinates to pixels.
fn dlt_homography(plane_pts: &[Vector2<f64>], pixels: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let normalize = |pts: &[Vector2<f64>]| {
        let n = pts.len() as f64;
        let c = pts.iter().sum::<Vector2<f64>>() / n;
        let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
        let s = if mean_d > 0.0 {
            std::f64::consts::SQRT_2 / mean_d
        } else {
            1.0
        };
        Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
    };
    let t_plane = normalize(plane_pts);
    let t_px = normalize(pixels);

    let n = plane_pts.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for i in 0..n {
        let p = t_plane * Vector3::new(plane_pts[i].x, plane_pts[i].y, 1.0);
        let q = t_px * Vector3::new(pixels[i].x, pixels[i].y, 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    // Null vector of A via the 9x9 normal matrix (the thin SVD of a 2n x 9
    // system does not expose the null space).
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let lambda_max = eig.eigenvalues[order[8]].max(1e-300);
    // Rank 8 is required for a unique homography.
    if eig.eigenvalues[order[1]] < 1e-20 * lambda_max {
        return Err(VisionError::ConvergenceFailure);
    }
    let h = eig.eigenvectors.column(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    t_px.try_inverse()
        .map(|t_px_inv| t_px_inv * h_norm * t_plane)
        .ok_or(VisionError::ConvergenceFailure)
}

fn project_to_so3(m: Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let det = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    Rotation3::from_matrix_unchecked(u * fix * v_t)
}

/// Initial pose from the homography decomposition, resolved to the solution
/// with positive corner depths.
fn pose_from_homography(
    corrs: &[Correspondence],
    intrinsics: &CameraIntrinsics,
) -> Result<CameraPose> {
    let worlds: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
    let (origin, e1, e2, normal) = fit_plane(&worlds)?;
    let plane_pts: Vec<Vector2<f64>> = worlds
        .iter()
        .map(|w| {
            let d = w - origin;
            Vector2::new(e1.dot(&d), e2.dot(&d))
        })
        .collect();
    let pixels: Vec<Vector2<f64>> = corrs.iter().map(|c| c.pixel).collect();
    let h = dlt_homography(&plane_pts, &pixels)?;

    let m = intrinsics.k_inv() * h;
    let m1 = m.column(0).into_owned();
    let m2 = m.column(1).into_owned();
    let m3 = m.column(2).into_owned();
    let mut lambda = 2.0 / (m1.norm() + m2.norm());
    // The plane origin must sit in front of the camera.
    if (lambda * m3).z < 0.0 {
        lambda = -lambda;
    }
    let r1 = lambda * m1;
    let r2 = lambda * m2;
    let r3 = r1.cross(&r2);
    let mut r_plane = Matrix3::zeros();
    r_plane.set_column(0, &r1);
    r_plane.set_column(1, &r2);
    r_plane.set_column(2, &r3);
    let r_plane = project_to_so3(r_plane);
    let t = lambda * m3;

    // x_cam = R_plane [a, b, 0]^T + t with [a, b, 0] = E (p - origin).
    let mut e_rows = Matrix3::zeros();
    e_rows.set_row(0, &e1.transpose());
    e_rows.set_row(1, &e2.transpose());
    e_rows.set_row(2, &normal.transpose());
    let r_wc = project_to_so3(r_plane.matrix() * e_rows);
    let position = origin - r_wc.inverse() * t;

    let pose = CameraPose {
        position_world_m: position,
        rotation_world_to_camera: r_wc,
    };
    if corrs.iter().any(|c| pose.camera_point(&c.world).z <= 0.0) {
        return Err(VisionError::ConvergenceFailure);
    }
    Ok(pose)
}

fn reprojection_rms(corrs: &[Correspondence], pose: &CameraPose, k: &CameraIntrinsics) -> f64 {
    let mut sum = 0.0;
    for c in corrs {
        let p = pose.camera_point(&c.world);
        if p.z <= 1e-12 {
            return f64::INFINITY;
        }
        let px = Vector2::new(k.fx_px * p.x / p.z + k.cx_px, k.fy_px * p.y / p.z + k.cy_px);
        sum += (px - c.pixel).norm_squared();
    }
    (sum / (2.0 * corrs.len() as f64)).sqrt()
}

/// Residuals and Jacobians of the reprojection problem at a pose.
/// Returns (residual stack, J over [dC, dphi], J over [dfx, dfy, dcx, dcy]).
#[allow(clippy::type_complexity)]
fn residuals_and_jacobians(
    corrs: &[Correspondence],
    pose: &CameraPose,
    k: &CameraIntrinsics,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = corrs.len();
    let mut r = DVector::zeros(2 * n);
    let mut j_pose = DMatrix::zeros(2 * n, 6);
    let mut j_intr = DMatrix::zeros(2 * n, 4);
    let rot = *pose.rotation_world_to_camera.matrix();
    for (i, c) in corrs.iter().enumerate() {
        let p = pose.camera_point(&c.world);
        if p.z <= 1e-12 {
            return Err(VisionError::BehindCamera);
        }
        let predicted = Vector2::new(k.fx_px * p.x / p.z + k.cx_px, k.fy_px * p.y / p.z + k.cy_px);
        r[2 * i] = predicted.x - c.pixel.x;
        r[2 * i + 1] = predicted.y - c.pixel.y;

        // d(pixel)/d(camera point)
        let z2 = p.z * p.z;
        let dpx_dp = SMatrix::<f64, 2, 3>::new(
            k.fx_px / p.z,
            0.0,
            -k.fx_px * p.x / z2,
            0.0,
            k.fy_px / p.z,
            -k.fy_px * p.y / z2,
        );
        // d(camera point)/d(camera center) = -R; right perturbation
        // R <- R exp([dphi]x) gives d(camera point)/d(phi) = -R [world - C]x.
        let block_c = dpx_dp * (-rot);
        let block_phi = dpx_dp * (-rot * skew(&(c.world - pose.position_world_m)));
        for row in 0..2 {
            for col in 0..3 {
                j_pose[(2 * i + row, col)] = block_c[(row, col)];
                j_pose[(2 * i + row, 3 + col)] = block_phi[(row, col)];
            }
        }
        // d(pixel)/d(fx, fy, cx, cy)
        j_intr[(2 * i, 0)] = p.x / p.z;
        j_intr[(2 * i, 2)] = 1.0;
        j_intr[(2 * i + 1, 1)] = p.y / p.z;
        j_intr[(2 * i + 1, 3)] = 1.0;
    }
    Ok((r, j_pose, j_intr))
}

fn apply_pose_step(pose: &CameraPose, step: &DVector<f64>) -> CameraPose {
    let dc = Vector3::new(step[0], step[1], step[2]);
    let dphi = Vector3::new(step[3], step[4], step[5]);
    CameraPose {
        position_world_m: pose.position_world_m + dc,
        rotation_world_to_camera: pose.rotation_world_to_camera
            * Rotation3::from_scaled_axis(dphi),
    }
}

/// Gauss-Newton pose from marker corners, seeded by the planar homography.
///
/// Covariance is sigma_px^2 (J^T J)^(-1) with the common pixel sigma of the
/// observations; backtracking keeps the reprojection RMS non-increasing.
pub fn estimate_pose(
    corners: &[CornerObservation],
    markers: &[MarkerDefinition],
    intrinsics: &CameraIntrinsics,
) -> Result<PoseEstimate> {
    if corners.len() < 4 {
        return Err(VisionError::InsufficientObservations {
            needed: 4,
            got: corners.len(),
        });
    }
    let corrs = gather_correspondences(corners, markers)?;
    let mut pose = pose_from_homography(&corrs, intrinsics)?;
    let mut rms = reprojection_rms(&corrs, &pose, intrinsics);
    let mut iterations = 0;
    let mut j_final = None;

    for iter in 0..POSE_MAX_ITERATIONS {
        let (r, j, _) = residuals_and_jacobians(&corrs, &pose, intrinsics)?;
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let step = jtj
            .clone()
            .cholesky()
            .ok_or(VisionError::ConvergenceFailure)?
            .solve(&(-&jtr));

        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let candidate = apply_pose_step(&pose, &(scale * &step));
            let candidate_rms = reprojection_rms(&corrs, &candidate, intrinsics);
            if candidate_rms <= rms + 1e-15 {
                pose = candidate;
                rms = candidate_rms;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        iterations = iter + 1;
        j_final = Some(j);
        if step.norm() * scale < POSE_STEP_TOLERANCE || !improved {
            if !improved && step.norm() > 1e-6 {
                return Err(VisionError::ConvergenceFailure);
            }
            break;
        }
        if iterations == POSE_MAX_ITERATIONS && step.norm() > 1e-6 {
            return Err(VisionError::ConvergenceFailure);
        }
    }

    let j = j_final.ok_or(VisionError::ConvergenceFailure)?;
    let sigma_px = corrs.iter().map(|c| c.sigma_px).sum::<f64>() / corrs.len() as f64;
    let jtj = j.transpose() * &j;
    let cov_dyn =
        jtj.try_inverse().ok_or(VisionError::ConvergenceFailure)? * sigma_px.powi(2);
    let mut covariance = SMatrix::<f64, 6, 6>::zeros();
    for row in 0..6 {
        for col in 0..6 {
            covariance[(row, col)] = cov_dyn[(row, col)];
        }
    }
    Ok(PoseEstimate {
        pose,
        covariance,
        reprojection_rms_px: rms,
        iterations,
    })
}

/// Choose which marker scale feeds the pose solver: the large marker when all
/// four of its corners are in view, otherwise the union of small-marker
/// corners (no mixing). The altitude hint guards the small-marker fallback,
/// whose tiny side length is unusable from high altitude.
pub fn select_marker_scale(
    detections: &[CornerObservation],
    markers: &[MarkerDefinition],
    altitude_hint_m: f64,
) -> Result<Vec<CornerObservation>> {
    if detections.is_empty() {
        return Err(VisionError::NoDetection);
    }
    let max_side = markers
        .iter()
        .map(|m| m.side_length_m)
        .fold(0.0_f64, f64::max);
    let is_large = |id: u32| {
        markers
            .iter()
            .find(|m| m.id == id)
            .is_some_and(|m| m.side_length_m == max_side)
    };

    let mut large_ids: Vec<u32> = detections
        .iter()
        .filter(|d| is_large(d.marker_id))
        .map(|d| d.marker_id)
        .collect();
    large_ids.sort_unstable();
    large_ids.dedup();
    for id in large_ids {
        let mut seen = [false; 4];
        for d in detections.iter().filter(|d| d.marker_id == id) {
            if d.corner_index < 4 {
                seen[d.corner_index as usize] = true;
            }
        }
        if seen.iter().all(|s| *s) {
            return Ok(detections
                .iter()
                .filter(|d| d.marker_id == id)
                .cloned()
                .collect());
        }
    }

    let small: Vec<CornerObservation> = detections
        .iter()
        .filter(|d| !is_large(d.marker_id))
        .cloned()
        .collect();
    if small.is_empty() || altitude_hint_m > SMALL_MARKER_MAX_ALTITUDE_M {
        return Err(VisionError::NoDetection);
    }
    Ok(small)
}

/// Reconstruct corner world coordinates from their pixels: camera pose from
/// the reference marker, then ray/plane intersection on the reference plane.
/// With erroneous intrinsics the reconstruction deviates from the surveyed
/// corner positions; that deviation is what calibration back-propagation
/// inverts.
pub fn reconstruct_corners(
    observations: &[CornerObservation],
    markers: &[MarkerDefinition],
    reference_marker_id: u32,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<(u32, u8, Vector3<f64>)>> {
    let reference = markers
        .iter()
        .find(|m| m.id == reference_marker_id)
        .ok_or(VisionError::UnknownMarker(reference_marker_id))?;
    let ref_corners: Vec<CornerObservation> = observations
        .iter()
        .filter(|o| o.marker_id == reference_marker_id)
        .cloned()
        .collect();
    let estimate = estimate_pose(&ref_corners, std::slice::from_ref(reference), intrinsics)?;
    let pose = &estimate.pose;

    let (origin, e1, e2, _) = fit_plane(&reference.corners_world_m)?;
    let normal = e1.cross(&e2);

    let k_inv = intrinsics.k_inv();
    let r_cw = pose.rotation_world_to_camera.inverse();
    observations
        .iter()
        .filter(|o| o.marker_id != reference_marker_id)
        .map(|o| {
            let ray_cam = k_inv * Vector3::new(o.pixel.x, o.pixel.y, 1.0);
            let ray_world = r_cw * ray_cam;
            let denom = normal.dot(&ray_world);
            if denom.abs() < 1e-12 {
                return Err(VisionError::Domain(
                    "viewing ray parallel to the marker plane".into(),
                ));
            }
            let t = normal.dot(&(origin - pose.position_world_m)) / denom;
            if t <= 0.0 {
                return Err(VisionError::BehindCamera);
            }
            Ok((
                o.marker_id,
                o.corner_index,
                pose.position_world_m + t * ray_world,
            ))
        })
        .collect()
}

/// Estimated intrinsic error with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicErrorEstimate {
    /// (dfx, dfy, dcx, dcy): the estimated error of the intrinsics in use.
    pub delta: nalgebra::Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub rms_residual_m: f64,
}

fn perturbed_intrinsics(base: &CameraIntrinsics, param: usize, delta: f64) -> CameraIntrinsics {
    let mut k = base.clone();
    match param {
        0 => k.fx_px += delta,
        1 => k.fy_px += delta,
        2 => k.cx_px += delta,
        _ => k.cy_px += delta,
    }
    k
}

/// Back-propagate 3D reconstruction errors to the intrinsic parameters.
///
/// Each view (sample image) contributes its reconstructed-minus-surveyed
/// corner deviations; the sensitivity of every reconstruction to
/// (fx, fy, cx, cy) is taken by central finite differences of the pipeline
/// and the intrinsic error is the least-squares fit of the deviations onto
/// it. A single nadir view of a planar layout leaves the common focal scale
/// unobservable (it trades exactly against camera height), so calibration
/// requires several views including oblique ones; the rank check rejects
/// degenerate view sets.
pub fn backprop_calibration_error(
    views: &[Vec<CornerObservation>],
    markers: &[MarkerDefinition],
    reference_marker_id: u32,
    intrinsics: &CameraIntrinsics,
) -> Result<IntrinsicErrorEstimate> {
    let mut per_view_reconstructions = Vec::with_capacity(views.len());
    let mut n_points = 0;
    for view in views {
        let rec = reconstruct_corners(view, markers, reference_marker_id, intrinsics)?;
        n_points += rec.len();
        per_view_reconstructions.push(rec);
    }
    let distinct_markers = {
        let mut ids: Vec<u32> = views
            .iter()
            .flat_map(|v| v.iter().map(|o| o.marker_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if n_points < 6 || distinct_markers < 2 {
        return Err(VisionError::InsufficientObservations {
            needed: 6,
            got: n_points,
        });
    }

    let truth_of = |marker_id: u32, corner: u8| -> Result<Vector3<f64>> {
        markers
            .iter()
            .find(|m| m.id == marker_id)
            .map(|m| m.corners_world_m[corner as usize])
            .ok_or(VisionError::UnknownMarker(marker_id))
    };

    let mut deltas = DVector::<f64>::zeros(3 * n_points);
    {
        let mut i = 0;
        for rec in &per_view_reconstructions {
            for (mid, corner, point) in rec {
                let diff = point - truth_of(*mid, *corner)?;
                for a in 0..3 {
                    deltas[3 * i + a] = diff[a];
                }
                i += 1;
            }
        }
    }

    // Central finite differences of all reconstructions wrt each intrinsic.
    let mut s = DMatrix::<f64>::zeros(3 * n_points, 4);
    let params = [
        intrinsics.fx_px,
        intrinsics.fy_px,
        intrinsics.cx_px,
        intrinsics.cy_px,
    ];
    for p in 0..4 {
        let h = (1e-4 * params[p].abs()).max(1e-4);
        let plus = perturbed_intrinsics(intrinsics, p, h);
        let minus = perturbed_intrinsics(intrinsics, p, -h);
        let mut i = 0;
        for view in views {
            let rec_plus = reconstruct_corners(view, markers, reference_marker_id, &plus)?;
            let rec_minus = reconstruct_corners(view, markers, reference_marker_id, &minus)?;
            for (rp, rm) in rec_plus.iter().zip(rec_minus.iter()) {
                let d = (rp.2 - rm.2) / (2.0 * h);
                for a in 0..3 {
                    s[(3 * i + a, p)] = d[a];
                }
                i += 1;
            }
        }
    }

    let svd = s.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    if svd.singular_values[3] < 1e-6 * s_max {
        return Err(VisionError::UnobservableParameters);
    }

    let sts = s.transpose() * &s;
    let sts_inv = sts
        .try_inverse()
        .ok_or(VisionError::UnobservableParameters)?;
    let delta_dyn = &sts_inv * (s.transpose() * &deltas);
    let residual = &deltas - &s * &delta_dyn;
    let dof = (3 * n_points).saturating_sub(4).max(1);
    let sigma2 = residual.norm_squared() / dof as f64;

    let mut delta = nalgebra::Vector4::zeros();
    let mut covariance = Matrix4::zeros();
    for i in 0..4 {
        delta[i] = delta_dyn[i];
        for jj in 0..4 {
            covariance[(i, jj)] = sigma2 * sts_inv[(i, jj)];
        }
    }
    Ok(IntrinsicErrorEstimate {
        delta,
        covariance,
        rms_residual_m: (residual.norm_squared() / (3.0 * n_points as f64)).sqrt(),
    })
}

/// Inflate a pose covariance with the intrinsic-parameter uncertainty:
/// total = cov + S K S^T with S = d(pose)/d(intrinsics) at the optimum by
/// implicit-function linearization.
pub fn propagate_intrinsics_to_position(
    estimate: &PoseEstimate,
    corners: &[CornerObservation],
    markers: &[MarkerDefinition],
    intrinsics: &CameraIntrinsics,
) -> Result<SMatrix<f64, 6, 6>> {
    let corrs = gather_correspondences(corners, markers)?;
    let (_, j_pose, j_intr) = residuals_and_jacobians(&corrs, &estimate.pose, intrinsics)?;
    let jtj = j_pose.transpose() * &j_pose;
    let jtj_inv = jtj.try_inverse().ok_or(VisionError::ConvergenceFailure)?;
    // Implicit function theorem at the optimum:
    // d(theta)/d(kappa) = -(J^T J)^(-1) J^T dr/d(kappa).
    let s = -(&jtj_inv * (j_pose.transpose() * &j_intr));
    let inflation = &s * intrinsics.intrinsic_cov * s.transpose();
    let mut total = estimate.covariance;
    for row in 0..6 {
        for col in 0..6 {
            total[(row, col)] += inflation[(row, col)];
        }
    }
    Ok(total)
}
