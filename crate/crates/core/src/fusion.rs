//! Strapdown INS mechanization and a 15-state error-state Kalman filter.
//!
//! Navigation runs in a flat-Earth local ENU frame (vertiport-scale
//! trajectories; Earth rotation and transport rate are far below sensor
//! noise at this scale). The error state is
//! [delta_pos, delta_vel, delta_theta, delta_accel_bias, delta_gyro_bias]
//! with the attitude error as a body-frame rotation vector applied
//! multiplicatively on the right of the quaternion.
//!
//! The filter object is single-owner stateful: one logical owner mutates it,
//! and measurement streams are merged into one time-ordered queue before it.

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::atmosphere::G0;
use crate::math::chi2_quantile;

/// Gravity in the local ENU frame (up is positive z).
pub fn gravity_enu() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -G0)
}

/// Default innovation-gate tail probability.
pub const DEFAULT_GATE_P: f64 = 1e-3;

pub type Cov15 = SMatrix<f64, 15, 15>;

/// Full navigation state.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub time_s: f64,
    pub position_enu_m: Vector3<f64>,
    pub velocity_enu_mps: Vector3<f64>,
    /// Body-to-nav rotation.
    pub attitude: UnitQuaternion<f64>,
    pub accel_bias_mps2: Vector3<f64>,
    pub gyro_bias_radps: Vector3<f64>,
}

impl NavState {
    pub fn at_rest(time_s: f64, position_enu_m: Vector3<f64>) -> Self {
        Self {
            time_s,
            position_enu_m,
            velocity_enu_mps: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            accel_bias_mps2: Vector3::zeros(),
            gyro_bias_radps: Vector3::zeros(),
        }
    }
}

/// One IMU sample: specific force and angular rate over an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub specific_force_mps2: Vector3<f64>,
    pub angular_rate_radps: Vector3<f64>,
    pub dt_s: f64,
}

/// IMU stochastic model (white-noise and bias random-walk densities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoiseParams {
    /// Accelerometer white noise density ((m/s^2)/sqrt(Hz)).
    pub accel_noise_density: f64,
    /// Gyro white noise density ((rad/s)/sqrt(Hz)).
    pub gyro_noise_density: f64,
    /// Accelerometer bias random walk density ((m/s^2)/sqrt(s)).
    pub accel_bias_random_walk: f64,
    /// Gyro bias random walk density ((rad/s)/sqrt(s)).
    pub gyro_bias_random_walk: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        // Industrial-grade MEMS class.
        Self {
            accel_noise_density: 0.02,
            gyro_noise_density: 2e-4,
            accel_bias_random_walk: 1e-4,
            gyro_bias_random_walk: 1e-6,
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Integrate one IMU sample: quaternion exponential for attitude, rotated
/// specific force plus gravity for velocity, trapezoidal position.
pub fn strapdown_propagate(state: &NavState, imu: &ImuSample) -> NavState {
    let dt = imu.dt_s;
    let rate = imu.angular_rate_radps - state.gyro_bias_radps;
    let force = imu.specific_force_mps2 - state.accel_bias_mps2;

    let accel = state.attitude * force + gravity_enu();
    let velocity_new = state.velocity_enu_mps + accel * dt;
    let position_new =
        state.position_enu_m + (state.velocity_enu_mps + velocity_new) * (0.5 * dt);
    let attitude_new = state.attitude * UnitQuaternion::from_scaled_axis(rate * dt);

    NavState {
        time_s: state.time_s + dt,
        position_enu_m: position_new,
        velocity_enu_mps: velocity_new,
        attitude: attitude_new,
        accel_bias_mps2: state.accel_bias_mps2,
        gyro_bias_radps: state.gyro_bias_radps,
    }
}

/// Propagate the error covariance: P <- F P F^T + Q with the linearized
/// 15-state error dynamics.
pub fn ekf_predict(
    cov: &Cov15,
    state: &NavState,
    imu: &ImuSample,
    noise: &ImuNoiseParams,
) -> Cov15 {
    let dt = imu.dt_s;
    let r = state.attitude.to_rotation_matrix();
    let force = imu.specific_force_mps2 - state.accel_bias_mps2;
    let rate = imu.angular_rate_radps - state.gyro_bias_radps;

    let mut f = Cov15::identity();
    // delta_pos' = delta_vel
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    // delta_vel' = -R [f]x delta_theta - R delta_ba
    f.fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&(-(r.matrix() * skew(&force)) * dt));
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-r.matrix() * dt));
    // delta_theta' = -[w]x delta_theta - delta_bg
    f.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(Matrix3::identity() - skew(&rate) * dt));
    f.fixed_view_mut::<3, 3>(6, 12)
        .copy_from(&(-Matrix3::identity() * dt));

    let mut q = Cov15::zeros();
    let vel_q = noise.accel_noise_density.powi(2) * dt;
    let att_q = noise.gyro_noise_density.powi(2) * dt;
    let ba_q = noise.accel_bias_random_walk.powi(2) * dt;
    let bg_q = noise.gyro_bias_random_walk.powi(2) * dt;
    for i in 0..3 {
        q[(3 + i, 3 + i)] = vel_q;
        q[(6 + i, 6 + i)] = att_q;
        q[(9 + i, 9 + i)] = ba_q;
        q[(12 + i, 12 + i)] = bg_q;
    }

    symmetrize(&(f * cov * f.transpose() + q))
}

pub fn symmetrize(m: &Cov15) -> Cov15 {
    0.5 * (m + m.transpose())
}

/// Outcome of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationReport {
    pub accepted: bool,
    /// Normalized innovation squared.
    pub nis: f64,
    /// Chi-square gate the NIS was tested against.
    pub gate: f64,
    pub innovation: Vec<f64>,
    pub dof: usize,
}

fn fold_error_state(state: &NavState, dx: &SVector<f64, 15>) -> NavState {
    let dtheta = Vector3::new(dx[6], dx[7], dx[8]);
    NavState {
        time_s: state.time_s,
        position_enu_m: state.position_enu_m + Vector3::new(dx[0], dx[1], dx[2]),
        velocity_enu_mps: state.velocity_enu_mps + Vector3::new(dx[3], dx[4], dx[5]),
        attitude: state.attitude * UnitQuaternion::from_scaled_axis(dtheta),
        accel_bias_mps2: state.accel_bias_mps2 + Vector3::new(dx[9], dx[10], dx[11]),
        gyro_bias_radps: state.gyro_bias_radps + Vector3::new(dx[12], dx[13], dx[14]),
    }
}

/// Shared Joseph-form update with a chi-square innovation gate. A gated
/// measurement leaves state and covariance untouched.
fn gated_update<const M: usize>(
    state: &NavState,
    cov: &Cov15,
    h: &SMatrix<f64, M, 15>,
    innovation: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
    gate_p: f64,
) -> (NavState, Cov15, InnovationReport) {
    let s = h * cov * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .unwrap_or_else(SMatrix::<f64, M, M>::zeros);
    let nis = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    let gate = chi2_quantile(M, 1.0 - gate_p);
    let report = |accepted| InnovationReport {
        accepted,
        nis,
        gate,
        innovation: innovation.iter().cloned().collect(),
        dof: M,
    };
    if !nis.is_finite() || nis > gate {
        return (state.clone(), *cov, report(false));
    }

    let k = cov * h.transpose() * s_inv;
    let dx: SVector<f64, 15> = k * innovation;
    let i_kh = Cov15::identity() - k * h;
    let cov_new = symmetrize(&(i_kh * cov * i_kh.transpose() + k * r * k.transpose()));
    (fold_error_state(state, &dx), cov_new, report(true))
}

/// Position-fix update (3 dof), e.g. from the differential GNSS solution.
pub fn ekf_update_position(
    state: &NavState,
    cov: &Cov15,
    measured_enu_m: &Vector3<f64>,
    r: &Matrix3<f64>,
    gate_p: f64,
) -> (NavState, Cov15, InnovationReport) {
    let mut h = SMatrix::<f64, 3, 15>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    let innovation = measured_enu_m - state.position_enu_m;
    gated_update(state, cov, &h, &innovation, r, gate_p)
}

/// Scalar altitude update (1 dof) on the up component.
pub fn ekf_update_altitude(
    state: &NavState,
    cov: &Cov15,
    altitude_m: f64,
    sigma_m: f64,
    gate_p: f64,
) -> (NavState, Cov15, InnovationReport) {
    let mut h = SMatrix::<f64, 1, 15>::zeros();
    h[(0, 2)] = 1.0;
    let innovation = SVector::<f64, 1>::new(altitude_m - state.position_enu_m.z);
    let r = SMatrix::<f64, 1, 1>::new(sigma_m * sigma_m);
    gated_update(state, cov, &h, &innovation, &r, gate_p)
}

/// A 6-dof pose measurement: body position and body-to-nav attitude with a
/// joint covariance over [delta_pos, delta_theta(body)].
#[derive(Debug, Clone, PartialEq)]
pub struct PoseMeasurement {
    pub position_enu_m: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub covariance: SMatrix<f64, 6, 6>,
}

/// Joint position + attitude update (6 dof). The attitude innovation is the
/// body-frame rotation vector from predicted to measured attitude.
pub fn ekf_update_pose(
    state: &NavState,
    cov: &Cov15,
    pose: &PoseMeasurement,
    gate_p: f64,
) -> (NavState, Cov15, InnovationReport) {
    let mut h = SMatrix::<f64, 6, 15>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&Matrix3::identity());

    let dpos = pose.position_enu_m - state.position_enu_m;
    let datt = (state.attitude.inverse() * pose.attitude).scaled_axis();
    let mut innovation = SVector::<f64, 6>::zeros();
    innovation.fixed_rows_mut::<3>(0).copy_from(&dpos);
    innovation.fixed_rows_mut::<3>(3).copy_from(&datt);
    gated_update(state, cov, &h, &innovation, &pose.covariance, gate_p)
}

/// Diagonal initial uncertainty of the error state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialUncertainty {
    pub position_sigma_m: f64,
    pub velocity_sigma_mps: f64,
    pub attitude_sigma_rad: f64,
    pub accel_bias_sigma_mps2: f64,
    pub gyro_bias_sigma_radps: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            position_sigma_m: 2.0,
            velocity_sigma_mps: 0.5,
            attitude_sigma_rad: 0.02,
            accel_bias_sigma_mps2: 0.05,
            gyro_bias_sigma_radps: 1e-3,
        }
    }
}

impl InitialUncertainty {
    pub fn covariance(&self) -> Cov15 {
        let mut p = Cov15::zeros();
        for i in 0..3 {
            p[(i, i)] = self.position_sigma_m.powi(2);
            p[(3 + i, 3 + i)] = self.velocity_sigma_mps.powi(2);
            p[(6 + i, 6 + i)] = self.attitude_sigma_rad.powi(2);
            p[(9 + i, 9 + i)] = self.accel_bias_sigma_mps2.powi(2);
            p[(12 + i, 12 + i)] = self.gyro_bias_sigma_radps.powi(2);
        }
        p
    }
}

/// Coarse leveling: the rotation aligning the mean rest specific force with
/// the up axis. Yaw stays at zero (unobservable from accelerometers alone).
pub fn coarse_level_attitude(mean_specific_force: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(mean_specific_force, &Vector3::new(0.0, 0.0, G0))
        .unwrap_or_else(UnitQuaternion::identity)
}

/// Single-owner navigation filter binding strapdown and error-state updates.
#[derive(Debug, Clone)]
pub struct NavFilter {
    pub state: NavState,
    pub cov: Cov15,
    pub noise: ImuNoiseParams,
    pub gate_p: f64,
    pub rejected_updates: usize,
}

impl NavFilter {
    /// Initialize from a first accepted position fix plus coarse leveling.
    pub fn initialize(
        time_s: f64,
        position_enu_m: Vector3<f64>,
        mean_specific_force: &Vector3<f64>,
        uncertainty: &InitialUncertainty,
        noise: ImuNoiseParams,
        gate_p: f64,
    ) -> Self {
        let mut state = NavState::at_rest(time_s, position_enu_m);
        state.attitude = coarse_level_attitude(mean_specific_force);
        Self {
            state,
            cov: uncertainty.covariance(),
            noise,
            gate_p,
            rejected_updates: 0,
        }
    }

    pub fn propagate(&mut self, imu: &ImuSample) {
        self.cov = ekf_predict(&self.cov, &self.state, imu, &self.noise);
        self.state = strapdown_propagate(&self.state, imu);
    }

    pub fn update_position(&mut self, meas: &Vector3<f64>, r: &Matrix3<f64>) -> InnovationReport {
        let (state, cov, report) =
            ekf_update_position(&self.state, &self.cov, meas, r, self.gate_p);
        self.apply(state, cov, &report);
        report
    }

    pub fn update_altitude(&mut self, altitude_m: f64, sigma_m: f64) -> InnovationReport {
        let (state, cov, report) =
            ekf_update_altitude(&self.state, &self.cov, altitude_m, sigma_m, self.gate_p);
        self.apply(state, cov, &report);
        report
    }

    pub fn update_pose(&mut self, pose: &PoseMeasurement) -> InnovationReport {
        let (state, cov, report) = ekf_update_pose(&self.state, &self.cov, pose, self.gate_p);
        self.apply(state, cov, &report);
        report
    }

    fn apply(&mut self, state: NavState, cov: Cov15, report: &InnovationReport) {
        if report.accepted {
            self.state = state;
            self.cov = cov;
        } else {
            self.rejected_updates += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn rest_imu(dt: f64) -> ImuSample {
        ImuSample {
            specific_force_mps2: Vector3::new(0.0, 0.0, G0),
            angular_rate_radps: Vector3::zeros(),
            dt_s: dt,
        }
    }

    #[test]
    fn stationary_equilibrium() {
        let mut state = NavState::at_rest(0.0, Vector3::new(1.0, 2.0, 3.0));
        for _ in 0..100 {
            let next = strapdown_propagate(&state, &rest_imu(0.01));
            assert!((next.position_enu_m - state.position_enu_m).norm() < 1e-9);
            assert!((next.velocity_enu_mps - state.velocity_enu_mps).norm() < 1e-9);
            state = next;
        }
        assert!((state.position_enu_m - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-9);
    }

    #[test]
    fn constant_thrust_kinematics() {
        // 1 m/s^2 east for 10 s at 100 Hz: v = 10 m/s, p = 50 m.
        let mut state = NavState::at_rest(0.0, Vector3::zeros());
        let imu = ImuSample {
            specific_force_mps2: Vector3::new(1.0, 0.0, G0),
            angular_rate_radps: Vector3::zeros(),
            dt_s: 0.01,
        };
        for _ in 0..1000 {
            state = strapdown_propagate(&state, &imu);
        }
        assert_relative_eq!(state.velocity_enu_mps.x, 10.0, max_relative = 1e-3);
        assert_relative_eq!(state.position_enu_m.x, 50.0, max_relative = 1e-3);
    }

    #[test]
    fn yaw_rate_integration() {
        // pi/2 rad/s for 1 s rotates heading by 90 degrees.
        let mut state = NavState::at_rest(0.0, Vector3::zeros());
        let imu = ImuSample {
            specific_force_mps2: Vector3::new(0.0, 0.0, G0),
            angular_rate_radps: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            dt_s: 0.01,
        };
        for _ in 0..100 {
            state = strapdown_propagate(&state, &imu);
        }
        let (_, _, yaw) = state.attitude.euler_angles();
        assert!(
            (yaw.to_degrees() - 90.0).abs() < 0.01,
            "yaw = {}",
            yaw.to_degrees()
        );
    }

    #[test]
    fn predict_identity_limit() {
        let state = NavState::at_rest(0.0, Vector3::zeros());
        let cov = InitialUncertainty::default().covariance();
        let zero_noise = ImuNoiseParams {
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            accel_bias_random_walk: 0.0,
            gyro_bias_random_walk: 0.0,
        };
        let mut imu = rest_imu(0.0);
        let next = ekf_predict(&cov, &state, &imu, &zero_noise);
        assert!((next - cov).norm() < 1e-15);

        imu.dt_s = 1e-6;
        let next = ekf_predict(&cov, &state, &imu, &zero_noise);
        assert!((next - cov).norm() < 1e-4);
    }

    #[test]
    fn predict_trace_grows_with_noise() {
        let state = NavState::at_rest(0.0, Vector3::zeros());
        let mut cov = InitialUncertainty::default().covariance();
        let noise = ImuNoiseParams::default();
        for _ in 0..100 {
            let next = ekf_predict(&cov, &state, &rest_imu(0.01), &noise);
            assert!(next.trace() > cov.trace());
            cov = next;
        }
    }

    #[test]
    fn predict_matches_monte_carlo_coasting() {
        // 10 s of coasting on white IMU noise only: the propagated position
        // variance must match a 1e4-run Monte Carlo of the strapdown within
        // 10%.
        let dt = 0.01_f64;
        let steps = 1000;
        let noise = ImuNoiseParams {
            accel_noise_density: 0.02,
            gyro_noise_density: 2e-4,
            accel_bias_random_walk: 0.0,
            gyro_bias_random_walk: 0.0,
        };
        let sigma_f = noise.accel_noise_density / dt.sqrt();
        let sigma_w = noise.gyro_noise_density / dt.sqrt();

        let mut cov = Cov15::zeros();
        let ref_state = NavState::at_rest(0.0, Vector3::zeros());
        for _ in 0..steps {
            cov = ekf_predict(&cov, &ref_state, &rest_imu(dt), &noise);
        }

        let runs = 10_000;
        let mut sum_sq = Vector3::zeros();
        for run in 0..runs {
            let mut rng = ChaCha12Rng::seed_from_u64(7000 + run);
            let nf = Normal::new(0.0, sigma_f).unwrap();
            let nw = Normal::new(0.0, sigma_w).unwrap();
            let mut state = NavState::at_rest(0.0, Vector3::zeros());
            for _ in 0..steps {
                let imu = ImuSample {
                    specific_force_mps2: Vector3::new(
                        nf.sample(&mut rng),
                        nf.sample(&mut rng),
                        G0 + nf.sample(&mut rng),
                    ),
                    angular_rate_radps: Vector3::new(
                        nw.sample(&mut rng),
                        nw.sample(&mut rng),
                        nw.sample(&mut rng),
                    ),
                    dt_s: dt,
                };
                state = strapdown_propagate(&state, &imu);
            }
            sum_sq += state.position_enu_m.component_mul(&state.position_enu_m);
        }
        let mc_var = sum_sq / runs as f64;
        for i in 0..3 {
            let predicted = cov[(i, i)];
            assert!(
                (mc_var[i] - predicted).abs() < 0.10 * predicted,
                "axis {i}: MC {} vs predicted {}",
                mc_var[i],
                predicted
            );
        }
    }

    #[test]
    fn position_update_zero_innovation() {
        let state = NavState::at_rest(0.0, Vector3::new(5.0, -3.0, 12.0));
        let cov = InitialUncertainty::default().covariance();
        let r = Matrix3::identity() * 0.25;
        let (next, cov_next, report) =
            ekf_update_position(&state, &cov, &state.position_enu_m, &r, DEFAULT_GATE_P);
        assert!(report.accepted);
        assert_eq!(report.nis, 0.0);
        assert_eq!(next.position_enu_m, state.position_enu_m);
        assert_eq!(next.velocity_enu_mps, state.velocity_enu_mps);
        assert!(cov_next.trace() < cov.trace());
    }

    #[test]
    fn position_update_tight_sigma_limit() {
        let state = NavState::at_rest(0.0, Vector3::zeros());
        let cov = InitialUncertainty::default().covariance();
        let meas = Vector3::new(0.5, -0.2, 0.3);
        let r = Matrix3::identity() * 1e-16;
        let (next, _, report) = ekf_update_position(&state, &cov, &meas, &r, 1e-12);
        assert!(report.accepted);
        assert!((next.position_enu_m - meas).norm() < 1e-6);
    }

    #[test]
    fn position_update_outlier_gated() {
        let state = NavState::at_rest(0.0, Vector3::zeros());
        let cov = InitialUncertainty::default().covariance();
        let meas = Vector3::new(50.0, 0.0, 0.0);
        let r = Matrix3::identity();
        let (next, cov_next, report) =
            ekf_update_position(&state, &cov, &meas, &r, DEFAULT_GATE_P);
        assert!(!report.accepted);
        assert!(report.nis > report.gate);
        assert_eq!(next, state);
        assert_eq!(cov_next, cov);
    }

    #[test]
    fn altitude_update_trio() {
        let state = NavState::at_rest(0.0, Vector3::new(0.0, 0.0, 10.0));
        let cov = InitialUncertainty::default().covariance();

        let (next, cov_next, report) =
            ekf_update_altitude(&state, &cov, 10.0, 0.5, DEFAULT_GATE_P);
        assert!(report.accepted);
        assert_eq!(next.position_enu_m.z, 10.0);
        assert!(cov_next[(2, 2)] < cov[(2, 2)]);

        let (next, _, report) = ekf_update_altitude(&state, &cov, 10.7, 1e-9, 1e-12);
        assert!(report.accepted);
        assert!((next.position_enu_m.z - 10.7).abs() < 1e-6);

        let (next, _, report) = ekf_update_altitude(&state, &cov, 60.0, 0.5, DEFAULT_GATE_P);
        assert!(!report.accepted);
        assert_eq!(next.position_enu_m.z, 10.0);
    }

    #[test]
    fn pose_update_trio() {
        let state = NavState::at_rest(0.0, Vector3::zeros());
        let cov = InitialUncertainty::default().covariance();
        let mut pose_cov = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            pose_cov[(i, i)] = 0.01;
            pose_cov[(3 + i, 3 + i)] = (0.1_f64).to_radians().powi(2);
        }

        // Zero innovation.
        let pose = PoseMeasurement {
            position_enu_m: state.position_enu_m,
            attitude: state.attitude,
            covariance: pose_cov,
        };
        let (next, cov_next, report) = ekf_update_pose(&state, &cov, &pose, DEFAULT_GATE_P);
        assert!(report.accepted && report.nis == 0.0);
        assert_eq!(next.position_enu_m, state.position_enu_m);
        assert!(cov_next.trace() < cov.trace());

        // A 1-degree tilt seen by an accurate pose sensor is mostly recovered.
        let tilt = UnitQuaternion::from_scaled_axis(Vector3::new(1f64.to_radians(), 0.0, 0.0));
        let pose = PoseMeasurement {
            position_enu_m: state.position_enu_m,
            attitude: tilt,
            covariance: pose_cov,
        };
        let (next, _, report) = ekf_update_pose(&state, &cov, &pose, DEFAULT_GATE_P);
        assert!(report.accepted);
        let residual = (next.attitude.inverse() * tilt).angle();
        assert!(
            residual.to_degrees() < 0.05,
            "residual tilt = {} deg",
            residual.to_degrees()
        );

        // Inconsistent pose is gated.
        let pose = PoseMeasurement {
            position_enu_m: Vector3::new(40.0, 0.0, 0.0),
            attitude: state.attitude,
            covariance: pose_cov,
        };
        let (next, _, report) = ekf_update_pose(&state, &cov, &pose, DEFAULT_GATE_P);
        assert!(!report.accepted);
        assert_eq!(next, state);
    }

    #[test]
    fn infinite_r_leaves_state_unchanged() {
        let state = NavState::at_rest(0.0, Vector3::new(1.0, 1.0, 1.0));
        let cov = InitialUncertainty::default().covariance();
        let r = Matrix3::identity() * 1e18;
        let meas = Vector3::new(1.5, 1.0, 1.0);
        let (next, cov_next, report) = ekf_update_position(&state, &cov, &meas, &r, 0.5);
        assert!(report.accepted);
        assert!((next.position_enu_m - state.position_enu_m).norm() < 1e-12);
        assert!((cov_next - cov).norm() < 1e-12 * cov.norm());
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let mut filter = NavFilter::initialize(
            0.0,
            Vector3::zeros(),
            &Vector3::new(0.0, 0.0, G0),
            &InitialUncertainty::default(),
            ImuNoiseParams::default(),
            DEFAULT_GATE_P,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 0.2).unwrap();
        for k in 0..500 {
            let imu = ImuSample {
                specific_force_mps2: Vector3::new(
                    n.sample(&mut rng),
                    n.sample(&mut rng),
                    G0 + n.sample(&mut rng),
                ),
                angular_rate_radps: Vector3::new(0.0, 0.0, 0.01),
                dt_s: 0.01,
            };
            filter.propagate(&imu);
            if k % 20 == 0 {
                let meas = filter.state.position_enu_m
                    + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                filter.update_position(&meas, &(Matrix3::identity() * 0.04));
            }
            let asym = (filter.cov - filter.cov.transpose()).norm();
            assert!(asym < 1e-12, "asymmetry {asym}");
            let min_ev = filter
                .cov
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            assert!(
                min_ev >= -1e-12 * filter.cov.trace(),
                "min eigenvalue {min_ev}"
            );
        }
    }

    #[test]
    fn coarse_leveling_recovers_tilt() {
        // Body tilted 5 degrees about east: rest specific force in the body
        // frame is R^T (0,0,g).
        let tilt = UnitQuaternion::from_scaled_axis(Vector3::new(5f64.to_radians(), 0.0, 0.0));
        let f_body = tilt.inverse() * Vector3::new(0.0, 0.0, G0);
        let leveled = coarse_level_attitude(&f_body);
        let err = (leveled.inverse() * tilt).angle();
        assert!(
            err.to_degrees() < 1e-9,
            "leveling error {} deg",
            err.to_degrees()
        );
    }
}
