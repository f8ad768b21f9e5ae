//! Truth trajectory generation on the funnel profile: vertical climb to the
//! take-off hover height, cruise, descent along the approach slope into the
//! low hover point, and vertical touchdown.
//!
//! Velocity is piecewise linear with breakpoints snapped to the sample grid
//! and position is the per-step trapezoidal integral, so the discrete truth
//! is exactly reproducible by the strapdown integrator and segment endpoints
//! are hit to float precision.

use nalgebra::Vector3;

use super::{Result, ScenarioConfig, SimError};
use crate::fusion::NavState;
use crate::requirements::slope_angle_deg;

/// Fixed-rate truth state series.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub dt_s: f64,
    pub states: Vec<NavState>,
}

impl TruthTrajectory {
    pub fn duration_s(&self) -> f64 {
        self.dt_s * (self.states.len().saturating_sub(1)) as f64
    }

    pub fn max_altitude_m(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.position_enu_m.z)
            .fold(f64::MIN, f64::max)
    }
}

/// Per-step speeds of a rest-to-rest trapezoidal profile over distance
/// `length`, with ramp/cruise durations snapped to whole steps. Returns the
/// speed at each step boundary (first and last are zero).
fn trapezoidal_speeds(length: f64, v_max: f64, a_max: f64, dt: f64) -> Vec<f64> {
    if length <= 0.0 {
        return vec![0.0];
    }
    // Triangular profile when the distance cannot fit a cruise phase.
    let v_peak = v_max.min((length * a_max).sqrt());
    let t_acc_ideal = v_peak / a_max;
    let n_acc = (t_acc_ideal / dt).ceil().max(1.0) as usize;
    let t_acc = n_acc as f64 * dt;
    let t_cruise_ideal = (length / v_peak - t_acc).max(0.0);
    let n_cruise = (t_cruise_ideal / dt).ceil() as usize;
    let t_cruise = n_cruise as f64 * dt;
    // Re-fit the peak speed so the snapped profile covers the distance
    // exactly: length = v (t_acc + t_cruise).
    let v = length / (t_acc + t_cruise);

    let mut speeds = Vec::with_capacity(2 * n_acc + n_cruise + 1);
    for k in 0..=n_acc {
        speeds.push(v * k as f64 / n_acc as f64);
    }
    for _ in 0..n_cruise {
        speeds.push(v);
    }
    for k in (0..n_acc).rev() {
        speeds.push(v * k as f64 / n_acc as f64);
    }
    speeds
}

struct Builder {
    dt: f64,
    time: f64,
    position: Vector3<f64>,
    states: Vec<NavState>,
}

impl Builder {
    fn new(dt: f64, start: Vector3<f64>) -> Self {
        let state = NavState::at_rest(0.0, start);
        Self {
            dt,
            time: 0.0,
            position: start,
            states: vec![state],
        }
    }

    fn push(&mut self, velocity: Vector3<f64>) {
        let prev_v = self.states.last().map(|s| s.velocity_enu_mps).unwrap();
        self.position += (prev_v + velocity) * (0.5 * self.dt);
        self.time += self.dt;
        let mut state = NavState::at_rest(self.time, self.position);
        state.velocity_enu_mps = velocity;
        self.states.push(state);
    }

    fn dwell(&mut self, duration_s: f64) {
        let steps = (duration_s / self.dt).round() as usize;
        for _ in 0..steps {
            self.push(Vector3::zeros());
        }
    }

    fn straight(&mut self, target: Vector3<f64>, v_max: f64, a_max: f64) {
        let delta = target - self.position;
        let length = delta.norm();
        if length == 0.0 {
            return;
        }
        let dir = delta / length;
        let speeds = trapezoidal_speeds(length, v_max, a_max, self.dt);
        for &s in &speeds[1..] {
            self.push(dir * s);
        }
        // Kill the residual float drift so segment endpoints are exact.
        self.position = target;
        if let Some(last) = self.states.last_mut() {
            last.position_enu_m = target;
            last.velocity_enu_mps = Vector3::zeros();
        }
    }
}

/// Generate the A-to-B approach truth at the configured IMU rate.
pub fn generate_approach_trajectory(config: &ScenarioConfig) -> Result<TruthTrajectory> {
    config.validate()?;
    let a = Vector3::from(config.vertiport_a_enu);
    let b = Vector3::from(config.vertiport_b_enu);
    let geom = &config.geometry;
    let to_hover = geom.to_hover_height;
    let low_hover = geom.low_hover_height;

    let ab_h = Vector3::new(b.x - a.x, b.y - a.y, 0.0);
    // The slope construction descends (to_hover - low_hover) vertically over
    // one D-value of horizontal run.
    let footprint = geom.d_max;
    if ab_h.norm() <= footprint {
        return Err(SimError::InfeasibleScenario(format!(
            "vertiports {:.1} m apart, approach funnel needs more than {footprint:.1} m",
            ab_h.norm()
        )));
    }
    let dir_h = ab_h / ab_h.norm();

    let dt = 1.0 / config.rates.imu_hz;
    let v_max = config.trajectory.v_max_mps;
    let a_max = config.trajectory.a_max_mps2;
    let mut builder = Builder::new(dt, a);

    builder.dwell(config.trajectory.initial_dwell_s);
    // Vertical climb to the take-off hover height.
    builder.straight(a + Vector3::new(0.0, 0.0, to_hover), v_max, a_max);
    // Cruise to the top of the approach slope.
    let slope_top = b - dir_h * footprint + Vector3::new(0.0, 0.0, to_hover);
    builder.straight(slope_top, v_max, a_max);
    // Descend along the slope into the low hover point.
    builder.straight(b + Vector3::new(0.0, 0.0, low_hover), v_max, a_max);
    builder.dwell(config.trajectory.hover_dwell_s);
    // Vertical touchdown.
    builder.straight(b, v_max, a_max);
    builder.dwell(1.0);

    Ok(TruthTrajectory {
        dt_s: dt,
        states: builder.states,
    })
}

#[allow(unused_imports)]
pub(super) use trapezoidal_speeds as _speeds_for_tests;

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ScenarioConfig {
        ScenarioConfig::example()
    }

    #[test]
    fn endpoints_are_exact() {
        let cfg = example();
        let traj = generate_approach_trajectory(&cfg).unwrap();
        let a = Vector3::from(cfg.vertiport_a_enu);
        let b = Vector3::from(cfg.vertiport_b_enu);
        assert_eq!(traj.states.first().unwrap().position_enu_m, a);
        assert_eq!(traj.states.last().unwrap().position_enu_m, b);
        assert_eq!(traj.states.last().unwrap().velocity_enu_mps, Vector3::zeros());
    }

    #[test]
    fn apex_and_hover_heights() {
        let cfg = example();
        let traj = generate_approach_trajectory(&cfg).unwrap();
        assert!((traj.max_altitude_m() - 30.5).abs() < 1e-6);

        // The profile pauses at the low hover height right before touchdown:
        // some run of consecutive states at rest at z = 3.
        let b = Vector3::from(cfg.vertiport_b_enu);
        let hover_states = traj
            .states
            .iter()
            .filter(|s| {
                (s.position_enu_m - (b + Vector3::new(0.0, 0.0, 3.0))).norm() < 1e-6
                    && s.velocity_enu_mps.norm() == 0.0
            })
            .count();
        assert!(
            hover_states as f64 * traj.dt_s >= cfg.trajectory.hover_dwell_s - 1e-9,
            "hover dwell missing"
        );
    }

    #[test]
    fn descent_follows_design_slope() {
        let cfg = example();
        let traj = generate_approach_trajectory(&cfg).unwrap();
        let expected = slope_angle_deg(&cfg.geometry);
        // Find the descent segment: strictly descending while moving east.
        let mut slopes = Vec::new();
        for w in traj.states.windows(2) {
            let d = w[1].position_enu_m - w[0].position_enu_m;
            if d.z < -1e-6 && d.x.hypot(d.y) > 1e-9 {
                slopes.push((-d.z / d.x.hypot(d.y)).atan().to_degrees());
            }
        }
        assert!(!slopes.is_empty());
        for s in slopes {
            assert!((s - expected).abs() < 0.1, "slope {s} vs {expected}");
        }
    }

    #[test]
    fn velocity_and_acceleration_bounded() {
        let cfg = example();
        let traj = generate_approach_trajectory(&cfg).unwrap();
        let v_max = cfg.trajectory.v_max_mps + 1e-9;
        let a_max = cfg.trajectory.a_max_mps2 + 1e-9;
        for w in traj.states.windows(2) {
            assert!(w[1].velocity_enu_mps.norm() <= v_max);
            let dv = (w[1].velocity_enu_mps - w[0].velocity_enu_mps).norm();
            assert!(dv / traj.dt_s <= a_max);
            // Continuity: position step bounded by v_max dt.
            let dp = (w[1].position_enu_m - w[0].position_enu_m).norm();
            assert!(dp <= v_max * traj.dt_s + 1e-9);
        }
    }

    #[test]
    fn close_vertiports_rejected() {
        let mut cfg = example();
        cfg.vertiport_b_enu = [10.0, 0.0, 0.0];
        assert!(matches!(
            generate_approach_trajectory(&cfg),
            Err(SimError::InfeasibleScenario(_))
        ));
    }

    #[test]
    fn trapezoid_covers_distance_exactly() {
        for (length, v, a) in [(100.0, 5.0, 1.0), (3.0, 5.0, 1.0), (27.5, 5.0, 1.0)] {
            let dt = 0.01;
            let speeds = trapezoidal_speeds(length, v, a, dt);
            let mut covered = 0.0;
            for w in speeds.windows(2) {
                covered += (w[0] + w[1]) * 0.5 * dt;
            }
            assert!(
                (covered - length).abs() < 1e-9,
                "covered {covered} of {length}"
            );
            let peak = speeds.iter().cloned().fold(0.0, f64::max);
            assert!(peak <= v + 1e-9);
        }
    }
}
