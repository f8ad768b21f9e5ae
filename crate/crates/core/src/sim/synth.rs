//! Sensor log synthesis: exact inverse models of the estimation subsystems
//! driven by the truth trajectory, plus deterministic fault injection.

use nalgebra::{Vector2, Vector3};
use rand_distr::{Distribution, Normal};

use super::{stream_rng, FaultInjection, Result, ScenarioConfig, SimError, TruthTrajectory};
use crate::atmosphere::{pressure_from_altitude, GroundWeatherSample, ISA_P0, ISA_T0};
use crate::fusion::{gravity_enu, ImuSample};
use crate::gnss::SatelliteObservation;
use crate::vision::{project_point, CameraPose, CornerObservation, MarkerDefinition};

/// Random stream ids (one per sensor, per the reproducibility contract).
mod stream {
    pub const TRUTH_DRAWS: u32 = 0;
    pub const IMU: u32 = 1;
    pub const GNSS_ROVER: u32 = 2;
    pub const GNSS_REF: u32 = 3;
    pub const BARO: u32 = 4;
    pub const CAMERA: u32 = 5;
}

/// One GNSS epoch: rover and reference observations share satellites.
#[derive(Debug, Clone, PartialEq)]
pub struct GnssEpoch {
    pub t_s: f64,
    pub rover: Vec<SatelliteObservation>,
    pub reference: Vec<SatelliteObservation>,
}

/// One camera frame of detected corners.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub t_s: f64,
    pub corners: Vec<CornerObservation>,
}

/// The synthesized multi-rate sensor record.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLogs {
    /// (interval start time, sample); sample k propagates truth k -> k+1.
    pub imu: Vec<(f64, ImuSample)>,
    pub gnss: Vec<GnssEpoch>,
    /// (time, airborne static pressure Pa).
    pub baro: Vec<(f64, f64)>,
    /// Broadcast ground weather feed (pressure rounded to the configured
    /// resolution).
    pub ground_weather: Vec<GroundWeatherSample>,
    pub camera: Vec<CameraFrame>,
    pub markers: Vec<MarkerDefinition>,
    /// True airborne barometer bias (what calibration should recover).
    pub true_baro_bias_pa: f64,
    pub truth: Option<TruthTrajectory>,
}

fn sample_or_zero(normal: Option<&Normal<f64>>, rng: &mut impl rand::Rng) -> f64 {
    normal.map_or(0.0, |n| n.sample(rng))
}

fn maybe_normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma"))
}

/// The undisturbed ground weather state at the station.
pub fn ground_truth_sample(config: &ScenarioConfig, t_s: f64) -> GroundWeatherSample {
    let station_geodetic =
        config.enu_reference.altitude_m + config.vertiport_a_enu[2];
    let isa_msl = GroundWeatherSample {
        pressure_pa: ISA_P0,
        temperature_k: ISA_T0,
        station_geodetic_altitude_m: 0.0,
        timestamp_s: t_s,
    };
    GroundWeatherSample {
        pressure_pa: pressure_from_altitude(station_geodetic, &isa_msl),
        temperature_k: config.sensors.ground_temperature_k,
        station_geodetic_altitude_m: station_geodetic,
        timestamp_s: t_s,
    }
}

/// Synthesize every sensor stream from the truth trajectory.
pub fn synthesize_sensor_logs(
    truth: &TruthTrajectory,
    config: &ScenarioConfig,
    run_index: u64,
) -> Result<SensorLogs> {
    config.validate()?;
    let dt = truth.dt_s;
    let n_states = truth.states.len();
    let seed = config.seed;

    // Per-run truth draws: receiver clocks, per-satellite common errors and
    // carrier ambiguities.
    let mut truth_rng = stream_rng(seed, run_index, stream::TRUTH_DRAWS);
    let n_sats = config.satellites.az_el_deg.len();
    let clock_normal = maybe_normal(config.sensors.clock_sigma_m);
    let rover_clock_m = sample_or_zero(clock_normal.as_ref(), &mut truth_rng);
    let ref_clock_m = sample_or_zero(clock_normal.as_ref(), &mut truth_rng);
    let common_normal = maybe_normal(config.sensors.common_error_sigma_m);
    let common_m: Vec<f64> = (0..n_sats)
        .map(|_| sample_or_zero(common_normal.as_ref(), &mut truth_rng))
        .collect();
    let ambiguity_normal = maybe_normal(3.0e4);
    let rover_amb: Vec<f64> = (0..n_sats)
        .map(|_| sample_or_zero(ambiguity_normal.as_ref(), &mut truth_rng))
        .collect();
    let ref_amb: Vec<f64> = (0..n_sats)
        .map(|_| sample_or_zero(ambiguity_normal.as_ref(), &mut truth_rng))
        .collect();

    // IMU: exact discrete inverse of the strapdown integrator plus bias and
    // white noise.
    let mut imu_rng = stream_rng(seed, run_index, stream::IMU);
    let accel_noise = maybe_normal(config.sensors.imu.accel_noise_density / dt.sqrt());
    let gyro_noise = maybe_normal(config.sensors.imu.gyro_noise_density / dt.sqrt());
    let accel_bias = Vector3::from(config.sensors.accel_bias_mps2);
    let gyro_bias = Vector3::from(config.sensors.gyro_bias_radps);
    let gravity = gravity_enu();
    let mut imu = Vec::with_capacity(n_states.saturating_sub(1));
    for k in 0..n_states - 1 {
        let accel = (truth.states[k + 1].velocity_enu_mps - truth.states[k].velocity_enu_mps) / dt;
        // Attitude is identity throughout the profile: body frame = ENU.
        let f_body = accel - gravity;
        let noise_f = Vector3::new(
            sample_or_zero(accel_noise.as_ref(), &mut imu_rng),
            sample_or_zero(accel_noise.as_ref(), &mut imu_rng),
            sample_or_zero(accel_noise.as_ref(), &mut imu_rng),
        );
        let noise_w = Vector3::new(
            sample_or_zero(gyro_noise.as_ref(), &mut imu_rng),
            sample_or_zero(gyro_noise.as_ref(), &mut imu_rng),
            sample_or_zero(gyro_noise.as_ref(), &mut imu_rng),
        );
        imu.push((
            truth.states[k].time_s,
            ImuSample {
                specific_force_mps2: f_body + accel_bias + noise_f,
                angular_rate_radps: gyro_bias + noise_w,
                dt_s: dt,
            },
        ));
    }

    // GNSS: pseudorange and carrier for rover and reference.
    let mut rover_rng = stream_rng(seed, run_index, stream::GNSS_ROVER);
    let mut ref_rng = stream_rng(seed, run_index, stream::GNSS_REF);
    let pr_noise = maybe_normal(config.sensors.pseudorange_sigma_m);
    let cp_noise = maybe_normal(config.sensors.carrier_sigma_m);
    let sigma_nominal = config.sensors.pseudorange_sigma_m.max(1e-3);
    let sats_ecef: Vec<Vector3<f64>> = config
        .satellites
        .az_el_deg
        .iter()
        .map(|(az, el)| {
            config
                .enu_reference
                .satellite_from_az_el(*az, *el, config.satellites.range_m)
        })
        .collect();
    let ref_ecef = config
        .enu_reference
        .enu_to_ecef(&Vector3::from(config.reference_station_enu));
    let gnss_stride = (config.rates.imu_hz / config.rates.gnss_hz).round() as usize;
    let mut gnss = Vec::new();
    let mut make_obs = |receiver_ecef: &Vector3<f64>,
                        clock: f64,
                        amb: &[f64],
                        rng: &mut rand_chacha::ChaCha12Rng|
     -> Vec<SatelliteObservation> {
        sats_ecef
            .iter()
            .enumerate()
            .map(|(s, sat)| {
                let range = (sat - receiver_ecef).norm();
                let pr = range
                    + clock
                    + common_m[s]
                    + sample_or_zero(pr_noise.as_ref(), rng);
                let cp = range
                    + clock
                    + common_m[s]
                    + amb[s]
                    + sample_or_zero(cp_noise.as_ref(), rng);
                SatelliteObservation {
                    sat_id: s as u32 + 1,
                    sat_position_ecef: *sat,
                    pseudorange_m: pr,
                    carrier_phase_range_m: cp,
                    cn0_dbhz: config.sensors.cn0_dbhz,
                    lock: true,
                    sigma_nominal_m: sigma_nominal,
                }
            })
            .collect()
    };
    for k in (0..n_states).step_by(gnss_stride) {
        let state = &truth.states[k];
        let rover_ecef = config.enu_reference.enu_to_ecef(&state.position_enu_m);
        gnss.push(GnssEpoch {
            t_s: state.time_s,
            rover: make_obs(&rover_ecef, rover_clock_m, &rover_amb, &mut rover_rng),
            reference: make_obs(&ref_ecef, ref_clock_m, &ref_amb, &mut ref_rng),
        });
    }

    // Barometer: invert the ground-corrected altitude model, add bias and
    // noise.
    let mut baro_rng = stream_rng(seed, run_index, stream::BARO);
    let baro_noise = maybe_normal(config.sensors.baro_sigma_pa);
    let baro_stride = (config.rates.imu_hz / config.rates.baro_hz).round() as usize;
    let mut baro = Vec::new();
    for k in (0..n_states).step_by(baro_stride) {
        let state = &truth.states[k];
        let geodetic = config.enu_reference.altitude_m + state.position_enu_m.z;
        let ground = ground_truth_sample(config, state.time_s);
        let p = pressure_from_altitude(geodetic, &ground)
            + config.sensors.baro_bias_pa
            + sample_or_zero(baro_noise.as_ref(), &mut baro_rng);
        baro.push((state.time_s, p));
    }

    // Ground weather broadcast (pressure quantized to the feed resolution).
    let gw_stride = (config.rates.imu_hz / config.rates.ground_weather_hz).round() as usize;
    let resolution = config.ground_pressure_resolution_pa;
    let mut ground_weather = Vec::new();
    for k in (0..n_states).step_by(gw_stride) {
        let mut sample = ground_truth_sample(config, truth.states[k].time_s);
        if resolution > 0.0 {
            sample.pressure_pa = (sample.pressure_pa / resolution).round() * resolution;
        }
        ground_weather.push(sample);
    }

    // Camera: project marker corners through the truth pose; a corner is
    // emitted when inside the image, in front of the camera, and its
    // marker's projected side length resolves above the detector floor.
    let mut cam_rng = stream_rng(seed, run_index, stream::CAMERA);
    let px_noise = maybe_normal(config.sensors.pixel_sigma_px);
    let markers: Vec<MarkerDefinition> =
        config.markers.iter().map(|m| m.to_definition()).collect();
    for m in &markers {
        m.validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
    }
    let cam_stride = (config.rates.imu_hz / config.rates.camera_hz).round() as usize;
    let mut camera = Vec::new();
    for k in (0..n_states).step_by(cam_stride) {
        let state = &truth.states[k];
        let pose = CameraPose::looking_down(state.position_enu_m, 0.0);
        let mut corners = Vec::new();
        for marker in &markers {
            let center = marker
                .corners_world_m
                .iter()
                .sum::<Vector3<f64>>()
                / 4.0;
            let depth = pose.camera_point(&center).z;
            if depth <= 0.05 {
                continue;
            }
            let side_px = config.camera.fx_px * marker.side_length_m / depth;
            if side_px < config.camera_min_detect_side_px {
                continue;
            }
            for (i, corner) in marker.corners_world_m.iter().enumerate() {
                if let Ok(px) = project_point(corner, &pose, &config.camera) {
                    if !config.camera.contains_pixel(&px) {
                        continue;
                    }
                    let jitter = Vector2::new(
                        sample_or_zero(px_noise.as_ref(), &mut cam_rng),
                        sample_or_zero(px_noise.as_ref(), &mut cam_rng),
                    );
                    corners.push(CornerObservation {
                        marker_id: marker.id,
                        corner_index: i as u8,
                        pixel: px + jitter,
                        sigma_px: config.sensors.pixel_sigma_px.max(1e-3),
                    });
                }
            }
        }
        camera.push(CameraFrame {
            t_s: state.time_s,
            corners,
        });
    }

    Ok(SensorLogs {
        imu,
        gnss,
        baro,
        ground_weather,
        camera,
        markers,
        true_baro_bias_pa: config.sensors.baro_bias_pa,
        truth: Some(truth.clone()),
    })
}

/// Apply one fault to the synthesized logs (deterministic, stream-targeted).
pub fn inject_fault(logs: &mut SensorLogs, fault: &FaultInjection) {
    match fault {
        FaultInjection::GnssBias {
            start_s,
            sat_ids,
            magnitude_m,
        } => {
            for epoch in logs.gnss.iter_mut().filter(|e| e.t_s >= *start_s) {
                for obs in epoch.rover.iter_mut() {
                    if sat_ids.contains(&obs.sat_id) {
                        obs.pseudorange_m += magnitude_m;
                    }
                }
            }
        }
        FaultInjection::GnssMultipathRamp {
            start_s,
            sat_id,
            rate_m_per_s,
            duration_s,
        } => {
            for epoch in logs.gnss.iter_mut().filter(|e| e.t_s >= *start_s) {
                let elapsed = (epoch.t_s - start_s).min(*duration_s);
                for obs in epoch.rover.iter_mut() {
                    if obs.sat_id == *sat_id {
                        obs.pseudorange_m += rate_m_per_s * elapsed;
                    }
                }
            }
        }
        FaultInjection::BaroBiasStep {
            start_s,
            magnitude_pa,
        } => {
            for (t, p) in logs.baro.iter_mut() {
                if *t >= *start_s {
                    *p += magnitude_pa;
                }
            }
        }
        FaultInjection::MarkerSwap {
            start_s,
            from_id,
            to_id,
        } => {
            for frame in logs.camera.iter_mut().filter(|f| f.t_s >= *start_s) {
                for corner in frame.corners.iter_mut() {
                    if corner.marker_id == *from_id {
                        corner.marker_id = *to_id;
                    }
                }
            }
        }
        FaultInjection::CornerOutlier {
            start_s,
            magnitude_px,
        } => {
            for frame in logs.camera.iter_mut().filter(|f| f.t_s >= *start_s) {
                if let Some(corner) = frame.corners.first_mut() {
                    corner.pixel.x += magnitude_px;
                }
            }
        }
        FaultInjection::ImuBiasStep { start_s, accel_mps2 } => {
            let step = Vector3::from(*accel_mps2);
            for (t, sample) in logs.imu.iter_mut() {
                if *t >= *start_s {
                    sample.specific_force_mps2 += step;
                }
            }
        }
    }
}
