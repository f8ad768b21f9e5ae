//! Deterministic scenario generator, sensor synthesizer, fault injection,
//! end-to-end estimation runs, and Monte Carlo aggregation.
//!
//! Every random stream is a counter-based generator keyed on
//! (seed, run index, stream id), so outputs are byte-identical for a fixed
//! configuration regardless of execution order; runs are independent and
//! execute in parallel.

mod pipeline;
mod synth;
mod trajectory;

pub mod logs_csv;

pub use pipeline::{
    estimate_from_logs, run_scenario, EpochRecord, EstimationOutput, FusedSample, IntegrityEvent,
    RunRecord, RunSummary,
};
pub use synth::{inject_fault, synthesize_sensor_logs, CameraFrame, GnssEpoch, SensorLogs};
pub use trajectory::{generate_approach_trajectory, TruthTrajectory};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::EnuReference;
use crate::fusion::{ImuNoiseParams, InitialUncertainty};
use crate::requirements::{RiskParams, ServiceParams, VertiportGeometry};
use crate::vision::{CameraIntrinsics, MarkerDefinition};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("unknown fault type {0}")]
    UnknownFault(String),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Sensor epoch rates (Hz). The IMU rate defines the truth grid; the other
/// rates must divide it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRates {
    pub imu_hz: f64,
    pub gnss_hz: f64,
    pub baro_hz: f64,
    pub camera_hz: f64,
    pub ground_weather_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            imu_hz: 100.0,
            gnss_hz: 5.0,
            baro_hz: 10.0,
            camera_hz: 10.0,
            ground_weather_hz: 1.0,
        }
    }
}

/// Trajectory shaping limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub v_max_mps: f64,
    pub a_max_mps2: f64,
    /// Rest dwell before take-off (filter leveling window).
    pub initial_dwell_s: f64,
    /// Hover dwell at the low hover point.
    pub hover_dwell_s: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            v_max_mps: 5.0,
            a_max_mps2: 1.0,
            initial_dwell_s: 2.0,
            hover_dwell_s: 2.0,
        }
    }
}

/// Truth-side sensor error magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    pub imu: ImuNoiseParams,
    /// Constant true accelerometer bias (m/s^2).
    pub accel_bias_mps2: [f64; 3],
    /// Constant true gyro bias (rad/s).
    pub gyro_bias_radps: [f64; 3],
    /// White pseudorange noise, one sigma (m).
    pub pseudorange_sigma_m: f64,
    /// White carrier noise, one sigma (m).
    pub carrier_sigma_m: f64,
    /// Per-satellite error common to reference and rover, one sigma (m).
    pub common_error_sigma_m: f64,
    /// Receiver clock bias draw, one sigma (m).
    pub clock_sigma_m: f64,
    /// White airborne pressure noise, one sigma (Pa).
    pub baro_sigma_pa: f64,
    /// Constant true airborne barometer bias (Pa).
    pub baro_bias_pa: f64,
    /// Ground station temperature (K).
    pub ground_temperature_k: f64,
    /// Corner pixel noise, one sigma (px).
    pub pixel_sigma_px: f64,
    /// Nominal carrier-to-noise density (dB-Hz).
    pub cn0_dbhz: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            imu: ImuNoiseParams::default(),
            accel_bias_mps2: [0.02, -0.015, 0.01],
            gyro_bias_radps: [2e-4, -1e-4, 1.5e-4],
            pseudorange_sigma_m: 1.2,
            carrier_sigma_m: 0.003,
            common_error_sigma_m: 3.0,
            clock_sigma_m: 30.0,
            baro_sigma_pa: 6.0,
            baro_bias_pa: 195.0,
            ground_temperature_k: 288.15,
            pixel_sigma_px: 0.5,
            cn0_dbhz: 45.0,
        }
    }
}

/// Satellite geometry: explicit azimuth/elevation rays from the ENU origin
/// at a fixed range (no orbit propagation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteGeometry {
    pub az_el_deg: Vec<(f64, f64)>,
    pub range_m: f64,
}

impl Default for SatelliteGeometry {
    fn default() -> Self {
        // Synthetic 14-satellite open sky: representative, not a
        // reconstruction of any flown constellation.
        let mut az_el = vec![(0.0, 88.0)];
        for (ring_el, count, offset) in [(65.0, 4, 15.0), (40.0, 5, 51.0), (18.0, 4, 0.0)] {
            for i in 0..count {
                az_el.push((offset + 360.0 * f64::from(i) / f64::from(count), ring_el));
            }
        }
        Self {
            az_el_deg: az_el,
            range_m: 2.2e7,
        }
    }
}

/// One marker entry of the marker map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSpec {
    pub id: u32,
    pub side_m: f64,
    /// Marker center in ENU (m).
    pub center_enu: [f64; 3],
    pub yaw_deg: f64,
}

impl MarkerSpec {
    pub fn to_definition(&self) -> MarkerDefinition {
        MarkerDefinition::square(
            self.id,
            self.side_m,
            Vector3::new(self.center_enu[0], self.center_enu[1], self.center_enu[2]),
            self.yaw_deg.to_radians(),
        )
    }
}

/// Monitor and estimator thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub cn0_mask_dbhz: f64,
    pub require_lock: bool,
    pub cmc_threshold_m_per_epoch: f64,
    pub cmc_window_epochs: usize,
    /// Innovation gate tail probability.
    pub gate_p: f64,
    /// Vision poses are only used below this altitude above the pad.
    pub vision_max_altitude_m: f64,
    /// Integrity risk allocations for the protection levels.
    pub ir_alloc_horizontal: f64,
    pub ir_alloc_vertical: f64,
    /// Maximum ground weather sample age (s).
    pub max_ground_age_s: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            cn0_mask_dbhz: 35.0,
            require_lock: true,
            cmc_threshold_m_per_epoch: crate::gnss::DEFAULT_CMC_THRESHOLD,
            cmc_window_epochs: crate::gnss::DEFAULT_CMC_WINDOW,
            gate_p: crate::fusion::DEFAULT_GATE_P,
            vision_max_altitude_m: 6.0,
            ir_alloc_horizontal: 1e-7,
            ir_alloc_vertical: 1e-7,
            max_ground_age_s: 60.0,
        }
    }
}

/// A deterministic fault injected into the synthesized logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultInjection {
    /// Pseudorange step on the listed satellites (rover side).
    GnssBias {
        start_s: f64,
        sat_ids: Vec<u32>,
        magnitude_m: f64,
    },
    /// Code-only ramp on one satellite, the multipath signature.
    GnssMultipathRamp {
        start_s: f64,
        sat_id: u32,
        rate_m_per_s: f64,
        duration_s: f64,
    },
    /// Step on the airborne static pressure.
    BaroBiasStep { start_s: f64, magnitude_pa: f64 },
    /// Corner observations of one marker relabeled as another.
    MarkerSwap { start_s: f64, from_id: u32, to_id: u32 },
    /// First corner of each frame displaced by a constant pixel offset.
    CornerOutlier { start_s: f64, magnitude_px: f64 },
    /// Step on the accelerometer specific force.
    ImuBiasStep { start_s: f64, accel_mps2: [f64; 3] },
}

impl FaultInjection {
    pub fn start_s(&self) -> f64 {
        match self {
            FaultInjection::GnssBias { start_s, .. }
            | FaultInjection::GnssMultipathRamp { start_s, .. }
            | FaultInjection::BaroBiasStep { start_s, .. }
            | FaultInjection::MarkerSwap { start_s, .. }
            | FaultInjection::CornerOutlier { start_s, .. }
            | FaultInjection::ImuBiasStep { start_s, .. } => *start_s,
        }
    }
}

/// Declarative flight scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub enu_reference: EnuReference,
    /// Vertiport surface centers (ENU, m).
    pub vertiport_a_enu: [f64; 3],
    pub vertiport_b_enu: [f64; 3],
    pub geometry: VertiportGeometry,
    #[serde(default)]
    pub rates: SensorRates,
    #[serde(default)]
    pub trajectory: TrajectoryParams,
    #[serde(default)]
    pub sensors: SensorNoise,
    #[serde(default)]
    pub satellites: SatelliteGeometry,
    /// Reference receiver position (ENU, m).
    #[serde(default = "default_reference_station")]
    pub reference_station_enu: [f64; 3],
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics,
    #[serde(default = "default_markers")]
    pub markers: Vec<MarkerSpec>,
    #[serde(default)]
    pub monitors: MonitorConfig,
    #[serde(default)]
    pub faults: Vec<FaultInjection>,
    #[serde(default)]
    pub initial_uncertainty: InitialUncertainty,
}

fn default_reference_station() -> [f64; 3] {
    [-100.0, 0.0, 0.0]
}

fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx_px: 1000.0,
        fy_px: 1000.0,
        cx_px: 640.0,
        cy_px: 480.0,
        image_width_px: 1280,
        image_height_px: 960,
        intrinsic_cov: nalgebra::Matrix4::zeros(),
    }
}

/// The flown marker layout: one big tag on each vertiport, five small tags
/// on the landing pad.
fn default_markers() -> Vec<MarkerSpec> {
    default_markers_at([0.0, 0.0, 0.0], [120.0, 0.0, 0.0])
}

pub fn default_markers_at(a: [f64; 3], b: [f64; 3]) -> Vec<MarkerSpec> {
    let mut markers = vec![
        MarkerSpec {
            id: 11,
            side_m: 0.785,
            center_enu: a,
            yaw_deg: 0.0,
        },
        MarkerSpec {
            id: 21,
            side_m: 0.785,
            center_enu: b,
            yaw_deg: 0.0,
        },
    ];
    // Small markers on the landing pad: center plus the four quadrants.
    let offsets = [
        (0.0, 0.0),
        (0.25, 0.25),
        (-0.25, 0.25),
        (-0.25, -0.25),
        (0.25, -0.25),
    ];
    for (i, (dx, dy)) in offsets.iter().enumerate() {
        markers.push(MarkerSpec {
            id: i as u32,
            side_m: 0.048,
            center_enu: [b[0] + dx, b[1] + dy, b[2]],
            yaw_deg: 0.0,
        });
    }
    markers
}

impl ScenarioConfig {
    /// Two-vertiport scenario with the reference separations of the flown
    /// layout.
    pub fn example() -> Self {
        let a = [0.0, 0.0, 0.0];
        let b = [120.0, 0.0, 0.0];
        Self {
            seed: 1,
            enu_reference: EnuReference::default(),
            vertiport_a_enu: a,
            vertiport_b_enu: b,
            geometry: VertiportGeometry::new(15.24).expect("valid reference geometry"),
            rates: SensorRates::default(),
            trajectory: TrajectoryParams::default(),
            sensors: SensorNoise::default(),
            satellites: SatelliteGeometry::default(),
            reference_station_enu: default_reference_station(),
            camera: default_camera(),
            markers: default_markers_at(a, b),
            monitors: MonitorConfig::default(),
            faults: Vec::new(),
            initial_uncertainty: InitialUncertainty::default(),
        }
    }

    /// Zero every stochastic magnitude; estimators must then reproduce truth
    /// to solver tolerance.
    pub fn zero_noise(mut self) -> Self {
        self.sensors = SensorNoise {
            imu: ImuNoiseParams {
                accel_noise_density: 0.0,
                gyro_noise_density: 0.0,
                accel_bias_random_walk: 0.0,
                gyro_bias_random_walk: 0.0,
            },
            accel_bias_mps2: [0.0; 3],
            gyro_bias_radps: [0.0; 3],
            pseudorange_sigma_m: 0.0,
            carrier_sigma_m: 0.0,
            common_error_sigma_m: 0.0,
            clock_sigma_m: 0.0,
            baro_sigma_pa: 0.0,
            baro_bias_pa: 0.0,
            ground_temperature_k: self.sensors.ground_temperature_k,
            pixel_sigma_px: 0.0,
            cn0_dbhz: self.sensors.cn0_dbhz,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        let dt = 1.0 / self.rates.imu_hz;
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(SimError::Config(format!(
                "imu rate {} Hz outside the supported band",
                self.rates.imu_hz
            )));
        }
        for (name, rate) in [
            ("gnss", self.rates.gnss_hz),
            ("baro", self.rates.baro_hz),
            ("camera", self.rates.camera_hz),
            ("ground_weather", self.rates.ground_weather_hz),
        ] {
            let ratio = self.rates.imu_hz / rate;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
                return Err(SimError::Config(format!(
                    "{name} rate {rate} Hz must divide the IMU rate"
                )));
            }
        }
        if self.satellites.az_el_deg.len() < 4 {
            return Err(SimError::Config("need at least 4 satellites".into()));
        }
        Ok(())
    }
}

/// Aggregated Monte Carlo statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    /// 95th percentile (rank order) of the fused horizontal error (m).
    pub hpe95_m: f64,
    /// 95th percentile of the fused vertical error magnitude (m).
    pub vpe95_m: f64,
    /// Epochs where the GNSS solution error exceeded its protection level.
    pub pl_bounding_violations: usize,
    pub alerts: usize,
    /// Mean fraction of epochs in the available state.
    pub availability: f64,
}

/// Deterministic per-(seed, run, stream) generator.
pub fn stream_rng(seed: u64, run_index: u64, stream: u32) -> ChaCha12Rng {
    fn splitmix64(x: &mut u64) -> u64 {
        *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = seed
        ^ run_index.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ (u64::from(stream)).wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Rank-order percentile (nearest-rank convention).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Run n independent seeded scenarios and aggregate.
pub fn monte_carlo(config: &ScenarioConfig, n_runs: usize) -> Result<MonteCarloReport> {
    config.validate()?;
    let summaries: Vec<RunSummary> = (0..n_runs)
        .into_par_iter()
        .map(|run| run_scenario(config, run as u64).map(|r| r.summary))
        .collect::<Result<Vec<_>>>()?;

    let mut h_errors: Vec<f64> = Vec::new();
    let mut v_errors: Vec<f64> = Vec::new();
    let mut violations = 0;
    let mut alerts = 0;
    let mut availability = 0.0;
    for s in &summaries {
        h_errors.extend_from_slice(&s.fused_horizontal_errors_m);
        v_errors.extend_from_slice(&s.fused_vertical_errors_m);
        violations += s.pl_bounding_violations;
        alerts += s.alerts;
        availability += s.availability;
    }
    h_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MonteCarloReport {
        runs: n_runs,
        hpe95_m: percentile(&h_errors, 0.95),
        vpe95_m: percentile(&v_errors, 0.95),
        pl_bounding_violations: violations,
        alerts,
        availability: if summaries.is_empty() {
            0.0
        } else {
            availability / summaries.len() as f64
        },
    })
}
