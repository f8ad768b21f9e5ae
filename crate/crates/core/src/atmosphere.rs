//! ISA pressure altitude, ground-corrected barometric geodetic altitude,
//! barometer bias calibration, and pressure/altitude offset conversions.
//!
//! The ground correction references the isobar currently aligned with the
//! vertiport surface, using the measured ground pressure and temperature
//! instead of the ISA mean-sea-level constants. At vertiport scale (< 500 m
//! span) the geopotential-vs-geodetic and gravity-variation terms are below
//! 0.1 m and are neglected; the formula is anchored at the station's geodetic
//! altitude.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ISA mean-sea-level pressure (Pa).
pub const ISA_P0: f64 = 101_325.0;
/// ISA mean-sea-level temperature (K).
pub const ISA_T0: f64 = 288.15;
/// ISA tropospheric temperature lapse rate (K/m).
pub const ISA_LAPSE: f64 = 0.0065;
/// Standard gravity (m/s^2).
pub const G0: f64 = 9.80665;
/// Specific gas constant of dry air (J/(kg K)).
pub const GAS_CONST: f64 = 287.05287;
/// ISA mean-sea-level density (kg/m^3).
pub const ISA_RHO0: f64 = 1.225;
/// Tropopause pressure (Pa); the model covers the troposphere only.
pub const TROPOPAUSE_PRESSURE: f64 = 22_632.0;
/// Plausibility gate between airborne and ground pressure; 6000 Pa covers the
/// full 500 m correction span with margin.
pub const MAX_PRESSURE_MISMATCH_PA: f64 = 6000.0;

/// Barometric exponent R * L / g0 (about 0.190263).
pub fn barometric_exponent() -> f64 {
    GAS_CONST * ISA_LAPSE / G0
}

/// Inverse barometric exponent g0 / (R * L) (about 5.25588).
pub fn barometric_exponent_inv() -> f64 {
    G0 / (GAS_CONST * ISA_LAPSE)
}

#[derive(Debug, Error, PartialEq)]
pub enum AtmosphereError {
    #[error("pressure {0} Pa outside the supported tropospheric layer")]
    UnsupportedLayer(f64),
    #[error("ground sample is {age_s:.1} s old, exceeds the {max_age_s:.1} s limit")]
    StaleCorrection { age_s: f64, max_age_s: f64 },
    #[error("air pressure {p_air} Pa too far from ground pressure {p_ground} Pa")]
    PressureMismatch { p_air: f64, p_ground: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("need at least {needed} aligned samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, AtmosphereError>;

/// One ground weather reading broadcast by the vertiport station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundWeatherSample {
    /// Station pressure (Pa), rounded to no worse than 1 Pa.
    pub pressure_pa: f64,
    /// Station temperature (K).
    pub temperature_k: f64,
    /// Surveyed geodetic altitude of the station (m).
    pub station_geodetic_altitude_m: f64,
    /// Measurement time (s).
    pub timestamp_s: f64,
}

impl GroundWeatherSample {
    pub fn validate(&self) -> Result<()> {
        if !(50_000.0 < self.pressure_pa && self.pressure_pa < 110_000.0) {
            return Err(AtmosphereError::Domain(format!(
                "ground pressure {} Pa outside plausibility bounds",
                self.pressure_pa
            )));
        }
        if !(200.0 < self.temperature_k && self.temperature_k < 330.0) {
            return Err(AtmosphereError::Domain(format!(
                "ground temperature {} K outside plausibility bounds",
                self.temperature_k
            )));
        }
        Ok(())
    }
}

/// Barometer bias calibration result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaroCalibration {
    pub bias_pa: f64,
    pub bias_sigma_pa: f64,
    pub epoch_s: f64,
}

impl BaroCalibration {
    pub fn validate(&self) -> Result<()> {
        if self.bias_pa.abs() >= 2000.0 {
            return Err(AtmosphereError::Domain(format!(
                "calibrated bias {} Pa beyond the 2000 Pa sanity bound",
                self.bias_pa
            )));
        }
        Ok(())
    }
}

/// Relative geometry of the vehicle and the ground station during calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationGeometry {
    /// Vehicle barometer at the station height; no adjustment.
    CoLocated,
    /// Vehicle resting a known height above the station.
    VehicleAboveStation { height_m: f64 },
}

/// QNE pressure altitude above the ISA standard isobar.
pub fn pressure_altitude_qne(pressure_pa: f64) -> Result<f64> {
    if pressure_pa <= TROPOPAUSE_PRESSURE {
        return Err(AtmosphereError::UnsupportedLayer(pressure_pa));
    }
    Ok((ISA_T0 / ISA_LAPSE) * (1.0 - (pressure_pa / ISA_P0).powf(barometric_exponent())))
}

/// Geodetic altitude from airborne pressure referenced to the isobar at the
/// vertiport surface, using measured ground pressure and temperature.
pub fn ground_corrected_geodetic_altitude(
    p_air_pa: f64,
    air_timestamp_s: f64,
    ground: &GroundWeatherSample,
    max_ground_age_s: f64,
) -> Result<f64> {
    ground.validate()?;
    let age_s = air_timestamp_s - ground.timestamp_s;
    if age_s > max_ground_age_s {
        return Err(AtmosphereError::StaleCorrection {
            age_s,
            max_age_s: max_ground_age_s,
        });
    }
    if (p_air_pa - ground.pressure_pa).abs() > MAX_PRESSURE_MISMATCH_PA {
        return Err(AtmosphereError::PressureMismatch {
            p_air: p_air_pa,
            p_ground: ground.pressure_pa,
        });
    }
    Ok(ground.station_geodetic_altitude_m
        + (ground.temperature_k / ISA_LAPSE)
            * (1.0 - (p_air_pa / ground.pressure_pa).powf(barometric_exponent())))
}

/// Inverse of `ground_corrected_geodetic_altitude`: the pressure observed at a
/// given geodetic altitude under the ground-referenced model.
pub fn pressure_from_altitude(altitude_m: f64, ground: &GroundWeatherSample) -> f64 {
    let dh = altitude_m - ground.station_geodetic_altitude_m;
    ground.pressure_pa
        * (1.0 - ISA_LAPSE * dh / ground.temperature_k).powf(barometric_exponent_inv())
}

/// Small pressure offset converted to altitude at ISA MSL density: dp / (rho0 g0).
pub fn pressure_offset_to_altitude(dp_pa: f64) -> f64 {
    dp_pa / (ISA_RHO0 * G0)
}

/// Estimate a constant airborne-barometer bias against a co-timed ground
/// series. Returns the mean offset and its standard error.
pub fn calibrate_bias(
    airborne_pa: &[f64],
    ground_pa: &[f64],
    geometry: CalibrationGeometry,
    epoch_s: f64,
) -> Result<BaroCalibration> {
    const MIN_SAMPLES: usize = 10;
    let n = airborne_pa.len().min(ground_pa.len());
    if n < MIN_SAMPLES {
        return Err(AtmosphereError::InsufficientData {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    // Hydrostatic adjustment of the ground reading to the vehicle height;
    // linear in density is enough at resting-vehicle heights.
    let dp_height = match geometry {
        CalibrationGeometry::CoLocated => 0.0,
        CalibrationGeometry::VehicleAboveStation { height_m } => -ISA_RHO0 * G0 * height_m,
    };
    let diffs: Vec<f64> = airborne_pa
        .iter()
        .zip(ground_pa.iter())
        .take(n)
        .map(|(a, g)| a - (g + dp_height))
        .collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let cal = BaroCalibration {
        bias_pa: mean,
        bias_sigma_pa: (var / n as f64).sqrt(),
        epoch_s,
    };
    cal.validate()?;
    Ok(cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn isa_msl_ground() -> GroundWeatherSample {
        GroundWeatherSample {
            pressure_pa: ISA_P0,
            temperature_k: ISA_T0,
            station_geodetic_altitude_m: 0.0,
            timestamp_s: 0.0,
        }
    }

    /// Independent oracle: integrate the hydrostatic equation dp = -rho g dh
    /// with rho = p / (R T(h)), T(h) = T_gnd - L (h - h_gnd), by RK4 in p.
    fn hydrostatic_altitude(p_target: f64, ground: &GroundWeatherSample) -> f64 {
        let t_at = |h: f64| {
            ground.temperature_k - ISA_LAPSE * (h - ground.station_geodetic_altitude_m)
        };
        // dh/dp = -R T(h) / (p g)
        let f = |p: f64, h: f64| -GAS_CONST * t_at(h) / (p * G0);
        let n = 20_000;
        let dp = (p_target - ground.pressure_pa) / n as f64;
        let mut h = ground.station_geodetic_altitude_m;
        let mut p = ground.pressure_pa;
        for _ in 0..n {
            let k1 = f(p, h);
            let k2 = f(p + dp / 2.0, h + dp * k1 / 2.0);
            let k3 = f(p + dp / 2.0, h + dp * k2 / 2.0);
            let k4 = f(p + dp, h + dp * k3);
            h += dp * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            p += dp;
        }
        h
    }

    #[test]
    fn exponent_value() {
        assert!((barometric_exponent_inv() - 5.25588).abs() < 1e-4);
        assert_relative_eq!(barometric_exponent(), 0.190263, max_relative = 1e-5);
    }

    #[test]
    fn qne_reference_isobar() {
        assert_eq!(pressure_altitude_qne(ISA_P0).unwrap(), 0.0);
    }

    #[test]
    fn qne_against_hydrostatic_oracle() {
        let h = pressure_altitude_qne(100_125.0).unwrap();
        assert!((h - 100.4).abs() < 0.1, "h = {h}");
        let oracle = hydrostatic_altitude(100_125.0, &isa_msl_ground());
        assert!((h - oracle).abs() < 0.01, "h = {h}, oracle = {oracle}");
    }

    #[test]
    fn qne_rejects_stratosphere() {
        assert!(matches!(
            pressure_altitude_qne(22_000.0),
            Err(AtmosphereError::UnsupportedLayer(_))
        ));
    }

    #[test]
    fn ground_corrected_matches_station_at_equal_pressure() {
        let ground = GroundWeatherSample {
            pressure_pa: 99_000.0,
            temperature_k: 281.0,
            station_geodetic_altitude_m: 187.3,
            timestamp_s: 10.0,
        };
        let h = ground_corrected_geodetic_altitude(99_000.0, 12.0, &ground, 60.0).unwrap();
        assert_relative_eq!(h, 187.3, max_relative = 1e-12);
    }

    #[test]
    fn ground_corrected_against_hydrostatic_oracle() {
        let ground = isa_msl_ground();
        let h = ground_corrected_geodetic_altitude(100_125.0, 0.0, &ground, 60.0).unwrap();
        assert!((h - 100.4).abs() < 0.1, "h = {h}");
        let oracle = hydrostatic_altitude(100_125.0, &ground);
        assert!((h - oracle).abs() < 0.1, "h = {h}, oracle = {oracle}");
    }

    #[test]
    fn colder_ground_lowers_altitude() {
        let cold = GroundWeatherSample {
            temperature_k: 273.15,
            ..isa_msl_ground()
        };
        let h = ground_corrected_geodetic_altitude(100_125.0, 0.0, &cold, 60.0).unwrap();
        assert!((h - 95.2).abs() < 0.2, "h = {h}");
        let oracle = hydrostatic_altitude(100_125.0, &cold);
        assert!((h - oracle).abs() < 0.1, "h = {h}, oracle = {oracle}");
        let warm = ground_corrected_geodetic_altitude(100_125.0, 0.0, &isa_msl_ground(), 60.0)
            .unwrap();
        assert!(h < warm);
    }

    #[test]
    fn temperature_scaling_is_linear() {
        // Offset above the station scales as T_gnd; ratio must be exact.
        let t1 = 250.0;
        let t2 = 320.0;
        let g1 = GroundWeatherSample {
            temperature_k: t1,
            ..isa_msl_ground()
        };
        let g2 = GroundWeatherSample {
            temperature_k: t2,
            ..isa_msl_ground()
        };
        let h1 = ground_corrected_geodetic_altitude(100_000.0, 0.0, &g1, 60.0).unwrap();
        let h2 = ground_corrected_geodetic_altitude(100_000.0, 0.0, &g2, 60.0).unwrap();
        assert_relative_eq!(h2 / h1, t2 / t1, max_relative = 1e-9);
    }

    #[test]
    fn stale_ground_sample_rejected() {
        let ground = isa_msl_ground();
        assert!(matches!(
            ground_corrected_geodetic_altitude(100_125.0, 61.0, &ground, 60.0),
            Err(AtmosphereError::StaleCorrection { .. })
        ));
    }

    #[test]
    fn mismatched_pressure_rejected() {
        let ground = isa_msl_ground();
        assert!(matches!(
            ground_corrected_geodetic_altitude(95_000.0, 0.0, &ground, 60.0),
            Err(AtmosphereError::PressureMismatch { .. })
        ));
    }

    #[test]
    fn altitude_strictly_decreases_with_pressure() {
        let ground = isa_msl_ground();
        let mut last = f64::INFINITY;
        let mut p = 97_000.0;
        while p <= 102_000.0 {
            let h = ground_corrected_geodetic_altitude(p, 0.0, &ground, 60.0).unwrap();
            assert!(h < last);
            last = h;
            p += 250.0;
        }
    }

    #[test]
    fn round_trip_pressure_altitude() {
        let ground = isa_msl_ground();
        let mut h = 0.0;
        while h <= 500.0 {
            let p = pressure_from_altitude(h, &ground);
            let back = ground_corrected_geodetic_altitude(p, 0.0, &ground, 60.0).unwrap();
            assert!((back - h).abs() < 1e-6, "h = {h}, back = {back}");
            h += 12.5;
        }
        assert_relative_eq!(pressure_from_altitude(0.0, &ground), ISA_P0);
        let p100 = pressure_from_altitude(100.4, &ground);
        assert!((p100 - 100_125.0).abs() < 1.0, "p = {p100}");
    }

    #[test]
    fn qne_equals_ground_corrected_at_isa_msl() {
        let ground = isa_msl_ground();
        let qne = pressure_altitude_qne(100_300.0).unwrap();
        let gc = ground_corrected_geodetic_altitude(100_300.0, 0.0, &ground, 60.0).unwrap();
        assert!((qne - gc).abs() < 1e-9);
    }

    #[test]
    fn pressure_offset_conversions() {
        let h195 = pressure_offset_to_altitude(195.0);
        assert!((h195 - 16.2).abs() < 0.1, "195 Pa -> {h195}");
        let h99 = pressure_offset_to_altitude(99.0);
        assert!((h99 - 8.24).abs() < 0.1 && h99 > 8.0, "99 Pa -> {h99}");
        assert_eq!(pressure_offset_to_altitude(0.0), 0.0);
    }

    #[test]
    fn bias_calibration_constant_offset() {
        let ground: Vec<f64> = (0..100).map(|i| ISA_P0 + (i % 7) as f64).collect();
        let airborne: Vec<f64> = ground.iter().map(|g| g + 193.0).collect();
        let cal =
            calibrate_bias(&airborne, &ground, CalibrationGeometry::CoLocated, 0.0).unwrap();
        assert_relative_eq!(cal.bias_pa, 193.0, max_relative = 1e-12);
        assert!(cal.bias_sigma_pa < 1e-9);
    }

    #[test]
    fn bias_calibration_identical_series() {
        let series: Vec<f64> = (0..50).map(|i| ISA_P0 - i as f64 * 0.1).collect();
        let cal = calibrate_bias(&series, &series, CalibrationGeometry::CoLocated, 0.0).unwrap();
        assert_eq!(cal.bias_pa, 0.0);
    }

    #[test]
    fn bias_calibration_with_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let n = 1000;
        let ground: Vec<f64> = (0..n).map(|_| ISA_P0).collect();
        let airborne: Vec<f64> = ground
            .iter()
            .map(|g| g + 195.0 + rng.gen_range(-5.0..5.0))
            .collect();
        let cal =
            calibrate_bias(&airborne, &ground, CalibrationGeometry::CoLocated, 0.0).unwrap();
        assert!((cal.bias_pa - 195.0).abs() < 0.5, "bias = {}", cal.bias_pa);
        // Standard error of the mean for uniform(-5, 5): 5/sqrt(3)/sqrt(N).
        assert!((cal.bias_sigma_pa - 5.0 / 3.0_f64.sqrt() / (n as f64).sqrt()).abs() < 0.03);
    }

    #[test]
    fn bias_calibration_height_adjustment() {
        let ground: Vec<f64> = (0..20).map(|_| ISA_P0).collect();
        // Vehicle 1 m above the station reads the hydrostatic drop plus bias.
        let airborne: Vec<f64> = ground
            .iter()
            .map(|g| g - ISA_RHO0 * G0 + 150.0)
            .collect();
        let cal = calibrate_bias(
            &airborne,
            &ground,
            CalibrationGeometry::VehicleAboveStation { height_m: 1.0 },
            0.0,
        )
        .unwrap();
        assert_relative_eq!(cal.bias_pa, 150.0, max_relative = 1e-9);
    }

    #[test]
    fn bias_calibration_needs_samples() {
        let short = vec![ISA_P0; 9];
        assert!(matches!(
            calibrate_bias(&short, &short, CalibrationGeometry::CoLocated, 0.0),
            Err(AtmosphereError::InsufficientData { needed: 10, got: 9 })
        ));
    }
}
