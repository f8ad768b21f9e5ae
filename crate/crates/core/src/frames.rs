//! WGS-84 geodetic / ECEF / local ENU frame conversions.
//!
//! The local frame is anchored at a configurable reference latitude,
//! longitude and altitude; all vertiport-scale navigation runs in this ENU
//! frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// Reference point anchoring the local ENU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuReference {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_m: f64,
}

impl Default for EnuReference {
    fn default() -> Self {
        // Mid-latitude test-range default.
        Self {
            latitude_deg: 51.85,
            longitude_deg: 11.42,
            altitude_m: 110.0,
        }
    }
}

impl EnuReference {
    pub fn ecef_origin(&self) -> Vector3<f64> {
        geodetic_to_ecef(self.latitude_deg, self.longitude_deg, self.altitude_m)
    }

    /// Rotation taking ECEF vectors into ENU components.
    pub fn rotation_ecef_to_enu(&self) -> Matrix3<f64> {
        let lat = self.latitude_deg.to_radians();
        let lon = self.longitude_deg.to_radians();
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_lon, cos_lon) = lon.sin_cos();
        Matrix3::new(
            -sin_lon,
            cos_lon,
            0.0,
            -sin_lat * cos_lon,
            -sin_lat * sin_lon,
            cos_lat,
            cos_lat * cos_lon,
            cos_lat * sin_lon,
            sin_lat,
        )
    }

    pub fn ecef_to_enu(&self, ecef: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_ecef_to_enu() * (ecef - self.ecef_origin())
    }

    pub fn enu_to_ecef(&self, enu: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_origin() + self.rotation_ecef_to_enu().transpose() * enu
    }

    /// ECEF position of a satellite given azimuth/elevation (deg) and range (m)
    /// from the frame origin.
    pub fn satellite_from_az_el(&self, az_deg: f64, el_deg: f64, range_m: f64) -> Vector3<f64> {
        let az = az_deg.to_radians();
        let el = el_deg.to_radians();
        let enu = Vector3::new(
            range_m * el.cos() * az.sin(),
            range_m * el.cos() * az.cos(),
            range_m * el.sin(),
        );
        self.enu_to_ecef(&enu)
    }
}

/// Geodetic (deg, deg, m) to ECEF (m).
pub fn geodetic_to_ecef(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Vector3<f64> {
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let (sin_lat, cos_lat) = lat.sin_cos();
    let n = WGS84_A / (1.0 - e2 * sin_lat * sin_lat).sqrt();
    Vector3::new(
        (n + alt_m) * cos_lat * lon.cos(),
        (n + alt_m) * cos_lat * lon.sin(),
        (n * (1.0 - e2) + alt_m) * sin_lat,
    )
}
