//! Differential GNSS positioning with local threat monitors.
//!
//! A single surveyed reference receiver computes per-satellite pseudorange
//! corrections that absorb satellite clock and common atmospheric errors. The
//! rover applies them, filters observations through data editing and the
//! multipath / band-power monitors, solves an iterative weighted least squares
//! position, and bounds the fault-free error with H0 Gaussian protection
//! levels in the local ENU frame.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrity::ProtectionLevels;
use crate::requirements::gaussian_two_sided_k;

/// Convergence threshold on the position step (m).
pub const WLS_STEP_TOLERANCE_M: f64 = 1e-4;
/// Maximum Gauss-Newton iterations before declaring divergence.
pub const WLS_MAX_ITERATIONS: usize = 20;
/// Condition-number limit on the normal matrix.
pub const WLS_CONDITION_LIMIT: f64 = 1e12;
/// Default detrending window of the code-minus-carrier monitor (epochs).
pub const DEFAULT_CMC_WINDOW: usize = 20;
/// Default threshold on the detrended CMC rate (m/epoch).
pub const DEFAULT_CMC_THRESHOLD: f64 = 0.5;
/// Default band-power ratio threshold of the RFI monitor.
pub const DEFAULT_RFI_RATIO: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum GnssError {
    #[error("need at least {needed} usable satellites, got {got}")]
    InsufficientGeometry { needed: usize, got: usize },
    #[error("degenerate geometry: normal-matrix condition {condition:.3e}")]
    DegenerateGeometry { condition: f64 },
    #[error("weighted least squares did not converge in {0} iterations")]
    Divergence(usize),
    #[error("series of {got} epochs shorter than the {needed}-epoch window")]
    InsufficientData { needed: usize, got: usize },
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("covariance is not positive semi-definite")]
    NonPsdCovariance,
    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, GnssError>;

/// One satellite's measurements at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteObservation {
    pub sat_id: u32,
    /// Truth ephemeris point (ECEF, m).
    pub sat_position_ecef: Vector3<f64>,
    pub pseudorange_m: f64,
    pub carrier_phase_range_m: f64,
    pub cn0_dbhz: f64,
    pub lock: bool,
    /// Nominal one-sigma pseudorange error (m).
    pub sigma_nominal_m: f64,
}

/// Correction for one satellite within a broadcast message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEntry {
    pub prc_m: f64,
    pub usable: bool,
}

/// Per-epoch broadcast from the reference station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionMessage {
    pub epoch_s: f64,
    pub reference_position_ecef: Vector3<f64>,
    pub entries: BTreeMap<u32, CorrectionEntry>,
}

/// Converged position solution with covariance and optional protection levels.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSolution {
    pub position_ecef: Vector3<f64>,
    pub clock_bias_m: f64,
    /// Covariance of [x, y, z, clock] (m^2), symmetric PSD.
    pub covariance: Matrix4<f64>,
    pub pl: Option<ProtectionLevels>,
    pub used_sats: Vec<u32>,
    pub iterations: usize,
}

/// Geometric range with a compensated (double-double) norm, returned as
/// (high, low) parts.
///
/// Pseudoranges sit near 2.2e7 m, where a plain f64 norm leaves ~3e-9 m of
/// rounding in each residual; that noise floor would violate the 1e-8
/// gradient-optimality contract of the WLS solver.
fn precise_range(a: &Vector3<f64>, b: &Vector3<f64>) -> (f64, f64) {
    #[inline]
    fn two_sum(x: f64, y: f64) -> (f64, f64) {
        let s = x + y;
        let v = s - x;
        (s, (x - (s - v)) + (y - v))
    }
    #[inline]
    fn two_prod(x: f64, y: f64) -> (f64, f64) {
        let p = x * y;
        (p, x.mul_add(y, -p))
    }
    let (mut s_hi, mut s_lo) = (0.0_f64, 0.0_f64);
    for i in 0..3 {
        let (d, d_err) = two_sum(a[i], -b[i]);
        let (sq, sq_err) = two_prod(d, d);
        let (s1, e1) = two_sum(s_hi, sq);
        s_lo += e1 + sq_err + 2.0 * d * d_err;
        s_hi = s1;
    }
    let r0 = s_hi.sqrt();
    if r0 == 0.0 {
        return (0.0, 0.0);
    }
    let (r0_sq, r0_sq_err) = two_prod(r0, r0);
    (r0, ((s_hi - r0_sq) - r0_sq_err + s_lo) / (2.0 * r0))
}

/// Pseudorange residual (measured minus predicted) with the compensated range.
pub fn pseudorange_residual(
    pseudorange_m: f64,
    sat_ecef: &Vector3<f64>,
    position_ecef: &Vector3<f64>,
    clock_bias_m: f64,
) -> f64 {
    let (hi, lo) = precise_range(sat_ecef, position_ecef);
    ((pseudorange_m - hi) - clock_bias_m) - lo
}

/// Pseudorange corrections from a surveyed reference: measured minus geometric
/// range. Satellites flagged by the monitors are excluded from the message.
pub fn compute_corrections(
    ref_truth_position: &Vector3<f64>,
    obs: &[SatelliteObservation],
    flagged_unusable: &BTreeSet<u32>,
) -> CorrectionMessage {
    let entries = obs
        .iter()
        .filter(|o| !flagged_unusable.contains(&o.sat_id))
        .map(|o| {
            let range = (o.sat_position_ecef - ref_truth_position).norm();
            (
                o.sat_id,
                CorrectionEntry {
                    prc_m: o.pseudorange_m - range,
                    usable: true,
                },
            )
        })
        .collect();
    CorrectionMessage {
        epoch_s: 0.0,
        reference_position_ecef: *ref_truth_position,
        entries,
    }
}

/// Iterative weighted least squares on (optionally corrected) pseudoranges.
///
/// When a correction message is supplied, only satellites with a usable entry
/// take part and their pseudoranges have the correction removed.
pub fn wls_position(
    obs: &[SatelliteObservation],
    corrections: Option<&CorrectionMessage>,
    initial_ecef: &Vector3<f64>,
) -> Result<PositionSolution> {
    let mut used: Vec<(&SatelliteObservation, f64)> = Vec::with_capacity(obs.len());
    for o in obs {
        match corrections {
            Some(msg) => {
                if let Some(entry) = msg.entries.get(&o.sat_id) {
                    if entry.usable {
                        used.push((o, o.pseudorange_m - entry.prc_m));
                    }
                }
            }
            None => used.push((o, o.pseudorange_m)),
        }
    }
    if used.len() < 4 {
        return Err(GnssError::InsufficientGeometry {
            needed: 4,
            got: used.len(),
        });
    }

    let mut position = *initial_ecef;
    let mut clock_bias = 0.0_f64;
    let mut normal_inv = Matrix4::zeros();
    let mut converged_at = None;
    let mut polishing = false;

    for iteration in 0..=WLS_MAX_ITERATIONS {
        // Normal matrix N = H^T W H and projected residual g = H^T W r.
        let mut normal = Matrix4::zeros();
        let mut g = Vector4::zeros();
        for (o, pr) in &used {
            let los = o.sat_position_ecef - position;
            let unit = los / los.norm();
            let row = Vector4::new(-unit.x, -unit.y, -unit.z, 1.0);
            let w = 1.0 / (o.sigma_nominal_m * o.sigma_nominal_m);
            normal += w * row * row.transpose();
            g += w * pseudorange_residual(*pr, &o.sat_position_ecef, &position, clock_bias) * row;
        }

        let eigen = normal.symmetric_eigen();
        let max_ev = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(min_ev > 0.0) || max_ev / min_ev > WLS_CONDITION_LIMIT {
            return Err(GnssError::DegenerateGeometry {
                condition: if min_ev > 0.0 {
                    max_ev / min_ev
                } else {
                    f64::INFINITY
                },
            });
        }
        normal_inv = normal.try_inverse().ok_or(GnssError::DegenerateGeometry {
            condition: f64::INFINITY,
        })?;

        let step = normal_inv * g;
        position += Vector3::new(step.x, step.y, step.z);
        clock_bias += step.w;
        if polishing {
            converged_at = Some(iteration + 1);
            break;
        }
        if step.xyz().norm() < WLS_STEP_TOLERANCE_M {
            // One extra pass kills the residual gradient left by the
            // position-step criterion.
            polishing = true;
        }
    }

    let iterations = converged_at.ok_or(GnssError::Divergence(WLS_MAX_ITERATIONS))?;
    let covariance = 0.5 * (normal_inv + normal_inv.transpose());
    Ok(PositionSolution {
        position_ecef: position,
        clock_bias_m: clock_bias,
        covariance,
        pl: None,
        used_sats: used.iter().map(|(o, _)| o.sat_id).collect(),
        iterations,
    })
}

/// H0 protection levels from the solution covariance: the horizontal level
/// bounds the worst-case ENU horizontal axis, the vertical one the up axis.
pub fn protection_levels(
    covariance: &Matrix4<f64>,
    ir_alloc_horizontal: f64,
    ir_alloc_vertical: f64,
    rotation_ecef_to_enu: &Matrix3<f64>,
) -> Result<ProtectionLevels> {
    if (covariance - covariance.transpose()).norm() > 1e-9 * (1.0 + covariance.norm()) {
        return Err(GnssError::NonPsdCovariance);
    }
    let pos_ecef = covariance.fixed_view::<3, 3>(0, 0).into_owned();
    let pos_enu = rotation_ecef_to_enu * pos_ecef * rotation_ecef_to_enu.transpose();
    let eigen = pos_enu.symmetric_eigen();
    if eigen
        .eigenvalues
        .iter()
        .any(|&l| l < -1e-9 * (1.0 + pos_enu.trace()))
    {
        return Err(GnssError::NonPsdCovariance);
    }

    // Largest eigenvalue of the 2x2 east/north block, closed form.
    let h = Matrix2::new(
        pos_enu[(0, 0)],
        pos_enu[(0, 1)],
        pos_enu[(1, 0)],
        pos_enu[(1, 1)],
    );
    let mean = (h[(0, 0)] + h[(1, 1)]) / 2.0;
    let half_diff = (h[(0, 0)] - h[(1, 1)]) / 2.0;
    let lambda_max = (mean + (half_diff * half_diff + h[(0, 1)] * h[(1, 0)]).sqrt()).max(0.0);
    let var_up = pos_enu[(2, 2)].max(0.0);

    let k_h =
        gaussian_two_sided_k(ir_alloc_horizontal).map_err(|e| GnssError::Domain(e.to_string()))?;
    let k_v =
        gaussian_two_sided_k(ir_alloc_vertical).map_err(|e| GnssError::Domain(e.to_string()))?;
    Ok(ProtectionLevels {
        hpl_m: k_h * lambda_max.sqrt(),
        vpl_m: k_v * var_up.sqrt(),
    })
}

/// Code-minus-carrier multipath monitor.
///
/// The CMC observable is detrended by a trailing moving mean (which removes
/// the carrier ambiguity and slow ionospheric drift); an epoch is flagged
/// when the per-epoch rate of the detrended series exceeds the threshold.
pub fn cmc_multipath_monitor(
    code_m: &[f64],
    carrier_m: &[f64],
    threshold_m_per_epoch: f64,
    window: usize,
) -> Result<Vec<bool>> {
    if code_m.len() != carrier_m.len() {
        return Err(GnssError::LengthMismatch {
            left: code_m.len(),
            right: carrier_m.len(),
        });
    }
    if code_m.len() < window {
        return Err(GnssError::InsufficientData {
            needed: window,
            got: code_m.len(),
        });
    }
    let cmc: Vec<f64> = code_m
        .iter()
        .zip(carrier_m.iter())
        .map(|(c, p)| c - p)
        .collect();
    let n = cmc.len();
    let mut detrended = Vec::with_capacity(n);
    let mut running_sum = 0.0;
    for i in 0..n {
        running_sum += cmc[i];
        if i >= window {
            running_sum -= cmc[i - window];
        }
        let len = (i + 1).min(window) as f64;
        detrended.push(cmc[i] - running_sum / len);
    }
    let mut flags = vec![false; n];
    for i in 1..n {
        flags[i] = (detrended[i] - detrended[i - 1]).abs() > threshold_m_per_epoch;
    }
    Ok(flags)
}

/// Reasons the data editor removed an observation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EditReport {
    pub kept: usize,
    pub removed_cn0: Vec<u32>,
    pub removed_lli: Vec<u32>,
}

/// Discard observations below the CN0 mask or with lost carrier lock.
pub fn data_edit(
    obs: &[SatelliteObservation],
    cn0_mask_dbhz: f64,
    require_lock: bool,
) -> (Vec<SatelliteObservation>, EditReport) {
    let mut kept = Vec::with_capacity(obs.len());
    let mut report = EditReport::default();
    for o in obs {
        if o.cn0_dbhz < cn0_mask_dbhz {
            report.removed_cn0.push(o.sat_id);
        } else if require_lock && !o.lock {
            report.removed_lli.push(o.sat_id);
        } else {
            kept.push(o.clone());
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Band-power RFI detection result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RfiDetection {
    pub detected: bool,
    pub flagged_bands: Vec<usize>,
}

/// Compare received band powers against the nominal spectrum; a band whose
/// power exceeds nominal times the ratio threshold trips the monitor.
pub fn band_power_rfi_monitor(
    psd_sample: &[f64],
    nominal_psd: &[f64],
    ratio_threshold: f64,
) -> Result<RfiDetection> {
    if psd_sample.len() != nominal_psd.len() {
        return Err(GnssError::LengthMismatch {
            left: psd_sample.len(),
            right: nominal_psd.len(),
        });
    }
    let flagged_bands: Vec<usize> = psd_sample
        .iter()
        .zip(nominal_psd.iter())
        .enumerate()
        .filter(|(_, (p, n))| **p > **n * ratio_threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(RfiDetection {
        detected: !flagged_bands.is_empty(),
        flagged_bands,
    })
}
