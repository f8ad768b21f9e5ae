//! Navigation requirement derivation from vertiport geometry and risk level.
//!
//! The chain goes: vehicle D-value -> FATO sizing -> wingtip margin -> an
//! equivalent Gaussian total-system-error sigma at the allowed FATO-exceedance
//! probability -> navigation-system-error sigma after removing flight technical
//! error -> 95% accuracy and alert limits at the operation's integrity risk.
//! The vertical requirement is derived twice, from the approach slope and from
//! the low hover height; consumers take the stricter bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Typical FATO design multiplier (reference sizing of twice the D-value).
pub const TYPICAL_FATO_MULTIPLIER: f64 = 2.0;
/// Minimum FATO design multiplier permitted by the sizing rule.
pub const MIN_FATO_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum RequirementError {
    #[error("SAIL level {0} outside 1..=6")]
    SailOutOfRange(u8),
    #[error("{0}")]
    Domain(String),
    #[error("infeasible geometry: FATO {fato_m} m smaller than D-value {d_m} m")]
    InfeasibleGeometry { fato_m: f64, d_m: f64 },
    #[error("infeasible budget: sigma_FTE {sigma_fte_m} m >= sigma_TSE {sigma_tse_m} m")]
    InfeasibleBudget { sigma_fte_m: f64, sigma_tse_m: f64 },
}

pub type Result<T> = std::result::Result<T, RequirementError>;

/// Vertiport sizing inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertiportGeometry {
    /// Largest D-value (m) among vehicles the vertiport is designed for.
    pub d_max: f64,
    /// Largest rejected take-off distance (m); 0 when unavailable.
    #[serde(default)]
    pub rtodv_max: f64,
    /// FATO sizing multiplier, 1.5 minimum.
    #[serde(default = "default_fato_multiplier")]
    pub fato_multiplier: f64,
    /// High hover take-off height (m).
    #[serde(default = "default_to_hover_height")]
    pub to_hover_height: f64,
    /// Low hover height (m).
    #[serde(default = "default_low_hover_height")]
    pub low_hover_height: f64,
}

fn default_fato_multiplier() -> f64 {
    MIN_FATO_MULTIPLIER
}
fn default_to_hover_height() -> f64 {
    30.5
}
fn default_low_hover_height() -> f64 {
    3.0
}

impl VertiportGeometry {
    pub fn new(d_max: f64) -> Result<Self> {
        let geom = Self {
            d_max,
            rtodv_max: 0.0,
            fato_multiplier: MIN_FATO_MULTIPLIER,
            to_hover_height: default_to_hover_height(),
            low_hover_height: default_low_hover_height(),
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0) {
            return Err(RequirementError::Domain(format!(
                "d_max must be positive, got {}",
                self.d_max
            )));
        }
        if self.fato_multiplier < MIN_FATO_MULTIPLIER {
            return Err(RequirementError::Domain(format!(
                "fato_multiplier must be >= 1.5, got {}",
                self.fato_multiplier
            )));
        }
        if self.rtodv_max < 0.0 {
            return Err(RequirementError::Domain("rtodv_max must be >= 0".into()));
        }
        if !(self.to_hover_height > self.low_hover_height && self.low_hover_height >= 0.0) {
            return Err(RequirementError::Domain(format!(
                "hover heights must satisfy to_hover {} > low_hover {} >= 0",
                self.to_hover_height, self.low_hover_height
            )));
        }
        Ok(())
    }

    fn with_multiplier(&self, fato_multiplier: f64) -> Self {
        Self {
            fato_multiplier,
            ..self.clone()
        }
    }
}

/// Risk inputs for the derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    /// Allowed probability of finishing the approach outside the FATO.
    #[serde(default = "default_p_out")]
    pub p_out: f64,
    /// Integrity risk per operation.
    #[serde(default = "default_integrity_risk")]
    pub integrity_risk: f64,
    /// One-sigma flight technical error (m).
    #[serde(default = "default_sigma_fte")]
    pub sigma_fte: f64,
    /// 95% containment factor. 2.0 reproduces the reference accuracy values;
    /// 1.959964 is the exact two-sided Gaussian factor.
    #[serde(default = "default_k95")]
    pub k95: f64,
}

fn default_p_out() -> f64 {
    1e-6
}
fn default_integrity_risk() -> f64 {
    1e-7
}
fn default_sigma_fte() -> f64 {
    0.25
}
fn default_k95() -> f64 {
    2.0
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            p_out: default_p_out(),
            integrity_risk: default_integrity_risk(),
            sigma_fte: default_sigma_fte(),
            k95: default_k95(),
        }
    }
}

impl RiskParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_out > 0.0 && self.p_out < 1.0) {
            return Err(RequirementError::Domain(format!(
                "p_out must lie in (0, 1), got {}",
                self.p_out
            )));
        }
        if !(self.integrity_risk > 0.0 && self.integrity_risk < 1.0) {
            return Err(RequirementError::Domain(format!(
                "integrity_risk must lie in (0, 1), got {}",
                self.integrity_risk
            )));
        }
        if self.sigma_fte < 0.0 {
            return Err(RequirementError::Domain("sigma_fte must be >= 0".into()));
        }
        if !(self.k95 > 0.0) {
            return Err(RequirementError::Domain("k95 must be positive".into()));
        }
        Ok(())
    }
}

/// Operational figures that are echoed, not derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceParams {
    #[serde(default = "default_tta")]
    pub tta_s: f64,
    #[serde(default = "default_continuity")]
    pub continuity_risk: f64,
    #[serde(default = "default_availability")]
    pub availability: f64,
}

fn default_tta() -> f64 {
    3.0
}
fn default_continuity() -> f64 {
    1e-8
}
fn default_availability() -> f64 {
    0.9999
}

impl Default for ServiceParams {
    fn default() -> Self {
        Self {
            tta_s: default_tta(),
            continuity_risk: default_continuity(),
            availability: default_availability(),
        }
    }
}

/// Unit an integrity budget is expressed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationUnit {
    FlightHour,
    ApproachLanding,
}

impl std::fmt::Display for OperationUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperationUnit::FlightHour => write!(f, "h"),
            OperationUnit::ApproachLanding => write!(f, "op"),
        }
    }
}

/// An integrity risk budget together with its operation unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrityRiskBudget {
    pub risk: f64,
    pub per: OperationUnit,
}

/// Final per-phase requirement contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementSet {
    pub hpe95_m: f64,
    pub vpe95_m: f64,
    pub hal_m: f64,
    pub val_m: f64,
    pub integrity_risk: f64,
    pub tta_s: f64,
    pub continuity_risk: f64,
    pub availability: f64,
}

impl RequirementSet {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hpe95_m", self.hpe95_m),
            ("vpe95_m", self.vpe95_m),
            ("hal_m", self.hal_m),
            ("val_m", self.val_m),
            ("integrity_risk", self.integrity_risk),
            ("tta_s", self.tta_s),
            ("continuity_risk", self.continuity_risk),
            ("availability", self.availability),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RequirementError::Domain(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Integrity risk budget for a SAIL level: 10^-(SAIL+1) per operation unit.
pub fn integrity_risk_budget(sail: u8, per: OperationUnit) -> Result<IntegrityRiskBudget> {
    if !(1..=6).contains(&sail) {
        return Err(RequirementError::SailOutOfRange(sail));
    }
    Ok(IntegrityRiskBudget {
        risk: 10f64.powi(-(i32::from(sail) + 1)),
        per,
    })
}

/// FATO diameter: max(multiplier * D_max, RTODV_max).
pub fn fato_size(geom: &VertiportGeometry) -> f64 {
    (geom.fato_multiplier * geom.d_max).max(geom.rtodv_max)
}

/// Wingtip-to-safety-area margin: (FATO - D) / 2.
pub fn wtsa_margin(fato_m: f64, d_m: f64) -> Result<f64> {
    if fato_m < d_m {
        return Err(RequirementError::InfeasibleGeometry { fato_m, d_m });
    }
    Ok((fato_m - d_m) / 2.0)
}

/// Two-sided Gaussian containment factor: the k with P(|X| > k) = p
/// for a zero-mean unit-variance Gaussian, i.e. sqrt(2) * erfc_inv(p).
pub fn gaussian_two_sided_k(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(RequirementError::Domain(format!(
            "two-sided exceedance probability must lie in (0, 1], got {p}"
        )));
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    Ok(std::f64::consts::SQRT_2 * math::erfc_inv(p))
}

/// Equivalent TSE standard deviation: margin / k(P_out).
pub fn sigma_tse(wtsa_m: f64, p_out: f64) -> Result<f64> {
    if !(wtsa_m > 0.0) {
        return Err(RequirementError::Domain(format!(
            "wtsa must be positive, got {wtsa_m}"
        )));
    }
    let k = gaussian_two_sided_k(p_out)?;
    if k == 0.0 {
        return Err(RequirementError::Domain(
            "p_out = 1 leaves no containment factor".into(),
        ));
    }
    Ok(wtsa_m / k)
}

/// NSE sigma after removing flight technical error (PDE neglected).
pub fn sigma_nse(sigma_tse_m: f64, sigma_fte_m: f64) -> Result<f64> {
    if sigma_fte_m < 0.0 {
        return Err(RequirementError::Domain("sigma_fte must be >= 0".into()));
    }
    if sigma_fte_m > sigma_tse_m {
        return Err(RequirementError::InfeasibleBudget {
            sigma_fte_m,
            sigma_tse_m,
        });
    }
    Ok((sigma_tse_m * sigma_tse_m - sigma_fte_m * sigma_fte_m).sqrt())
}

/// Approach/departure slope angle in degrees from the funnel volume:
/// atan((to_hover - low_hover) / (2 D - D)).
pub fn slope_angle_deg(geom: &VertiportGeometry) -> f64 {
    let rise = geom.to_hover_height - geom.low_hover_height;
    let run = 2.0 * geom.d_max - geom.d_max;
    (rise / run).atan().to_degrees()
}

/// Vertical NSE sigma from the horizontal one and the slope angle.
pub fn sigma_nse_vertical(sigma_nse_h_m: f64, slope_deg: f64) -> Result<f64> {
    if !(slope_deg > 0.0 && slope_deg < 90.0) {
        return Err(RequirementError::Domain(format!(
            "slope angle must lie in (0, 90) degrees, got {slope_deg}"
        )));
    }
    Ok(sigma_nse_h_m * slope_deg.to_radians().tan())
}

/// Alert limit: k(integrity_risk) * sigma_NSE.
pub fn alert_limit(sigma_nse_m: f64, integrity_risk: f64) -> Result<f64> {
    if !(sigma_nse_m > 0.0) {
        return Err(RequirementError::Domain(format!(
            "sigma_nse must be positive, got {sigma_nse_m}"
        )));
    }
    Ok(gaussian_two_sided_k(integrity_risk)? * sigma_nse_m)
}

/// One horizontal derivation chain (for a given FATO multiplier).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizontalChain {
    pub fato_multiplier: f64,
    pub fato_m: f64,
    pub wtsa_m: f64,
    pub sigma_tse_m: f64,
    pub sigma_nse_m: f64,
    pub accuracy95_m: f64,
    pub alert_limit_m: f64,
}

/// Vertical chain along the approach slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticalSlopeChain {
    pub slope_deg: f64,
    pub sigma_nse_m: f64,
    pub accuracy95_m: f64,
    pub alert_limit_m: f64,
}

/// Vertical chain from the low hover height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticalHoverChain {
    pub sigma_tse_m: f64,
    pub sigma_nse_m: f64,
    pub accuracy95_m: f64,
    pub alert_limit_m: f64,
    /// 95% bound of the raw TSE sigma, i.e. without FTE subtraction. The
    /// reference table's lower VPE bound matches this variant, so both are
    /// reported.
    pub accuracy95_no_fte_m: f64,
}

/// Full derivation record: both FATO chains plus both vertical chains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequirementDerivation {
    pub minimum_fato: HorizontalChain,
    pub typical_fato: HorizontalChain,
    pub vertical_slope: VerticalSlopeChain,
    pub vertical_hover: VerticalHoverChain,
    pub integrity_risk: f64,
    pub tta_s: f64,
    pub continuity_risk: f64,
    pub availability: f64,
}

fn horizontal_chain(geom: &VertiportGeometry, risk: &RiskParams) -> Result<HorizontalChain> {
    let fato_m = fato_size(geom);
    let wtsa_m = wtsa_margin(fato_m, geom.d_max)?;
    let sigma_tse_m = sigma_tse(wtsa_m, risk.p_out)?;
    let sigma_nse_m = sigma_nse(sigma_tse_m, risk.sigma_fte)?;
    if !(sigma_nse_m > 0.0) {
        return Err(RequirementError::InfeasibleBudget {
            sigma_fte_m: risk.sigma_fte,
            sigma_tse_m,
        });
    }
    Ok(HorizontalChain {
        fato_multiplier: geom.fato_multiplier,
        fato_m,
        wtsa_m,
        sigma_tse_m,
        sigma_nse_m,
        accuracy95_m: risk.k95 * sigma_nse_m,
        alert_limit_m: alert_limit(sigma_nse_m, risk.integrity_risk)?,
    })
}

/// Chain the full derivation for the horizontal (minimum and typical FATO)
/// and vertical (slope and low-hover) requirement paths.
pub fn derive_requirement_set(
    geom: &VertiportGeometry,
    risk: &RiskParams,
    service: &ServiceParams,
) -> Result<RequirementDerivation> {
    geom.validate()?;
    risk.validate()?;

    let minimum_fato = horizontal_chain(geom, risk)?;
    let typical_fato = horizontal_chain(&geom.with_multiplier(TYPICAL_FATO_MULTIPLIER), risk)?;

    // Slope path: driven by the stricter (minimum FATO) horizontal NSE.
    let slope_deg = slope_angle_deg(geom);
    let sigma_nse_v = sigma_nse_vertical(minimum_fato.sigma_nse_m, slope_deg)?;
    let vertical_slope = VerticalSlopeChain {
        slope_deg,
        sigma_nse_m: sigma_nse_v,
        accuracy95_m: risk.k95 * sigma_nse_v,
        alert_limit_m: alert_limit(sigma_nse_v, risk.integrity_risk)?,
    };

    // Low-hover path: the vertical error must stay inside the hover height.
    let hover_tse = sigma_tse(geom.low_hover_height, risk.p_out)?;
    let hover_nse = sigma_nse(hover_tse, risk.sigma_fte)?;
    if !(hover_nse > 0.0) {
        return Err(RequirementError::InfeasibleBudget {
            sigma_fte_m: risk.sigma_fte,
            sigma_tse_m: hover_tse,
        });
    }
    let vertical_hover = VerticalHoverChain {
        sigma_tse_m: hover_tse,
        sigma_nse_m: hover_nse,
        accuracy95_m: risk.k95 * hover_nse,
        alert_limit_m: alert_limit(hover_nse, risk.integrity_risk)?,
        accuracy95_no_fte_m: risk.k95 * hover_tse,
    };

    Ok(RequirementDerivation {
        minimum_fato,
        typical_fato,
        vertical_slope,
        vertical_hover,
        integrity_risk: risk.integrity_risk,
        tta_s: service.tta_s,
        continuity_risk: service.continuity_risk,
        availability: service.availability,
    })
}

impl RequirementDerivation {
    pub fn hal_bounds_m(&self) -> (f64, f64) {
        order(self.minimum_fato.alert_limit_m, self.typical_fato.alert_limit_m)
    }

    pub fn val_bounds_m(&self) -> (f64, f64) {
        order(
            self.vertical_hover.alert_limit_m,
            self.vertical_slope.alert_limit_m,
        )
    }

    pub fn hpe95_bounds_m(&self) -> (f64, f64) {
        order(self.minimum_fato.accuracy95_m, self.typical_fato.accuracy95_m)
    }

    pub fn vpe95_bounds_m(&self) -> (f64, f64) {
        order(
            self.vertical_hover.accuracy95_no_fte_m,
            self.vertical_slope.accuracy95_m,
        )
    }

    /// The stricter bound of each pair, as the operating contract.
    pub fn strictest(&self) -> RequirementSet {
        RequirementSet {
            hpe95_m: self.hpe95_bounds_m().0,
            vpe95_m: self.vertical_hover.accuracy95_m.min(self.vertical_slope.accuracy95_m),
            hal_m: self.hal_bounds_m().0,
            val_m: self.val_bounds_m().0,
            integrity_risk: self.integrity_risk,
            tta_s: self.tta_s,
            continuity_risk: self.continuity_risk,
            availability: self.availability,
        }
    }

    /// One-row CSV mirroring the requirement-table columns.
    pub fn to_csv(&self) -> String {
        let (hpe_lo, hpe_hi) = self.hpe95_bounds_m();
        let (vpe_lo, vpe_hi) = self.vpe95_bounds_m();
        let (hal_lo, hal_hi) = self.hal_bounds_m();
        let (val_lo, val_hi) = self.val_bounds_m();
        let mut s = String::from(
            "operation,hpe95_min_m,hpe95_max_m,vpe95_min_m,vpe95_max_m,integrity_risk_per_op,\
             hal_min_m,hal_max_m,val_min_m,val_max_m,tta_s,continuity_risk_per_op,availability\n",
        );
        s.push_str(&format!(
            "precision_approach,{:.3},{:.3},{:.3},{:.3},{:e},{:.3},{:.3},{:.3},{:.3},{},{:e},{}\n",
            hpe_lo,
            hpe_hi,
            vpe_lo,
            vpe_hi,
            self.integrity_risk,
            hal_lo,
            hal_hi,
            val_lo,
            val_hi,
            self.tta_s,
            self.continuity_risk,
            self.availability,
        ));
        s
    }

    /// Human-readable derivation report.
    pub fn table(&self) -> String {
        let (hal_lo, hal_hi) = self.hal_bounds_m();
        let (val_lo, val_hi) = self.val_bounds_m();
        let mut out = String::new();
        out.push_str("Precision approach requirement derivation\n");
        out.push_str(&format!(
            "  minimum FATO ({}D): FATO {:.2} m, WTSA {:.2} m, sigma_TSE {:.4} m, sigma_NSE {:.4} m\n",
            self.minimum_fato.fato_multiplier,
            self.minimum_fato.fato_m,
            self.minimum_fato.wtsa_m,
            self.minimum_fato.sigma_tse_m,
            self.minimum_fato.sigma_nse_m
        ));
        out.push_str(&format!(
            "  typical FATO ({}D): FATO {:.2} m, WTSA {:.2} m, sigma_TSE {:.4} m, sigma_NSE {:.4} m\n",
            self.typical_fato.fato_multiplier,
            self.typical_fato.fato_m,
            self.typical_fato.wtsa_m,
            self.typical_fato.sigma_tse_m,
            self.typical_fato.sigma_nse_m
        ));
        out.push_str(&format!(
            "  slope {:.2} deg -> vertical sigma_NSE {:.4} m\n",
            self.vertical_slope.slope_deg, self.vertical_slope.sigma_nse_m
        ));
        out.push_str(&format!(
            "  low hover -> vertical sigma_NSE {:.4} m (95% {:.3} m with FTE, {:.3} m without)\n",
            self.vertical_hover.sigma_nse_m,
            self.vertical_hover.accuracy95_m,
            self.vertical_hover.accuracy95_no_fte_m
        ));
        out.push_str(&format!(
            "  HPE95 {:.2}-{:.2} m  VPE95 {:.2}-{:.2} m\n",
            self.hpe95_bounds_m().0,
            self.hpe95_bounds_m().1,
            self.vpe95_bounds_m().0,
            self.vpe95_bounds_m().1
        ));
        out.push_str(&format!(
            "  HAL {hal_lo:.2}-{hal_hi:.2} m  VAL {val_lo:.2}-{val_hi:.2} m  IR {:e}/op  TTA {} s  continuity {:e}/op  availability {}\n",
            self.integrity_risk, self.tta_s, self.continuity_risk, self.availability
        ));
        out
    }
}

fn order(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
