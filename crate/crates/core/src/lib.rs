//! Vertiport approach navigation toolkit.
//!
//! This crate derives precision-approach navigation requirements from vertiport
//! geometry and risk level, implements the multisensor subsystems needed to meet
//! them (differential GNSS with local threat monitors, strapdown INS with an
//! error-state Kalman filter, ground-corrected barometric altitude, marker-based
//! visual positioning), evaluates subsystem fault trees, and validates the whole
//! chain against the derived requirements in a deterministic flight simulator.
//!
//! Module map:
//! - [`requirements`]: FATO geometry to accuracy / alert-limit derivation.
//! - [`atmosphere`]: ISA pressure altitude, ground correction, bias calibration.
//! - [`gnss`]: observation model, local corrections, WLS positioning,
//!   protection levels, CMC / CN0 / band-power monitors.
//! - [`fusion`]: strapdown mechanization and 15-state error-state EKF.
//! - [`vision`]: pinhole projection, Gauss-Newton marker pose, multi-scale
//!   marker selection, calibration-error back-propagation.
//! - [`integrity`]: OR-gate fault trees, budget allocation, alert-limit checks.
//! - [`sim`]: scenario generation, sensor synthesis, fault injection,
//!   end-to-end runs and Monte Carlo aggregation.
//! - [`config`]: the JSON configuration schema shared by the CLI subcommands.
//!
//! All estimation code is pure or single-owner stateful; individual simulator
//! runs are independent and safe to execute in parallel.

pub mod atmosphere;
pub mod config;
pub mod frames;
pub mod fusion;
pub mod gnss;
pub mod integrity;
pub mod math;
pub mod requirements;
pub mod sim;
pub mod vision;
