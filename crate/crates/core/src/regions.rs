//! Post-selection regions.
//!
//! A pulse is classified by the polar coordinates `(r, θ)` of its arm
//! intensities, `r = sqrt(mu_h² + mu_v²)`, `θ = atan2(mu_v, mu_h)`, together
//! with the relative phase `φ_hv`. A region is a sector in the intensity
//! plane (rectangular in `(r, θ)`) intersected with a set of azimuth
//! windows. The sector shape is what lets the decoy-state analysis decouple
//! radius from angle; the nested decoy settings differ only in their radius.

use crate::channel::Basis;
use crate::quad::{Endpoint, Interval};
use crate::source::{angle_distance, IntensityPdf};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{name} = {value} violates {constraint}")]
    Invalid {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

/// The six nominal polarization states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisState {
    H,
    V,
    XPlus,
    XMinus,
    YPlus,
    YMinus,
}

impl BasisState {
    pub fn basis(&self) -> Basis {
        match self {
            BasisState::H | BasisState::V => Basis::Z,
            BasisState::XPlus | BasisState::XMinus => Basis::X,
            BasisState::YPlus | BasisState::YMinus => Basis::Y,
        }
    }

    pub fn bit(&self) -> u8 {
        match self {
            BasisState::H | BasisState::XPlus | BasisState::YPlus => 0,
            BasisState::V | BasisState::XMinus | BasisState::YMinus => 1,
        }
    }

    pub const ALL: [BasisState; 6] = [
        BasisState::H,
        BasisState::V,
        BasisState::XPlus,
        BasisState::XMinus,
        BasisState::YPlus,
        BasisState::YMinus,
    ];
}

impl std::fmt::Display for BasisState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BasisState::H => "H",
            BasisState::V => "V",
            BasisState::XPlus => "X+",
            BasisState::XMinus => "X-",
            BasisState::YPlus => "Y+",
            BasisState::YMinus => "Y-",
        };
        write!(f, "{s}")
    }
}

/// The six parameters fixing the whole region family.
///
/// All angular widths are half-widths in the `(mu_h, mu_v)` intensity plane
/// (`delta_z` measured from the axes, `delta_xy` around the diagonal) and
/// in the azimuth (`delta_phi` around each window center). The decoy radii
/// are `t_decoy·mu_max` and `t_decoy2·mu_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostSelectionConfig {
    pub mu_max: f64,
    pub delta_z: f64,
    pub delta_xy: f64,
    pub delta_phi: f64,
    pub t_decoy: f64,
    pub t_decoy2: f64,
}

impl PostSelectionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name, value: f64| {
            if value > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    name,
                    value,
                    constraint: "> 0",
                })
            }
        };
        positive("mu_max", self.mu_max)?;
        positive("delta_z", self.delta_z)?;
        positive("delta_xy", self.delta_xy)?;
        positive("delta_phi", self.delta_phi)?;
        if self.delta_xy >= FRAC_PI_4 {
            return Err(ConfigError::Invalid {
                name: "delta_xy",
                value: self.delta_xy,
                constraint: "< π/4",
            });
        }
        // Signal wedges must leave discarded gaps between Z and X/Y slices,
        // and the X windows must not meet the Y windows.
        if self.delta_z + self.delta_xy >= FRAC_PI_4 {
            return Err(ConfigError::Invalid {
                name: "delta_z",
                value: self.delta_z,
                constraint: "delta_z + delta_xy < π/4",
            });
        }
        if self.delta_phi >= FRAC_PI_4 {
            return Err(ConfigError::Invalid {
                name: "delta_phi",
                value: self.delta_phi,
                constraint: "< π/4",
            });
        }
        if !(self.t_decoy > 0.0 && self.t_decoy <= 1.0) {
            return Err(ConfigError::Invalid {
                name: "t_decoy",
                value: self.t_decoy,
                constraint: "in (0, 1]",
            });
        }
        if !(self.t_decoy2 > 0.0 && self.t_decoy2 < self.t_decoy) {
            return Err(ConfigError::Invalid {
                name: "t_decoy2",
                value: self.t_decoy2,
                constraint: "in (0, t_decoy)",
            });
        }
        Ok(())
    }

    /// Sector radii of the signal and the two decoy settings.
    pub fn decoy_radii(&self) -> [f64; 3] {
        [
            self.mu_max,
            self.t_decoy * self.mu_max,
            self.t_decoy2 * self.mu_max,
        ]
    }
}

/// Azimuth acceptance: either the full circle (Z basis) or a set of
/// symmetric windows given by centers and a common half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhaseWindows {
    All,
    Windows { centers: Vec<f64>, half_width: f64 },
}

impl PhaseWindows {
    pub fn contains(&self, phi_hv: f64) -> bool {
        match self {
            PhaseWindows::All => true,
            PhaseWindows::Windows {
                centers,
                half_width,
            } => centers
                .iter()
                .any(|&c| angle_distance(phi_hv, c) <= *half_width),
        }
    }

    /// Fraction of the uniform azimuth measure the windows cover.
    pub fn fraction(&self) -> f64 {
        match self {
            PhaseWindows::All => 1.0,
            PhaseWindows::Windows {
                centers,
                half_width,
            } => centers.len() as f64 * 2.0 * half_width / (2.0 * PI),
        }
    }

    /// The windows as explicit intervals for quadrature.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        match self {
            PhaseWindows::All => vec![(0.0, 2.0 * PI)],
            PhaseWindows::Windows {
                centers,
                half_width,
            } => centers
                .iter()
                .map(|&c| (c - half_width, c + half_width))
                .collect(),
        }
    }
}

/// Radial extent of a region along a ray at angle θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialProfile {
    /// Sector: `r ≤ r_max` independent of θ. The shape required by the
    /// decoy-state decoupling.
    Sector { r_max: f64 },
    /// `max(mu_h, mu_v) ≤ m`: the naive region shape used as a negative
    /// control for the proportionality criterion.
    MaxIntensity { m: f64 },
}

/// One acceptance region: a nominal state, a decoy setting, an angular
/// slice, a radial profile and the azimuth windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub state: BasisState,
    pub decoy_index: usize,
    /// Polar-angle slice `[θ_min, θ_max]` in the intensity plane.
    pub theta_range: (f64, f64),
    pub profile: RadialProfile,
    pub phi_windows: PhaseWindows,
    /// The boundary of the intensity square, kept for singularity handling.
    pub mu_max: f64,
}

impl Region {
    /// Radial acceptance limit along the ray at angle θ.
    pub fn r_limit(&self, theta: f64) -> f64 {
        match self.profile {
            RadialProfile::Sector { r_max } => r_max,
            RadialProfile::MaxIntensity { m } => m / theta.cos().max(theta.sin()),
        }
    }

    /// Nominal sector radius (the decoy-setting label).
    pub fn r_max(&self) -> f64 {
        match self.profile {
            RadialProfile::Sector { r_max } => r_max,
            RadialProfile::MaxIntensity { m } => m,
        }
    }

    /// Membership predicate on the raw pulse coordinates.
    pub fn contains(&self, mu_h: f64, mu_v: f64, phi_hv: f64) -> bool {
        if mu_h < 0.0 || mu_v < 0.0 {
            return false;
        }
        let r = (mu_h * mu_h + mu_v * mu_v).sqrt();
        let theta = mu_v.atan2(mu_h);
        theta >= self.theta_range.0
            && theta <= self.theta_range.1
            && r <= self.r_limit(theta)
            && self.phi_windows.contains(phi_hv)
    }

    /// θ integration pieces with endpoint flags. The inherent density has
    /// inverse-square-root singularities where the slice touches the axes,
    /// and the naive profile's radial limit has a kink (plus, when the
    /// region reaches the square's corner, a logarithmic spike) on the
    /// diagonal; panels never straddle it.
    pub fn theta_pieces(&self, pdf: &IntensityPdf) -> Vec<Interval> {
        let singular = pdf.boundary_singular();
        let (lo, hi) = self.theta_range;
        let lo_flag = if singular && lo < 1e-12 {
            Endpoint::SqrtAt(0.0)
        } else {
            Endpoint::Regular
        };
        let hi_flag = if singular && hi > FRAC_PI_2 - 1e-12 {
            Endpoint::SqrtAt(FRAC_PI_2)
        } else {
            Endpoint::Regular
        };
        let breaks = self.theta_breakpoints();
        if breaks.is_empty() {
            return vec![Interval::with_endpoints(lo, hi, lo_flag, hi_flag)];
        }
        // Corner proximity decides whether the diagonal needs the
        // regularizing map as well.
        let corner = singular
            && match self.profile {
                RadialProfile::MaxIntensity { m } => m > 0.8 * self.mu_max,
                RadialProfile::Sector { .. } => false,
            };
        let mut pieces = Vec::with_capacity(breaks.len() + 1);
        let mut start = (lo, lo_flag);
        for &b in &breaks {
            let break_flag = if corner {
                Endpoint::SqrtAt(b)
            } else {
                Endpoint::Regular
            };
            pieces.push(Interval::with_endpoints(start.0, b, start.1, break_flag));
            start = (b, break_flag);
        }
        pieces.push(Interval::with_endpoints(start.0, hi, start.1, hi_flag));
        pieces
    }

    /// Radial integration interval at fixed θ. With the inherent density an
    /// arm intensity hitting the square's edge produces an inverse-
    /// square-root factor whose singular radius `mu_max / max(cosθ, sinθ)`
    /// sits at or beyond the acceptance limit; the endpoint map removes it
    /// exactly.
    pub fn radial_interval(&self, theta: f64, pdf: &IntensityPdf) -> Interval {
        let r_hi = self.r_limit(theta);
        let hi = if pdf.boundary_singular() {
            let r_singular = self.mu_max / theta.cos().max(theta.sin());
            if r_hi > 0.8 * r_singular {
                Endpoint::SqrtAt(r_singular)
            } else {
                Endpoint::Regular
            }
        } else {
            Endpoint::Regular
        };
        Interval::with_endpoints(0.0, r_hi, Endpoint::Regular, hi)
    }

    /// θ values where the radial limit is non-smooth; quadrature panels
    /// must not straddle them.
    pub fn theta_breakpoints(&self) -> Vec<f64> {
        match self.profile {
            RadialProfile::Sector { .. } => vec![],
            RadialProfile::MaxIntensity { .. } => {
                let (lo, hi) = self.theta_range;
                if lo < FRAC_PI_4 && hi > FRAC_PI_4 {
                    vec![FRAC_PI_4]
                } else {
                    vec![]
                }
            }
        }
    }
}

/// Build the full family: 6 states × 3 nested decoy settings. The decoy
/// regions are subsets of the signal region (overlap is deliberate: the
/// linear constraints may be combined freely, and shared data helps in the
/// finite-size regime).
pub fn build_regions(config: &PostSelectionConfig) -> Result<Vec<Region>, ConfigError> {
    config.validate()?;
    let radii = config.decoy_radii();
    let z = config.delta_z;
    let xy = (FRAC_PI_4 - config.delta_xy, FRAC_PI_4 + config.delta_xy);
    let dphi = config.delta_phi;
    let mut out = Vec::with_capacity(18);
    for state in BasisState::ALL {
        let (theta_range, phi_windows) = match state {
            BasisState::H => ((0.0, z), PhaseWindows::All),
            BasisState::V => ((FRAC_PI_2 - z, FRAC_PI_2), PhaseWindows::All),
            // The X and Y analyses pair each window with its antipode; both
            // windows belong to the region, and the per-pulse bit is the
            // nearer pole.
            BasisState::XPlus | BasisState::XMinus => (
                xy,
                PhaseWindows::Windows {
                    centers: vec![0.0, PI],
                    half_width: dphi,
                },
            ),
            BasisState::YPlus | BasisState::YMinus => (
                xy,
                PhaseWindows::Windows {
                    centers: vec![FRAC_PI_2, 3.0 * FRAC_PI_2],
                    half_width: dphi,
                },
            ),
        };
        for (decoy_index, &r_max) in radii.iter().enumerate() {
            out.push(Region {
                state,
                decoy_index,
                theta_range,
                profile: RadialProfile::Sector { r_max },
                phi_windows: phi_windows.clone(),
                mu_max: config.mu_max,
            });
        }
    }
    Ok(out)
}

/// The region for a given state and decoy setting.
pub fn region_for(config: &PostSelectionConfig, state: BasisState, decoy_index: usize) -> Result<Region, ConfigError> {
    let all = build_regions(config)?;
    Ok(all
        .into_iter()
        .find(|r| r.state == state && r.decoy_index == decoy_index)
        .expect("family covers all states and settings"))
}

/// Naive control regions in the X/Y slice: same angular slice, but the
/// radial boundary follows `max(mu_h, mu_v) ≤ m_i`. With the inherent
/// density these fail the proportionality criterion.
pub fn naive_xy_regions(mu_max: f64, delta_xy: f64, thresholds: &[f64]) -> Vec<Region> {
    thresholds
        .iter()
        .enumerate()
        .map(|(decoy_index, &m)| Region {
            state: BasisState::XPlus,
            decoy_index,
            theta_range: (FRAC_PI_4 - delta_xy, FRAC_PI_4 + delta_xy),
            profile: RadialProfile::MaxIntensity { m },
            phi_windows: PhaseWindows::All,
            mu_max,
        })
        .collect()
}
