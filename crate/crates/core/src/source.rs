//! The four-laser passive source.
//!
//! Two laser pairs interfere on 50:50 beamsplitters; the monitored output of
//! each interferometer is rotated into the H respectively V polarization mode
//! and the two are combined on a polarizing beamsplitter. The four random
//! laser phases therefore determine the output intensity, the polarization
//! (a point on the Bloch sphere) and the global phase.
//!
//! This module implements the forward map from phases to the output state,
//! its inverse, the inherent intensity probability density of the source, and
//! the additional post-selection ("reshaping") that turns that density into
//! `C·exp(mu_h + mu_v)` so that the decoy-state analysis decouples.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

const TAU: f64 = 2.0 * PI;

/// Wrap an angle into [0, 2π).
pub(crate) fn wrap_angle(phi: f64) -> f64 {
    let mut x = phi % TAU;
    if x < 0.0 {
        x += TAU;
    }
    //`-1e-17 % TAU` rounds to TAU itself.
    if x >= TAU {
        x = 0.0;
    }
    x
}

/// Distance between two angles on the circle, in [0, π].
pub(crate) fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("intensity must be non-negative, got {0}")]
    NegativeIntensity(f64),
    #[error("arm intensity {mu} outside the reachable range [0, {mu_max}]")]
    UnreachableState { mu: f64, mu_max: f64 },
    #[error("intensity density is singular at (mu_h={mu_h}, mu_v={mu_v}) for mu_max={mu_max}")]
    SingularDensity { mu_h: f64, mu_v: f64, mu_max: f64 },
    #[error("reshaping scale {c} gives acceptance probability {q} > 1 at (mu_h={mu_h}, mu_v={mu_v})")]
    InvalidScale { c: f64, q: f64, mu_h: f64, mu_v: f64 },
}

/// The four random laser phases, each in [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePhases {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub phi4: f64,
}

impl SourcePhases {
    pub fn new(phi1: f64, phi2: f64, phi3: f64, phi4: f64) -> Self {
        SourcePhases {
            phi1: wrap_angle(phi1),
            phi2: wrap_angle(phi2),
            phi3: wrap_angle(phi3),
            phi4: wrap_angle(phi4),
        }
    }
}

/// One interferometer arm output: a coherent state of intensity `mu` and
/// phase `phase`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    pub mu: f64,
    pub phase: f64,
}

/// One emitted pulse: total intensity, Bloch-sphere polarization angles,
/// global phase, and the underlying arm intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputState {
    /// Total intensity, `mu_h + mu_v`.
    pub mu: f64,
    /// Bloch polar angle in [0, π]; 0 is pure H, π pure V.
    pub theta_hv: f64,
    /// Bloch azimuth (relative phase between the V and H components).
    pub phi_hv: f64,
    /// Global phase (the H-arm phase).
    pub phi_g: f64,
    pub mu_h: f64,
    pub mu_v: f64,
}

impl OutputState {
    pub fn from_arms(h: ArmState, v: ArmState) -> Self {
        let mu = h.mu + v.mu;
        // Polarization undefined at mu = 0; pick the H pole by convention.
        let theta_hv = if mu > 0.0 {
            2.0 * (h.mu / mu).sqrt().clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        OutputState {
            mu,
            theta_hv,
            phi_hv: wrap_angle(v.phase - h.phase),
            phi_g: wrap_angle(h.phase),
            mu_h: h.mu,
            mu_v: v.mu,
        }
    }

    /// Build a target state from arm intensities and the two phase
    /// degrees of freedom.
    pub fn from_intensities(mu_h: f64, mu_v: f64, phi_hv: f64, phi_g: f64) -> Self {
        let h = ArmState {
            mu: mu_h,
            phase: wrap_angle(phi_g),
        };
        let v = ArmState {
            mu: mu_v,
            phase: wrap_angle(phi_g + phi_hv),
        };
        OutputState::from_arms(h, v)
    }

    /// Physical equality up to `tol`, ignoring coordinates that are
    /// undefined on the Bloch chart (azimuth at the poles, phases of an
    /// extinguished arm).
    pub fn approx_same(&self, other: &OutputState, tol: f64) -> bool {
        if (self.mu - other.mu).abs() > tol
            || (self.mu_h - other.mu_h).abs() > tol
            || (self.mu_v - other.mu_v).abs() > tol
        {
            return false;
        }
        if self.mu <= tol {
            return true;
        }
        if (self.theta_hv - other.theta_hv).abs() > tol {
            return false;
        }
        let azimuth_defined = self.mu_h > tol && self.mu_v > tol;
        if azimuth_defined && angle_distance(self.phi_hv, other.phi_hv) > tol {
            return false;
        }
        let global_defined = self.mu_h > tol;
        if global_defined && angle_distance(self.phi_g, other.phi_g) > tol {
            return false;
        }
        true
    }
}

/// Both outputs of a 50:50 beamsplitter fed with coherent states
/// `(mu1, phi1)` and `(mu2, phi2)`. The reflected contribution picks up the
/// usual π/2 phase; callers never deal with it directly.
pub fn beamsplitter_outputs(
    mu1: f64,
    mu2: f64,
    phi1: f64,
    phi2: f64,
) -> Result<(ArmState, ArmState), SourceError> {
    if mu1 < 0.0 {
        return Err(SourceError::NegativeIntensity(mu1));
    }
    if mu2 < 0.0 {
        return Err(SourceError::NegativeIntensity(mu2));
    }
    let a1 = (mu1 / 2.0).sqrt();
    let a2 = (mu2 / 2.0).sqrt();
    // Port c: a1·e^{iφ1} + a2·e^{i(φ2+π/2)}; port d: the reflection-swapped sum.
    let port = |pa: f64, fa: f64, pb: f64, fb: f64| {
        let re = pa * fa.cos() + pb * fb.cos();
        let im = pa * fa.sin() + pb * fb.sin();
        ArmState {
            mu: re * re + im * im,
            phase: wrap_angle(im.atan2(re)),
        }
    };
    let c = port(a1, phi1, a2, phi2 + FRAC_PI_2);
    let d = port(a1, phi1 + FRAC_PI_2, a2, phi2);
    Ok((c, d))
}

/// Interference of two coherent states on a 50:50 beamsplitter, monitored
/// output port only.
///
/// `mu_out = mu1/2 + mu2/2 + cos(phi2 + π/2 - phi1)·sqrt(mu1·mu2)`, and the
/// output phase is that of the complex amplitude sum.
pub fn interfere_pair(mu1: f64, mu2: f64, phi1: f64, phi2: f64) -> Result<ArmState, SourceError> {
    Ok(beamsplitter_outputs(mu1, mu2, phi1, phi2)?.0)
}

/// Forward map: four laser phases (equal per-laser intensity) to the emitted
/// output state. Lasers 1 and 2 feed the H arm, lasers 3 and 4 the V arm.
pub fn phases_to_output(phases: &SourcePhases, per_laser_mu: f64) -> Result<OutputState, SourceError> {
    let h = interfere_pair(per_laser_mu, per_laser_mu, phases.phi1, phases.phi2)?;
    let v = interfere_pair(per_laser_mu, per_laser_mu, phases.phi3, phases.phi4)?;
    Ok(OutputState::from_arms(h, v))
}

/// Solve one arm: phases (phi_a, phi_b) with
/// `interfere_pair(mu_l, mu_l, phi_a, phi_b)` equal to `(mu_arm, phi_arm)`.
/// Two symmetric solutions in general, one at the extremes of the reachable
/// intensity range.
fn solve_arm(mu_arm: f64, phi_arm: f64, per_laser_mu: f64) -> Result<Vec<(f64, f64)>, SourceError> {
    let mu_max = 2.0 * per_laser_mu;
    if mu_arm < -1e-12 || mu_arm > mu_max + 1e-12 {
        return Err(SourceError::UnreachableState { mu: mu_arm, mu_max });
    }
    let ratio = (mu_arm / per_laser_mu - 1.0).clamp(-1.0, 1.0);
    let delta = ratio.acos();
    let sol = |s: f64| {
        let phi_a = phi_arm - s * delta / 2.0;
        let phi_b_prime = phi_arm + s * delta / 2.0;
        (wrap_angle(phi_a), wrap_angle(phi_b_prime - FRAC_PI_2))
    };
    // delta = 0 (full intensity) or π (dark port): the two branches describe
    // the same physical output.
    if delta < 1e-12 || (PI - delta) < 1e-12 {
        Ok(vec![sol(1.0)])
    } else {
        Ok(vec![sol(1.0), sol(-1.0)])
    }
}

/// Inverse map: all phase tuples that reproduce `target` (up to four; fewer
/// when an arm intensity sits at 0 or at its maximum).
pub fn output_to_phases(target: &OutputState, per_laser_mu: f64) -> Result<Vec<SourcePhases>, SourceError> {
    let phi_h = target.phi_g;
    let phi_v = target.phi_g + target.phi_hv;
    let h_solutions = solve_arm(target.mu_h, phi_h, per_laser_mu)?;
    let v_solutions = solve_arm(target.mu_v, phi_v, per_laser_mu)?;
    let mut out = Vec::with_capacity(h_solutions.len() * v_solutions.len());
    for &(p1, p2) in &h_solutions {
        for &(p3, p4) in &v_solutions {
            out.push(SourcePhases::new(p1, p2, p3, p4));
        }
    }
    Ok(out)
}

/// The inherent joint density of the arm intensities when all four phases
/// are uniform: a product of arcsine laws,
/// `1 / (π²·sqrt(mu_h(mu_max-mu_h)·mu_v(mu_max-mu_v)))`.
pub fn intensity_pdf(mu_h: f64, mu_v: f64, mu_max: f64) -> Result<f64, SourceError> {
    let inside = |m: f64| m > 0.0 && m < mu_max;
    if !inside(mu_h) || !inside(mu_v) {
        return Err(SourceError::SingularDensity { mu_h, mu_v, mu_max });
    }
    Ok(1.0 / (PI * PI * (mu_h * (mu_max - mu_h) * mu_v * (mu_max - mu_v)).sqrt()))
}

/// One-dimensional marginal of the inherent density (arcsine law on
/// [0, mu_max]).
pub fn intensity_marginal_pdf(mu: f64, mu_max: f64) -> Result<f64, SourceError> {
    if mu <= 0.0 || mu >= mu_max {
        return Err(SourceError::SingularDensity {
            mu_h: mu,
            mu_v: mu,
            mu_max,
        });
    }
    Ok(1.0 / (PI * (mu * (mu_max - mu)).sqrt()))
}

/// Cumulative distribution of the arcsine marginal.
pub fn intensity_marginal_cdf(mu: f64, mu_max: f64) -> f64 {
    (2.0 / PI) * (mu.clamp(0.0, mu_max) / mu_max).sqrt().asin()
}

fn axis_factor(mu: f64, mu_max: f64) -> f64 {
    (mu * (mu_max - mu)).max(0.0).sqrt() * mu.exp()
}

/// Largest scale `C` such that the reshaping acceptance stays ≤ 1 over the
/// whole intensity square. Per axis this is the largest `sqrt(C)` with
/// `sqrt(C)·e^mu ≤ 1/(π·sqrt(mu(mu_max-mu)))`; the two axes are squared
/// together. Golden-section search on the (log-concave, hence unimodal)
/// axis function.
pub fn reshaping_constant(mu_max: f64) -> f64 {
    debug_assert!(mu_max > 0.0);
    let g = |mu: f64| axis_factor(mu, mu_max);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, mu_max);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while b - a > 1e-12 * mu_max {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d);
        }
    }
    let g_max = g(0.5 * (a + b));
    let sqrt_c = 1.0 / (PI * g_max);
    sqrt_c * sqrt_c
}

/// The reshaping acceptance probability
/// `q = c·π²·sqrt(mu_h(mu_max-mu_h)·mu_v(mu_max-mu_v))·e^{mu_h+mu_v}`.
/// Keeping a pulse with this probability turns the inherent density into one
/// proportional to `e^{mu_h+mu_v}`.
pub fn reshape_acceptance(mu_h: f64, mu_v: f64, mu_max: f64, c: f64) -> Result<f64, SourceError> {
    let q = c
        * PI
        * PI
        * (mu_h * (mu_max - mu_h)).max(0.0).sqrt()
        * (mu_v * (mu_max - mu_v)).max(0.0).sqrt()
        * (mu_h + mu_v).exp();
    if q > 1.0 + 1e-9 {
        return Err(SourceError::InvalidScale { c, q, mu_h, mu_v });
    }
    Ok(q.min(1.0))
}

/// Fraction of pulses that survive the reshaping post-selection,
/// `C·(e^{mu_max}-1)²`.
pub fn reshaping_acceptance_fraction(mu_max: f64) -> f64 {
    let e = mu_max.exp() - 1.0;
    reshaping_constant(mu_max) * e * e
}

/// Intensity distribution the statistics engine integrates against.
///
/// `weight` is the unnormalized density; `normalization` its integral over
/// the `[0, mu_max]²` square. Conditional region averages only ever use
/// their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntensityPdf {
    /// The source's inherent arcsine-product density (already normalized).
    Inherent { mu_max: f64 },
    /// The reshaped density ∝ `e^{mu_h+mu_v}` obtained by the additional
    /// post-selection step.
    Reshaped { mu_max: f64 },
}

impl IntensityPdf {
    pub fn mu_max(&self) -> f64 {
        match *self {
            IntensityPdf::Inherent { mu_max } | IntensityPdf::Reshaped { mu_max } => mu_max,
        }
    }

    pub fn weight(&self, mu_h: f64, mu_v: f64) -> f64 {
        match *self {
            IntensityPdf::Inherent { mu_max } => {
                intensity_pdf(mu_h, mu_v, mu_max).unwrap_or(f64::INFINITY)
            }
            IntensityPdf::Reshaped { .. } => (mu_h + mu_v).exp(),
        }
    }

    pub fn normalization(&self) -> f64 {
        match *self {
            IntensityPdf::Inherent { .. } => 1.0,
            IntensityPdf::Reshaped { mu_max } => {
                let e = mu_max.exp() - 1.0;
                e * e
            }
        }
    }

    /// Normalized density over the intensity square.
    pub fn density(&self, mu_h: f64, mu_v: f64) -> f64 {
        self.weight(mu_h, mu_v) / self.normalization()
    }

    /// Whether the weight diverges on the square's boundary (the arcsine
    /// singularities of the inherent density).
    pub fn boundary_singular(&self) -> bool {
        matches!(self, IntensityPdf::Inherent { .. })
    }
}
