//! Channel and detection model.
//!
//! Each photon's polarization is a unit vector on the Bloch sphere. The
//! channel applies a single axis-angle rotation (Rodrigues formula), the
//! detectors are a pair of threshold detectors with dark counts, and gain /
//! error-gain follow from the Poissonian click statistics of the attenuated
//! coherent pulse.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("rotation axis must be a unit vector, |axis| = {0}")]
    NonUnitAxis(f64),
    #[error("parameter {name} = {value} outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Measurement basis. `Z` distinguishes H/V, `X` the diagonal states, `Y`
/// the circular states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    /// Bloch vector of the pole carrying the given bit value (bit 0 is H,
    /// +, or L).
    pub fn pole(&self, bit: u8) -> BlochVector {
        let sign = if bit == 0 { 1.0 } else { -1.0 };
        match self {
            Basis::Z => BlochVector::new(0.0, 0.0, sign),
            Basis::X => BlochVector::new(sign, 0.0, 0.0),
            Basis::Y => BlochVector::new(0.0, sign, 0.0),
        }
    }

    /// The bit a pulse at `(mu_h, mu_v, phi_hv)` encodes in this basis: the
    /// nearer pole. Ties resolve to bit 0.
    pub fn bit_of(&self, mu_h: f64, mu_v: f64, phi_hv: f64) -> u8 {
        match self {
            Basis::Z => u8::from(mu_v > mu_h),
            Basis::X => u8::from(phi_hv.cos() < 0.0),
            Basis::Y => u8::from(phi_hv.sin() < 0.0),
        }
    }

    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Basis::Z => write!(f, "Z"),
            Basis::X => write!(f, "X"),
            Basis::Y => write!(f, "Y"),
        }
    }
}

/// Unit vector on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &BlochVector) -> BlochVector {
        BlochVector::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: f64) -> BlochVector {
        BlochVector::new(k * self.x, k * self.y, k * self.z)
    }

    pub fn add(&self, other: &BlochVector) -> BlochVector {
        BlochVector::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn normalized(&self) -> Result<BlochVector, ChannelError> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(ChannelError::NonUnitAxis(n));
        }
        Ok(self.scaled(1.0 / n))
    }
}

/// Bloch vector for polar angle `theta_hv` in [0, π] and azimuth `phi_hv`.
pub fn bloch_vector(theta_hv: f64, phi_hv: f64) -> BlochVector {
    BlochVector::new(
        theta_hv.sin() * phi_hv.cos(),
        theta_hv.sin() * phi_hv.sin(),
        theta_hv.cos(),
    )
}

/// Bloch vector of the pulse with arm intensities `(mu_h, mu_v)` and
/// relative phase `phi_hv`. At zero total intensity the H pole is returned,
/// matching the source convention.
pub fn bloch_from_intensities(mu_h: f64, mu_v: f64, phi_hv: f64) -> BlochVector {
    let mu = mu_h + mu_v;
    if mu <= 0.0 {
        return BlochVector::new(0.0, 0.0, 1.0);
    }
    let theta = 2.0 * (mu_h / mu).sqrt().clamp(0.0, 1.0).acos();
    bloch_vector(theta, phi_hv)
}

/// Rodrigues rotation of `s` by `alpha` around the unit vector `axis`.
pub fn rotate(s: &BlochVector, axis: &BlochVector, alpha: f64) -> Result<BlochVector, ChannelError> {
    let n = axis.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(ChannelError::NonUnitAxis(n));
    }
    let (sin_a, cos_a) = alpha.sin_cos();
    let kxs = axis.cross(s);
    let kds = axis.dot(s);
    Ok(s.scaled(cos_a)
        .add(&kxs.scaled(sin_a))
        .add(&axis.scaled(kds * (1.0 - cos_a))))
}

/// Projection probability of state `s_rot` onto detection state `b`:
/// `cos²(α_proj/2) = (1 + s·b)/2`.
pub fn projection_probability(s_rot: &BlochVector, b: &BlochVector) -> f64 {
    (0.5 * (1.0 + s_rot.dot(b))).clamp(0.0, 1.0)
}

/// Channel parameters: transmittance, detector efficiency, per-detector dark
/// count probability, and the misalignment rotation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Channel transmittance.
    pub eta: f64,
    /// Detector efficiency (multiplies `eta`).
    pub eta_d: f64,
    /// Per-detector dark count probability per gate.
    pub p_d: f64,
    /// Rotation axis on the Bloch sphere (unit vector).
    pub rot_axis: BlochVector,
    /// Rotation angle on the Bloch sphere, in radians.
    pub rot_angle: f64,
}

impl ChannelParams {
    pub fn new(
        eta: f64,
        eta_d: f64,
        p_d: f64,
        rot_axis: BlochVector,
        rot_angle: f64,
    ) -> Result<Self, ChannelError> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(ChannelError::OutOfRange {
                name: "eta",
                value: eta,
                range: "(0, 1]",
            });
        }
        if !(eta_d > 0.0 && eta_d <= 1.0) {
            return Err(ChannelError::OutOfRange {
                name: "eta_d",
                value: eta_d,
                range: "(0, 1]",
            });
        }
        if !(0.0..1.0).contains(&p_d) {
            return Err(ChannelError::OutOfRange {
                name: "p_d",
                value: p_d,
                range: "[0, 1)",
            });
        }
        let n = rot_axis.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(ChannelError::NonUnitAxis(n));
        }
        Ok(ChannelParams {
            eta,
            eta_d,
            p_d,
            rot_axis,
            rot_angle,
        })
    }

    /// Misalignment `e_d` as a rotation in the X-Z plane (axis Y). `e_d` is
    /// the error probability a perfectly prepared H or V state acquires, i.e.
    /// `e_d = sin²(α)` for the state-space angle α; the Bloch-sphere
    /// rotation angle is twice that.
    pub fn with_misalignment(eta: f64, eta_d: f64, p_d: f64, e_d: f64) -> Result<Self, ChannelError> {
        if !(0.0..1.0).contains(&e_d) {
            return Err(ChannelError::OutOfRange {
                name: "e_d",
                value: e_d,
                range: "[0, 1)",
            });
        }
        let state_angle = e_d.sqrt().asin();
        ChannelParams::new(eta, eta_d, p_d, BlochVector::new(0.0, 1.0, 0.0), 2.0 * state_angle)
    }

    /// Fibre transmittance for a distance in km at the given attenuation.
    pub fn transmittance(distance_km: f64, attenuation_db_per_km: f64) -> f64 {
        10f64.powf(-attenuation_db_per_km * distance_km / 10.0)
    }

    /// The misalignment error probability this channel inflicts on a
    /// perfectly prepared Z-basis state (darks excluded).
    pub fn e_d(&self) -> f64 {
        let h = Basis::Z.pole(0);
        let rotated = rotate(&h, &self.rot_axis, self.rot_angle).expect("axis validated");
        1.0 - projection_probability(&rotated, &h)
    }
}

/// Click probabilities of the two threshold detectors for a pulse of
/// intensity `mu` whose projection probability onto the detector-0 state is
/// `p_proj`:
/// `P⁰ = 1 - (1-p_d)·e^{-η·η_d·μ·P_proj}`, `P¹` with the complement.
pub fn click_probabilities(mu: f64, p_proj: f64, ch: &ChannelParams) -> (f64, f64) {
    let lambda = ch.eta * ch.eta_d * mu;
    let p0 = 1.0 - (1.0 - ch.p_d) * (-lambda * p_proj).exp();
    let p1 = 1.0 - (1.0 - ch.p_d) * (-lambda * (1.0 - p_proj)).exp();
    (p0, p1)
}

/// Per-pulse gain and error-gain for a pulse `(mu_h, mu_v, phi_hv)` measured
/// by Bob in `bob_basis`, where `correct_bit` names the detector that counts
/// as correct (the caller's bit convention). Double clicks are assigned a
/// random bit, hence contribute half an error.
pub fn gain_and_error(
    mu_h: f64,
    mu_v: f64,
    phi_hv: f64,
    bob_basis: Basis,
    correct_bit: u8,
    ch: &ChannelParams,
) -> (f64, f64) {
    let s = bloch_from_intensities(mu_h, mu_v, phi_hv);
    let s_rot = rotate(&s, &ch.rot_axis, ch.rot_angle).expect("axis validated at construction");
    let correct_pole = bob_basis.pole(correct_bit);
    let p_proj = projection_probability(&s_rot, &correct_pole);
    let (p_correct, p_wrong) = click_probabilities(mu_h + mu_v, p_proj, ch);
    let gain = p_correct + p_wrong - p_correct * p_wrong;
    let error_gain = p_wrong - 0.5 * p_wrong * p_correct;
    (gain, error_gain)
}
