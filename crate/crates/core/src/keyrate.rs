//! Secret-key rates.
//!
//! BB84 uses the Shor-Preskill form: the single-photon fraction of the key
//! regions earns `1 - h₂(e₁ˣ)` of privacy, and error correction costs
//! `f_e·⟨Q⟩·h₂(QBER)`. RFI-QKD replaces the privacy term with the
//! Devetak-Winter bound built from the rotation-invariant parameter
//! `C = Σ (1-2e₁^{ij})²` over the X/Y basis pairings, which is what makes
//! the rate insensitive to a slowly drifting reference frame.
//!
//! The finite-size treatment assumes collective attacks and Gaussian
//! statistics: every observed count carries a `γ`-standard-deviation
//! confidence interval, the decoy linear programs are re-solved with the
//! widened bands, and the rate takes the pessimal endpoint of every
//! interval.

use crate::decoy::{solve_bounds, BasisPair, DecoyBounds, DecoyError, DecoySummary};
use crate::statistics::RegionStatistics;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Binary entropy in bits; 0 at both ends by continuity.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Standard-deviation multiplier for a two-sided Gaussian failure
/// probability: solves `ε = 2(1 - Φ(γ))`.
pub fn gamma_from_epsilon(epsilon: f64) -> f64 {
    assert!(epsilon > 0.0 && epsilon < 1.0, "epsilon in (0,1)");
    let mut gamma = std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(epsilon);
    // Newton polish on erfc(γ/√2) = ε; the forward function is accurate to
    // machine precision, so two steps pin the root well below 1e-10.
    for _ in 0..2 {
        let f = statrs::function::erf::erfc(gamma / std::f64::consts::SQRT_2) - epsilon;
        let df = -(2.0 / std::f64::consts::PI).sqrt() * (-0.5 * gamma * gamma).exp();
        gamma -= f / df;
    }
    gamma
}

/// Two-sided confidence interval for an expected detection count,
/// `count ± γ·sqrt(count)`, the lower end clamped at zero.
pub fn finite_bounds(count: f64, gamma: f64) -> (f64, f64) {
    debug_assert!(count >= 0.0);
    let half = gamma * count.sqrt();
    ((count - half).max(0.0), count + half)
}

/// Finite-size scenario: total pulses sent and the Gaussian tail budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FiniteSizeConfig {
    pub n_total: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl FiniteSizeConfig {
    pub fn new(n_total: f64, epsilon: f64) -> Self {
        FiniteSizeConfig {
            n_total,
            epsilon,
            gamma: gamma_from_epsilon(epsilon),
        }
    }
}

/// RFI-specific intermediates, kept for auditability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RfiIntermediates {
    pub c_param: f64,
    pub u_max: f64,
    pub v: f64,
    pub i_e: f64,
    /// Mixed-polarization single-photon Z error bound entering I_E.
    pub e1_z_mixed_upper: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FiniteMeta {
    pub n_total: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

/// A key rate together with everything that went into it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyRateResult {
    /// Secret bits per transmitted pulse, clamped at zero.
    pub rate: f64,
    pub y1_lower: f64,
    /// Phase-error (BB84) or mixed-Z (RFI) single-photon error bound.
    pub e1_upper: f64,
    /// Single-photon probability over the key-generation regions.
    pub p1_signal: f64,
    pub p_za: f64,
    pub p_zb: f64,
    pub gain_z: f64,
    pub qber_z: f64,
    /// f_e·⟨Q⟩·h₂(QBER): the error-correction cost before sifting factors.
    pub ec_leak: f64,
    /// p1·Y₁ᴸ·(1 - leak): the privacy-amplified single-photon term.
    pub privacy_term: f64,
    /// False when a validity condition failed (the rate is then zero).
    pub valid: bool,
    pub rfi: Option<RfiIntermediates>,
    pub finite: Option<FiniteMeta>,
}

/// Shared rate assembly: privacy term minus error correction, scaled by the
/// sifting factors. `leak` is h₂(e₁ˣ) for BB84 and I_E for RFI.
fn rate_from_privacy_leak(
    stats_z: &RegionStatistics,
    y1_lower: f64,
    e1_upper: f64,
    leak: f64,
    sifting: (f64, f64),
    f_e: f64,
) -> KeyRateResult {
    let (p_za, p_zb) = sifting;
    let p1 = stats_z.photon_coeffs.get(1).copied().unwrap_or(0.0);
    let qber = stats_z.qber();
    let ec_leak = f_e * stats_z.gain * binary_entropy(qber);
    let privacy_term = p1 * y1_lower * (1.0 - leak);
    let rate = (p_za * p_zb * (privacy_term - ec_leak)).max(0.0);
    KeyRateResult {
        rate,
        y1_lower,
        e1_upper,
        p1_signal: p1,
        p_za,
        p_zb,
        gain_z: stats_z.gain,
        qber_z: qber,
        ec_leak,
        privacy_term,
        valid: true,
        rfi: None,
        finite: None,
    }
}

/// BB84: `R = P_Z^A·P_Z^B·{⟨P₁⟩·Y₁^{Z,L}·(1 - h₂(e₁^{X,U})) - f_e·⟨Q⟩·h₂(QBER)}`.
///
/// `stats_z` are the key-region observables (gain, error-gain, ⟨P₁⟩);
/// the bounds come from the Z→Z and X→X decoy programs.
pub fn bb84_rate(
    stats_z: &RegionStatistics,
    z_bounds: &DecoyBounds,
    x_bounds: &DecoyBounds,
    sifting: (f64, f64),
    f_e: f64,
) -> KeyRateResult {
    rate_from_privacy_leak(
        stats_z,
        z_bounds.y1_lower,
        x_bounds.e1_upper,
        binary_entropy(x_bounds.e1_upper),
        sifting,
        f_e,
    )
}

/// Largest mixed-Z single-photon error rate the RFI bound tolerates; beyond
/// it the closed form for Eve's information no longer applies and the rate
/// is reported as zero rather than extrapolated.
pub const RFI_E1Z_VALIDITY_LIMIT: f64 = 0.159;

/// RFI-QKD rate from the five basis-pair bounds.
///
/// `C = Σ_{ij∈{XX,XY,YX,YY}} (1-2e₁^{ij,U})²` is rotation-invariant;
/// Eve's information is
/// `I_E = (1-e₁^Z)·h₂[(1+u_max)/2] + e₁^Z·h₂[(1+v)/2]` with
/// `u_max = min(1, sqrt(C/2)/(1-e₁^Z))` and
/// `v = sqrt(C/2 - (1-e₁^Z)²·u_max²)/e₁^Z` (radicand clamped at zero, v
/// capped at one). The Z error bound is the mixed-polarization one,
/// `e₁Y₁^{Z',U}/Y₁^{Z,L}`, which is exactly what the pseudo-error-yield
/// bounds deliver.
pub fn rfi_rate(
    bounds: &BTreeMap<BasisPair, DecoyBounds>,
    stats_z: &RegionStatistics,
    sifting: (f64, f64),
    f_e: f64,
) -> KeyRateResult {
    use crate::channel::Basis::{X, Y, Z};
    let zz = &bounds[&(Z, Z)];
    let e1_z = if zz.y1_lower > 0.0 {
        (zz.e1y1_upper / zz.y1_lower).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let c_param: f64 = [(X, X), (X, Y), (Y, X), (Y, Y)]
        .iter()
        .map(|pair| {
            let e = bounds[pair].e1_upper;
            (1.0 - 2.0 * e) * (1.0 - 2.0 * e)
        })
        .sum();

    if e1_z > RFI_E1Z_VALIDITY_LIMIT {
        let mut out = rate_from_privacy_leak(stats_z, zz.y1_lower, e1_z, 1.0, sifting, f_e);
        out.rate = 0.0;
        out.valid = false;
        out.rfi = Some(RfiIntermediates {
            c_param,
            u_max: f64::NAN,
            v: f64::NAN,
            i_e: f64::NAN,
            e1_z_mixed_upper: e1_z,
        });
        return out;
    }

    let half_c = 0.5 * c_param;
    let u_max = (half_c.sqrt() / (1.0 - e1_z)).min(1.0);
    let radicand = (half_c - (1.0 - e1_z) * (1.0 - e1_z) * u_max * u_max).max(0.0);
    let v = if e1_z > 0.0 {
        (radicand.sqrt() / e1_z).min(1.0)
    } else {
        0.0
    };
    let i_e = (1.0 - e1_z) * binary_entropy((1.0 + u_max) / 2.0)
        + e1_z * binary_entropy((1.0 + v) / 2.0);

    let mut out = rate_from_privacy_leak(stats_z, zz.y1_lower, e1_z, i_e, sifting, f_e);
    out.rfi = Some(RfiIntermediates {
        c_param,
        u_max,
        v,
        i_e,
        e1_z_mixed_upper: e1_z,
    });
    out
}

/// One decoy setting with the number of pulses assigned to it, for the
/// finite-size widening.
#[derive(Debug, Clone)]
pub struct CountedSummary {
    pub summary: DecoySummary,
    /// Expected pulses that land in this setting and are measured in the
    /// paired basis (asymptotic assignment).
    pub n_pulses: f64,
}

/// Widen every observable of a decoy setting to its Gaussian confidence
/// band. With `n → ∞` the bands collapse to the asymptotic values.
pub fn widen_summaries(counted: &[CountedSummary], gamma: f64) -> Vec<DecoySummary> {
    counted
        .iter()
        .map(|c| {
            let mut s = c.summary.clone();
            let n = c.n_pulses.max(0.0);
            if n > 0.0 {
                let (q_lo, q_hi) = finite_bounds(s.gain.0 * n, gamma);
                s.gain = ((q_lo / n).max(0.0), (q_hi / n).min(1.0));
                let (e_lo, e_hi) = finite_bounds(s.error_gain.0 * n, gamma);
                s.error_gain = ((e_lo / n).max(0.0), (e_hi / n).min(1.0));
            }
            s
        })
        .collect()
}

/// Finite-size BB84: re-solve both decoy programs on the widened bands and
/// assemble the rate from the pessimal endpoints (gain and error-gain of
/// the key regions at their upper ends, which maximizes the
/// error-correction cost).
#[allow(clippy::too_many_arguments)]
pub fn finite_bb84_rate(
    fs: &FiniteSizeConfig,
    z_settings: &[CountedSummary],
    x_settings: &[CountedSummary],
    stats_z_key: &RegionStatistics,
    n_key_pulses: f64,
    sifting: (f64, f64),
    f_e: f64,
    n_cut: usize,
) -> Result<KeyRateResult, DecoyError> {
    let z_bounds = solve_bounds(&widen_summaries(z_settings, fs.gamma), n_cut)?;
    let x_bounds = solve_bounds(&widen_summaries(x_settings, fs.gamma), n_cut)?;

    let mut worst = stats_z_key.clone();
    if n_key_pulses > 0.0 {
        let (_, q_hi) = finite_bounds(stats_z_key.gain * n_key_pulses, fs.gamma);
        let (_, e_hi) = finite_bounds(stats_z_key.error_gain * n_key_pulses, fs.gamma);
        worst.gain = (q_hi / n_key_pulses).min(1.0);
        worst.error_gain = (e_hi / n_key_pulses).min(worst.gain);
    }
    let mut out = bb84_rate(&worst, &z_bounds, &x_bounds, sifting, f_e);
    out.finite = Some(FiniteMeta {
        n_total: fs.n_total,
        epsilon: fs.epsilon,
        gamma: fs.gamma,
    });
    Ok(out)
}
