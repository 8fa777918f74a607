//! Decoy-state analysis on pseudo-yields.
//!
//! With sector regions and the reshaped intensity distribution, the
//! n-photon contribution to every observable factorizes into a
//! region-dependent coefficient `⟨P_n⟩` and a region-independent variable:
//! the pseudo-yield `Y'_n` (the `(sinθ+cosθ)^n`-weighted angular average of
//! the yield) and likewise the pseudo-error-yield `e_n·Y'_n`. The
//! observables of the nested decoy settings then constrain those variables
//! linearly, and a linear program bounds the single-photon terms:
//! `Y'_1` from below and `e_1Y_1'` from above (and below, for protocols
//! that consume the mixed-polarization error rate).
//!
//! The pseudo-quantities are physically meaningful: they are the yield and
//! error-yield of the single photons with mixed polarization that the
//! passive source actually emits, so `Y_1'` lower-bounds the
//! polarization-independent single-photon yield and `e_1Y_1'` upper-bounds
//! the error-yield of perfectly encoded single photons.

use crate::channel::{Basis, ChannelParams};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::regions::Region;
use crate::source::IntensityPdf;
use crate::statistics::{
    basis_pair_statistics, proportionality_report, RegionStatistics, StatsError,
    PROPORTIONALITY_GATE, PROPORTIONALITY_N_MAX,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoyError {
    #[error(
        "post-selection strategy incompatible with the decoy analysis: polar distributions \
         deviate from proportionality by {max_rel_dev:.3e} (n = {worst_n}, θ = {worst_theta:.4}); \
         the linear program would not be sound"
    )]
    NotProportional {
        max_rel_dev: f64,
        worst_n: usize,
        worst_theta: f64,
    },
    #[error("need at least two decoy settings, got {0}")]
    TooFewSettings(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Statistics(#[from] StatsError),
}

/// Observable band and photon-number coefficients of one decoy setting, as
/// fed to the linear program. Asymptotically the bands are single points;
/// the finite-size analysis widens them to confidence intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoySummary {
    pub label: String,
    pub gain: (f64, f64),
    pub error_gain: (f64, f64),
    pub photon_coeffs: Vec<f64>,
    pub tail_mass: f64,
    /// Selection probability of the setting under its distribution; the
    /// finite-size analysis multiplies it into the pulse budget.
    pub p_region: f64,
}

impl DecoySummary {
    pub fn exact(label: impl Into<String>, stats: &RegionStatistics) -> Self {
        DecoySummary {
            label: label.into(),
            gain: (stats.gain, stats.gain),
            error_gain: (stats.error_gain, stats.error_gain),
            photon_coeffs: stats.photon_coeffs.clone(),
            tail_mass: stats.tail_mass,
            p_region: stats.p_region,
        }
    }
}

/// Small widening applied to every observable band so that quadrature
/// round-off can never render a physically consistent program infeasible.
/// Widening only relaxes the feasible set, so the bounds stay sound.
const BAND_SLACK_REL: f64 = 1e-7;
const BAND_SLACK_ABS: f64 = 1e-12;

/// Bounds on the single-photon pseudo-quantities for one basis pairing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecoyBounds {
    /// Lower bound on the pseudo-yield Y'_1.
    pub y1_lower: f64,
    /// Upper bound on the pseudo-error-yield e_1·Y'_1.
    pub e1y1_upper: f64,
    /// Lower bound on the pseudo-error-yield (for protocols that need the
    /// mixed-polarization error rate from below).
    pub e1y1_lower: f64,
    /// e_1 upper bound: e1y1_upper / y1_lower, clamped to [0, 1].
    pub e1_upper: f64,
}

/// Assemble the linear program shared by all three objectives.
///
/// Variables: `Y'_0..Y'_n_cut` then `e_nY'_n` over the same range, all in
/// [0, 1]. Every decoy setting contributes two-sided constraints with the
/// photon numbers above the cutoff worst-cased into the tail slack, and
/// each error-yield is coupled below its yield.
pub fn build_lp(summaries: &[DecoySummary], n_cut: usize) -> LinearProgram {
    let n = n_cut + 1;
    let mut lp = LinearProgram::new(2 * n);
    lp.var_names = (0..n)
        .map(|i| format!("Y'{i}"))
        .chain((0..n).map(|i| format!("eY'{i}")))
        .collect();
    lp.upper_bounds = vec![1.0; 2 * n];
    for s in summaries {
        let slack = |v: f64| BAND_SLACK_ABS + BAND_SLACK_REL * v.abs();
        let mut yield_row = vec![0.0; 2 * n];
        yield_row[..n].copy_from_slice(&s.photon_coeffs[..n]);
        let mut err_row = vec![0.0; 2 * n];
        err_row[n..].copy_from_slice(&s.photon_coeffs[..n]);

        // Σ ⟨P_n⟩ Y'_n ≤ ⟨Q⟩ ≤ Σ ⟨P_n⟩ Y'_n + tail.
        lp.push(
            yield_row.clone(),
            Relation::Le,
            s.gain.1 + slack(s.gain.1),
            format!("{}:gain-hi", s.label),
        );
        lp.push(
            yield_row,
            Relation::Ge,
            s.gain.0 - s.tail_mass - slack(s.gain.0),
            format!("{}:gain-lo", s.label),
        );
        lp.push(
            err_row.clone(),
            Relation::Le,
            s.error_gain.1 + slack(s.error_gain.1),
            format!("{}:error-hi", s.label),
        );
        lp.push(
            err_row,
            Relation::Ge,
            s.error_gain.0 - s.tail_mass - slack(s.error_gain.0),
            format!("{}:error-lo", s.label),
        );
    }
    // e_n ≤ 1 couples each error-yield below its yield.
    for i in 0..n {
        let mut row = vec![0.0; 2 * n];
        row[n + i] = 1.0;
        row[i] = -1.0;
        lp.push(row, Relation::Le, 0.0, format!("couple[{i}]"));
    }
    lp
}

/// Solve the three objectives on the shared feasible set.
pub fn solve_bounds(summaries: &[DecoySummary], n_cut: usize) -> Result<DecoyBounds, DecoyError> {
    if summaries.len() < 2 {
        return Err(DecoyError::TooFewSettings(summaries.len()));
    }
    let lp = build_lp(summaries, n_cut);
    let n = n_cut + 1;
    let mut obj_y1 = vec![0.0; 2 * n];
    obj_y1[1] = 1.0;
    let mut obj_e1y1 = vec![0.0; 2 * n];
    obj_e1y1[n + 1] = 1.0;

    let y1_lower = lp.minimize(&obj_y1)?.objective.clamp(0.0, 1.0);
    let e1y1_upper = lp.maximize(&obj_e1y1)?.objective.clamp(0.0, 1.0);
    let e1y1_lower = lp.minimize(&obj_e1y1)?.objective.clamp(0.0, 1.0);
    let e1_upper = if y1_lower > 0.0 {
        (e1y1_upper / y1_lower).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(DecoyBounds {
        y1_lower,
        e1y1_upper,
        e1y1_lower,
        e1_upper,
    })
}

/// A basis pairing: the basis Alice's post-selection targets and the basis
/// Bob measures.
pub type BasisPair = (Basis, Basis);

/// BB84 needs Z→Z (key) and X→X (phase error).
pub const BB84_PAIRS: [BasisPair; 2] = [(Basis::Z, Basis::Z), (Basis::X, Basis::X)];
/// RFI-QKD additionally needs the X/Y cross statistics.
pub const RFI_PAIRS: [BasisPair; 5] = [
    (Basis::Z, Basis::Z),
    (Basis::X, Basis::X),
    (Basis::X, Basis::Y),
    (Basis::Y, Basis::X),
    (Basis::Y, Basis::Y),
];

/// Per-pair decoy summaries (the simulated observables), gated by the
/// proportionality criterion once per Alice basis.
pub fn basis_summaries(
    regions: &[Region],
    pairs: &[BasisPair],
    pdf: &IntensityPdf,
    ch: &ChannelParams,
    n_cut: usize,
) -> Result<BTreeMap<BasisPair, Vec<DecoySummary>>, DecoyError> {
    let mut checked: Vec<Basis> = Vec::new();
    for &(alice, _) in pairs {
        if checked.contains(&alice) {
            continue;
        }
        checked.push(alice);
        let members: Vec<&Region> = regions
            .iter()
            .filter(|r| r.state.basis() == alice && r.state.bit() == 0)
            .collect();
        let report = proportionality_report(&members, pdf, PROPORTIONALITY_N_MAX)?;
        if report.max_rel_dev > PROPORTIONALITY_GATE {
            return Err(DecoyError::NotProportional {
                max_rel_dev: report.max_rel_dev,
                worst_n: report.worst_n,
                worst_theta: report.worst_theta,
            });
        }
    }
    let mut out = BTreeMap::new();
    for &(alice, bob) in pairs {
        let stats = basis_pair_statistics(regions, alice, pdf, ch, bob, n_cut)?;
        let summaries = stats
            .iter()
            .enumerate()
            .map(|(i, s)| DecoySummary::exact(format!("{alice}{bob}[{i}]"), s))
            .collect();
        out.insert((alice, bob), summaries);
    }
    Ok(out)
}

/// End-to-end: simulate the observables for every pairing and solve the
/// single-photon bounds.
pub fn basis_bounds(
    regions: &[Region],
    pairs: &[BasisPair],
    pdf: &IntensityPdf,
    ch: &ChannelParams,
    n_cut: usize,
) -> Result<BTreeMap<BasisPair, DecoyBounds>, DecoyError> {
    let summaries = basis_summaries(regions, pairs, pdf, ch, n_cut)?;
    summaries
        .into_iter()
        .map(|(pair, s)| Ok((pair, solve_bounds(&s, n_cut)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::BlochVector;
    use crate::regions::{build_regions, naive_xy_regions, PostSelectionConfig};
    use crate::statistics::poisson_pmf;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn default_config() -> PostSelectionConfig {
        PostSelectionConfig {
            mu_max: 1.0,
            delta_z: 0.1,
            delta_xy: 0.1,
            delta_phi: 0.1,
            t_decoy: 0.04,
            t_decoy2: 0.02,
        }
    }

    /// Synthetic channel: arbitrary per-photon yield and error-yield
    /// functions of the polarization angle, used to forward-model
    /// observables independently of the channel module.
    pub(crate) struct SyntheticChannel {
        pub yields: Vec<Box<dyn Fn(f64) -> f64>>,
        pub error_yields: Vec<Box<dyn Fn(f64) -> f64>>,
    }

    impl SyntheticChannel {
        /// Threshold-detector channel with transmittance eta and a flat 2%
        /// error rate (θ-independent).
        pub fn transmission(eta: f64, n_max: usize) -> Self {
            let yields: Vec<Box<dyn Fn(f64) -> f64>> = (0..=n_max)
                .map(|n| {
                    let y = 1.0 - (1.0 - eta).powi(n as i32);
                    Box::new(move |_: f64| y) as Box<dyn Fn(f64) -> f64>
                })
                .collect();
            let error_yields: Vec<Box<dyn Fn(f64) -> f64>> = (0..=n_max)
                .map(|n| {
                    let y = 1.0 - (1.0 - eta).powi(n as i32);
                    Box::new(move |_: f64| 0.02 * y) as Box<dyn Fn(f64) -> f64>
                })
                .collect();
            SyntheticChannel {
                yields,
                error_yields,
            }
        }

        pub fn random(rng: &mut impl Rng, n_max: usize) -> Self {
            let mut yields: Vec<Box<dyn Fn(f64) -> f64>> = Vec::new();
            let mut error_yields: Vec<Box<dyn Fn(f64) -> f64>> = Vec::new();
            for _ in 0..=n_max {
                let a = rng.random::<f64>();
                let b = rng.random::<f64>() * (1.0 - a);
                let phase = rng.random::<f64>() * std::f64::consts::PI;
                let freq = 1.0 + 3.0 * rng.random::<f64>();
                let e0 = rng.random::<f64>();
                let e_phase = rng.random::<f64>() * std::f64::consts::PI;
                yields.push(Box::new(move |theta: f64| {
                    (a + b * (freq * theta + phase).sin().powi(2)).clamp(0.0, 1.0)
                }));
                error_yields.push(Box::new(move |theta: f64| {
                    let y = (a + b * (freq * theta + phase).sin().powi(2)).clamp(0.0, 1.0);
                    let e = (e0 * (theta + e_phase).cos().powi(2)).clamp(0.0, 1.0);
                    e * y
                }));
            }
            SyntheticChannel {
                yields,
                error_yields,
            }
        }

        /// True pseudo-yield and pseudo-error-yield over the slice.
        pub fn pseudo(&self, n: usize, lo: f64, hi: f64) -> (f64, f64) {
            let weight = |t: f64| (t.sin() + t.cos()).powi(n as i32);
            let wnorm = crate::quad::integrate(weight, lo, hi, 1e-12).unwrap();
            let y = crate::quad::integrate(|t| weight(t) * (self.yields[n])(t), lo, hi, 1e-12)
                .unwrap()
                / wnorm;
            let ey =
                crate::quad::integrate(|t| weight(t) * (self.error_yields[n])(t), lo, hi, 1e-12)
                    .unwrap()
                    / wnorm;
            (y, ey)
        }

        /// Forward-integrated observables for a sector of radius `r_max` on
        /// the slice under the reshaped distribution, summed over photon
        /// numbers up to `n_forward`.
        pub fn observe(
            &self,
            r_max: f64,
            lo: f64,
            hi: f64,
            n_cut: usize,
            n_forward: usize,
        ) -> DecoySummary {
            let den = crate::quad::integrate(
                |t| {
                    let s = t.sin() + t.cos();
                    // ∫_0^R e^{rs} r dr = (e^{Rs}(Rs-1)+1)/s².
                    ((r_max * s).exp() * (r_max * s - 1.0) + 1.0) / (s * s)
                },
                lo,
                hi,
                1e-12,
            )
            .unwrap();
            let coeff = |n: usize| {
                let factorial: f64 = (1..=n).map(|k| k as f64).product();
                let angular =
                    crate::quad::integrate(|t| (t.sin() + t.cos()).powi(n as i32), lo, hi, 1e-12)
                        .unwrap();
                r_max.powi(n as i32 + 2) / ((n as f64 + 2.0) * factorial) * angular / den
            };
            let mut gain = 0.0;
            let mut error_gain = 0.0;
            for n in 0..=n_forward {
                let (y, ey) = self.pseudo(n, lo, hi);
                gain += coeff(n) * y;
                error_gain += coeff(n) * ey;
            }
            let photon_coeffs: Vec<f64> = (0..=n_cut).map(coeff).collect();
            let tail_mass = (1.0 - photon_coeffs.iter().sum::<f64>()).max(0.0);
            DecoySummary {
                label: format!("synthetic-r{r_max}"),
                gain: (gain, gain),
                error_gain: (error_gain, error_gain),
                photon_coeffs,
                tail_mass,
                p_region: 1.0,
            }
        }
    }

    fn slice_xy() -> (f64, f64) {
        (FRAC_PI_4 - 0.1, FRAC_PI_4 + 0.1)
    }

    #[test]
    fn point_regions_reduce_to_active_decoy_lp() {
        // Degenerate point-regions reproduce an independently assembled
        // standard 3-intensity decoy LP to machine precision.
        let ch = ChannelParams::with_misalignment(0.1, 1.0, 1e-6, 0.02).unwrap();
        let n_cut = 10;
        let intensities = [0.5, 0.1, 0.002];

        let pipeline: Vec<DecoySummary> = intensities
            .iter()
            .map(|&mu| {
                let stats = RegionStatistics::point(mu, 0.0, 0.0, &ch, Basis::Z, Basis::Z, n_cut);
                DecoySummary::exact(format!("mu={mu}"), &stats)
            })
            .collect();
        let bounds = solve_bounds(&pipeline, n_cut).unwrap();

        // Independent assembly from raw Poisson terms and closed-form
        // active-channel observables.
        let active: Vec<DecoySummary> = intensities
            .iter()
            .map(|&mu| {
                let lambda = ch.eta * ch.eta_d * mu;
                let e_d = ch.e_d();
                let p_c = 1.0 - (1.0 - ch.p_d) * (-lambda * (1.0 - e_d)).exp();
                let p_w = 1.0 - (1.0 - ch.p_d) * (-lambda * e_d).exp();
                let q = p_c + p_w - p_c * p_w;
                let qe = p_w - 0.5 * p_w * p_c;
                let photon_coeffs: Vec<f64> = (0..=n_cut).map(|n| poisson_pmf(mu, n)).collect();
                let tail = (1.0 - photon_coeffs.iter().sum::<f64>()).max(0.0);
                DecoySummary {
                    label: format!("active mu={mu}"),
                    gain: (q, q),
                    error_gain: (qe, qe),
                    photon_coeffs,
                    tail_mass: tail,
                    p_region: 1.0,
                }
            })
            .collect();
        let active_bounds = solve_bounds(&active, n_cut).unwrap();

        assert_relative_eq!(bounds.y1_lower, active_bounds.y1_lower, epsilon = 1e-9);
        assert_relative_eq!(bounds.e1y1_upper, active_bounds.e1y1_upper, epsilon = 1e-9);
    }

    #[test]
    fn forward_model_soundness_known_channel() {
        // Y_n = 1 - (1-η)^n: the LP bound must sit below the true value.
        let (lo, hi) = slice_xy();
        let n_cut = 10;
        let ch = SyntheticChannel::transmission(0.35, 60);
        let radii = [1.0, 0.04, 0.02];
        let summaries: Vec<DecoySummary> = radii
            .iter()
            .map(|&r| ch.observe(r, lo, hi, n_cut, 60))
            .collect();
        let bounds = solve_bounds(&summaries, n_cut).unwrap();
        let (y1_true, e1y1_true) = ch.pseudo(1, lo, hi);
        assert!(bounds.y1_lower <= y1_true + 1e-9);
        assert!(bounds.e1y1_upper >= e1y1_true - 1e-9);
        // With decoys down to radius 0.02 the bound should be close.
        assert!(bounds.y1_lower > 0.9 * y1_true, "loose bound {}", bounds.y1_lower);
    }

    #[test]
    fn lossless_channel_tight_y1() {
        let (lo, hi) = slice_xy();
        let ch = SyntheticChannel::transmission(1.0, 60);
        let summaries: Vec<DecoySummary> = [1.0, 0.04, 0.02]
            .iter()
            .map(|&r| ch.observe(r, lo, hi, 10, 60))
            .collect();
        let bounds = solve_bounds(&summaries, 10).unwrap();
        assert!(bounds.y1_lower >= 0.99, "y1_lower = {}", bounds.y1_lower);
    }

    #[test]
    fn zero_error_channel_small_e1y1_upper() {
        let (lo, hi) = slice_xy();
        let mut ch = SyntheticChannel::transmission(0.5, 60);
        ch.error_yields = (0..=60)
            .map(|_| Box::new(|_: f64| 0.0) as Box<dyn Fn(f64) -> f64>)
            .collect();
        let summaries: Vec<DecoySummary> = [1.0, 0.04, 0.02]
            .iter()
            .map(|&r| ch.observe(r, lo, hi, 10, 60))
            .collect();
        let bounds = solve_bounds(&summaries, 10).unwrap();
        assert!(bounds.e1y1_upper <= 1e-3, "e1y1_upper = {}", bounds.e1y1_upper);
    }

    #[test]
    fn all_zero_observations() {
        let (lo, hi) = slice_xy();
        let mut ch = SyntheticChannel::transmission(0.5, 60);
        ch.yields = (0..=60)
            .map(|_| Box::new(|_: f64| 0.0) as Box<dyn Fn(f64) -> f64>)
            .collect();
        ch.error_yields = (0..=60)
            .map(|_| Box::new(|_: f64| 0.0) as Box<dyn Fn(f64) -> f64>)
            .collect();
        let summaries: Vec<DecoySummary> = [1.0, 0.04, 0.02]
            .iter()
            .map(|&r| ch.observe(r, lo, hi, 10, 60))
            .collect();
        let bounds = solve_bounds(&summaries, 10).unwrap();
        assert!(bounds.y1_lower < 1e-6);
        assert!(bounds.e1y1_upper < 1e-6);
    }

    #[test]
    fn single_decoy_collapses_to_one_constraint_bound() {
        let (lo, hi) = slice_xy();
        let ch = SyntheticChannel::transmission(0.8, 60);
        let n_cut = 10;
        let s = ch.observe(1.0, lo, hi, n_cut, 60);
        let bounds = solve_bounds(std::slice::from_ref(&s), n_cut);
        assert!(matches!(bounds, Err(DecoyError::TooFewSettings(1))));
        // The one-constraint relaxation has a closed form:
        // Y'_1 ≥ (⟨Q⟩ - (1 - ⟨P_1⟩)) / ⟨P_1⟩ (everything else worst-cased).
        let lp = build_lp(std::slice::from_ref(&s), n_cut);
        let mut obj = vec![0.0; 2 * (n_cut + 1)];
        obj[1] = 1.0;
        let y1 = lp.minimize(&obj).unwrap().objective;
        let closed = ((s.gain.0 - (1.0 - s.photon_coeffs[1])) / s.photon_coeffs[1]).max(0.0);
        assert_relative_eq!(y1, closed, epsilon = 1e-6);
    }

    #[test]
    fn soundness_sweep_randomized_channels() {
        // A reduced version of the acceptance criterion: no violations over
        // randomized synthetic channels.
        let (lo, hi) = slice_xy();
        let n_cut = 10;
        let radii = [1.0, 0.04, 0.02];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let ch = SyntheticChannel::random(&mut rng, 60);
            let summaries: Vec<DecoySummary> = radii
                .iter()
                .map(|&r| ch.observe(r, lo, hi, n_cut, 60))
                .collect();
            let bounds = solve_bounds(&summaries, n_cut).unwrap();
            let (y1_true, e1y1_true) = ch.pseudo(1, lo, hi);
            assert!(
                bounds.y1_lower <= y1_true + 1e-9,
                "trial {trial}: {} > {}",
                bounds.y1_lower,
                y1_true
            );
            assert!(
                bounds.e1y1_upper >= e1y1_true - 1e-9,
                "trial {trial}: {} < {}",
                bounds.e1y1_upper,
                e1y1_true
            );
            assert!(bounds.e1y1_lower <= e1y1_true + 1e-9);
        }
    }

    #[test]
    fn extra_decoy_never_loosens() {
        let (lo, hi) = slice_xy();
        let n_cut = 10;
        let ch = SyntheticChannel::transmission(0.2, 60);
        let two: Vec<DecoySummary> = [1.0, 0.04]
            .iter()
            .map(|&r| ch.observe(r, lo, hi, n_cut, 60))
            .collect();
        let three: Vec<DecoySummary> = [1.0, 0.04, 0.02]
            .iter()
            .map(|&r| ch.observe(r, lo, hi, n_cut, 60))
            .collect();
        let b2 = solve_bounds(&two, n_cut).unwrap();
        let b3 = solve_bounds(&three, n_cut).unwrap();
        assert!(b3.y1_lower >= b2.y1_lower - 1e-12);
        assert!(b3.e1y1_upper <= b2.e1y1_upper + 1e-12);
    }

    #[test]
    fn e1_ordering_against_ideal_angle() {
        // For channels whose error-yield is minimized at the ideal angle,
        // the pseudo-error-yield upper bound cannot undercut the
        // perfectly-prepared error-yield.
        let (lo, hi) = slice_xy();
        let n_cut = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let base = rng.random::<f64>() * 0.1;
            let curvature = rng.random::<f64>() * 0.5;
            let mut ch = SyntheticChannel::transmission(0.5, 60);
            ch.error_yields = (0..=60)
                .map(|n| {
                    let y = 1.0 - (1.0f64 - 0.5).powi(n as i32);
                    Box::new(move |theta: f64| {
                        let dev = theta - FRAC_PI_4;
                        (y * (base + curvature * dev * dev)).clamp(0.0, 1.0)
                    }) as Box<dyn Fn(f64) -> f64>
                })
                .collect();
            let summaries: Vec<DecoySummary> = [1.0, 0.04, 0.02]
                .iter()
                .map(|&r| ch.observe(r, lo, hi, n_cut, 60))
                .collect();
            let bounds = solve_bounds(&summaries, n_cut).unwrap();
            let ideal = (ch.error_yields[1])(FRAC_PI_4);
            assert!(
                bounds.e1y1_upper >= ideal - 1e-9,
                "{} < {}",
                bounds.e1y1_upper,
                ideal
            );
        }
    }

    #[test]
    fn naive_configuration_is_refused() {
        let naive = naive_xy_regions(1.0, 0.1, &[0.8, 0.3, 0.04]);
        let pdf = IntensityPdf::Inherent { mu_max: 1.0 };
        let ch = ChannelParams::with_misalignment(0.5, 1.0, 1e-6, 0.02).unwrap();
        let err = basis_bounds(&naive, &[(Basis::X, Basis::X)], &pdf, &ch, 10);
        assert!(
            matches!(err, Err(DecoyError::NotProportional { .. })),
            "expected refusal, got {err:?}"
        );
    }

    #[test]
    fn y1_agrees_across_bases() {
        // The single-photon yield does not depend on the polarization, so
        // the per-basis lower bounds all sit below it and close to it.
        let config = default_config();
        let regions = build_regions(&config).unwrap();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let ch = ChannelParams::with_misalignment(0.3, 1.0, 1e-6, 0.02).unwrap();
        let bounds = basis_bounds(&regions, &RFI_PAIRS, &pdf, &ch, 10).unwrap();
        // True single-photon yield of the threshold-detector channel.
        let y1_true = 1.0 - (1.0 - ch.p_d).powi(2) * (1.0 - ch.eta);
        let pairs = [(Basis::Z, Basis::Z), (Basis::X, Basis::X), (Basis::Y, Basis::Y)];
        for pair in pairs {
            let b = bounds[&pair];
            assert!(b.y1_lower <= y1_true + 1e-9, "{pair:?}");
            assert!(b.y1_lower > 0.95 * y1_true, "{pair:?}: {}", b.y1_lower);
        }
        let spread = (bounds[&pairs[0]].y1_lower - bounds[&pairs[1]].y1_lower).abs();
        assert!(spread < 0.05 * y1_true, "spread {spread}");
    }

    #[test]
    fn symmetric_channel_symmetric_bounds() {
        // Flipping the sign of a rotation about the Y axis leaves the
        // paired observables, and hence the bounds, unchanged.
        let config = default_config();
        let regions = build_regions(&config).unwrap();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let plus = ChannelParams::new(0.3, 1.0, 1e-6, BlochVector::new(0.0, 1.0, 0.0), 0.2).unwrap();
        let minus =
            ChannelParams::new(0.3, 1.0, 1e-6, BlochVector::new(0.0, 1.0, 0.0), -0.2).unwrap();
        let b_plus = basis_bounds(&regions, &BB84_PAIRS, &pdf, &plus, 8).unwrap();
        let b_minus = basis_bounds(&regions, &BB84_PAIRS, &pdf, &minus, 8).unwrap();
        for pair in BB84_PAIRS {
            assert_relative_eq!(
                b_plus[&pair].e1y1_upper,
                b_minus[&pair].e1y1_upper,
                max_relative = 1e-6
            );
        }
    }
}
