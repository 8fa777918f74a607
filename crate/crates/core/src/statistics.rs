//! Region-averaged observables.
//!
//! Everything the decoy analysis and the key-rate formulas consume is an
//! expectation over a post-selection region: selection probability, gain,
//! error-gain, and the photon-number coefficients `⟨P_n⟩`. The azimuth
//! dimension factorizes (the relative phase is uniform), so the integrals
//! are organized as an adaptive polar integral over `(r, θ)` with a fixed
//! Gauss-Legendre rule over each azimuth window.
//!
//! The module also implements the polar probability distributions
//! `f_{n,θ}(θ)` and the proportionality criterion on their ratios, which is
//! the validity test for constructing a decoy-state linear program from a
//! set of regions.

use crate::channel::{gain_and_error, Basis, ChannelParams};
use crate::quad::{AdaptiveVec, Endpoint, QuadError};
use crate::regions::Region;
use crate::source::IntensityPdf;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("regions must share the angular slice: [{0}, {1}] vs [{2}, {3}]")]
    MismatchedSlices(f64, f64, f64, f64),
    #[error("photon-number cutoff {0} too small (need ≥ 2)")]
    CutoffTooSmall(usize),
}

/// Poisson probability `e^{-mu}·mu^n / n!`, computed by recurrence.
pub fn poisson_pmf(mu: f64, n: usize) -> f64 {
    let mut p = (-mu).exp();
    for k in 1..=n {
        p *= mu / k as f64;
    }
    p
}

/// Everything the downstream analysis needs about one region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionStatistics {
    /// Selection probability under the (normalized) intensity distribution,
    /// azimuth windows included.
    pub p_region: f64,
    /// ⟨Q⟩: detection probability per selected pulse.
    pub gain: f64,
    /// ⟨QE⟩: joint detection-and-error probability per selected pulse.
    pub error_gain: f64,
    /// ⟨P_n⟩ for n = 0..=n_cut.
    pub photon_coeffs: Vec<f64>,
    /// 1 - Σ photon_coeffs: the worst-cased remainder above the cutoff.
    pub tail_mass: f64,
}

impl RegionStatistics {
    /// Degenerate point "region": the active-QKD limit where a setting is a
    /// single intensity at a perfectly prepared polarization.
    pub fn point(
        mu_h: f64,
        mu_v: f64,
        phi_hv: f64,
        ch: &ChannelParams,
        alice: Basis,
        bob: Basis,
        n_cut: usize,
    ) -> Self {
        let bit = alice.bit_of(mu_h, mu_v, phi_hv);
        let (gain, error_gain) = gain_and_error(mu_h, mu_v, phi_hv, bob, bit, ch);
        let mu = mu_h + mu_v;
        let photon_coeffs: Vec<f64> = (0..=n_cut).map(|n| poisson_pmf(mu, n)).collect();
        let tail_mass = (1.0 - photon_coeffs.iter().sum::<f64>()).max(0.0);
        RegionStatistics {
            p_region: 1.0,
            gain,
            error_gain,
            photon_coeffs,
            tail_mass,
        }
    }

    pub fn qber(&self) -> f64 {
        if self.gain > 0.0 {
            self.error_gain / self.gain
        } else {
            0.0
        }
    }
}

/// Integrate `body(r, θ, out)`, weighted by the intensity distribution and
/// the area element, over the region's intensity-plane footprint.
///
/// Sector regions integrate in polar coordinates. Regions bounded by
/// `max(mu_h, mu_v)` integrate in Cartesian coordinates when the
/// distribution is boundary-singular: there the two arcsine factors
/// separate onto the two axes and the shifted endpoint maps remove them
/// exactly, which a polar sweep cannot do near the square's corner.
fn region_weight_integral<F>(
    region: &Region,
    pdf: &IntensityPdf,
    m: usize,
    body: F,
) -> Result<Vec<f64>, QuadError>
where
    F: Fn(f64, f64, &mut [f64]) + Copy,
{
    match region.profile {
        crate::regions::RadialProfile::MaxIntensity { .. } if pdf.boundary_singular() => {
            cartesian_integral(region, pdf, m, body)
        }
        _ => polar_integral(region, pdf, m, body),
    }
}

fn polar_integral<F>(region: &Region, pdf: &IntensityPdf, m: usize, body: F) -> Result<Vec<f64>, QuadError>
where
    F: Fn(f64, f64, &mut [f64]) + Copy,
{
    let outer = AdaptiveVec::default();
    let inner_err: RefCell<Option<QuadError>> = RefCell::new(None);
    let err_ref = &inner_err;
    let mut total = vec![0.0; m];
    let mut piece = vec![0.0; m];
    for iv in region.theta_pieces(pdf) {
        let outer_result = outer.integrate(
            |theta: f64, o: &mut [f64]| {
                let mut radial = vec![0.0; o.len()];
                let res = AdaptiveVec::default().integrate(
                    |r: f64, oo: &mut [f64]| {
                        let w = pdf.weight(r * theta.cos(), r * theta.sin()) * r;
                        body(r, theta, oo);
                        for v in oo.iter_mut() {
                            *v *= w;
                        }
                    },
                    region.radial_interval(theta, pdf),
                    &mut radial,
                );
                if let Err(e) = res {
                    err_ref.borrow_mut().get_or_insert(e);
                }
                o.copy_from_slice(&radial);
            },
            iv,
            &mut piece,
        );
        // A failed radial integral poisons the θ pass; report it rather
        // than the outer thrashing it causes.
        if let Some(e) = err_ref.borrow_mut().take() {
            return Err(e);
        }
        outer_result?;
        for (t, p) in total.iter_mut().zip(&piece) {
            *t += p;
        }
    }
    Ok(total)
}

/// Cartesian integration for `max(mu_h, mu_v) ≤ m` regions under a
/// boundary-singular distribution. The outer variable is `mu_h`; the inner
/// `mu_v` runs between the slice rays, clipped to the box.
fn cartesian_integral<F>(
    region: &Region,
    pdf: &IntensityPdf,
    m_components: usize,
    body: F,
) -> Result<Vec<f64>, QuadError>
where
    F: Fn(f64, f64, &mut [f64]) + Copy,
{
    let m = match region.profile {
        crate::regions::RadialProfile::MaxIntensity { m } => m,
        crate::regions::RadialProfile::Sector { .. } => unreachable!("cartesian path is for max-intensity regions"),
    };
    let mu_max = region.mu_max;
    let (theta_lo, theta_hi) = region.theta_range;
    let tan_lo = theta_lo.tan();
    // θ_hi = π/2 means no upper-ray clip.
    let inv_tan_hi = if theta_hi >= std::f64::consts::FRAC_PI_2 - 1e-12 {
        0.0
    } else {
        1.0 / theta_hi.tan()
    };

    // Outer range and the kink where the inner upper limit switches from
    // the ray to the box edge.
    let h_max = if tan_lo > 0.0 { m.min(m / tan_lo) } else { m };
    let mut cuts = vec![0.0, h_max];
    if inv_tan_hi > 0.0 {
        let kink = m * inv_tan_hi;
        if kink > 0.0 && kink < h_max {
            cuts.push(kink);
        }
    }
    cuts.sort_by(f64::total_cmp);

    let outer = AdaptiveVec {
        rel_tol: crate::quad::DEFAULT_REL_TOL,
        abs_tol: 1e-13,
    };
    let inner_err: RefCell<Option<QuadError>> = RefCell::new(None);
    let err_ref = &inner_err;
    let mut total = vec![0.0; m_components];
    let mut piece = vec![0.0; m_components];
    for pair in cuts.windows(2) {
        let iv = crate::quad::Interval::with_endpoints(
            pair[0],
            pair[1],
            Endpoint::SqrtAt(0.0),
            Endpoint::SqrtAt(mu_max),
        );
        let outer_result = outer.integrate(
            |mu_h: f64, o: &mut [f64]| {
                let v_lo = mu_h * tan_lo;
                let v_hi = if inv_tan_hi > 0.0 { (mu_h / inv_tan_hi).min(m) } else { m };
                if v_hi <= v_lo {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                let inner_iv = crate::quad::Interval::with_endpoints(
                    v_lo,
                    v_hi,
                    Endpoint::SqrtAt(0.0),
                    Endpoint::SqrtAt(mu_max),
                );
                let mut inner = vec![0.0; o.len()];
                let res = AdaptiveVec::default().integrate(
                    |mu_v: f64, oo: &mut [f64]| {
                        let r = (mu_h * mu_h + mu_v * mu_v).sqrt();
                        let theta = mu_v.atan2(mu_h);
                        body(r, theta, oo);
                        let w = pdf.weight(mu_h, mu_v);
                        for v in oo.iter_mut() {
                            *v *= w;
                        }
                    },
                    inner_iv,
                    &mut inner,
                );
                if let Err(e) = res {
                    err_ref.borrow_mut().get_or_insert(e);
                }
                o.copy_from_slice(&inner);
            },
            iv,
            &mut piece,
        );
        if let Some(e) = err_ref.borrow_mut().take() {
            return Err(e);
        }
        outer_result?;
        for (t, p) in total.iter_mut().zip(&piece) {
            *t += p;
        }
    }
    Ok(total)
}

/// Selection probability of a region under the given intensity
/// distribution: the factorized product of the azimuth window fraction and
/// the two-dimensional intensity integral.
pub fn region_probability(region: &Region, pdf: &IntensityPdf) -> Result<f64, StatsError> {
    let mass = region_weight_integral(region, pdf, 1, |_, _, out| out[0] = 1.0)?;
    Ok(mass[0] * region.phi_windows.fraction() / pdf.normalization())
}

/// Region-conditional expectation of an arbitrary observable
/// `f(mu_h, mu_v, phi_hv)`.
pub fn expected_observable<F>(region: &Region, pdf: &IntensityPdf, f: F) -> Result<f64, StatsError>
where
    F: Fn(f64, f64, f64) -> f64 + Copy,
{
    let windows = region.phi_windows.intervals();
    let raw = region_weight_integral(region, pdf, 2, |r, theta, out| {
        let (mu_h, mu_v) = (r * theta.cos(), r * theta.sin());
        let mut f_phi = 0.0;
        let mut width = 0.0;
        for &(a, b) in &windows {
            f_phi += crate::quad::fixed_gl(|phi| f(mu_h, mu_v, phi), a, b, 16);
            width += b - a;
        }
        out[0] = width;
        out[1] = f_phi;
    })?;
    Ok(raw[1] / raw[0])
}

/// Region-averaged Poissonian weight ⟨P_n⟩.
pub fn photon_number_coeff(region: &Region, pdf: &IntensityPdf, n: usize) -> Result<f64, StatsError> {
    let raw = region_weight_integral(region, pdf, 2, |r, theta, out| {
        out[0] = 1.0;
        out[1] = poisson_pmf(r * (theta.cos() + theta.sin()), n);
    })?;
    Ok(raw[1] / raw[0])
}

/// The polar probability distribution `f_{n,θ}(θ)`: the overall n-photon
/// probability density (Poisson weight × intensity weight × Jacobian),
/// integrated over the radial direction at fixed θ.
pub fn polar_distribution(region: &Region, pdf: &IntensityPdf, n: usize, theta: f64) -> Result<f64, StatsError> {
    let mut out = [0.0];
    AdaptiveVec::default().integrate(
        |r: f64, o: &mut [f64]| {
            let (mu_h, mu_v) = (r * theta.cos(), r * theta.sin());
            o[0] = poisson_pmf(mu_h + mu_v, n) * pdf.weight(mu_h, mu_v) * r;
        },
        region.radial_interval(theta, pdf),
        &mut out,
    )?;
    Ok(out[0])
}

/// Full per-region statistics: selection probability, gain, error-gain and
/// photon-number coefficients, with the per-pulse bit convention given by
/// the region's nominal basis (each pulse is labelled by its nearer pole).
pub fn compute_region_statistics(
    region: &Region,
    pdf: &IntensityPdf,
    ch: &ChannelParams,
    bob_basis: Basis,
    n_cut: usize,
) -> Result<RegionStatistics, StatsError> {
    if n_cut < 2 {
        return Err(StatsError::CutoffTooSmall(n_cut));
    }
    let alice = region.state.basis();
    // Pass 1 (no azimuth): normalization mass and photon-number moments.
    let m = n_cut + 2;
    let moments = region_weight_integral(region, pdf, m, |r, theta, out| {
        out[0] = 1.0;
        let mu = r * (theta.cos() + theta.sin());
        // Poisson recurrence shared across components.
        let mut p = (-mu).exp();
        out[1] = p;
        for n in 1..=n_cut {
            p *= mu / n as f64;
            out[n + 1] = p;
        }
    })?;
    let den = moments[0];
    let photon_coeffs: Vec<f64> = moments[1..].iter().map(|v| v / den).collect();
    let tail_mass = (1.0 - photon_coeffs.iter().sum::<f64>()).max(0.0);

    // Pass 2: gain and error-gain, azimuth integrated per window.
    let windows = region.phi_windows.intervals();
    let width: f64 = windows.iter().map(|&(a, b)| b - a).sum();
    let detection = region_weight_integral(region, pdf, 2, |r, theta, out| {
        let (mu_h, mu_v) = (r * theta.cos(), r * theta.sin());
        let mut q_acc = 0.0;
        let mut qe_acc = 0.0;
        for &(a, b) in &windows {
            for &(x, w) in crate::quad::gl_nodes(16) {
                let phi = 0.5 * (a + b) + 0.5 * (b - a) * x;
                let bit = alice.bit_of(mu_h, mu_v, phi);
                let (q, qe) = gain_and_error(mu_h, mu_v, phi, bob_basis, bit, ch);
                q_acc += w * q * 0.5 * (b - a);
                qe_acc += w * qe * 0.5 * (b - a);
            }
        }
        out[0] = q_acc;
        out[1] = qe_acc;
    })?;
    let gain = detection[0] / (den * width);
    let error_gain = detection[1] / (den * width);

    let p_region = den * region.phi_windows.fraction() / pdf.normalization();
    Ok(RegionStatistics {
        p_region,
        gain,
        error_gain,
        photon_coeffs,
        tail_mass,
    })
}

/// Statistics for one (Alice basis, decoy setting) paired over the basis's
/// symmetric states, per Bob basis. For Z the two sector slices (H and V)
/// are averaged with their selection probabilities; the X and Y regions
/// already contain both azimuth windows.
pub fn basis_pair_statistics(
    regions: &[Region],
    basis: Basis,
    pdf: &IntensityPdf,
    ch: &ChannelParams,
    bob_basis: Basis,
    n_cut: usize,
) -> Result<Vec<RegionStatistics>, StatsError> {
    let n_decoys = regions
        .iter()
        .filter(|r| r.state.basis() == basis)
        .map(|r| r.decoy_index + 1)
        .max()
        .unwrap_or(0);
    let mut out = Vec::with_capacity(n_decoys);
    for decoy in 0..n_decoys {
        // For Z the paired states live in mirrored sector slices; for X and
        // Y the bit-0 region already carries both azimuth windows.
        let paired: Vec<&Region> = regions
            .iter()
            .filter(|r| {
                r.state.basis() == basis
                    && r.decoy_index == decoy
                    && (basis == Basis::Z || r.state.bit() == 0)
            })
            .collect();
        let stats: Vec<RegionStatistics> = paired
            .iter()
            .map(|r| compute_region_statistics(r, pdf, ch, bob_basis, n_cut))
            .collect::<Result<_, _>>()?;
        out.push(merge_weighted(&stats));
    }
    Ok(out)
}

/// Probability-weighted merge of statistics over paired regions.
fn merge_weighted(stats: &[RegionStatistics]) -> RegionStatistics {
    let p_total: f64 = stats.iter().map(|s| s.p_region).sum();
    let n_cut = stats[0].photon_coeffs.len();
    let mut merged = RegionStatistics {
        p_region: p_total,
        gain: 0.0,
        error_gain: 0.0,
        photon_coeffs: vec![0.0; n_cut],
        tail_mass: 0.0,
    };
    for s in stats {
        let w = s.p_region / p_total;
        merged.gain += w * s.gain;
        merged.error_gain += w * s.error_gain;
        for (m, c) in merged.photon_coeffs.iter_mut().zip(&s.photon_coeffs) {
            *m += w * c;
        }
        merged.tail_mass += w * s.tail_mass;
    }
    merged
}

/// Result of the proportionality criterion: the maximum relative deviation
/// of `f_{n,θ}^{S_i}(θ) / f_{n,θ}^{S_0}(θ)` from a θ-independent constant,
/// over the decoy pairs and photon numbers checked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProportionalityReport {
    pub max_rel_dev: f64,
    pub worst_n: usize,
    pub worst_theta: f64,
    pub pairs_checked: usize,
}

/// Maximum photon number the proportionality criterion examines.
pub const PROPORTIONALITY_N_MAX: usize = 5;
/// Acceptance threshold for LP construction. The compliant configuration
/// sits at quadrature-noise level (≪ 1e-6) and the naive one beyond 1e-2,
/// so the gate has orders of magnitude of margin on both sides.
pub const PROPORTIONALITY_GATE: f64 = 1e-4;

/// Check that the polar distributions of every decoy region are θ-wise
/// proportional to the first region's. This is the necessary condition for
/// the pseudo-yield linear program to exist.
pub fn proportionality_report(
    regions: &[&Region],
    pdf: &IntensityPdf,
    n_max: usize,
) -> Result<ProportionalityReport, StatsError> {
    let reference = regions[0];
    let mut report = ProportionalityReport {
        max_rel_dev: 0.0,
        worst_n: 0,
        worst_theta: f64::NAN,
        pairs_checked: 0,
    };
    let (lo, hi) = reference.theta_range;
    let grid = 33usize;
    for region in &regions[1..] {
        if (region.theta_range.0 - lo).abs() > 1e-12 || (region.theta_range.1 - hi).abs() > 1e-12 {
            return Err(StatsError::MismatchedSlices(
                region.theta_range.0,
                region.theta_range.1,
                lo,
                hi,
            ));
        }
        report.pairs_checked += 1;
        for n in 0..=n_max {
            let ratios: Vec<(f64, f64)> = (0..grid)
                .map(|k| {
                    let theta = lo + (hi - lo) * (k as f64 + 0.5) / grid as f64;
                    let num = polar_distribution(region, pdf, n, theta)?;
                    let den = polar_distribution(reference, pdf, n, theta)?;
                    Ok((theta, num / den))
                })
                .collect::<Result<_, StatsError>>()?;
            let mid = ratios[grid / 2].1;
            for &(theta, ratio) in &ratios {
                let dev = (ratio / mid - 1.0).abs();
                if dev > report.max_rel_dev {
                    report.max_rel_dev = dev;
                    report.worst_n = n;
                    report.worst_theta = theta;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::BlochVector;
    use crate::regions::{build_regions, naive_xy_regions, region_for, BasisState, PostSelectionConfig};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_4, PI};

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

    fn perfect_channel() -> ChannelParams {
        ChannelParams::new(1.0, 1.0, 0.0, BlochVector::new(0.0, 1.0, 0.0), 0.0).unwrap()
    }

    fn full_square() -> crate::regions::Region {
        crate::regions::Region {
            state: BasisState::XPlus,
            decoy_index: 0,
            theta_range: (0.0, std::f64::consts::FRAC_PI_2),
            profile: crate::regions::RadialProfile::MaxIntensity { m: 1.0 },
            phi_windows: crate::regions::PhaseWindows::All,
            mu_max: 1.0,
        }
    }

    #[test]
    fn full_domain_probability_is_one() {
        let full = full_square();
        let p = region_probability(&full, &IntensityPdf::Inherent { mu_max: 1.0 }).unwrap();
        assert!((p - 1.0).abs() < 1e-6, "normalization: {p}");
        let p_resh = region_probability(&full, &IntensityPdf::Reshaped { mu_max: 1.0 }).unwrap();
        assert!((p_resh - 1.0).abs() < 1e-6, "reshaped normalization: {p_resh}");
    }

    #[test]
    fn reshaped_sector_probability_matches_midpoint_oracle() {
        let config = default_config();
        let h = region_for(&config, BasisState::H, 0).unwrap();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let p = region_probability(&h, &pdf).unwrap();
        // Midpoint rule over the sector in polar coordinates.
        let (n_r, n_t) = (4000, 400);
        let mut sum = 0.0;
        for i in 0..n_r {
            let r = (i as f64 + 0.5) / n_r as f64;
            for j in 0..n_t {
                let theta = config.delta_z * (j as f64 + 0.5) / n_t as f64;
                sum += (r * (theta.cos() + theta.sin())).exp() * r;
            }
        }
        let oracle = sum * (1.0 / n_r as f64) * (config.delta_z / n_t as f64) / pdf.normalization();
        assert!((p - oracle).abs() < 1e-6 * oracle.max(1.0), "{p} vs {oracle}");
    }

    #[test]
    fn probability_orderings() {
        let config = default_config();
        let regions = build_regions(&config).unwrap();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        // Nested decoys carry less probability than their parent.
        for state in BasisState::ALL {
            let ps: Vec<f64> = (0..3)
                .map(|i| {
                    let r = regions
                        .iter()
                        .find(|r| r.state == state && r.decoy_index == i)
                        .unwrap();
                    region_probability(r, &pdf).unwrap()
                })
                .collect();
            assert!(ps[0] > ps[1] && ps[1] > ps[2], "{state}: {ps:?}");
        }
        // Summed over the six signal-level regions the probability stays
        // below one: the wedges between the slices are discarded.
        let total: f64 = regions
            .iter()
            .filter(|r| r.decoy_index == 0)
            .map(|r| region_probability(r, &pdf).unwrap())
            .sum();
        assert!(total < 1.0, "signal regions cover {total}");
    }

    #[test]
    fn unit_observable_averages_to_one() {
        let config = default_config();
        let region = region_for(&config, BasisState::XPlus, 0).unwrap();
        for pdf in [IntensityPdf::Reshaped { mu_max: 1.0 }, IntensityPdf::Inherent { mu_max: 1.0 }] {
            let v = expected_observable(&region, &pdf, |_, _, _| 1.0).unwrap();
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn arcsine_mean_total_intensity() {
        // Over the full square the mean of each arm is mu_max/2, so the mean
        // total intensity is mu_max.
        let full = crate::regions::Region {
            state: BasisState::XPlus,
            decoy_index: 0,
            theta_range: (0.0, std::f64::consts::FRAC_PI_2),
            profile: crate::regions::RadialProfile::MaxIntensity { m: 1.0 },
            phi_windows: crate::regions::PhaseWindows::All,
            mu_max: 1.0,
        };
        let pdf = IntensityPdf::Inherent { mu_max: 1.0 };
        let mean = expected_observable(&full, &pdf, |h, v, _| h + v).unwrap();
        assert_relative_eq!(mean, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn reshaped_photon_coeffs_match_closed_form() {
        // ⟨P_n⟩·D = r_max^{n+2}/((n+2)·n!) · ∫ (sinθ+cosθ)^n dθ for the
        // reshaped weight on a sector.
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        for decoy in [0usize, 1, 2] {
            let region = region_for(&config, BasisState::XPlus, decoy).unwrap();
            let (lo, hi) = region.theta_range;
            let r_max = region.r_max();
            let den = polar_integral(&region, &pdf, 1, |_, _, out| out[0] = 1.0).unwrap()[0];
            for n in 0..=6usize {
                let coeff = photon_number_coeff(&region, &pdf, n).unwrap();
                let angular =
                    crate::quad::integrate(|t| (t.sin() + t.cos()).powi(n as i32), lo, hi, 1e-12)
                        .unwrap();
                let factorial: f64 = (1..=n).map(|k| k as f64).product();
                let closed = r_max.powi(n as i32 + 2) / ((n as f64 + 2.0) * factorial) * angular;
                assert_relative_eq!(coeff, closed / den, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn point_statistics_are_poissonian() {
        let ch = perfect_channel();
        let stats = RegionStatistics::point(0.5, 0.0, 0.0, &ch, Basis::Z, Basis::Z, 10);
        for (n, c) in stats.photon_coeffs.iter().enumerate() {
            assert_relative_eq!(*c, poisson_pmf(0.5, n), epsilon = 1e-15);
        }
        assert_relative_eq!(stats.gain, 1.0 - (-0.5f64).exp(), epsilon = 1e-12);
        assert!(stats.error_gain < 1e-15);
    }

    #[test]
    fn photon_coeffs_are_complete() {
        // Σ_n ⟨P_n⟩ = 1 to high accuracy once the cutoff covers the support.
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let region = region_for(&config, BasisState::H, 0).unwrap();
        let stats = compute_region_statistics(&region, &pdf, &perfect_channel(), Basis::Z, 60).unwrap();
        let sum: f64 = stats.photon_coeffs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "Σ⟨P_n⟩ = {sum}");
    }

    #[test]
    fn tail_mass_small_at_cutoff_twenty() {
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let region = region_for(&config, BasisState::XPlus, 0).unwrap();
        let stats = compute_region_statistics(&region, &pdf, &perfect_channel(), Basis::X, 20).unwrap();
        // Poisson tail bound at the largest region intensity
        // (r_max·(sinθ+cosθ) ≤ √2·mu_max on the diagonal slice).
        let mu_star = region.r_max() * 2.0f64.sqrt();
        let p_next = poisson_pmf(mu_star, 21);
        let bound = p_next / (1.0 - mu_star / 22.0);
        assert!(stats.tail_mass <= bound, "{} > {}", stats.tail_mass, bound);
        assert!(stats.tail_mass < 1e-8);
    }

    #[test]
    fn zero_noise_z_errors_bounded_by_slice() {
        // With a perfect channel the only Z errors come from the region's
        // own polarization spread.
        let config = default_config();
        let pdf = IntensityPdf::Inherent { mu_max: 1.0 };
        let region = region_for(&config, BasisState::H, 0).unwrap();
        let stats = compute_region_statistics(&region, &pdf, &perfect_channel(), Basis::Z, 10).unwrap();
        assert!(stats.error_gain > 0.0);
        let spread = config.delta_z.sin() / (config.delta_z.sin() + config.delta_z.cos());
        assert!(stats.qber() <= spread + 1e-12, "{} vs {}", stats.qber(), spread);
    }

    #[test]
    fn deep_decoy_gain_is_dark_dominated() {
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let region = region_for(&config, BasisState::H, 2).unwrap();
        let p_d = 1e-6;
        let ch = ChannelParams::new(1e-5, 1.0, p_d, BlochVector::new(0.0, 1.0, 0.0), 0.0).unwrap();
        let stats = compute_region_statistics(&region, &pdf, &ch, Basis::Z, 10).unwrap();
        let darks = 2.0 * p_d - p_d * p_d;
        assert!(stats.gain < 3.0 * darks, "gain {} darks {}", stats.gain, darks);
        assert!(stats.gain >= darks);
    }

    #[test]
    fn quadrature_gain_matches_monte_carlo() {
        // Cheap in-module cross-check; the full-scale one lives in the
        // acceptance suite.
        use rand::{Rng, SeedableRng};
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let ch = ChannelParams::with_misalignment(0.5, 1.0, 1e-6, 0.02).unwrap();
        let region = region_for(&config, BasisState::H, 0).unwrap();
        let stats = compute_region_statistics(&region, &pdf, &ch, Basis::Z, 10).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut sum_q = 0.0;
        let mut n_sel = 0u64;
        let c_reshape = crate::source::reshaping_constant(1.0);
        for _ in 0..400_000 {
            let h = crate::source::interfere_pair(0.5, 0.5, rng.random::<f64>() * 2.0 * PI, rng.random::<f64>() * 2.0 * PI).unwrap();
            let v = crate::source::interfere_pair(0.5, 0.5, rng.random::<f64>() * 2.0 * PI, rng.random::<f64>() * 2.0 * PI).unwrap();
            let q_keep = crate::source::reshape_acceptance(h.mu, v.mu, 1.0, c_reshape).unwrap();
            if rng.random::<f64>() >= q_keep {
                continue;
            }
            let phi = rng.random::<f64>() * 2.0 * PI;
            if region.contains(h.mu, v.mu, phi) {
                n_sel += 1;
                let bit = Basis::Z.bit_of(h.mu, v.mu, phi);
                let (q, _) = gain_and_error(h.mu, v.mu, phi, Basis::Z, bit, &ch);
                sum_q += q;
            }
        }
        let mc_gain = sum_q / n_sel as f64;
        let se = (mc_gain * (1.0 - mc_gain) / n_sel as f64).sqrt();
        assert!(
            (stats.gain - mc_gain).abs() < 5.0 * se,
            "quadrature {} vs MC {} ± {}",
            stats.gain,
            mc_gain,
            se
        );
    }

    #[test]
    fn polar_distribution_closed_form_and_flat_n0() {
        let config = default_config();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let region = region_for(&config, BasisState::XPlus, 1).unwrap();
        let r_max = region.r_max();
        for n in 0..=4usize {
            let factorial: f64 = (1..=n).map(|k| k as f64).product();
            for k in 0..5 {
                let theta = FRAC_PI_4 - 0.08 + 0.04 * k as f64;
                let f = polar_distribution(&region, &pdf, n, theta).unwrap();
                let closed = r_max.powi(n as i32 + 2) / ((n as f64 + 2.0) * factorial)
                    * (theta.sin() + theta.cos()).powi(n as i32);
                assert_relative_eq!(f, closed, max_relative = 1e-10);
            }
        }
        // n = 0 is flat in θ.
        let f_a = polar_distribution(&region, &pdf, 0, FRAC_PI_4 - 0.05).unwrap();
        let f_b = polar_distribution(&region, &pdf, 0, FRAC_PI_4 + 0.07).unwrap();
        assert_relative_eq!(f_a, f_b, max_relative = 1e-12);
        assert_relative_eq!(f_a, r_max * r_max / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn proportionality_holds_for_sectors_with_reshaping() {
        let config = default_config();
        let regions = build_regions(&config).unwrap();
        let xs: Vec<&Region> = regions
            .iter()
            .filter(|r| r.state == BasisState::XPlus)
            .collect();
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let report = proportionality_report(&xs, &pdf, PROPORTIONALITY_N_MAX).unwrap();
        assert!(report.max_rel_dev < 1e-6, "deviation {}", report.max_rel_dev);
        // And the ratio matches the sector prediction (r_i/r_0)^{n+2}.
        for (i, inner) in xs.iter().enumerate().skip(1) {
            for n in 0..=PROPORTIONALITY_N_MAX {
                let theta = FRAC_PI_4 + 0.03;
                let ratio = polar_distribution(inner, &pdf, n, theta).unwrap()
                    / polar_distribution(xs[0], &pdf, n, theta).unwrap();
                let predicted = (inner.r_max() / xs[0].r_max()).powi(n as i32 + 2);
                assert_relative_eq!(ratio, predicted, max_relative = 1e-6);
                let _ = i;
            }
        }
    }

    #[test]
    fn proportionality_fails_for_naive_regions() {
        let naive = naive_xy_regions(1.0, 0.1, &[0.8, 0.04]);
        let refs: Vec<&Region> = naive.iter().collect();
        let pdf = IntensityPdf::Inherent { mu_max: 1.0 };
        let report = proportionality_report(&refs, &pdf, 2).unwrap();
        assert!(report.max_rel_dev > 0.01, "deviation only {}", report.max_rel_dev);
    }
}
