//! Event-level Monte-Carlo simulation of the full pipeline.
//!
//! Pulses are sampled phase-by-phase, pushed through the source map, the
//! reshaping rejection, region classification, and Bernoulli detector
//! clicks. The tallies estimate exactly the quantities the quadrature
//! engine integrates, so the two routes cross-validate each other.
//!
//! The random stream is counter-based: every pulse derives its own ChaCha
//! substream from the run seed and the pulse index, so runs are
//! reproducible and batches can simulate concurrently with tallies merged
//! in fixed order.

use crate::channel::{click_probabilities, projection_probability, rotate, Basis, ChannelParams};
use crate::regions::{build_regions, PostSelectionConfig, Region};
use crate::source::{
    phases_to_output, reshape_acceptance, reshaping_constant, SourcePhases,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub post: PostSelectionConfig,
    /// Apply the reshaping rejection step.
    pub reshape: bool,
    pub n_pulses: u64,
    pub seed: u64,
    /// Bob's basis choice probabilities (Z, X, Y).
    pub bob_basis_probs: [f64; 3],
}

impl McConfig {
    pub fn new(post: PostSelectionConfig, reshape: bool, n_pulses: u64, seed: u64) -> Self {
        McConfig {
            post,
            reshape,
            n_pulses,
            seed,
            bob_basis_probs: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

/// Detection tallies of one (cell, Bob basis) combination.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DetectorTally {
    pub trials: u64,
    pub clicks: u64,
    pub errors: u64,
}

impl DetectorTally {
    pub fn gain(&self) -> (f64, f64) {
        binomial_estimate(self.clicks, self.trials)
    }

    pub fn error_gain(&self) -> (f64, f64) {
        binomial_estimate(self.errors, self.trials)
    }
}

fn binomial_estimate(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, f64::INFINITY);
    }
    let p = k as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Highest photon number whose region-averaged Poisson weight the run
/// estimates.
pub const MC_PN_MAX: usize = 3;

/// Per (Alice basis, decoy setting) tallies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub basis: Basis,
    pub decoy_index: usize,
    pub selected: u64,
    /// Σ P_n(μ) and Σ P_n(μ)² over selected pulses, n = 0..=MC_PN_MAX.
    pub sum_pn: [f64; MC_PN_MAX + 1],
    pub sum_pn_sq: [f64; MC_PN_MAX + 1],
    /// Indexed by Bob's basis in the order Z, X, Y.
    pub per_bob: [DetectorTally; 3],
}

impl CellReport {
    fn empty(basis: Basis, decoy_index: usize) -> Self {
        CellReport {
            basis,
            decoy_index,
            selected: 0,
            sum_pn: [0.0; MC_PN_MAX + 1],
            sum_pn_sq: [0.0; MC_PN_MAX + 1],
            per_bob: [DetectorTally::default(); 3],
        }
    }

    fn merge(&mut self, other: &CellReport) {
        self.selected += other.selected;
        for n in 0..=MC_PN_MAX {
            self.sum_pn[n] += other.sum_pn[n];
            self.sum_pn_sq[n] += other.sum_pn_sq[n];
        }
        for b in 0..3 {
            self.per_bob[b].trials += other.per_bob[b].trials;
            self.per_bob[b].clicks += other.per_bob[b].clicks;
            self.per_bob[b].errors += other.per_bob[b].errors;
        }
    }

    /// Empirical ⟨P_n⟩ with its standard error.
    pub fn photon_coeff(&self, n: usize) -> (f64, f64) {
        if self.selected == 0 {
            return (0.0, f64::INFINITY);
        }
        let count = self.selected as f64;
        let mean = self.sum_pn[n] / count;
        let var = (self.sum_pn_sq[n] / count - mean * mean).max(0.0);
        (mean, (var / count).sqrt())
    }

    /// Empirical selection probability (relative to all pulses sent).
    pub fn selection_probability(&self, n_pulses: u64) -> (f64, f64) {
        binomial_estimate(self.selected, n_pulses)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRunReport {
    pub n_pulses: u64,
    pub reshape_accepted: u64,
    pub cells: Vec<CellReport>,
}

impl McRunReport {
    pub fn acceptance_fraction(&self) -> (f64, f64) {
        binomial_estimate(self.reshape_accepted, self.n_pulses)
    }

    pub fn cell(&self, basis: Basis, decoy_index: usize) -> &CellReport {
        self.cells
            .iter()
            .find(|c| c.basis == basis && c.decoy_index == decoy_index)
            .expect("cell exists")
    }
}

fn bob_index(basis: Basis) -> usize {
    match basis {
        Basis::Z => 0,
        Basis::X => 1,
        Basis::Y => 2,
    }
}

/// The per-pulse random substream.
fn pulse_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw one emitted pulse: four independent uniform phases through the
/// source map.
pub fn sample_pulse(rng: &mut impl Rng, per_laser_mu: f64) -> crate::source::OutputState {
    let phases = SourcePhases::new(
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
        rng.random::<f64>() * TAU,
    );
    phases_to_output(&phases, per_laser_mu).expect("positive intensities")
}

/// Basis-level membership: the Z cell is the union of the H and V slices;
/// the X and Y cells already carry both azimuth windows.
struct CellRegions {
    basis: Basis,
    decoy_index: usize,
    members: Vec<Region>,
}

fn cell_regions(post: &PostSelectionConfig) -> Vec<CellRegions> {
    let regions = build_regions(post).expect("validated configuration");
    let mut cells = Vec::new();
    for basis in Basis::ALL {
        for decoy in 0..3 {
            let members: Vec<Region> = regions
                .iter()
                .filter(|r| {
                    r.state.basis() == basis
                        && r.decoy_index == decoy
                        && (basis == Basis::Z || r.state.bit() == 0)
                })
                .cloned()
                .collect();
            cells.push(CellRegions {
                basis,
                decoy_index: decoy,
                members,
            });
        }
    }
    cells
}

/// Run the event-level simulation.
pub fn run(config: &McConfig, ch: &ChannelParams) -> McRunReport {
    let cells = cell_regions(&config.post);
    let per_laser = config.post.mu_max / 2.0;
    let c_reshape = reshaping_constant(config.post.mu_max);
    let bob_cdf = {
        let p = config.bob_basis_probs;
        [p[0], p[0] + p[1], p[0] + p[1] + p[2]]
    };

    let chunk: u64 = 1 << 14;
    let n_chunks = config.n_pulses.div_ceil(chunk);
    let partials: Vec<(u64, Vec<CellReport>)> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = (lo + chunk).min(config.n_pulses);
            let mut accepted = 0u64;
            let mut tallies: Vec<CellReport> = cells
                .iter()
                .map(|c| CellReport::empty(c.basis, c.decoy_index))
                .collect();
            for idx in lo..hi {
                let mut rng = pulse_rng(config.seed, idx);
                let pulse = sample_pulse(&mut rng, per_laser);
                if config.reshape {
                    let q = reshape_acceptance(pulse.mu_h, pulse.mu_v, config.post.mu_max, c_reshape)
                        .expect("scale fits by construction");
                    if rng.random::<f64>() >= q {
                        continue;
                    }
                }
                accepted += 1;

                let u_bob = rng.random::<f64>();
                let bob = if u_bob < bob_cdf[0] {
                    Basis::Z
                } else if u_bob < bob_cdf[1] {
                    Basis::X
                } else {
                    Basis::Y
                };

                // One physical detection per pulse.
                let s = crate::channel::bloch_from_intensities(pulse.mu_h, pulse.mu_v, pulse.phi_hv);
                let s_rot = rotate(&s, &ch.rot_axis, ch.rot_angle).expect("unit axis");
                let p_proj = projection_probability(&s_rot, &bob.pole(0));
                let (p0, p1) = click_probabilities(pulse.mu, p_proj, ch);
                let click0 = rng.random::<f64>() < p0;
                let click1 = rng.random::<f64>() < p1;
                let coin = rng.random::<f64>() < 0.5;
                let bob_bit = match (click0, click1) {
                    (false, false) => None,
                    (true, false) => Some(0u8),
                    (false, true) => Some(1u8),
                    (true, true) => Some(u8::from(coin)),
                };

                for (cell, tally) in cells.iter().zip(tallies.iter_mut()) {
                    let inside = cell
                        .members
                        .iter()
                        .any(|r| r.contains(pulse.mu_h, pulse.mu_v, pulse.phi_hv));
                    if !inside {
                        continue;
                    }
                    tally.selected += 1;
                    let mut pn = (-pulse.mu).exp();
                    for n in 0..=MC_PN_MAX {
                        if n > 0 {
                            pn *= pulse.mu / n as f64;
                        }
                        tally.sum_pn[n] += pn;
                        tally.sum_pn_sq[n] += pn * pn;
                    }
                    let det = &mut tally.per_bob[bob_index(bob)];
                    det.trials += 1;
                    if let Some(bit) = bob_bit {
                        det.clicks += 1;
                        let alice_bit = cell.basis.bit_of(pulse.mu_h, pulse.mu_v, pulse.phi_hv);
                        if bit != alice_bit {
                            det.errors += 1;
                        }
                    }
                }
            }
            (accepted, tallies)
        })
        .collect();

    // Fixed-order merge keeps the float sums deterministic regardless of
    // the thread schedule.
    let mut report = McRunReport {
        n_pulses: config.n_pulses,
        reshape_accepted: 0,
        cells: cells
            .iter()
            .map(|c| CellReport::empty(c.basis, c.decoy_index))
            .collect(),
    };
    for (accepted, tallies) in &partials {
        report.reshape_accepted += accepted;
        for (into, from) in report.cells.iter_mut().zip(tallies) {
            into.merge(from);
        }
    }
    if !config.reshape {
        report.reshape_accepted = report.n_pulses;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::BlochVector;
    use crate::source::{intensity_marginal_cdf, reshaping_acceptance_fraction, IntensityPdf};
    use crate::statistics::compute_region_statistics;

    fn post() -> PostSelectionConfig {
        PostSelectionConfig {
            mu_max: 1.0,
            delta_z: 0.3,
            delta_xy: 0.3,
            delta_phi: 0.4,
            t_decoy: 0.6,
            t_decoy2: 0.3,
        }
    }

    fn channel(eta: f64, p_d: f64) -> ChannelParams {
        ChannelParams::with_misalignment(eta, 1.0, p_d, 0.02).unwrap()
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = McConfig::new(post(), true, 20_000, 42);
        let ch = channel(0.5, 1e-6);
        let a = run(&cfg, &ch);
        let b = run(&cfg, &ch);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let different = run(&McConfig { seed: 43, ..cfg }, &ch);
        assert_ne!(a.cells[0].selected, different.cells[0].selected);
    }

    #[test]
    fn sampled_intensities_follow_arcsine_marginal() {
        let mut counts = [0u64; 10];
        let n = 200_000;
        for idx in 0..n {
            let mut rng = pulse_rng(7, idx);
            let pulse = sample_pulse(&mut rng, 0.5);
            let bin = ((pulse.mu_h.clamp(0.0, 1.0 - 1e-12)) * 10.0) as usize;
            counts[bin] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = intensity_marginal_cdf((i as f64 + 1.0) / 10.0, 1.0)
                - intensity_marginal_cdf(i as f64 / 10.0, 1.0);
            let expect = p * n as f64;
            let sigma = (expect * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - expect).abs() < 5.0 * sigma,
                "decile {i}: {c} vs {expect:.0} ± {sigma:.0}"
            );
        }
    }

    #[test]
    fn nested_cells_are_consistent() {
        let cfg = McConfig::new(post(), true, 50_000, 5);
        let ch = channel(0.5, 1e-6);
        let report = run(&cfg, &ch);
        for basis in Basis::ALL {
            let s0 = report.cell(basis, 0).selected;
            let s1 = report.cell(basis, 1).selected;
            let s2 = report.cell(basis, 2).selected;
            assert!(s0 >= s1 && s1 >= s2, "{basis}: {s0} {s1} {s2}");
            assert!(s2 > 0, "inner decoy cell never hit");
        }
        // Detection never exceeds selection.
        for cell in &report.cells {
            let trials: u64 = cell.per_bob.iter().map(|t| t.trials).sum();
            assert_eq!(trials, cell.selected);
            for t in &cell.per_bob {
                assert!(t.clicks <= t.trials);
                assert!(t.errors <= t.clicks);
            }
        }
    }

    #[test]
    fn blocked_channel_detects_nothing() {
        let cfg = McConfig::new(post(), false, 20_000, 11);
        let ch = ChannelParams::new(1e-9, 1.0, 0.0, BlochVector::new(0.0, 1.0, 0.0), 0.0).unwrap();
        let report = run(&cfg, &ch);
        let clicks: u64 = report
            .cells
            .iter()
            .flat_map(|c| c.per_bob.iter())
            .map(|t| t.clicks)
            .sum();
        assert_eq!(clicks, 0);
    }

    #[test]
    fn acceptance_fraction_matches_reshaping_constant() {
        let cfg = McConfig::new(post(), true, 400_000, 3);
        let ch = channel(0.5, 1e-6);
        let report = run(&cfg, &ch);
        let (frac, se) = report.acceptance_fraction();
        let expect = reshaping_acceptance_fraction(1.0);
        assert!(
            (frac - expect).abs() < 5.0 * se,
            "acceptance {frac} vs {expect} (se {se})"
        );
    }

    #[test]
    fn gains_match_quadrature_at_moderate_statistics() {
        // A light version of the cross-validation criterion (the full
        // three-configuration matrix runs in the acceptance suite).
        let cfg = McConfig::new(post(), true, 300_000, 17);
        let ch = channel(0.4, 1e-6);
        let report = run(&cfg, &ch);
        let pdf = IntensityPdf::Reshaped { mu_max: 1.0 };
        let regions = build_regions(&post()).unwrap();
        let z_region: Vec<&crate::regions::Region> = regions
            .iter()
            .filter(|r| r.state.basis() == Basis::Z && r.decoy_index == 0)
            .collect();
        // Merge H and V statistics with their probabilities.
        let mut p_sum = 0.0;
        let mut gain_acc = 0.0;
        for r in &z_region {
            let s = compute_region_statistics(r, &pdf, &ch, Basis::Z, 6).unwrap();
            p_sum += s.p_region;
            gain_acc += s.p_region * s.gain;
        }
        let gain_quad = gain_acc / p_sum;
        let cell = report.cell(Basis::Z, 0);
        let (gain_mc, se) = cell.per_bob[0].gain();
        assert!(
            (gain_quad - gain_mc).abs() < 5.0 * se,
            "quadrature {gain_quad} vs MC {gain_mc} ± {se}"
        );
    }
}
