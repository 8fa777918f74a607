//! Post-selection parameter search.
//!
//! The objective (a full pipeline evaluation) is piecewise smooth: it runs
//! through linear-program vertices, so gradients are unreliable. The search
//! is therefore derivative-free: coordinate descent on a coarse grid to
//! locate the basin, followed by a bounded Nelder-Mead refinement (golden
//! section when only one parameter is free). Every step is deterministic,
//! including tie-breaking, so a search reproduces bit-for-bit.

use crate::channel::ChannelParams;
use crate::keyrate::KeyRateResult;
use crate::pipeline::{
    passive_bb84, passive_bb84_finite, passive_rfi, PipelineError, ProtocolParams,
};
use crate::regions::PostSelectionConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The parameters the search may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    MuMax,
    DeltaZ,
    DeltaXy,
    DeltaPhi,
    TDecoy,
    TDecoy2,
    BobZProb,
}

impl ParamId {
    pub const ALL: [ParamId; 7] = [
        ParamId::MuMax,
        ParamId::DeltaZ,
        ParamId::DeltaXy,
        ParamId::DeltaPhi,
        ParamId::TDecoy,
        ParamId::TDecoy2,
        ParamId::BobZProb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamId::MuMax => "mu_max",
            ParamId::DeltaZ => "delta_z",
            ParamId::DeltaXy => "delta_xy",
            ParamId::DeltaPhi => "delta_phi",
            ParamId::TDecoy => "t_decoy",
            ParamId::TDecoy2 => "t_decoy2",
            ParamId::BobZProb => "bob_z_prob",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreeParam {
    pub id: ParamId,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Bb84Asymptotic,
    Bb84Finite { n_total: f64 },
    RfiAsymptotic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationSpec {
    pub free: Vec<FreeParam>,
    pub objective: Objective,
    pub base_post: PostSelectionConfig,
    pub base_params: ProtocolParams,
    /// When set, the decoy radii are held at these absolute values and the
    /// dimensionless factors recomputed from each candidate mu_max.
    pub absolute_decoy_radii: Option<(f64, f64)>,
    /// Grid resolution of the coordinate-descent stage.
    pub grid_points: usize,
    /// Relative rate tolerance of the refinement stage.
    pub refine_tol: f64,
}

impl OptimizationSpec {
    pub fn new(
        free: Vec<FreeParam>,
        objective: Objective,
        base_post: PostSelectionConfig,
        base_params: ProtocolParams,
    ) -> Self {
        OptimizationSpec {
            free,
            objective,
            base_post,
            base_params,
            absolute_decoy_radii: None,
            grid_points: 8,
            refine_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub params: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub best_post: PostSelectionConfig,
    pub best_bob_z_prob: f64,
    pub best_params: Vec<f64>,
    pub result: KeyRateResult,
    pub trace: Vec<TraceEntry>,
    /// True when no evaluation produced a positive rate; the returned
    /// configuration is then the box midpoint.
    pub all_zero: bool,
}

/// Instantiate a parameter vector into a runnable configuration.
fn instantiate(
    spec: &OptimizationSpec,
    x: &[f64],
) -> Option<(PostSelectionConfig, ProtocolParams)> {
    let mut post = spec.base_post;
    let mut params = spec.base_params;
    for (fp, &v) in spec.free.iter().zip(x) {
        match fp.id {
            ParamId::MuMax => post.mu_max = v,
            ParamId::DeltaZ => post.delta_z = v,
            ParamId::DeltaXy => post.delta_xy = v,
            ParamId::DeltaPhi => post.delta_phi = v,
            ParamId::TDecoy => post.t_decoy = v,
            ParamId::TDecoy2 => post.t_decoy2 = v,
            ParamId::BobZProb => params.bob_z_prob = v,
        }
    }
    if let Some((r1, r2)) = spec.absolute_decoy_radii {
        if post.mu_max <= r1 {
            return None;
        }
        post.t_decoy = r1 / post.mu_max;
        post.t_decoy2 = r2 / post.mu_max;
    }
    post.validate().ok()?;
    Some((post, params))
}

fn evaluate(
    spec: &OptimizationSpec,
    ch: &ChannelParams,
    x: &[f64],
) -> (f64, Option<KeyRateResult>) {
    let Some((post, params)) = instantiate(spec, x) else {
        return (0.0, None);
    };
    let run: Result<KeyRateResult, PipelineError> = match spec.objective {
        Objective::Bb84Asymptotic => passive_bb84(&post, ch, &params),
        Objective::Bb84Finite { n_total } => passive_bb84_finite(&post, ch, &params, n_total),
        Objective::RfiAsymptotic => passive_rfi(&post, ch, &params),
    };
    match run {
        Ok(r) => (r.rate, Some(r)),
        Err(_) => (0.0, None),
    }
}

struct Search<'a> {
    spec: &'a OptimizationSpec,
    ch: &'a ChannelParams,
    trace: Vec<TraceEntry>,
    best_x: Vec<f64>,
    best_rate: f64,
}

impl<'a> Search<'a> {
    /// Evaluate a batch concurrently, record in order, return the rates.
    fn batch(&mut self, points: &[Vec<f64>]) -> Vec<f64> {
        let results: Vec<f64> = points
            .par_iter()
            .map(|x| evaluate(self.spec, self.ch, x).0)
            .collect();
        for (x, &rate) in points.iter().zip(&results) {
            let eval = self.trace.len();
            self.trace.push(TraceEntry {
                eval,
                params: x.clone(),
                rate,
            });
            if rate > self.best_rate {
                self.best_rate = rate;
                self.best_x = x.clone();
            }
        }
        results
    }
}

/// Run the search. The best configuration found, the rate recomputed there,
/// and the full evaluation trace are returned.
pub fn optimize(spec: &OptimizationSpec, ch: &ChannelParams) -> OptimizationOutcome {
    let d = spec.free.len();
    let midpoint: Vec<f64> = spec.free.iter().map(|f| 0.5 * (f.lo + f.hi)).collect();
    let mut search = Search {
        spec,
        ch,
        trace: Vec::new(),
        best_x: midpoint.clone(),
        best_rate: f64::NEG_INFINITY,
    };
    search.batch(&[midpoint.clone()]);

    // Coordinate descent over a coarse grid.
    let grid = spec.grid_points.max(2);
    for _sweep in 0..3 {
        let mut improved = false;
        for dim in 0..d {
            let f = &spec.free[dim];
            let points: Vec<Vec<f64>> = (0..grid)
                .map(|k| {
                    let mut x = search.best_x.clone();
                    x[dim] = f.lo + (f.hi - f.lo) * k as f64 / (grid - 1) as f64;
                    x
                })
                .collect();
            let before = search.best_rate;
            search.batch(&points);
            if search.best_rate > before * (1.0 + 1e-12) {
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    // Local refinement.
    if search.best_rate > 0.0 {
        if d == 1 {
            golden_refine(&mut search);
        } else if d >= 2 {
            nelder_mead_refine(&mut search);
        }
    }

    let all_zero = search.best_rate <= 0.0;
    let x = if all_zero { midpoint } else { search.best_x.clone() };
    let (rate, result) = evaluate(spec, ch, &x);
    let (best_post, best_params) = instantiate(spec, &x).unwrap_or((spec.base_post, spec.base_params));
    let result = result.unwrap_or(KeyRateResult {
        rate,
        y1_lower: 0.0,
        e1_upper: 1.0,
        p1_signal: 0.0,
        p_za: 0.0,
        p_zb: best_params.bob_z_prob,
        gain_z: 0.0,
        qber_z: 0.0,
        ec_leak: 0.0,
        privacy_term: 0.0,
        valid: false,
        rfi: None,
        finite: None,
    });
    OptimizationOutcome {
        best_post,
        best_bob_z_prob: best_params.bob_z_prob,
        best_params: x,
        result,
        trace: search.trace,
        all_zero,
    }
}

fn golden_refine(search: &mut Search) {
    let f = search.spec.free[0];
    let span = (f.hi - f.lo) / (search.spec.grid_points.max(2) as f64 - 1.0);
    let mut a = (search.best_x[0] - span).max(f.lo);
    let mut b = (search.best_x[0] + span).min(f.hi);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        if (b - a).abs() < search.spec.refine_tol * (f.hi - f.lo) {
            break;
        }
        let c = b - inv_phi * (b - a);
        let dpt = a + inv_phi * (b - a);
        let rates = search.batch(&[vec![c], vec![dpt]]);
        if rates[0] > rates[1] {
            b = dpt;
        } else {
            a = c;
        }
    }
}

fn nelder_mead_refine(search: &mut Search) {
    let d = search.best_x.len();
    let spec = search.spec;
    let clamp = |x: &mut Vec<f64>| {
        for (v, f) in x.iter_mut().zip(&spec.free) {
            *v = v.clamp(f.lo, f.hi);
        }
    };
    // Initial simplex around the grid optimum.
    let mut simplex: Vec<Vec<f64>> = vec![search.best_x.clone()];
    for i in 0..d {
        let mut x = search.best_x.clone();
        let f = spec.free[i];
        let step = 0.08 * (f.hi - f.lo);
        x[i] = if x[i] + step <= f.hi { x[i] + step } else { x[i] - step };
        simplex.push(x);
    }
    let mut values = search.batch(&simplex);

    let max_iter = 60 * d;
    for _ in 0..max_iter {
        // Sort descending by rate (we maximize); ties keep insertion order.
        let mut order: Vec<usize> = (0..simplex.len()).collect();
        order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
        let sorted: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_vals: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = sorted;
        values = sorted_vals;

        let best = values[0];
        let worst = values[d];
        if best - worst <= spec.refine_tol * best.abs().max(1e-12) {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|x| x[k]).sum::<f64>() / d as f64)
            .collect();
        let combine = |alpha: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + alpha * (c - w))
                .collect();
            clamp(&mut x);
            x
        };

        let reflected = combine(1.0);
        let r_val = search.batch(std::slice::from_ref(&reflected))[0];
        if r_val > values[0] {
            let expanded = combine(2.0);
            let e_val = search.batch(std::slice::from_ref(&expanded))[0];
            if e_val > r_val {
                simplex[d] = expanded;
                values[d] = e_val;
            } else {
                simplex[d] = reflected;
                values[d] = r_val;
            }
        } else if r_val > values[d - 1] {
            simplex[d] = reflected;
            values[d] = r_val;
        } else {
            let contracted = combine(-0.5);
            let c_val = search.batch(std::slice::from_ref(&contracted))[0];
            if c_val > values[d] {
                simplex[d] = contracted;
                values[d] = c_val;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[0].clone();
                let rest: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|x| {
                        let mut y: Vec<f64> = best_point
                            .iter()
                            .zip(x)
                            .map(|(b, v)| b + 0.5 * (v - b))
                            .collect();
                        clamp(&mut y);
                        y
                    })
                    .collect();
                let vals = search.batch(&rest);
                for (i, (x, v)) in rest.into_iter().zip(vals).enumerate() {
                    simplex[i + 1] = x;
                    values[i + 1] = v;
                }
            }
        }
    }
}
