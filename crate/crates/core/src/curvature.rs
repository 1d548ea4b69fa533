//! Fisher information, finite-difference Hessians and score bounds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{cond_entropy, entropy_gap, CondTable};
use crate::error::{Error, Result};
use crate::model::train::{table_loss, train, TrainConfig};
use crate::model::{nll_loss, Activation, Arch, HiddenLayer, ModelState};
use crate::rng::RngStream;
use crate::stats::{iqr, median};
use crate::tensor::{norm_sq, sym_eigen, trace, Matrix};

/// Largest parameter count for which dense matrices are formed.
pub const MAX_DENSE_K: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    ExactEnumeration,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    pub mode: FisherMode,
    pub k: usize,
    pub sample_count: Option<usize>,
    pub trace: f64,
    /// Standard error of the trace estimate (sampled mode only).
    pub trace_std_error: Option<f64>,
    pub top_eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Matrix>,
}

fn check_alphabets(m: &ModelState, inputs: &[Vec<f64>], t: &CondTable) -> Result<()> {
    if m.outputs() != t.ny() {
        return Err(Error::Dimension(format!(
            "model has {} outputs, table has {} actions",
            m.outputs(),
            t.ny()
        )));
    }
    if inputs.len() != t.nx() {
        return Err(Error::Dimension(format!(
            "{} feature vectors for {} inputs",
            inputs.len(),
            t.nx()
        )));
    }
    Ok(())
}

/// `F(θ) = Σ_x p(x) Σ_y p_θ(y|x) g gᵀ`, `g = ∇_θ log p_θ(y|x)`, by full
/// enumeration. Only the input marginal of `t` is used; labels come from
/// the model. The dense matrix is formed when `K ≤ MAX_DENSE_K`.
pub fn fisher_exact(m: &ModelState, inputs: &[Vec<f64>], t: &CondTable) -> Result<FisherReport> {
    check_alphabets(m, inputs, t)?;
    let k = m.k();
    let dense = k <= MAX_DENSE_K;
    let parts: Vec<(f64, Option<Vec<f64>>)> = inputs
        .par_iter()
        .enumerate()
        .map(|(x, input)| -> Result<(f64, Option<Vec<f64>>)> {
            let px = t.x_marginal()[x];
            let (probs, scores) = m.all_scores(input)?;
            let mut tr = 0.0;
            let mut mat = dense.then(|| vec![0.0; k * k]);
            for (p, g) in probs.iter().zip(&scores) {
                let w = px * p;
                if w == 0.0 {
                    continue;
                }
                tr += w * norm_sq(g);
                if let Some(mat) = mat.as_mut() {
                    for i in 0..k {
                        let gi = w * g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &mut mat[i * k..(i + 1) * k];
                        for (r, gj) in row.iter_mut().zip(g) {
                            *r += gi * gj;
                        }
                    }
                }
            }
            Ok((tr, mat))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tr = 0.0;
    let mut acc = dense.then(|| vec![0.0; k * k]);
    for (t_x, mat) in parts {
        tr += t_x;
        if let (Some(acc), Some(mat)) = (acc.as_mut(), mat) {
            acc.iter_mut().zip(mat).for_each(|(a, v)| *a += v);
        }
    }
    let matrix = acc.map(|d| Matrix::from_vec(k, k, d)).transpose()?;
    let top = match &matrix {
        Some(mat) => sym_eigen(&mat.symmetrized()?)?
            .into_iter()
            .take(5)
            .map(|p| p.value)
            .collect(),
        None => Vec::new(),
    };
    Ok(FisherReport {
        mode: FisherMode::ExactEnumeration,
        k,
        sample_count: None,
        trace: tr,
        trace_std_error: None,
        top_eigenvalues: top,
        matrix,
    })
}

/// Exact `tr F(θ)` without forming the matrix.
pub fn fisher_trace_exact(m: &ModelState, inputs: &[Vec<f64>], t: &CondTable) -> Result<f64> {
    check_alphabets(m, inputs, t)?;
    let mut tr = 0.0;
    for (x, input) in inputs.iter().enumerate() {
        let px = t.x_marginal()[x];
        if px == 0.0 {
            continue;
        }
        let (probs, scores) = m.all_scores(input)?;
        tr += px
            * probs
                .iter()
                .zip(&scores)
                .map(|(p, g)| p * norm_sq(g))
                .sum::<f64>();
    }
    Ok(tr)
}

/// Monte Carlo Fisher trace from `draws` samples `x ~ p(x)`, `y ~ p_θ(y|x)`.
pub fn fisher_sampled(
    m: &ModelState,
    inputs: &[Vec<f64>],
    t: &CondTable,
    draws: usize,
    rng: &mut RngStream,
) -> Result<FisherReport> {
    check_alphabets(m, inputs, t)?;
    if draws < 2 {
        return Err(Error::Argument("need at least 2 draws".into()));
    }
    let cdf_x = cumulative(t.x_marginal());
    // cache per-x scores: inputs are few compared to draws
    let mut cache: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; inputs.len()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let x = draw(&cdf_x, rng.random());
        if cache[x].is_none() {
            let (probs, scores) = m.all_scores(&inputs[x])?;
            let norms = scores.iter().map(|g| norm_sq(g)).collect();
            cache[x] = Some((cumulative(&probs), norms));
        }
        let (cdf_y, norms) = cache[x].as_ref().unwrap();
        let y = draw(cdf_y, rng.random());
        let v = norms[y];
        sum += v;
        sum_sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(FisherReport {
        mode: FisherMode::Sampled,
        k: m.k(),
        sample_count: Some(draws),
        trace: mean,
        trace_std_error: Some((var / n).sqrt()),
        top_eigenvalues: Vec::new(),
        matrix: None,
    })
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Inverse-CDF draw; `u ∈ [0,1)`.
pub(crate) fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap_or(&1.0);
    let target = u * total;
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

/// Hessian of a scalar function from central differences of its gradient.
/// Column `j` uses step `rel_step·(1 + |θ_j|)`; the result is symmetrized.
/// Columns are evaluated in parallel.
pub fn hessian_fd_with<G>(grad: G, theta: &[f64], rel_step: f64) -> Result<Matrix>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if !(rel_step > 0.0) {
        return Err(Error::Argument("finite-difference step must be positive".into()));
    }
    let k = theta.len();
    if k > MAX_DENSE_K {
        return Err(Error::Argument(format!(
            "{k} parameters exceed the dense limit {MAX_DENSE_K}"
        )));
    }
    let columns: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let h = rel_step * (1.0 + theta[j].abs());
            let mut p = theta.to_vec();
            p[j] = theta[j] + h;
            let up = grad(&p)?;
            p[j] = theta[j] - h;
            let down = grad(&p)?;
            if up.len() != k || down.len() != k {
                return Err(Error::Dimension("gradient length differs from theta".into()));
            }
            if up.iter().chain(&down).any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite gradient in column {j}")));
            }
            Ok(up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let mut hm = Matrix::zeros(k, k);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            hm.set(i, j, *v);
        }
    }
    hm.symmetrized()
}

/// Hessian of the mean clipped NLL of `dataset` at the model's parameters.
pub fn hessian_fd(m: &ModelState, dataset: &[(Vec<f64>, usize)], rel_step: f64) -> Result<Matrix> {
    hessian_fd_with(
        |theta| {
            let probe = m.with_theta(theta)?;
            Ok(nll_loss(&probe, dataset, None)?.1)
        },
        m.theta(),
        rel_step,
    )
}

/// Default relative step for [`hessian_fd`].
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Default score perturbation `δθ`.
pub const DEFAULT_DELTA_THETA: f64 = 1e-2;
/// Floor on measured minimal likelihoods `ε_x`.
pub const DEFAULT_EPS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBoundEntry {
    pub gap: f64,
    pub epsilon: f64,
    pub delta_theta: f64,
    pub c_x: f64,
}

/// How the scalar `C_x` turns into a trace bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceReading {
    /// `C_x` bounds every score coordinate: `tr F ≤ K·C_x²`.
    PerCoordinate,
    /// `C_x` bounds the score norm: `tr F ≤ C_x²`.
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBoundReport {
    pub per_x: Vec<ScoreBoundEntry>,
    pub k: usize,
    pub reading: TraceReading,
    /// `max_x K·C_x²`
    pub trace_bound: f64,
    /// `max_x C_x²`
    pub trace_bound_norm: f64,
}

/// `C_x = (1/δθ) ln(1 + √(2 D_x)/ε_x)` for every input, and the resulting
/// trace bounds. `eps[x]` is the minimal likelihood used for input `x`.
pub fn score_bound(t: &CondTable, eps: &[f64], delta_theta: f64, k: usize) -> Result<ScoreBoundReport> {
    if !(delta_theta > 0.0) {
        return Err(Error::Domain(format!("δθ must be positive, got {delta_theta}")));
    }
    if eps.len() != t.nx() {
        return Err(Error::Dimension(format!(
            "{} epsilons for {} inputs",
            eps.len(),
            t.nx()
        )));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Domain(format!("ε_x must be positive, got {e}")));
    }
    let per_x = (0..t.nx())
        .map(|x| {
            let gap = entropy_gap(t, x)?;
            let c_x = (1.0 + (2.0 * gap).sqrt() / eps[x]).ln() / delta_theta;
            Ok(ScoreBoundEntry {
                gap,
                epsilon: eps[x],
                delta_theta,
                c_x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_c2 = per_x.iter().map(|e| e.c_x * e.c_x).fold(0.0, f64::max);
    Ok(ScoreBoundReport {
        per_x,
        k,
        reading: TraceReading::PerCoordinate,
        trace_bound: k as f64 * max_c2,
        trace_bound_norm: max_c2,
    })
}

/// [`score_bound`] with one `ε` shared by every input.
pub fn score_bound_uniform(
    t: &CondTable,
    eps_floor: f64,
    delta_theta: f64,
    k: usize,
) -> Result<ScoreBoundReport> {
    if !(eps_floor > 0.0) {
        return Err(Error::Domain(format!("ε must be positive, got {eps_floor}")));
    }
    score_bound(t, &vec![eps_floor; t.nx()], delta_theta, k)
}

/// `ε_x = max(min_{y∈𝒴_x} p_θ(y|x), floor)`.
pub fn measured_epsilon(
    m: &ModelState,
    inputs: &[Vec<f64>],
    t: &CondTable,
    floor: f64,
) -> Result<Vec<f64>> {
    check_alphabets(m, inputs, t)?;
    (0..t.nx())
        .map(|x| {
            let lp = m.log_probs(&inputs[x])?;
            let min = t
                .support_set(x)
                .into_iter()
                .map(|y| lp[y].exp())
                .fold(f64::INFINITY, f64::min);
            Ok(min.max(floor))
        })
        .collect()
}

/// Settings for [`entropy_curvature_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSweepConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub bias: bool,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta_theta")]
    pub delta_theta: f64,
    #[serde(default = "default_eps_floor")]
    pub eps_floor: f64,
}

fn default_delta_theta() -> f64 {
    DEFAULT_DELTA_THETA
}

fn default_eps_floor() -> f64 {
    DEFAULT_EPS_FLOOR
}

/// Per-seed outcome of one entropy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTrial {
    pub level: usize,
    pub seed: u64,
    pub h_nats: f64,
    pub final_loss: f64,
    pub trace_f: f64,
    pub trace_bound: f64,
    pub trace_bound_norm: f64,
    pub bound_violated: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSweepRow {
    pub level: usize,
    pub h_nats: f64,
    pub tr_f_median: f64,
    pub tr_f_iqr: f64,
    pub bound: f64,
    pub seeds_used: usize,
    pub diverged: usize,
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSweep {
    pub rows: Vec<CurvatureSweepRow>,
    pub trials: Vec<CurvatureTrial>,
}

impl CurvatureSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,H_nats,trF_median,trF_iqr,bound\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                r.level, r.h_nats, r.tr_f_median, r.tr_f_iqr, r.bound
            ));
        }
        out
    }
}

/// Train one onehot-input policy per (level, seed) on the full table of each
/// family member, then measure the exact Fisher trace at the trained point
/// and the score-based trace bound with measured `ε_x`. Each seed uses the
/// same initialization at every level.
pub fn entropy_curvature_sweep(
    family: &[CondTable],
    cfg: &CurvatureSweepConfig,
) -> Result<CurvatureSweep> {
    let first = family
        .first()
        .ok_or_else(|| Error::Argument("empty family".into()))?;
    if cfg.seeds.is_empty() {
        return Err(Error::Argument("need at least one seed".into()));
    }
    let (nx, ny) = (first.nx(), first.ny());
    if family.iter().any(|t| t.nx() != nx || t.ny() != ny) {
        return Err(Error::Argument("family members differ in shape".into()));
    }
    let arch = Arch {
        input_dim: nx,
        hidden: cfg
            .hidden
            .iter()
            .map(|&width| HiddenLayer {
                width,
                activation: cfg.activation,
            })
            .collect(),
        outputs: ny,
        bias: cfg.bias,
    };
    let inputs = crate::model::train::onehot_inputs(nx);
    let cells: Vec<(usize, u64)> = (0..family.len())
        .flat_map(|l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();

    let trials: Vec<CurvatureTrial> = cells
        .par_iter()
        .map(|&(level, seed)| -> Result<CurvatureTrial> {
            let t = &family[level];
            let mut rng = RngStream::new(seed, 0);
            let mut m = ModelState::init(arch.clone(), &mut rng)?;
            let scales = vec![1.0; arch.depth()];
            let out = train(&mut m, &cfg.train, &scales, |m| table_loss(m, &inputs, t))?;
            let h = cond_entropy(t)?;
            if out.diverged {
                return Ok(CurvatureTrial {
                    level,
                    seed,
                    h_nats: h,
                    final_loss: out.final_loss,
                    trace_f: f64::NAN,
                    trace_bound: f64::NAN,
                    trace_bound_norm: f64::NAN,
                    bound_violated: false,
                    diverged: true,
                });
            }
            let trace_f = fisher_trace_exact(&m, &inputs, t)?;
            let eps = measured_epsilon(&m, &inputs, t, cfg.eps_floor)?;
            let sb = score_bound(t, &eps, cfg.delta_theta, m.k())?;
            Ok(CurvatureTrial {
                level,
                seed,
                h_nats: h,
                final_loss: out.final_loss,
                trace_f,
                trace_bound: sb.trace_bound,
                trace_bound_norm: sb.trace_bound_norm,
                bound_violated: trace_f > sb.trace_bound,
                diverged: false,
            })
        })
        .collect::<Result<_>>()?;

    let rows = (0..family.len())
        .map(|level| {
            let mine: Vec<&CurvatureTrial> = trials.iter().filter(|t| t.level == level).collect();
            let ok: Vec<&&CurvatureTrial> = mine.iter().filter(|t| !t.diverged).collect();
            let tr: Vec<f64> = ok.iter().map(|t| t.trace_f).collect();
            let bounds: Vec<f64> = ok.iter().map(|t| t.trace_bound).collect();
            Ok(CurvatureSweepRow {
                level,
                h_nats: cond_entropy(&family[level])?,
                tr_f_median: median(&tr),
                tr_f_iqr: iqr(&tr),
                bound: median(&bounds),
                seeds_used: ok.len(),
                diverged: mine.len() - ok.len(),
                bound_violations: ok.iter().filter(|t| t.bound_violated).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureSweep { rows, trials })
}

/// Top eigenvalue and trace of a Hessian, the usual sharpness summary.
pub fn sharpness(h: &Matrix) -> Result<(f64, f64)> {
    let eig = sym_eigen(h)?;
    Ok((eig.first().map_or(0.0, |p| p.value), trace(h)?))
}
