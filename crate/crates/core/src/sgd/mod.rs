//! Minibatch-SGD escape experiments on engineered C² landscapes.
//!
//! The double-well landscape is one-dimensional along the escape direction
//! `e = e_0` and quadratic in every transverse coordinate. Along `e`,
//!
//! ```text
//! L'(x) = A·x·(x_b − x)·(x_c − x),   0 < x_b < x_c
//! ```
//!
//! so `x = 0` is the minimum `a`, `x = x_b` the saddle `b`, and `x_c` a second
//! minimum beyond it. `(A, x_b, x_c)` are solved in closed form from the
//! barrier `ΔL`, the curvature `H_ae = A x_b x_c` at the minimum and the
//! magnitude `|H_be| = A x_b (x_c − x_b)` at the saddle, which requires
//! `H_ae > |H_be|`.
//!
//! Per-sample gradients are the landscape gradient plus a random tilt whose
//! variance follows the local curvature: `H_ae` at and below the minimum,
//! `|H_be|` at and above the saddle, and a quintic smoothstep in between.
//! A batch of `B` samples therefore carries gradient noise with variance
//! `noise_scale · h(x) / B`.

pub mod bridge;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::linear_fit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LandscapeSpec {
    DoubleWell {
        barrier: f64,
        h_min: f64,
        h_saddle: f64,
        #[serde(default = "one")]
        transverse: f64,
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "one")]
        noise_scale: f64,
    },
    /// No barrier: the start point sits on a ridge whose loss decreases
    /// linearly along `e` with the given slope.
    Ridge {
        slope: f64,
        #[serde(default = "one")]
        transverse: f64,
        #[serde(default = "two")]
        dim: usize,
        #[serde(default = "one")]
        noise_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    Well { a: f64, x_b: f64, x_c: f64 },
    Ridge { slope: f64 },
}

/// A landscape with its closed-form geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub id: String,
    pub spec: LandscapeSpec,
    profile: Profile,
    dim: usize,
    transverse: f64,
    noise_scale: f64,
    h_min: f64,
    h_saddle: f64,
    barrier: f64,
}

impl Landscape {
    pub fn new(spec: LandscapeSpec) -> Result<Self> {
        let (profile, dim, transverse, noise_scale, h_min, h_saddle, barrier) = match spec {
            LandscapeSpec::DoubleWell {
                barrier,
                h_min,
                h_saddle,
                transverse,
                dim,
                noise_scale,
            } => {
                if !(barrier > 0.0 && h_min > 0.0 && h_saddle > 0.0) {
                    return Err(Error::Config(
                        "double well needs positive barrier and curvatures".into(),
                    ));
                }
                if h_min <= h_saddle {
                    return Err(Error::Config(format!(
                        "double well needs H_ae ({h_min}) > |H_be| ({h_saddle})"
                    )));
                }
                let rho = h_min / h_saddle;
                let c = rho / (rho - 1.0);
                let s2 = 12.0 * c * barrier / (h_min * (2.0 * c - 1.0));
                let x_b = s2.sqrt();
                let a = h_min / (s2 * c);
                let profile = Profile::Well {
                    a,
                    x_b,
                    x_c: c * x_b,
                };
                (profile, dim, transverse, noise_scale, h_min, h_saddle, barrier)
            }
            LandscapeSpec::Ridge {
                slope,
                transverse,
                dim,
                noise_scale,
            } => {
                if !(slope >= 0.0) {
                    return Err(Error::Config("ridge slope must be nonnegative".into()));
                }
                (
                    Profile::Ridge { slope },
                    dim,
                    transverse,
                    noise_scale,
                    1.0,
                    1.0,
                    0.0,
                )
            }
        };
        if dim == 0 {
            return Err(Error::Config("landscape dimension must be ≥ 1".into()));
        }
        if !(transverse > 0.0) || !(noise_scale >= 0.0) {
            return Err(Error::Config(
                "transverse curvature must be positive and noise scale nonnegative".into(),
            ));
        }
        let id = match &spec {
            LandscapeSpec::DoubleWell { .. } => {
                format!("well_dL{barrier:?}_ha{h_min:?}_hb{h_saddle:?}_d{dim}")
            }
            LandscapeSpec::Ridge { slope, .. } => format!("ridge_s{slope:?}_d{dim}"),
        };
        Ok(Self {
            id,
            spec,
            profile,
            dim,
            transverse,
            noise_scale,
            h_min,
            h_saddle,
            barrier,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ΔL = L(b) − L(a)`.
    pub fn barrier(&self) -> f64 {
        self.barrier
    }

    /// `H_ae`
    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    /// `|H_be|`
    pub fn h_saddle(&self) -> f64 {
        self.h_saddle
    }

    /// Coordinate of the saddle along `e`; crossing it counts as an escape.
    pub fn saddle_coordinate(&self) -> f64 {
        match self.profile {
            Profile::Well { x_b, .. } => x_b,
            Profile::Ridge { .. } => 0.0,
        }
    }

    /// Largest curvature magnitude anywhere on the escape path.
    pub fn max_curvature(&self) -> f64 {
        match self.profile {
            Profile::Well { .. } => self.h_min.max(self.h_saddle).max(self.transverse),
            Profile::Ridge { .. } => self.transverse,
        }
    }

    /// Loss along the escape direction, `L(a) = 0`.
    pub fn loss_1d(&self, x: f64) -> f64 {
        match self.profile {
            Profile::Well { a, x_b, x_c } => {
                // ∫₀ˣ A t (x_b − t)(x_c − t) dt
                a * (x_b * x_c * x * x / 2.0 - (x_b + x_c) * x.powi(3) / 3.0 + x.powi(4) / 4.0)
            }
            Profile::Ridge { slope } => -slope * x,
        }
    }

    pub fn grad_1d(&self, x: f64) -> f64 {
        match self.profile {
            Profile::Well { a, x_b, x_c } => a * x * (x_b - x) * (x_c - x),
            Profile::Ridge { slope } => -slope,
        }
    }

    pub fn hess_1d(&self, x: f64) -> f64 {
        match self.profile {
            Profile::Well { a, x_b, x_c } => {
                a * (x_b * x_c - 2.0 * (x_b + x_c) * x + 3.0 * x * x)
            }
            Profile::Ridge { .. } => 0.0,
        }
    }

    /// Full loss: escape profile plus transverse quadratic confinement.
    pub fn loss(&self, theta: &[f64]) -> f64 {
        self.loss_1d(theta[0])
            + 0.5 * self.transverse * theta[1..].iter().map(|v| v * v).sum::<f64>()
    }

    /// Per-sample noise variance along `e` at coordinate `x` (before the
    /// `1/B` batch factor).
    pub fn noise_profile(&self, x: f64) -> f64 {
        let x_b = self.saddle_coordinate();
        let t = if x_b > 0.0 { (x / x_b).clamp(0.0, 1.0) } else { 1.0 };
        let s = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
        self.noise_scale * (self.h_min + (self.h_saddle - self.h_min) * s)
    }

    /// Path parameter `p` for which `∫_a^b L'/h = ΔL (p/H_ae + (1−p)/|H_be|)`,
    /// with `h` the noise profile, evaluated by composite Simpson quadrature.
    pub fn path_parameter(&self) -> Option<f64> {
        let Profile::Well { x_b, .. } = self.profile else {
            return None;
        };
        if self.noise_scale == 0.0 {
            return None;
        }
        let n = 2000;
        let hstep = x_b / n as f64;
        let f = |x: f64| self.grad_1d(x) / (self.noise_profile(x) / self.noise_scale);
        let mut s = f(0.0) + f(x_b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * hstep);
        }
        let integral = s * hstep / 3.0;
        let inv_a = 1.0 / self.h_min;
        let inv_b = 1.0 / self.h_saddle;
        Some((integral / self.barrier - inv_b) / (inv_a - inv_b))
    }

    /// Exponent of the escape law for this landscape at `(η, B)`:
    /// `(2B/(η·noise_scale)) ∫_a^b L'/h`.
    pub fn predicted_exponent(&self, eta: f64, batch: usize) -> Option<f64> {
        let p = self.path_parameter()?;
        Some(
            2.0 * batch as f64 * self.barrier / (eta * self.noise_scale)
                * (p / self.h_min + (1.0 - p) / self.h_saddle),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeTrialRecord {
    pub landscape_id: String,
    pub barrier: f64,
    pub eta: f64,
    pub batch: usize,
    pub seed: u64,
    pub trial: u64,
    pub exited: bool,
    /// Step at which the saddle was first crossed, or `max_steps` if censored.
    pub first_exit_step: u64,
    pub max_steps: u64,
    /// Largest `|θ_j|` over transverse coordinates seen during the trial.
    pub max_transverse: f64,
    /// Smallest coordinate along `e` reached before exit.
    pub min_along_path: f64,
}

impl EscapeTrialRecord {
    pub const CSV_HEADER: &'static str = "landscape_id,barrier,eta,batch,seed,trial,exited,first_exit_step,max_steps,max_transverse,min_along_path";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{},{},{},{},{},{},{:?},{:?}",
            self.landscape_id,
            self.barrier,
            self.eta,
            self.batch,
            self.seed,
            self.trial,
            u8::from(self.exited),
            self.first_exit_step,
            self.max_steps,
            self.max_transverse,
            self.min_along_path
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Parse(format!("expected 11 fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|e| Error::Parse(format!("field {i}: {e}")))
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse::<u64>()
                .map_err(|e| Error::Parse(format!("field {i}: {e}")))
        };
        Ok(Self {
            landscape_id: f[0].to_string(),
            barrier: num(1)?,
            eta: num(2)?,
            batch: int(3)? as usize,
            seed: int(4)?,
            trial: int(5)?,
            exited: int(6)? == 1,
            first_exit_step: int(7)?,
            max_steps: int(8)?,
            max_transverse: num(9)?,
            min_along_path: num(10)?,
        })
    }
}

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Run `trials` independent SGD trajectories from the minimum. Trial `i`
/// draws from stream `(seed, i)`; records come back in trial order.
pub fn run_escape_trials(
    land: &Landscape,
    eta: f64,
    batch: usize,
    trials: usize,
    max_steps: u64,
    seed: u64,
) -> Result<Vec<EscapeTrialRecord>> {
    if !(eta > 0.0) || batch == 0 {
        return Err(Error::Config("η must be positive and B ≥ 1".into()));
    }
    if eta * land.max_curvature() >= 2.0 {
        return Err(Error::Config(format!(
            "η·max curvature = {} ≥ 2: plain SGD is unstable",
            eta * land.max_curvature()
        )));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = RngStream::new(seed, trial);
            Ok(one_trial(land, eta, batch, max_steps, seed, trial, &mut rng))
        })
        .collect()
}

fn one_trial(
    land: &Landscape,
    eta: f64,
    batch: usize,
    max_steps: u64,
    seed: u64,
    trial: u64,
    rng: &mut RngStream,
) -> EscapeTrialRecord {
    let dim = land.dim();
    let mut theta = vec![0.0; dim];
    let x_b = land.saddle_coordinate();
    let inv_b = 1.0 / batch as f64;
    // mean of B iid per-sample tilts is Gaussian with variance h/B: draw it directly
    let transverse_sd = (land.noise_scale * land.transverse * inv_b).sqrt();
    let mut max_transverse = 0.0_f64;
    let mut min_along = 0.0_f64;
    let mut exited_at = None;
    for step in 1..=max_steps {
        let x = theta[0];
        let sd = (land.noise_profile(x) * inv_b).sqrt();
        let xi: f64 = StandardNormal.sample(rng);
        theta[0] = x - eta * (land.grad_1d(x) + sd * xi);
        for v in theta[1..].iter_mut() {
            let xi: f64 = StandardNormal.sample(rng);
            *v -= eta * (land.transverse * *v + transverse_sd * xi);
            max_transverse = max_transverse.max(v.abs());
        }
        if theta[0] > x_b {
            exited_at = Some(step);
            break;
        }
        min_along = min_along.min(theta[0]);
    }
    EscapeTrialRecord {
        landscape_id: land.id.clone(),
        barrier: land.barrier(),
        eta,
        batch,
        seed,
        trial,
        exited: exited_at.is_some(),
        first_exit_step: exited_at.unwrap_or(max_steps),
        max_steps,
        max_transverse,
        min_along_path: min_along,
    }
}

/// `τ = 2π (1/|H_be|) exp[(2BΔL/η)(p/H_ae + (1−p)/|H_be|)]`.
pub fn kramers_predict(
    barrier: f64,
    eta: f64,
    batch: f64,
    h_min: f64,
    h_saddle_abs: f64,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("path parameter {p} outside (0,1)")));
    }
    if !(barrier >= 0.0) || !(eta > 0.0 && batch > 0.0 && h_min > 0.0 && h_saddle_abs > 0.0) {
        return Err(Error::Domain(
            "ΔL must be nonnegative and η, B, curvatures positive".into(),
        ));
    }
    let exponent =
        2.0 * batch * barrier / eta * (p / h_min + (1.0 - p) / h_saddle_abs);
    Ok(2.0 * std::f64::consts::PI / h_saddle_abs * exponent.exp())
}

/// Censored exponential maximum-likelihood mean: total exposure over the
/// number of observed exits.
pub fn censored_mean(records: &[&EscapeTrialRecord]) -> Option<f64> {
    let exits = records.iter().filter(|r| r.exited).count();
    if exits == 0 {
        return None;
    }
    let exposure: f64 = records.iter().map(|r| r.first_exit_step as f64).sum();
    Some(exposure / exits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub min_groups: usize,
    pub min_uncensored: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_groups: 4,
            min_uncensored: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeGroup {
    pub barrier: f64,
    pub batch: usize,
    pub eta: f64,
    /// `B·ΔL/η`
    pub x: f64,
    pub trials: usize,
    pub uncensored: usize,
    pub mean_steps: Option<f64>,
    /// `ln(η · mean_steps)`, the log mean escape time in continuous time.
    pub log_mean_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub p_hat: Option<f64>,
    pub groups: Vec<EscapeGroup>,
    pub warnings: Vec<String>,
}

/// Group records by `(ΔL, B, η)`, estimate each group's mean escape time
/// under censoring and regress `ln(η·τ̂)` on `BΔL/η`. With known curvatures,
/// `p̂` solves `slope = 2(p/H_ae + (1−p)/|H_be|)`.
pub fn fit_escape_law(
    records: &[EscapeTrialRecord],
    curvatures: Option<(f64, f64)>,
    opts: FitOptions,
) -> Result<EscapeFit> {
    let mut keys: Vec<(f64, usize, f64)> = Vec::new();
    for r in records {
        let k = (r.barrier, r.batch, r.eta);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    let mut warnings = Vec::new();
    let mut groups = Vec::new();
    for (barrier, batch, eta) in keys {
        let members: Vec<&EscapeTrialRecord> = records
            .iter()
            .filter(|r| r.barrier == barrier && r.batch == batch && r.eta == eta)
            .collect();
        let uncensored = members.iter().filter(|r| r.exited).count();
        let mean = censored_mean(&members);
        let x = batch as f64 * barrier / eta;
        if mean.is_none() {
            warnings.push(format!(
                "group ΔL={barrier} B={batch} η={eta}: all {} trials censored, excluded",
                members.len()
            ));
        } else if uncensored < opts.min_uncensored {
            warnings.push(format!(
                "group ΔL={barrier} B={batch} η={eta}: only {uncensored} uncensored trials, excluded"
            ));
        }
        groups.push(EscapeGroup {
            barrier,
            batch,
            eta,
            x,
            trials: members.len(),
            uncensored,
            mean_steps: mean,
            log_mean_time: mean.map(|m| (eta * m).ln()),
        });
    }
    let usable: Vec<&EscapeGroup> = groups
        .iter()
        .filter(|g| g.log_mean_time.is_some() && g.uncensored >= opts.min_uncensored)
        .collect();
    let xs: Vec<f64> = usable.iter().map(|g| g.x).collect();
    let ys: Vec<f64> = usable.iter().map(|g| g.log_mean_time.unwrap()).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < opts.min_groups.max(2) {
        return Err(Error::Fit(format!(
            "need at least {} distinct BΔL/η values, have {}",
            opts.min_groups.max(2),
            distinct.len()
        )));
    }
    let fit = linear_fit(&xs, &ys)?;
    let p_hat = curvatures.map(|(ha, hb)| (fit.slope / 2.0 - 1.0 / hb) / (1.0 / ha - 1.0 / hb));
    Ok(EscapeFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        p_hat,
        groups,
        warnings,
    })
}
