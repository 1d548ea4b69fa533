//! Barrier and escape time between two trained basins of a small policy
//! network, across an entropy family.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{cumulative, draw, fisher_trace_exact};
use crate::dist::{cond_entropy, CondTable};
use crate::error::{Error, Result};
use crate::model::train::{onehot_inputs, table_loss, train, TrainConfig};
use crate::model::{Activation, Arch, HiddenLayer, ModelState};
use crate::rng::RngStream;
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub bias: bool,
    pub train: TrainConfig,
    pub eta: f64,
    pub batch: usize,
    pub trials: usize,
    pub max_steps: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_path_points")]
    pub path_points: usize,
}

fn default_path_points() -> usize {
    51
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeTrial {
    pub level: usize,
    pub seed: u64,
    pub h_nats: f64,
    /// Largest excess of the interpolated objective over the chord between
    /// the two basins.
    pub barrier: f64,
    /// Interpolation coordinate of that excess, in `[0, 1]`.
    pub saddle_t: f64,
    pub sharper_trace_f: f64,
    /// Censored maximum-likelihood mean escape time in steps. When no trial
    /// escaped this is the total exposure, a lower bound.
    pub mean_escape_steps: Option<f64>,
    pub escape_is_lower_bound: bool,
    pub uncensored: usize,
    pub trials: usize,
    /// Set when the two basins could not be told apart or training failed.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRow {
    pub level: usize,
    pub h_nats: f64,
    pub barrier_median: f64,
    pub escape_median: Option<f64>,
    /// Trials at this level whose escape time is only a lower bound.
    pub escape_lower_bounds: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub rows: Vec<BridgeRow>,
    pub trials: Vec<BridgeTrial>,
}

impl Bridge {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("level,H_nats,barrier_median,escape_median,escape_lower_bounds,flagged\n");
        for r in &self.rows {
            let esc = r.escape_median.map_or(String::from("NA"), |v| format!("{v:?}"));
            out.push_str(&format!(
                "{},{:?},{:?},{},{},{}\n",
                r.level, r.h_nats, r.barrier_median, esc, r.escape_lower_bounds, r.flagged
            ));
        }
        out
    }
}

fn regularized(m: &ModelState, inputs: &[Vec<f64>], t: &CondTable, wd: f64) -> Result<f64> {
    let (l, _) = table_loss(m, inputs, t)?;
    Ok(l + 0.5 * wd * m.theta().iter().map(|v| v * v).sum::<f64>())
}

/// For each level and seed: train two networks from independent
/// initializations, locate the barrier on the straight line between them,
/// then run minibatch SGD from the sharper basin and time the first crossing
/// of the barrier location along that line.
pub fn entropy_escape_bridge(family: &[CondTable], cfg: &BridgeConfig) -> Result<Bridge> {
    let first = family
        .first()
        .ok_or_else(|| Error::Argument("empty family".into()))?;
    if cfg.seeds.is_empty() || cfg.trials == 0 || cfg.batch == 0 {
        return Err(Error::Argument("need seeds, trials and a positive batch".into()));
    }
    if !(cfg.eta > 0.0) || cfg.path_points < 3 {
        return Err(Error::Config("η must be positive and the path needs ≥ 3 points".into()));
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
    let cells: Vec<(usize, u64)> = (0..family.len())
        .flat_map(|l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let trials = cells
        .par_iter()
        .map(|&(level, seed)| bridge_cell(&family[level], level, seed, &arch, cfg))
        .collect::<Result<Vec<_>>>()?;

    let rows = (0..family.len())
        .map(|level| {
            let mine: Vec<&BridgeTrial> = trials.iter().filter(|t| t.level == level).collect();
            let barriers: Vec<f64> = mine
                .iter()
                .filter(|t| t.barrier.is_finite())
                .map(|t| t.barrier)
                .collect();
            let escapes: Vec<f64> = mine.iter().filter_map(|t| t.mean_escape_steps).collect();
            Ok(BridgeRow {
                level,
                h_nats: cond_entropy(&family[level])?,
                barrier_median: median(&barriers),
                escape_median: (!escapes.is_empty()).then(|| median(&escapes)),
                escape_lower_bounds: mine.iter().filter(|t| t.escape_is_lower_bound).count(),
                flagged: mine.iter().filter(|t| t.flag.is_some()).count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Bridge { rows, trials })
}

fn bridge_cell(
    t: &CondTable,
    level: usize,
    seed: u64,
    arch: &Arch,
    cfg: &BridgeConfig,
) -> Result<BridgeTrial> {
    let inputs = onehot_inputs(t.nx());
    let h_nats = cond_entropy(t)?;
    let wd = cfg.train.weight_decay;
    let scales = vec![1.0; arch.depth()];
    let mut basins = Vec::with_capacity(2);
    let mut failed = false;
    for stream in [1, 2] {
        let mut rng = RngStream::new(seed, stream);
        let mut m = ModelState::init(arch.clone(), &mut rng)?;
        let out = train(&mut m, &cfg.train, &scales, |m| table_loss(m, &inputs, t))?;
        failed |= out.diverged;
        basins.push(m);
    }
    let mut row = BridgeTrial {
        level,
        seed,
        h_nats,
        barrier: f64::NAN,
        saddle_t: f64::NAN,
        sharper_trace_f: f64::NAN,
        mean_escape_steps: None,
        escape_is_lower_bound: false,
        uncensored: 0,
        trials: 0,
        flag: None,
    };
    if failed {
        row.flag = Some("training diverged".into());
        return Ok(row);
    }

    let traces = [
        fisher_trace_exact(&basins[0], &inputs, t)?,
        fisher_trace_exact(&basins[1], &inputs, t)?,
    ];
    let (a, b) = if traces[0] >= traces[1] { (0, 1) } else { (1, 0) };
    row.sharper_trace_f = traces[a];
    let theta_a = basins[a].theta().to_vec();
    let theta_b = basins[b].theta().to_vec();
    let dir: Vec<f64> = theta_b.iter().zip(&theta_a).map(|(q, p)| q - p).collect();
    let dist = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0 + theta_a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(dist > 1e-6 * scale) {
        row.barrier = 0.0;
        row.flag = Some("basins coincide".into());
        return Ok(row);
    }

    let la = regularized(&basins[a], &inputs, t, wd)?;
    let lb = regularized(&basins[b], &inputs, t, wd)?;
    let n = cfg.path_points - 1;
    let mut probe = basins[a].clone();
    let (mut barrier, mut saddle_t) = (0.0_f64, 0.0);
    for i in 1..n {
        let s = i as f64 / n as f64;
        for (j, v) in probe.theta_mut().iter_mut().enumerate() {
            *v = theta_a[j] + s * dir[j];
        }
        let excess = regularized(&probe, &inputs, t, wd)? - ((1.0 - s) * la + s * lb);
        if excess > barrier {
            barrier = excess;
            saddle_t = s;
        }
    }
    row.barrier = barrier;
    row.saddle_t = saddle_t;
    if barrier <= 0.0 {
        row.flag = Some("no barrier on the interpolation path".into());
        return Ok(row);
    }

    let unit: Vec<f64> = dir.iter().map(|v| v / dist).collect();
    let threshold = saddle_t * dist;
    let xcdf = cumulative(t.x_marginal());
    let ycdf: Vec<Vec<f64>> = t.rows().iter().map(|r| cumulative(r)).collect();
    let mut exposure = 0.0;
    let mut exits = 0usize;
    for trial in 0..cfg.trials as u64 {
        let mut rng = RngStream::new(seed, 1000 + trial);
        let mut m = basins[a].clone();
        let mut weights = vec![vec![0.0; t.ny()]; t.nx()];
        let mut exited_at = None;
        for step in 1..=cfg.max_steps {
            weights.iter_mut().for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
            for _ in 0..cfg.batch {
                let x = draw(&xcdf, rng.random::<f64>());
                let y = draw(&ycdf[x], rng.random::<f64>());
                weights[x][y] += 1.0 / cfg.batch as f64;
            }
            let mut grad = vec![0.0; m.k()];
            for (x, w) in weights.iter().enumerate() {
                if w.iter().any(|&v| v > 0.0) {
                    m.accumulate_loss(&inputs[x], w, &mut grad)?;
                }
            }
            let theta = m.theta_mut();
            for (v, g) in theta.iter_mut().zip(&grad) {
                *v -= cfg.eta * (g + wd * *v);
            }
            if theta.iter().any(|v| !v.is_finite()) {
                row.flag = Some("escape run diverged".into());
                return Ok(row);
            }
            let proj: f64 = theta
                .iter()
                .zip(&theta_a)
                .zip(&unit)
                .map(|((v, p), u)| (v - p) * u)
                .sum();
            if proj > threshold {
                exited_at = Some(step);
                break;
            }
        }
        match exited_at {
            Some(s) => {
                exits += 1;
                exposure += s as f64;
            }
            None => exposure += cfg.max_steps as f64,
        }
    }
    row.trials = cfg.trials;
    row.uncensored = exits;
    row.mean_escape_steps = Some(exposure / exits.max(1) as f64);
    row.escape_is_lower_bound = exits == 0;
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::make_entropy_family;

    #[test]
    fn single_seed_single_level_gives_one_row() {
        let mut rng = RngStream::new(4, 0);
        let fam = make_entropy_family(2, 4, 3, &mut rng).unwrap();
        let cfg = BridgeConfig {
            hidden: vec![6],
            activation: Activation::Tanh,
            bias: false,
            train: TrainConfig {
                steps: 300,
                lr: 0.02,
                weight_decay: 0.05,
                ..TrainConfig::default()
            },
            eta: 0.2,
            batch: 4,
            trials: 3,
            max_steps: 200,
            seeds: vec![1],
            path_points: 21,
        };
        let out = entropy_escape_bridge(&fam[..1], &cfg).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.trials.len(), 1);
        assert!(out.to_csv().lines().count() == 2);
    }
}
