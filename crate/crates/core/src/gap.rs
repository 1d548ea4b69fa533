//! Gridworld imitation tasks with an enumerable data distribution, so the
//! generalization gap of a trained policy is computed exactly.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{cumulative, draw, fisher_trace_exact};
use crate::dist::{cond_entropy, mixing_weight, CondTable};
use crate::error::{Error, Result};
use crate::info::{bin_representations, cond_mutual_info, Axis, BinningSpec, JointHistogram};
use crate::model::train::{table_loss, train, TrainConfig};
use crate::model::{sample_loss, Activation, Arch, HiddenLayer, ModelState, LOSS_MAX};
use crate::provenance::config_hash;
use crate::rng::RngStream;
use crate::stats::{median, spearman};

pub const ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];

/// A state alphabet with an expert table and an injective feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    expert: CondTable,
    features: Vec<Vec<f64>>,
}

impl ToyTask {
    pub fn new(expert: CondTable, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != expert.nx() {
            return Err(Error::Dimension(format!(
                "{} feature vectors for {} states",
                features.len(),
                expert.nx()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Dimension("feature vectors differ in length".into()));
        }
        let mut sorted: Vec<&Vec<f64>> = features.iter().collect();
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("feature map is not injective".into()));
        }
        Ok(Self { expert, features })
    }

    pub fn expert(&self) -> &CondTable {
        &self.expert
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn nx(&self) -> usize {
        self.expert.nx()
    }

    pub fn ny(&self) -> usize {
        self.expert.ny()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Same states and features under a different expert.
    pub fn with_expert(&self, expert: CondTable) -> Result<Self> {
        Self::new(expert, self.features.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `[goal x, goal y, cell x, cell y]` scaled to `[-1, 1]`.
    Coordinate,
    /// Onehot goal cell followed by onehot current cell.
    Onehot,
}

/// Deterministic shortest-path action: close the horizontal offset first,
/// then the vertical one, then stay.
pub fn shortest_path_action(width: usize, cell: usize, goal: usize) -> usize {
    let (cx, cy) = (cell % width, cell / width);
    let (gx, gy) = (goal % width, goal / width);
    if cx < gx {
        3
    } else if cx > gx {
        2
    } else if cy < gy {
        0
    } else if cy > gy {
        1
    } else {
        4
    }
}

/// Reach-goal task on a `width × width` grid. States are `(goal, cell)`
/// pairs for the listed goal cells, uniformly weighted; the expert follows
/// [`shortest_path_action`].
pub fn gridworld_task(width: usize, goals: &[usize], encoding: Encoding) -> Result<ToyTask> {
    if width < 2 {
        return Err(Error::Argument("grid width must be ≥ 2".into()));
    }
    let cells = width * width;
    if goals.is_empty() || goals.iter().any(|&g| g >= cells) {
        return Err(Error::Argument("goals must be nonempty cells of the grid".into()));
    }
    let scale = |v: usize| 2.0 * v as f64 / (width - 1) as f64 - 1.0;
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut features = Vec::new();
    for &goal in goals {
        for cell in 0..cells {
            names.push(format!("g{goal}c{cell}"));
            let mut row = vec![0.0; ACTIONS.len()];
            row[shortest_path_action(width, cell, goal)] = 1.0;
            rows.push(row);
            features.push(match encoding {
                Encoding::Coordinate => vec![
                    scale(goal % width),
                    scale(goal / width),
                    scale(cell % width),
                    scale(cell / width),
                ],
                Encoding::Onehot => {
                    let mut f = vec![0.0; 2 * cells];
                    f[goal] = 1.0;
                    f[cells + cell] = 1.0;
                    f
                }
            });
        }
    }
    let n = names.len();
    let expert = CondTable::new(
        names,
        ACTIONS.iter().map(|s| s.to_string()).collect(),
        vec![1.0 / n as f64; n],
        rows,
        None,
    )?;
    ToyTask::new(expert, features)
}

/// Split the grid cells into disjoint task goals and pretraining goals.
pub fn split_goals(
    width: usize,
    n_task: usize,
    n_pretrain: usize,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let cells = width * width;
    if n_task == 0 || n_task + n_pretrain > cells {
        return Err(Error::Argument(format!(
            "cannot pick {n_task} + {n_pretrain} distinct goals from {cells} cells"
        )));
    }
    let picked = sample(rng, cells, n_task + n_pretrain).into_vec();
    let mut task = picked[..n_task].to_vec();
    let mut pre = picked[n_task..].to_vec();
    task.sort_unstable();
    pre.sort_unstable();
    Ok((task, pre))
}

/// `n` i.i.d. pairs `x ~ p(x)`, `y ~ p(y|x)` as `(state, action)` indices.
pub fn sample_dataset(task: &ToyTask, n: usize, rng: &mut RngStream) -> Result<Vec<(usize, usize)>> {
    let all: Vec<usize> = (0..task.nx()).collect();
    sample_covered(task, &all, n, rng)
}

/// Like [`sample_dataset`] with `x` drawn from `p(x)` restricted to `states`.
pub fn sample_covered(
    task: &ToyTask,
    states: &[usize],
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::Argument("dataset size must be ≥ 1".into()));
    }
    if states.is_empty() || states.iter().any(|&s| s >= task.nx()) {
        return Err(Error::Argument("covered states must be valid and nonempty".into()));
    }
    let t = task.expert();
    let px: Vec<f64> = states.iter().map(|&s| t.x_marginal()[s]).collect();
    if px.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Argument("covered states have zero probability".into()));
    }
    let xcdf = cumulative(&px);
    let ycdf: Vec<Vec<f64>> = t.rows().iter().map(|r| cumulative(r)).collect();
    Ok((0..n)
        .map(|_| {
            let x = states[draw(&xcdf, rng.random::<f64>())];
            let y = draw(&ycdf[x], rng.random::<f64>());
            (x, y)
        })
        .collect())
}

/// A uniformly chosen subset of `max(1, round(coverage·|𝒳|))` states, sorted.
pub fn coverage_subset(task: &ToyTask, coverage: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Argument(format!("coverage {coverage} not in (0,1]")));
    }
    let nx = task.nx();
    let k = ((coverage * nx as f64).round() as usize).clamp(1, nx);
    let mut s = sample(rng, nx, k).into_vec();
    s.sort_unstable();
    Ok(s)
}

/// `Σ_x p(x) Σ_y p(y|x) ℓ(f(x), y)` with the clipped per-sample loss.
pub fn exact_expected_loss(m: &ModelState, task: &ToyTask) -> Result<f64> {
    let t = task.expert();
    let mut total = 0.0;
    for (x, f) in task.features().iter().enumerate() {
        let px = t.x_marginal()[x];
        if px == 0.0 {
            continue;
        }
        let lp = m.log_probs(f)?;
        let inner: f64 = t
            .row(x)
            .iter()
            .zip(&lp)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| p * sample_loss(*l))
            .sum();
        total += px * inner;
    }
    Ok(total)
}

/// How much clipping lowers the expected loss below the unclipped
/// cross-entropy: `E[−ln p_θ(y|x) − ℓ]`.
pub fn clip_slack(m: &ModelState, task: &ToyTask) -> Result<f64> {
    let t = task.expert();
    let mut total = 0.0;
    for (x, f) in task.features().iter().enumerate() {
        let lp = m.log_probs(f)?;
        for (p, l) in t.row(x).iter().zip(&lp) {
            if *p > 0.0 {
                total += t.x_marginal()[x] * p * (-l - sample_loss(*l));
            }
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of [`exact_expected_loss`] and its standard error.
pub fn mc_expected_loss(
    m: &ModelState,
    task: &ToyTask,
    draws: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if draws < 2 {
        return Err(Error::Argument("need at least 2 draws".into()));
    }
    let losses: Vec<Vec<f64>> = task
        .features()
        .iter()
        .map(|f| Ok(m.log_probs(f)?.into_iter().map(sample_loss).collect()))
        .collect::<Result<_>>()?;
    let data = sample_dataset(task, draws, rng)?;
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, (x, y)) in data.iter().enumerate() {
        let v = losses[*x][*y];
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let var = m2 / (draws - 1) as f64;
    Ok((mean, (var / draws as f64).sqrt()))
}

/// Mean clipped NLL of `data` and its gradient. Pairs are pooled per state,
/// so each distinct state costs one forward and backward pass.
pub fn empirical_loss(
    m: &ModelState,
    task: &ToyTask,
    data: &[(usize, usize)],
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let w = 1.0 / data.len() as f64;
    let mut weights: Vec<Option<Vec<f64>>> = vec![None; task.nx()];
    for &(x, y) in data {
        if x >= task.nx() || y >= task.ny() {
            return Err(Error::Argument(format!("pair ({x}, {y}) out of range")));
        }
        weights[x].get_or_insert_with(|| vec![0.0; task.ny()])[y] += w;
    }
    let mut grad = vec![0.0; m.k()];
    let mut loss = 0.0;
    for (x, wx) in weights.iter().enumerate() {
        if let Some(wx) = wx {
            loss += m.accumulate_loss(&task.features()[x], wx, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Pretrained encoder, zero encoder learning rate.
    Frozen,
    /// Pretrained encoder, scaled encoder learning rate.
    Finetune,
    /// Everything trained from a fresh initialization.
    Scratch,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Frozen => "frozen",
            Regime::Finetune => "finetune",
            Regime::Scratch => "scratch",
        }
    }

    pub fn needs_pretraining(self) -> bool {
        self != Regime::Scratch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Number of leading affine layers that form the encoder.
    #[serde(default = "default_encoder_layers")]
    pub encoder_layers: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pretrain: TrainConfig,
    /// Encoder learning-rate multiplier in the fine-tune regime.
    #[serde(default = "default_finetune_scale")]
    pub finetune_scale: f64,
    /// Fraction of states the training set is drawn from.
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    /// Equal-width bins per unit when discretizing hidden layers.
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_true() -> bool {
    true
}

fn default_encoder_layers() -> usize {
    2
}

fn default_finetune_scale() -> f64 {
    0.1
}

fn default_coverage() -> f64 {
    1.0
}

fn default_bins() -> usize {
    8
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: default_activation(),
            bias: true,
            encoder_layers: default_encoder_layers(),
            train: TrainConfig::default(),
            pretrain: TrainConfig::default(),
            finetune_scale: default_finetune_scale(),
            coverage: default_coverage(),
            bins: default_bins(),
        }
    }
}

impl GapConfig {
    pub fn arch(&self, task: &ToyTask) -> Result<Arch> {
        if self.encoder_layers > self.hidden.len() {
            return Err(Error::Config(format!(
                "encoder of {} layers in a network with {} hidden layers",
                self.encoder_layers,
                self.hidden.len()
            )));
        }
        Ok(Arch {
            input_dim: task.input_dim(),
            hidden: self
                .hidden
                .iter()
                .map(|&width| HiddenLayer {
                    width,
                    activation: self.activation,
                })
                .collect(),
            outputs: task.ny(),
            bias: self.bias,
        })
    }

    fn lr_scales(&self, regime: Regime, depth: usize) -> Vec<f64> {
        let enc = match regime {
            Regime::Frozen => 0.0,
            Regime::Finetune => self.finetune_scale,
            Regime::Scratch => 1.0,
        };
        (0..depth)
            .map(|l| if l < self.encoder_layers { enc } else { 1.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub level: usize,
    pub h_nats: f64,
    pub regime: Regime,
    pub n: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub expected_loss: f64,
    pub gap: f64,
    /// Binned `I(X; Z_l | Y)` on the training set for each hidden layer.
    pub cmi: Vec<f64>,
    pub trace_f: f64,
    pub config_hash: String,
    pub flags: Vec<String>,
}

impl GapReport {
    pub const CSV_HEADER: &'static str =
        "level,H_nats,regime,n,seed,train_loss,expected_loss,gap,trF,cmi_l1,cmi_l2,escaped_flags";

    pub fn csv_row(&self) -> String {
        let cmi = |i: usize| self.cmi.get(i).copied().unwrap_or(f64::NAN);
        let flags = if self.flags.is_empty() {
            String::from("none")
        } else {
            csv_escape(&self.flags.join(";"))
        };
        format!(
            "{},{:?},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.level,
            self.h_nats,
            self.regime.name(),
            self.n,
            self.seed,
            self.train_loss,
            self.expected_loss,
            self.gap,
            self.trace_f,
            cmi(0),
            cmi(1),
            flags
        )
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Train under `regime` on `n` pairs drawn from the covered states and
/// report the exact gap. Frozen and fine-tune regimes first train a full
/// network on `pretrain` (all of its states, exact objective) and transfer
/// its encoder layers.
///
/// Streams of `seed`: 0 initialization, 1 coverage subset, 2 dataset,
/// 3 pretraining initialization.
pub fn run_regime(
    task: &ToyTask,
    pretrain: Option<&ToyTask>,
    regime: Regime,
    n: usize,
    cfg: &GapConfig,
    seed: u64,
) -> Result<GapReport> {
    let arch = cfg.arch(task)?;
    let mut model = ModelState::init(arch.clone(), &mut RngStream::new(seed, 0))?;
    let mut flags = Vec::new();
    if regime.needs_pretraining() {
        let pre = pretrain.ok_or_else(|| {
            Error::Config(format!("{} regime needs a pretraining task", regime.name()))
        })?;
        if pre.input_dim() != task.input_dim() || pre.ny() != task.ny() {
            return Err(Error::Config("pretraining task has a different shape".into()));
        }
        let mut pm = ModelState::init(arch.clone(), &mut RngStream::new(seed, 3))?;
        let ones = vec![1.0; arch.depth()];
        let out = train(&mut pm, &cfg.pretrain, &ones, |m| {
            table_loss(m, pre.features(), pre.expert())
        })?;
        if out.diverged {
            flags.push("pretraining diverged".to_string());
        }
        let end = pm.layer_offsets()[..cfg.encoder_layers]
            .last()
            .map_or(0, |r| r.end);
        let src = pm.theta()[..end].to_vec();
        model.theta_mut()[..end].copy_from_slice(&src);
    }
    let subset = coverage_subset(task, cfg.coverage, &mut RngStream::new(seed, 1))?;
    let data = sample_covered(task, &subset, n, &mut RngStream::new(seed, 2))?;
    let mut report = run_with_init(task, regime, model, &data, cfg, seed)?;
    flags.append(&mut report.flags);
    report.flags = flags;
    Ok(report)
}

/// Train `model` on `data` with the learning-rate scales of `regime` and
/// build the report. No pretraining happens here.
pub fn run_with_init(
    task: &ToyTask,
    regime: Regime,
    mut model: ModelState,
    data: &[(usize, usize)],
    cfg: &GapConfig,
    seed: u64,
) -> Result<GapReport> {
    let scales = cfg.lr_scales(regime, model.arch().depth());
    let out = train(&mut model, &cfg.train, &scales, |m| empirical_loss(m, task, data))?;
    let h_nats = cond_entropy(task.expert())?;
    let mut report = GapReport {
        level: 0,
        h_nats,
        regime,
        n: data.len(),
        seed,
        train_loss: f64::NAN,
        expected_loss: f64::NAN,
        gap: f64::NAN,
        cmi: vec![f64::NAN; model.arch().hidden.len()],
        trace_f: f64::NAN,
        config_hash: config_hash(cfg)?,
        flags: Vec::new(),
    };
    if out.diverged {
        report.flags.push("diverged".to_string());
        return Ok(report);
    }
    let (train_loss, _) = empirical_loss(&model, task, data)?;
    let expected_loss = exact_expected_loss(&model, task)?;
    report.train_loss = train_loss;
    report.expected_loss = expected_loss;
    report.gap = expected_loss - train_loss;
    if expected_loss < h_nats - clip_slack(&model, task)? - 1e-9 {
        report.flags.push("expected loss below conditional entropy".to_string());
    }
    if !(0.0..=LOSS_MAX).contains(&train_loss) || !(0.0..=LOSS_MAX).contains(&expected_loss) {
        report.flags.push("loss outside [0, max]".to_string());
    }
    report.trace_f = fisher_trace_exact(&model, task.features(), task.expert())?;
    report.cmi = layer_cmi(&model, task, data, cfg.bins)?;
    Ok(report)
}

/// `I(X; Z_l | Y)` for every hidden layer, with `Z_l` discretized into
/// `bins` equal-width bins spanning the observed activation range.
pub fn layer_cmi(
    m: &ModelState,
    task: &ToyTask,
    data: &[(usize, usize)],
    bins: usize,
) -> Result<Vec<f64>> {
    let traces = data
        .iter()
        .map(|(x, _)| m.forward(&task.features()[*x]))
        .collect::<Result<Vec<_>>>()?;
    let mut xs_dense = Vec::with_capacity(data.len());
    let mut seen: Vec<Option<usize>> = vec![None; task.nx()];
    let mut next = 0;
    for (x, _) in data {
        let id = *seen[*x].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        xs_dense.push(id);
    }
    let ys: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
    (1..=m.arch().hidden.len())
        .map(|l| {
            let (lo, hi) = traces
                .iter()
                .flat_map(|t| t.layer(l).unwrap_or(&[]).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !(hi - lo > 1e-12) {
                return Ok(0.0);
            }
            let spec = BinningSpec::equal_width(m.arch().hidden[l - 1].width, lo, hi, bins)?;
            let z = bin_representations(&traces, l, &spec)?;
            let h = JointHistogram::from_samples(
                vec![
                    Axis::new("X", next),
                    Axis::new("Z", z.n_bins),
                    Axis::new("Y", task.ny()),
                ],
                &[&xs_dense, &z.ids, &ys],
            )?;
            cond_mutual_info(&h, "X", "Z", "Y")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSweepConfig {
    pub levels: usize,
    pub n: usize,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: GapConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSweepRow {
    pub level: usize,
    pub h_nats: f64,
    pub regime: Regime,
    pub gap_median: f64,
    pub trace_f_median: f64,
    pub cmi_l1_median: f64,
    pub cmi_l2_median: f64,
    pub flagged: usize,
}

/// Spearman correlation of `H(Y|X)` with each median diagnostic across levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCorrelation {
    pub regime: Regime,
    pub gap: Option<f64>,
    pub trace_f: Option<f64>,
    pub cmi_l1: Option<f64>,
    pub cmi_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSweep {
    pub reports: Vec<GapReport>,
    pub rows: Vec<GapSweepRow>,
    pub correlations: Vec<RegimeCorrelation>,
}

impl GapSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(GapReport::CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

fn finite_median(v: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    median(&xs)
}

/// Every `(level, regime, seed)` cell of an entropy sweep. Level `i` mixes
/// the expert (and the pretraining expert) with the uniform policy at weight
/// `i/(levels−1)`; the last level is exactly uniform.
pub fn sweep_entropy_gap(
    task: &ToyTask,
    pretrain: Option<&ToyTask>,
    cfg: &GapSweepConfig,
) -> Result<GapSweep> {
    if cfg.levels < 2 || cfg.regimes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("need ≥ 2 levels, a regime and a seed".into()));
    }
    let levels = (0..cfg.levels)
        .map(|i| {
            let w = mixing_weight(i, cfg.levels);
            let t = task.with_expert(task.expert().mixed_with_uniform(w)?)?;
            let p = pretrain
                .map(|p| p.with_expert(p.expert().mixed_with_uniform(w)?))
                .transpose()?;
            Ok((t, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, Regime, u64)> = (0..cfg.levels)
        .flat_map(|l| {
            cfg.regimes
                .iter()
                .flat_map(move |&r| cfg.seeds.iter().map(move |&s| (l, r, s)))
        })
        .collect();
    let reports = cells
        .par_iter()
        .map(|&(l, regime, seed)| {
            let (t, p) = &levels[l];
            let mut r = run_regime(t, p.as_ref(), regime, cfg.n, &cfg.model, seed)?;
            r.level = l;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for l in 0..cfg.levels {
        for &regime in &cfg.regimes {
            let mine: Vec<&GapReport> = reports
                .iter()
                .filter(|r| r.level == l && r.regime == regime)
                .collect();
            let cmi = |i: usize| {
                finite_median(mine.iter().map(|r| r.cmi.get(i).copied().unwrap_or(f64::NAN)))
            };
            rows.push(GapSweepRow {
                level: l,
                h_nats: cond_entropy(levels[l].0.expert())?,
                regime,
                gap_median: finite_median(mine.iter().map(|r| r.gap)),
                trace_f_median: finite_median(mine.iter().map(|r| r.trace_f)),
                cmi_l1_median: cmi(0),
                cmi_l2_median: cmi(1),
                flagged: mine.iter().filter(|r| !r.flags.is_empty()).count(),
            });
        }
    }
    let correlations = cfg
        .regimes
        .iter()
        .map(|&regime| {
            let mine: Vec<&GapSweepRow> = rows.iter().filter(|r| r.regime == regime).collect();
            let h: Vec<f64> = mine.iter().map(|r| r.h_nats).collect();
            let corr = |f: fn(&GapSweepRow) -> f64| {
                let v: Vec<f64> = mine.iter().map(|r| f(r)).collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return None;
                }
                spearman(&h, &v).ok().filter(|c| c.is_finite())
            };
            RegimeCorrelation {
                regime,
                gap: corr(|r| r.gap_median),
                trace_f: corr(|r| r.trace_f_median),
                cmi_l1: corr(|r| r.cmi_l1_median),
                cmi_l2: corr(|r| r.cmi_l2_median),
            }
        })
        .collect();
    Ok(GapSweep {
        reports,
        rows,
        correlations,
    })
}
