//! Fixed-budget first-order training loops.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{apply_mask, FreezeMask, ModelState};
use crate::dist::CondTable;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// L2 penalty `(wd/2)‖θ‖²` added to the objective gradient only.
    #[serde(default)]
    pub weight_decay: f64,
    /// `None` trains on the full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 0.01,
            weight_decay: 0.0,
            batch_size: None,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Objective value (without the L2 term) at the last evaluated step.
    pub final_loss: f64,
    pub diverged: bool,
    pub steps_run: usize,
}

/// Run `cfg.steps` optimizer steps. `lr_scale[l]` multiplies the learning
/// rate of affine layer `l`; a zero scale leaves that layer's parameters
/// untouched bit for bit. `objective` returns the loss and gradient at the
/// current parameters.
pub fn train<F>(
    model: &mut ModelState,
    cfg: &TrainConfig,
    lr_scale: &[f64],
    mut objective: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelState) -> Result<(f64, Vec<f64>)>,
{
    if lr_scale.len() != model.layer_offsets().len() {
        return Err(Error::Argument(format!(
            "{} learning-rate scales for {} layers",
            lr_scale.len(),
            model.layer_offsets().len()
        )));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} must be positive", cfg.lr)));
    }
    let k = model.k();
    let mut per_param = vec![0.0; k];
    for (range, s) in model.layer_offsets().iter().zip(lr_scale) {
        per_param[range.clone()].iter_mut().for_each(|v| *v = *s);
    }
    let frozen = FreezeMask(lr_scale.iter().map(|s| *s == 0.0).collect());

    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
    let mut m1 = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        let (loss, mut grad) = objective(model)?;
        last_loss = loss;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Ok(TrainOutcome {
                final_loss: loss,
                diverged: true,
                steps_run: step,
            });
        }
        if cfg.weight_decay > 0.0 {
            for (g, t) in grad.iter_mut().zip(model.theta()) {
                *g += cfg.weight_decay * t;
            }
        }
        apply_mask(model, &frozen, &mut grad)?;
        let theta = model.theta_mut();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for j in 0..k {
                    if per_param[j] != 0.0 {
                        theta[j] -= cfg.lr * per_param[j] * grad[j];
                    }
                }
            }
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for j in 0..k {
                    if per_param[j] == 0.0 {
                        continue;
                    }
                    m1[j] = b1 * m1[j] + (1.0 - b1) * grad[j];
                    m2[j] = b2 * m2[j] + (1.0 - b2) * grad[j] * grad[j];
                    let mhat = m1[j] / c1;
                    let vhat = m2[j] / c2;
                    theta[j] -= cfg.lr * per_param[j] * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Ok(TrainOutcome {
                final_loss: f64::NAN,
                diverged: true,
                steps_run: step + 1,
            });
        }
    }
    let final_loss = match objective(model) {
        Ok((l, _)) => l,
        Err(_) => last_loss,
    };
    Ok(TrainOutcome {
        final_loss,
        diverged: !final_loss.is_finite(),
        steps_run: cfg.steps,
    })
}

/// Mean clipped NLL over a dataset, optionally on a random minibatch drawn
/// without replacement from `rng` on each call.
pub struct DatasetObjective<'a> {
    pub data: &'a [(Vec<f64>, usize)],
    pub batch_size: Option<usize>,
    pub rng: RngStream,
}

impl DatasetObjective<'_> {
    pub fn eval(&mut self, m: &ModelState) -> Result<(f64, Vec<f64>)> {
        match self.batch_size {
            Some(b) if b < self.data.len() => {
                let idx = sample(&mut self.rng, self.data.len(), b).into_vec();
                let batch: Vec<(Vec<f64>, usize)> =
                    idx.into_iter().map(|i| self.data[i].clone()).collect();
                super::nll_loss(m, &batch, None)
            }
            _ => super::nll_loss(m, self.data, None),
        }
    }
}

/// Expected clipped NLL under a full table `p(x) p(y|x)`, with `inputs[x]`
/// the feature vector of input `x`.
pub fn table_loss(m: &ModelState, inputs: &[Vec<f64>], t: &CondTable) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != t.nx() {
        return Err(Error::Dimension(format!(
            "{} feature vectors for {} inputs",
            inputs.len(),
            t.nx()
        )));
    }
    if m.outputs() != t.ny() {
        return Err(Error::Dimension(format!(
            "model has {} outputs, table has {} actions",
            m.outputs(),
            t.ny()
        )));
    }
    let mut grad = vec![0.0; m.k()];
    let mut loss = 0.0;
    for (x, input) in inputs.iter().enumerate() {
        let px = t.x_marginal()[x];
        if px == 0.0 {
            continue;
        }
        let w: Vec<f64> = t.row(x).iter().map(|q| px * q).collect();
        loss += m.accumulate_loss(input, &w, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Onehot feature vectors `e_0 … e_{n-1}`.
pub fn onehot_inputs(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        })
        .collect()
}
