//! Small softmax-headed policies `p_θ(y|x)` with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector `θ`. Layer `l` owns a contiguous
//! slice holding its row-major weight block followed by its bias (when the
//! architecture has biases). The intermediate representation `Z_l` of a
//! hidden layer is its post-activation output; the last representation is
//! the vector of output log-probabilities.

mod tape;
pub mod train;

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use tape::{log_softmax, AffineSlot, NodeId, Tape};

/// Upper clip on the per-sample loss, in nats.
pub const LOSS_MAX: f64 = 20.0;
/// Probability floor applied when evaluating log-likelihood losses.
pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `ln(1 + eˣ)`, a C^∞ stand-in for ReLU.
    SoftRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::SoftRelu => softplus(z),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::SoftRelu => sigmoid(z),
            Activation::Identity => 1.0,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

/// Network shape: input width, hidden layers, number of output classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<HiddenLayer>,
    pub outputs: usize,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl Arch {
    pub fn mlp(input_dim: usize, hidden: &[usize], activation: Activation, outputs: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden
                .iter()
                .map(|&width| HiddenLayer { width, activation })
                .collect(),
            outputs,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// Number of affine layers (hidden layers plus the output layer).
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    fn fan_in_out(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth());
        let mut inp = self.input_dim;
        for h in &self.hidden {
            dims.push((inp, h.width));
            inp = h.width;
        }
        dims.push((inp, self.outputs));
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 && !self.bias {
            return Err(Error::Argument("input width 0 needs biases".into()));
        }
        if self.outputs < 2 {
            return Err(Error::Argument("need at least two output classes".into()));
        }
        if self.hidden.iter().any(|h| h.width == 0) {
            return Err(Error::Argument("hidden layer of width 0".into()));
        }
        Ok(())
    }

    /// Parameter ranges and affine slots, layer by layer.
    fn layout(&self) -> (Vec<Range<usize>>, Vec<AffineSlot>) {
        let mut offsets = Vec::new();
        let mut slots = Vec::new();
        let mut at = 0;
        for (inp, out) in self.fan_in_out() {
            let start = at;
            let w = at;
            at += inp * out;
            let b = if self.bias {
                let b = at;
                at += out;
                Some(b)
            } else {
                None
            };
            offsets.push(start..at);
            slots.push(AffineSlot { w, b, inp, out });
        }
        (offsets, slots)
    }

    pub fn param_count(&self) -> usize {
        self.layout().0.last().map_or(0, |r| r.end)
    }
}

/// Parameter vector plus architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ModelState {
    arch: Arch,
    theta: Vec<f64>,
    layer_offsets: Vec<Range<usize>>,
    slots: Vec<AffineSlot>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    arch: Arch,
    theta: Vec<f64>,
}

impl TryFrom<Checkpoint> for ModelState {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        ModelState::from_theta(c.arch, c.theta)
    }
}

impl From<ModelState> for Checkpoint {
    fn from(m: ModelState) -> Self {
        Checkpoint {
            arch: m.arch,
            theta: m.theta,
        }
    }
}

/// Everything computed by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `Z_1 … Z_{L+1}`; the last entry holds the output log-probabilities.
    pub layers: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn log_probs(&self) -> &[f64] {
        self.layers.last().expect("trace has an output layer")
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs().iter().map(|v| v.exp()).collect()
    }

    /// Representation at layer `l` (1-based, `l = depth` is the output).
    pub fn layer(&self, l: usize) -> Option<&[f64]> {
        l.checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .map(Vec::as_slice)
    }
}

/// Per-layer freeze flags, one per affine layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask(pub Vec<bool>);

impl FreezeMask {
    pub fn none(arch: &Arch) -> Self {
        Self(vec![false; arch.depth()])
    }

    /// Freeze the first `n` affine layers (the encoder).
    pub fn encoder(arch: &Arch, n: usize) -> Self {
        Self((0..arch.depth()).map(|l| l < n).collect())
    }
}

impl ModelState {
    pub fn zeros(arch: Arch) -> Result<Self> {
        let k = arch.param_count();
        Self::from_theta(arch, vec![0.0; k])
    }

    pub fn from_theta(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let (layer_offsets, slots) = arch.layout();
        let k = layer_offsets.last().map_or(0, |r| r.end);
        if theta.len() != k {
            return Err(Error::Dimension(format!(
                "architecture has {k} parameters, theta has {}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite parameter".into()));
        }
        Ok(Self {
            arch,
            theta,
            layer_offsets,
            slots,
        })
    }

    /// Fan-in scaled Gaussian weights (`std = 1/√fan_in`), zero biases.
    pub fn init(arch: Arch, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        for slot in m.slots.clone() {
            let std = 1.0 / (slot.inp.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut m.theta[slot.w..slot.w + slot.inp * slot.out] {
                *v = normal.sample(rng);
            }
        }
        Ok(m)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension("theta length changed".into()));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_theta(theta)?;
        Ok(m)
    }

    /// `K`, the number of parameters.
    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn layer_offsets(&self) -> &[Range<usize>] {
        &self.layer_offsets
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Record the forward computation on a fresh tape and return it along
    /// with the ids of each representation node.
    pub fn record(&self, x: &[f64]) -> Result<(Tape, Vec<NodeId>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut cur = tape.input(x);
        let mut reps = Vec::with_capacity(self.arch.depth());
        for (l, slot) in self.slots.iter().enumerate() {
            cur = tape.affine(cur, *slot, &self.theta);
            if let Some(h) = self.arch.hidden.get(l) {
                cur = tape.activate(cur, h.activation);
            } else {
                cur = tape.log_softmax(cur);
            }
            reps.push(cur);
        }
        Ok((tape, reps))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let (tape, reps) = self.record(x)?;
        let values = tape.into_values();
        Ok(ForwardTrace {
            layers: reps.iter().map(|id| values[id.0].clone()).collect(),
        })
    }

    pub fn log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (tape, reps) = self.record(x)?;
        Ok(tape.value(*reps.last().unwrap()).to_vec())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.arch.outputs {
            return Err(Error::Argument(format!(
                "label {y} outside the {}-symbol output alphabet",
                self.arch.outputs
            )));
        }
        Ok(())
    }

    /// `∇_θ log p_θ(y|x)`.
    pub fn grad_logp(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let (tape, reps) = self.record(x)?;
        let out = *reps.last().unwrap();
        let mut seed = vec![0.0; self.arch.outputs];
        seed[y] = 1.0;
        let mut grad = vec![0.0; self.k()];
        tape.backward(out, &seed, &self.theta, &mut grad);
        Ok(grad)
    }

    /// Scores `∇_θ log p_θ(y|x)` for every `y` together with `p_θ(·|x)`,
    /// from a single forward pass.
    pub fn all_scores(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (tape, reps) = self.record(x)?;
        let out = *reps.last().unwrap();
        let probs: Vec<f64> = tape.value(out).iter().map(|v| v.exp()).collect();
        let scores = (0..self.arch.outputs)
            .map(|y| {
                let mut seed = vec![0.0; self.arch.outputs];
                seed[y] = 1.0;
                let mut grad = vec![0.0; self.k()];
                tape.backward(out, &seed, &self.theta, &mut grad);
                grad
            })
            .collect();
        Ok((probs, scores))
    }

    /// Add `Σ_y w_y ∇ℓ(x, y)` into `grad` and return `Σ_y w_y ℓ(x, y)`,
    /// where `ℓ` is the clipped negative log-likelihood.
    pub fn accumulate_loss(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (tape, reps) = self.record(x)?;
        let out = *reps.last().unwrap();
        let lp = tape.value(out);
        let mut seed = vec![0.0; self.arch.outputs];
        let mut loss = 0.0;
        let mut any = false;
        for (y, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (l, active) = clipped_nll(lp[y]);
            loss += w * l;
            if active {
                seed[y] = -w;
                any = true;
            }
        }
        if any {
            tape.backward(out, &seed, &self.theta, grad);
        }
        Ok(loss)
    }
}

/// Clipped per-sample loss for a log-probability, and whether its gradient
/// is live (false once either clip binds).
pub fn clipped_nll(log_p: f64) -> (f64, bool) {
    let floor = PROB_FLOOR.ln();
    let nll = -log_p.max(floor);
    if nll >= LOSS_MAX || log_p < floor {
        (nll.min(LOSS_MAX), false)
    } else {
        (nll, true)
    }
}

/// Clipped loss value only.
pub fn sample_loss(log_p: f64) -> f64 {
    clipped_nll(log_p).0
}

/// Mean clipped NLL over `(x, y)` pairs and its gradient. Slices of frozen
/// layers in the gradient are exactly zero. Accumulation runs in index order.
pub fn nll_loss(
    m: &ModelState,
    dataset: &[(Vec<f64>, usize)],
    mask: Option<&FreezeMask>,
) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let n = dataset.len() as f64;
    let mut grad = vec![0.0; m.k()];
    let mut loss = 0.0;
    let mut weights = vec![0.0; m.outputs()];
    for (x, y) in dataset {
        m.check_label(*y)?;
        weights[*y] = 1.0 / n;
        loss += m.accumulate_loss(x, &weights, &mut grad)?;
        weights[*y] = 0.0;
    }
    if let Some(mask) = mask {
        apply_mask(m, mask, &mut grad)?;
    }
    Ok((loss, grad))
}

pub fn apply_mask(m: &ModelState, mask: &FreezeMask, grad: &mut [f64]) -> Result<()> {
    if mask.0.len() != m.layer_offsets.len() {
        return Err(Error::Argument(format!(
            "mask has {} entries for {} layers",
            mask.0.len(),
            m.layer_offsets.len()
        )));
    }
    for (frozen, range) in mask.0.iter().zip(&m.layer_offsets) {
        if *frozen {
            grad[range.clone()].iter_mut().for_each(|g| *g = 0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(m: &ModelState, x: &[f64], y: usize, j: usize, h: f64) -> f64 {
        let mut p = m.clone();
        p.theta[j] += h;
        let up = p.log_probs(x).unwrap()[y];
        p.theta[j] -= 2.0 * h;
        let down = p.log_probs(x).unwrap()[y];
        (up - down) / (2.0 * h)
    }

    #[test]
    fn zero_weights_give_uniform() {
        let m = ModelState::zeros(Arch::mlp(3, &[4], Activation::Tanh, 5)).unwrap();
        let t = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        for lp in t.log_probs() {
            assert!((lp + 5f64.ln()).abs() < 1e-15);
        }
        assert_eq!(t.layers.len(), 2);
    }

    #[test]
    fn single_layer_logits_are_weight_rows() {
        let arch = Arch::mlp(3, &[], Activation::Identity, 3).without_bias();
        let theta: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let m = ModelState::from_theta(arch, theta).unwrap();
        // onehot(1) selects column 1 of W: logits (0.1, 0.4, 0.7)
        let lp = m.log_probs(&[0.0, 1.0, 0.0]).unwrap();
        let expect = log_softmax(&[0.1, 0.4, 0.7]);
        for (a, b) in lp.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_score_matches_analytic() {
        // input width 0 with biases: logits are θ
        let arch = Arch::mlp(0, &[], Activation::Identity, 4);
        let theta = vec![0.3, -0.2, 1.1, 0.0];
        let m = ModelState::from_theta(arch, theta.clone()).unwrap();
        let p: Vec<f64> = log_softmax(&theta).iter().map(|v| v.exp()).collect();
        for j in 0..4 {
            let g = m.grad_logp(&[], j).unwrap();
            for i in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[i] - (e - p[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(11, 0);
        let arch = Arch::mlp(3, &[5, 4], Activation::SoftRelu, 3);
        let m = ModelState::init(arch, &mut rng).unwrap();
        let x = [0.2, -0.7, 1.3];
        let g = m.grad_logp(&x, 2).unwrap();
        for j in 0..m.k() {
            let fd = central_diff(&m, &x, 2, j, 1e-5);
            assert!((g[j] - fd).abs() <= 1e-4 * g[j].abs().max(fd.abs()).max(1e-3));
        }
    }

    #[test]
    fn stationary_at_confident_fit() {
        let arch = Arch::mlp(0, &[], Activation::Identity, 3);
        let m = ModelState::from_theta(arch, vec![40.0, 0.0, 0.0]).unwrap();
        let g = m.grad_logp(&[], 0).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn loss_examples_and_masking() {
        let arch = Arch::mlp(2, &[3], Activation::Tanh, 4);
        let m = ModelState::zeros(arch.clone()).unwrap();
        let data = vec![(vec![0.1, 0.2], 0), (vec![-1.0, 0.5], 3)];
        let (loss, _) = nll_loss(&m, &data, None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-14);

        let mut rng = RngStream::new(3, 0);
        let m = ModelState::init(arch.clone(), &mut rng).unwrap();
        let mask = FreezeMask::encoder(&arch, 1);
        let (_, g) = nll_loss(&m, &data, Some(&mask)).unwrap();
        assert!(g[m.layer_offsets()[0].clone()].iter().all(|v| *v == 0.0));
        assert!(g[m.layer_offsets()[1].clone()].iter().any(|v| *v != 0.0));

        assert!(matches!(nll_loss(&m, &[], None), Err(Error::Argument(_))));
        assert!(matches!(m.grad_logp(&[0.0, 0.0], 4), Err(Error::Argument(_))));
        assert!(matches!(m.forward(&[0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn perfect_fit_hits_clip_floor() {
        let arch = Arch::mlp(0, &[], Activation::Identity, 2);
        let m = ModelState::from_theta(arch.clone(), vec![60.0, 0.0]).unwrap();
        let (loss, g) = nll_loss(&m, &[(vec![], 0)], None).unwrap();
        assert!(loss < 1e-25);
        assert!(g.iter().all(|v| v.abs() < 1e-25));
        // wrong label: loss capped at LOSS_MAX, gradient dead
        let (loss, g) = nll_loss(&m, &[(vec![], 1)], None).unwrap();
        assert_eq!(loss, LOSS_MAX);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = RngStream::new(5, 1);
        let m = ModelState::init(Arch::mlp(3, &[4], Activation::Tanh, 3), &mut rng).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: ModelState = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        assert!(m
            .theta()
            .iter()
            .zip(back.theta())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
