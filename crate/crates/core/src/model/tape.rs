//! Vector-level reverse-mode tape.
//!
//! The tape records three primitives: affine maps whose weights live in a
//! flat parameter vector, elementwise nonlinearities, and log-softmax. A
//! backward pass from a seed on any node accumulates the gradient with
//! respect to the flat parameters.

use super::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Location of one affine map inside the flat parameter vector: a row-major
/// `out × inp` weight block at `w`, followed by an optional bias at `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineSlot {
    pub w: usize,
    pub b: Option<usize>,
    pub inp: usize,
    pub out: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine { src: NodeId, slot: AffineSlot },
    Act { src: NodeId, act: Activation },
    LogSoftmax { src: NodeId },
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }

    pub fn input(&mut self, x: &[f64]) -> NodeId {
        self.push(Op::Input, x.to_vec())
    }

    pub fn affine(&mut self, src: NodeId, slot: AffineSlot, theta: &[f64]) -> NodeId {
        let x = &self.values[src.0];
        debug_assert_eq!(x.len(), slot.inp);
        let out: Vec<f64> = (0..slot.out)
            .map(|i| {
                let row = &theta[slot.w + i * slot.inp..slot.w + (i + 1) * slot.inp];
                let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                s + slot.b.map_or(0.0, |b| theta[b + i])
            })
            .collect();
        self.push(Op::Affine { src, slot }, out)
    }

    pub fn activate(&mut self, src: NodeId, act: Activation) -> NodeId {
        let out = self.values[src.0].iter().map(|&v| act.apply(v)).collect();
        self.push(Op::Act { src, act }, out)
    }

    pub fn log_softmax(&mut self, src: NodeId) -> NodeId {
        let out = log_softmax(&self.values[src.0]);
        self.push(Op::LogSoftmax { src }, out)
    }

    /// Propagate `seed` (the adjoint of node `from`) back through the tape,
    /// adding parameter adjoints into `grad`.
    pub fn backward(&self, from: NodeId, seed: &[f64], theta: &[f64], grad: &mut [f64]) {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; from.0 + 1];
        adj[from.0] = Some(seed.to_vec());
        for idx in (0..=from.0).rev() {
            let Some(a) = adj[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Input => {}
                Op::Affine { src, slot } => {
                    let x = &self.values[src.0];
                    for i in 0..slot.out {
                        let ai = a[i];
                        if ai == 0.0 {
                            continue;
                        }
                        let row = &mut grad[slot.w + i * slot.inp..slot.w + (i + 1) * slot.inp];
                        for (g, xv) in row.iter_mut().zip(x) {
                            *g += ai * xv;
                        }
                        if let Some(b) = slot.b {
                            grad[b + i] += ai;
                        }
                    }
                    if !matches!(self.ops[src.0], Op::Input) {
                        let mut back = vec![0.0; slot.inp];
                        for i in 0..slot.out {
                            let ai = a[i];
                            if ai == 0.0 {
                                continue;
                            }
                            let row = &theta[slot.w + i * slot.inp..slot.w + (i + 1) * slot.inp];
                            for (bk, w) in back.iter_mut().zip(row) {
                                *bk += ai * w;
                            }
                        }
                        accumulate(&mut adj[src.0], back);
                    }
                }
                Op::Act { src, act } => {
                    let pre = &self.values[src.0];
                    let back = a
                        .iter()
                        .zip(pre)
                        .map(|(ai, &z)| ai * act.derivative(z))
                        .collect();
                    accumulate(&mut adj[src.0], back);
                }
                Op::LogSoftmax { src } => {
                    let out = &self.values[idx];
                    let total: f64 = a.iter().sum();
                    let back = a
                        .iter()
                        .zip(out)
                        .map(|(ai, lp)| ai - lp.exp() * total)
                        .collect();
                    accumulate(&mut adj[src.0], back);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, v: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(v).for_each(|(e, x)| *e += x),
        None => *slot = Some(v),
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}
