//! Reverse-mode gradients of the mean batch loss.
//!
//! The batch is cut into fixed chunks of [`CHUNK`] rows that may run in
//! parallel; chunk gradients are then summed in chunk order, so the result
//! does not depend on the executor or thread count.

use serde::{Deserialize, Serialize};

use super::{relu_in_place, Network, Stage};
use crate::numerics::{Matrix, Vector};
use crate::parallel::Exec;
use crate::{Error, Result};

const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    SoftmaxCrossEntropy,
    /// `|f(x) - y|^2` summed over outputs, averaged over the batch.
    MeanSquaredError,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    /// Regression target; only valid with [`Loss::MeanSquaredError`].
    Value(Vector),
}

/// One gradient per weight matrix, in [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Matrix>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.params().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect())
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(1.0, b).expect("gradient shapes match");
        }
    }
}

#[derive(Clone, Debug)]
pub struct Backward {
    /// Mean loss over the batch (without the weight penalty).
    pub loss: f64,
    pub grads: Gradients,
    /// Gradient of the mean loss with respect to each input sample.
    pub input_grads: Vec<Vector>,
    /// Row-wise argmax of the logits.
    pub predictions: Vec<usize>,
}

pub fn backward(net: &Network, inputs: &[Vector], targets: &[Target], loss: Loss) -> Result<Backward> {
    backward_with(net, inputs, targets, loss, Exec::default())
}

pub fn backward_with(net: &Network, inputs: &[Vector], targets: &[Target], loss: Loss, exec: Exec) -> Result<Backward> {
    if inputs.len() != targets.len() {
        return Err(Error::dim("batch targets", inputs.len(), targets.len()));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let out_dim = net.output_dim();
    for t in targets {
        match (t, loss) {
            (Target::Class(c), _) if *c >= out_dim => {
                return Err(Error::dim("class label", format!("< {out_dim}"), c));
            }
            (Target::Value(v), Loss::MeanSquaredError) if v.dim() != out_dim => {
                return Err(Error::dim("regression target", out_dim, v.dim()));
            }
            (Target::Value(_), Loss::SoftmaxCrossEntropy) => {
                return Err(Error::dim("cross-entropy target", "class index", "vector"));
            }
            _ => {}
        }
    }
    let d = net.input_dim();
    if let Some(x) = inputs.iter().find(|x| x.dim() != d) {
        return Err(Error::dim("network input", d, x.dim()));
    }

    let scale = 1.0 / inputs.len() as f64;
    let n_chunks = inputs.len().div_ceil(CHUNK);
    let parts = exec.map(n_chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(inputs.len());
        chunk_backward(net, &inputs[lo..hi], &targets[lo..hi], loss, scale)
    });

    let mut parts = parts.into_iter();
    let first = parts.next().expect("at least one chunk");
    let mut total_loss = first.loss_sum;
    let mut grads = first.grads;
    let mut input_grads = first.input_grads;
    let mut predictions = first.predictions;
    for p in parts {
        total_loss += p.loss_sum;
        grads.accumulate(&p.grads);
        input_grads.extend(p.input_grads);
        predictions.extend(p.predictions);
    }
    Ok(Backward {
        loss: total_loss * scale,
        grads,
        input_grads,
        predictions,
    })
}

struct ChunkResult {
    loss_sum: f64,
    grads: Gradients,
    input_grads: Vec<Vector>,
    predictions: Vec<usize>,
}

enum StageCache {
    /// States `A_0..A_n` of a plain stage.
    Plain(Vec<Matrix>),
    /// Per block: input `X`, `σ(X)`, and hidden `σ(W1 σ(X))`.
    Residual(Vec<(Matrix, Matrix, Matrix)>),
}

fn chunk_backward(net: &Network, inputs: &[Vector], targets: &[Target], loss: Loss, scale: f64) -> ChunkResult {
    let refs: Vec<&Vector> = inputs.iter().collect();
    let x0 = net.batch_of(&refs).expect("inputs validated");

    // Forward with caches.
    let mut cur = match &net.stem {
        Some(s) => x0.matmul_nt(&s.p).expect("validated"),
        None => x0.clone(),
    };
    let mut caches = Vec::with_capacity(net.stages.len());
    let mut stage_outputs = Vec::with_capacity(net.stages.len());
    for (k, stage) in net.stages.iter().enumerate() {
        match stage {
            Stage::Plain(p) => {
                let mut states = vec![cur];
                for (l, w) in p.layers.iter().enumerate() {
                    let mut z = states[l].matmul_nt(w).expect("validated");
                    if l + 1 < p.layers.len() {
                        relu_in_place(&mut z);
                    }
                    states.push(z);
                }
                cur = states.last().expect("nonempty").clone();
                caches.push(StageCache::Plain(states));
            }
            Stage::Residual(r) => {
                let mut blocks = Vec::with_capacity(r.blocks.len());
                for b in &r.blocks {
                    let mut act = cur.clone();
                    relu_in_place(&mut act);
                    let mut hidden = act.matmul_nt(&b.w1).expect("validated");
                    relu_in_place(&mut hidden);
                    let mut out = hidden.matmul_nt(&b.w2).expect("validated");
                    out.add_scaled(1.0, &cur).expect("validated");
                    blocks.push((cur, act, hidden));
                    cur = out;
                }
                caches.push(StageCache::Residual(blocks));
            }
        }
        stage_outputs.push(cur.clone());
        if let Some(c) = net.changers.get(k) {
            cur = cur.matmul_nt(&c.p).expect("validated");
        }
    }
    let head_in = cur;
    let logits = head_in.matmul_nt(&net.head).expect("validated");

    // Loss and its gradient, already divided by the full batch size.
    let rows = logits.rows();
    let classes = logits.cols();
    let mut dlogits = Matrix::zeros(rows, classes);
    let mut loss_sum = 0.0;
    for (i, target) in targets.iter().enumerate().take(rows) {
        let z = logits.row(i);
        match loss {
            Loss::SoftmaxCrossEntropy => {
                let Target::Class(y) = *target else { unreachable!("validated") };
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                loss_sum += sum.ln() + max - z[y];
                let g = dlogits.row_mut(i);
                for j in 0..classes {
                    let p = exps[j] / sum;
                    g[j] = scale * (p - if j == y { 1.0 } else { 0.0 });
                }
            }
            Loss::MeanSquaredError => {
                let target: Vec<f64> = match target {
                    Target::Class(y) => (0..classes).map(|j| if j == *y { 1.0 } else { 0.0 }).collect(),
                    Target::Value(v) => v.as_slice().to_vec(),
                };
                let g = dlogits.row_mut(i);
                for j in 0..classes {
                    let r = z[j] - target[j];
                    loss_sum += r * r;
                    g[j] = scale * 2.0 * r;
                }
            }
        }
    }
    let predictions = super::argmax_rows(&logits);

    // Backward.
    let mut rev: Vec<Matrix> = Vec::new();
    rev.push(dlogits.matmul_tn(&head_in).expect("validated"));
    let mut grad = dlogits.matmul(&net.head).expect("validated");
    for k in (0..net.stages.len()).rev() {
        if let Some(c) = net.changers.get(k) {
            rev.push(grad.matmul_tn(&stage_outputs[k]).expect("validated"));
            grad = grad.matmul(&c.p).expect("validated");
        }
        match (&net.stages[k], &caches[k]) {
            (Stage::Plain(p), StageCache::Plain(states)) => {
                let n = p.layers.len();
                for l in (0..n).rev() {
                    if l + 1 < n {
                        mask_by_positive(&mut grad, &states[l + 1]);
                    }
                    rev.push(grad.matmul_tn(&states[l]).expect("validated"));
                    grad = grad.matmul(&p.layers[l]).expect("validated");
                }
            }
            (Stage::Residual(r), StageCache::Residual(blocks)) => {
                for (b, (input, act, hidden)) in r.blocks.iter().zip(blocks).rev() {
                    rev.push(grad.matmul_tn(hidden).expect("validated"));
                    let mut dh = grad.matmul(&b.w2).expect("validated");
                    mask_by_positive(&mut dh, hidden);
                    rev.push(dh.matmul_tn(act).expect("validated"));
                    let mut dr = dh.matmul(&b.w1).expect("validated");
                    mask_by_positive(&mut dr, input);
                    grad.add_scaled(1.0, &dr).expect("validated");
                }
            }
            _ => unreachable!("cache built from the same stage"),
        }
    }
    if let Some(s) = &net.stem {
        rev.push(grad.matmul_tn(&x0).expect("validated"));
        grad = grad.matmul(&s.p).expect("validated");
    }

    // Pushed head-first; per block (w2, w1), which reverses to canonical order.
    rev.reverse();

    let input_grads = (0..grad.rows()).map(|i| Vector::from_raw(grad.row(i).to_vec())).collect();
    ChunkResult {
        loss_sum,
        grads: Gradients(rev),
        input_grads,
        predictions,
    }
}

/// Zeroes `grad` wherever `activation` is not strictly positive (the ReLU
/// subgradient at 0 is taken to be 0).
fn mask_by_positive(grad: &mut Matrix, activation: &Matrix) {
    for (g, a) in grad.as_mut_slice().iter_mut().zip(activation.as_slice()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
