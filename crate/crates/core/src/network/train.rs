//! Weight-decayed SGD on the penalized objective
//! `mean loss + gamma * sum ||W||_F^2`.

use serde::{Deserialize, Serialize};

use super::backprop::{backward_with, Gradients, Loss, Target};
use super::{argmax_rows, Network};
use crate::experiments::dataset::{Dataset, Split};
use crate::experiments::metrics::stage_lss;
use crate::network::weight_decay_energy;
use crate::parallel::Exec;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight-decay coefficient.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub seed: u64,
    /// Size of the fixed evaluation subset used for LSS, OTS and W2.
    #[serde(default = "default_ot_subsample")]
    pub ot_subsample: usize,
    /// Evaluate and log every this many epochs; the last epoch is always logged.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_lr() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    64
}
fn default_ot_subsample() -> usize {
    512
}
fn default_eval_every() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.0,
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            loss: Loss::default(),
            seed: 0,
            ot_subsample: default_ot_subsample(),
            eval_every: default_eval_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        let bad = |path: &str, message: String| Error::Config {
            path: path.to_string(),
            message,
        };
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(bad("train.gamma", format!("{} must be finite and >= 0", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("train.lr", format!("{} must be finite and > 0", self.lr)));
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return Err(bad(
                "train.batch_size",
                format!("{} must be in [1, {train_size}]", self.batch_size),
            ));
        }
        if self.ot_subsample == 0 {
            return Err(bad("train.ot_subsample", "must be >= 1".to_string()));
        }
        if self.eval_every == 0 {
            return Err(bad("train.eval_every", "must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// `W <- W - lr * (dL/dW + 2 gamma W)` for every weight matrix.
pub fn sgd_step(net: &Network, grads: &Gradients, cfg: &TrainConfig) -> Result<Network> {
    let mut next = net.clone();
    let params = next.params_mut();
    if params.len() != grads.0.len() {
        return Err(Error::dim("gradient count", params.len(), grads.0.len()));
    }
    for (w, g) in params.into_iter().zip(&grads.0) {
        if w.shape() != g.shape() {
            return Err(Error::dim("gradient shape", format!("{:?}", w.shape()), format!("{:?}", g.shape())));
        }
        let decay = 1.0 - 2.0 * cfg.lr * cfg.gamma;
        for (wi, gi) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *wi = decay * *wi - cfg.lr * gi;
        }
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean data loss over the epoch's batches, at the weights each batch saw.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean LSS per stage on the evaluation subset; `None` when every track
    /// is degenerate.
    pub mean_lss: Vec<Option<f64>>,
    pub weight_energy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

/// Fraction of `split` classified correctly.
pub fn accuracy(net: &Network, split: &Split, exec: Exec) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let chunk = 256;
    let n_chunks = split.len().div_ceil(chunk);
    let correct = exec.map(n_chunks, |c| -> Result<usize> {
        let lo = c * chunk;
        let hi = (lo + chunk).min(split.len());
        let refs: Vec<_> = split.inputs[lo..hi].iter().collect();
        let out = net.forward_batch(&net.batch_of(&refs)?)?.output;
        Ok(argmax_rows(&out)
            .iter()
            .zip(&split.labels[lo..hi])
            .filter(|(p, y)| p == y)
            .count())
    });
    let mut total = 0;
    for c in correct {
        total += c?;
    }
    Ok(total as f64 / split.len() as f64)
}

/// Trains `net` with minibatch SGD. Batches follow a permutation of the
/// training set drawn per epoch from the seed; the log records loss,
/// accuracies, per-stage mean LSS and the weight energy after every epoch.
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainLog)> {
    train_with(net, data, cfg, Exec::default())
}

pub fn train_with(net: &Network, data: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<(Network, TrainLog)> {
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((net.clone(), log));
    }
    cfg.validate(data.train.len())?;
    if data.dim() != net.input_dim() {
        return Err(Error::dim("dataset vs network input", net.input_dim(), data.dim()));
    }
    if data.n_classes > net.output_dim() {
        return Err(Error::dim("classes vs network output", net.output_dim(), data.n_classes));
    }

    let mut net = net.clone();
    let mut shuffle_rng = crate::numerics::Rng::new(cfg.seed).substream(1);
    let targets: Vec<Target> = data.train.labels.iter().map(|&y| Target::Class(y)).collect();
    let eval = data_eval_split(data).head(cfg.ot_subsample);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<_> = batch.iter().map(|&i| data.train.inputs[i].clone()).collect();
            let ts: Vec<_> = batch.iter().map(|&i| targets[i].clone()).collect();
            let b = backward_with(&net, &xs, &ts, cfg.loss, exec)?;
            if !b.loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: b.loss });
            }
            loss_sum += b.loss * batch.len() as f64;
            net = sgd_step(&net, &b.grads, cfg)?;
        }
        let loss = loss_sum / data.train.len() as f64;
        if !net.params().iter().all(|m| m.is_finite()) {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss,
            train_acc: accuracy(&net, &data.train, exec)?,
            test_acc: accuracy(&net, &data.test, exec)?,
            mean_lss: stage_lss(&net, &eval, exec)?,
            weight_energy: weight_decay_energy(&net),
        });
    }
    Ok((net, log))
}

/// Split used for per-stage metrics: test when available, else train.
pub fn data_eval_split(data: &Dataset) -> &Split {
    if data.test.is_empty() {
        &data.train
    } else {
        &data.test
    }
}
