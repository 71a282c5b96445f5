//! Accuracy and layerwise variation rate under input noise.

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use super::noise::{perturb_split, NoiseConfig, NoiseKind};
use crate::network::{argmax_rows, BatchTrace, Layer, Loss, Network, StateRef};
use crate::numerics::{sq_dist, Matrix, Vector};
use crate::parallel::Exec;
use crate::{Error, Result, DEGENERATE_NORM};

/// Every inspectable layer in forward order: the raw input, each state of
/// each stage, then the logits.
pub fn layer_addresses(net: &Network) -> Vec<Layer> {
    let mut out = vec![Layer::Input];
    for (stage, s) in net.stages.iter().enumerate() {
        out.extend((0..=s.depth()).map(|index| Layer::State(StateRef { stage, index })));
    }
    out.push(Layer::Output);
    out
}

pub fn layer_name(layer: Layer) -> String {
    match layer {
        Layer::Input => "input".to_string(),
        Layer::State(r) => format!("s{}.{}", r.stage, r.index),
        Layer::Output => "output".to_string(),
    }
}

fn representation<'a>(x: &'a Matrix, trace: &'a BatchTrace, layer: Layer) -> &'a Matrix {
    match layer {
        Layer::Input => x,
        Layer::State(r) => trace.state(r),
        Layer::Output => &trace.output,
    }
}

fn check_layer(net: &Network, layer: Layer) -> Result<()> {
    if let Layer::State(r) = layer {
        let stage = net.stages.get(r.stage).ok_or_else(|| Error::dim("stage index", net.stages.len(), r.stage))?;
        if r.index > stage.depth() {
            return Err(Error::dim("state index", stage.depth(), r.index));
        }
    }
    Ok(())
}

/// Mean of `|x_l - x'_l| / |x_l|` over samples whose clean representation
/// is not degenerate.
fn rate(clean: &Matrix, noisy: &Matrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut kept = 0usize;
    for i in 0..clean.rows() {
        let norm = crate::numerics::dot(clean.row(i), clean.row(i)).sqrt();
        if norm <= DEGENERATE_NORM {
            continue;
        }
        sum += sq_dist(clean.row(i), noisy.row(i)).sqrt() / norm;
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::Empty("variation rate: every clean representation is zero"));
    }
    Ok(sum / kept as f64)
}

struct Traced {
    x: Matrix,
    trace: BatchTrace,
}

fn traced(net: &Network, inputs: &[Vector]) -> Result<Traced> {
    if inputs.is_empty() {
        return Err(Error::Empty("variation rate samples"));
    }
    let refs: Vec<_> = inputs.iter().collect();
    let x = net.batch_of(&refs)?;
    let trace = net.forward_batch(&x)?;
    Ok(Traced { x, trace })
}

/// Variation rate at every layer of [`layer_addresses`] between clean and
/// perturbed inputs, plus the accuracy on the perturbed inputs.
pub fn variation_rates(net: &Network, clean: &Split, noisy: &[Vector]) -> Result<(Vec<f64>, f64)> {
    if noisy.len() != clean.len() {
        return Err(Error::dim("perturbed samples", clean.len(), noisy.len()));
    }
    let a = traced(net, &clean.inputs)?;
    let b = traced(net, noisy)?;
    let rates = layer_addresses(net)
        .into_iter()
        .map(|l| rate(representation(&a.x, &a.trace, l), representation(&b.x, &b.trace, l)))
        .collect::<Result<Vec<_>>>()?;
    let correct = argmax_rows(&b.trace.output).iter().zip(&clean.labels).filter(|(p, y)| p == y).count();
    Ok((rates, correct as f64 / clean.len() as f64))
}

/// Variation rate at `layer` when `split` is perturbed according to `cfg`.
pub fn variation_rate(net: &Network, split: &Split, cfg: &NoiseConfig, layer: Layer, loss: Loss) -> Result<f64> {
    check_layer(net, layer)?;
    let noisy = perturb_split(net, split, cfg, loss, Exec::default())?;
    let a = traced(net, &split.inputs)?;
    let b = traced(net, &noisy)?;
    rate(representation(&a.x, &a.trace, layer), representation(&b.x, &b.trace, layer))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub kind: NoiseKind,
    pub clean_accuracy: f64,
    pub levels: Vec<f64>,
    /// Accuracy at each level.
    pub accuracy: Vec<f64>,
    /// Names of the layers in `vr` columns.
    pub layers: Vec<String>,
    /// `vr[level][layer]`.
    pub vr: Vec<Vec<f64>>,
}

/// Accuracy and variation rates of `net` on `split` at each noise level.
pub fn robustness_sweep(net: &Network, split: &Split, kind: NoiseKind, levels: &[f64], seed: u64, loss: Loss, exec: Exec) -> Result<RobustnessReport> {
    let clean = traced(net, &split.inputs)?;
    let correct = argmax_rows(&clean.trace.output).iter().zip(&split.labels).filter(|(p, y)| p == y).count();
    let mut report = RobustnessReport {
        kind,
        clean_accuracy: correct as f64 / split.len() as f64,
        levels: levels.to_vec(),
        accuracy: Vec::with_capacity(levels.len()),
        layers: layer_addresses(net).into_iter().map(layer_name).collect(),
        vr: Vec::with_capacity(levels.len()),
    };
    for &level in levels {
        let cfg = match kind {
            NoiseKind::Gaussian => NoiseConfig::gaussian(level, seed),
            NoiseKind::Fgsm => NoiseConfig::fgsm(level),
        };
        let noisy = perturb_split(net, split, &cfg, loss, exec)?;
        let (vr, acc) = variation_rates(net, split, &noisy)?;
        report.accuracy.push(acc);
        report.vr.push(vr);
    }
    Ok(report)
}
