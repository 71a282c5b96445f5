//! Unit elimination: undo a layer's effect on its most important units.

use super::dataset::{Dataset, Split};
use crate::network::{argmax_rows, Network, StateRef};
use crate::numerics::Matrix;
use crate::{Error, Result};

fn batch(net: &Network, split: &Split) -> Result<Matrix> {
    let refs: Vec<_> = split.inputs.iter().collect();
    net.batch_of(&refs)
}

fn check_state(net: &Network, at: StateRef) -> Result<usize> {
    let stage = net.stages.get(at.stage).ok_or_else(|| Error::dim("stage index", net.stages.len(), at.stage))?;
    if at.index == 0 || at.index > stage.depth() {
        return Err(Error::Range {
            name: "state index",
            value: at.index as f64,
            range: "[1, stage depth]",
        });
    }
    Ok(stage.width())
}

/// For each class, the `k` units of state `at` with the largest mean
/// absolute activation over that class's training samples. Ties go to the
/// lower unit index. Classes without samples get no units.
pub fn unit_importance(net: &Network, train: &Split, n_classes: usize, at: StateRef, k: usize) -> Result<Vec<Vec<usize>>> {
    let width = check_state(net, at)?;
    if k > width {
        return Err(Error::Range {
            name: "k",
            value: k as f64,
            range: "[0, width]",
        });
    }
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let trace = net.forward_batch(&batch(net, train)?)?;
    let states = trace.state(at);
    let mut sums = vec![vec![0.0; width]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (i, &y) in train.labels.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(states.row(i)) {
            *s += v.abs();
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            if c == 0 {
                return Vec::new();
            }
            let mut units: Vec<usize> = (0..width).collect();
            units.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            units.truncate(k);
            units
        })
        .collect())
}

/// Test accuracy after replacing, for each test sample, the `k` most
/// important units of its predicted class at state `at` with the same units
/// of the previous state, then finishing the forward pass.
pub fn unit_elimination_eval(net: &Network, data: &Dataset, at: StateRef, k: usize) -> Result<f64> {
    let masks = unit_importance(net, &data.train, data.n_classes, at, k)?;
    let test = &data.test;
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let trace = net.forward_batch(&batch(net, test)?)?;
    let predicted = argmax_rows(&trace.output);
    let prev = trace.state(StateRef {
        stage: at.stage,
        index: at.index - 1,
    });
    let mut edited = trace.state(at).clone();
    for (i, &c) in predicted.iter().enumerate() {
        if let Some(mask) = masks.get(c) {
            for &u in mask {
                edited[(i, u)] = prev[(i, u)];
            }
        }
    }
    let out = net.forward_from(at, &edited)?;
    let correct = argmax_rows(&out).iter().zip(&test.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test.len() as f64)
}
