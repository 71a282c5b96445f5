//! Per-stage track metrics on a fixed evaluation subset.

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use crate::assignment::{optimal_plan, EmpiricalMeasure};
use crate::geometry::{lss, theorem1_bound, track_distance, Track};
use crate::network::{BatchTrace, Network};
use crate::parallel::Exec;
use crate::{Error, Result, INEQUALITY_SLACK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub width: usize,
    /// Mean LSS over tracks with a defined, finite score.
    pub mean_lss: Option<f64>,
    /// Tracks left out of `mean_lss`.
    pub lss_skipped: usize,
    /// Optimal transport score between the stage input and output clouds.
    pub ots: f64,
    /// W2 between the stage input and output clouds.
    pub w2: f64,
}

fn trace_of(net: &Network, split: &Split) -> Result<BatchTrace> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation subset"));
    }
    let refs: Vec<_> = split.inputs.iter().collect();
    net.forward_batch(&net.batch_of(&refs)?)
}

fn mean_lss(tracks: &[Track], exec: Exec) -> (Option<f64>, usize) {
    let scores = exec.map_slice(tracks, |t| lss(t).ok().filter(|s| s.is_finite()));
    let kept: Vec<f64> = scores.into_iter().flatten().collect();
    let skipped = tracks.len() - kept.len();
    if kept.is_empty() {
        (None, skipped)
    } else {
        (Some(kept.iter().sum::<f64>() / kept.len() as f64), skipped)
    }
}

/// Mean LSS of every stage over the samples of `split`.
pub fn stage_lss(net: &Network, split: &Split, exec: Exec) -> Result<Vec<Option<f64>>> {
    let trace = trace_of(net, split)?;
    Ok((0..net.stages.len()).map(|k| mean_lss(&trace.tracks(k), exec).0).collect())
}

/// LSS, OTS and W2 of every stage. OTS and W2 pair the stage input cloud
/// with the stage output cloud sample by sample.
pub fn stage_metrics(net: &Network, split: &Split, exec: Exec) -> Result<Vec<StageMetrics>> {
    let trace = trace_of(net, split)?;
    let mut out = Vec::with_capacity(net.stages.len());
    for (k, stage) in net.stages.iter().enumerate() {
        let (mean_lss, lss_skipped) = mean_lss(&trace.tracks(k), exec);
        let states = &trace.states[k];
        let input = EmpiricalMeasure::from_rows(&states[0].to_rows())?;
        let output = EmpiricalMeasure::from_rows(&states[states.len() - 1].to_rows())?;
        let plan = optimal_plan(&input, &output)?;
        out.push(StageMetrics {
            stage: k,
            width: stage.width(),
            mean_lss,
            lss_skipped,
            ots: plan.assignment.fixed_points() as f64 / input.len() as f64,
            w2: plan.w2,
        });
    }
    Ok(out)
}

/// Fraction of track pairs whose minimum layerwise distance is at least the
/// separation bound computed from their endpoints. 1 for fewer than two
/// tracks.
pub fn theorem1_fraction(tracks: &[Track], exec: Exec) -> Result<f64> {
    let n = tracks.len();
    if n < 2 {
        return Ok(1.0);
    }
    let per_row = exec.map(n, |p| -> Result<usize> {
        let mut ok = 0;
        for q in p + 1..n {
            let (a, b) = (&tracks[p], &tracks[q]);
            let bound = theorem1_bound(a.first(), b.first(), a.last(), b.last())?;
            if track_distance(a, b)? >= bound - INEQUALITY_SLACK {
                ok += 1;
            }
        }
        Ok(ok)
    });
    let mut satisfied = 0usize;
    for r in per_row {
        satisfied += r?;
    }
    Ok(satisfied as f64 / (n * (n - 1) / 2) as f64)
}
