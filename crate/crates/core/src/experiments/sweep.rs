//! One training run per weight-decay coefficient, scored on a fixed
//! evaluation subset.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::metrics::{stage_metrics, StageMetrics};
use crate::network::{accuracy, data_eval_split, train_with, weight_decay_energy, ArchKind, Architecture, Network, TrainConfig, TrainLog};
use crate::numerics::Rng;
use crate::parallel::Exec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// Training hit a numeric failure; metrics are absent.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub arch: ArchKind,
    pub gamma: f64,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub final_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub weight_energy: Option<f64>,
    pub stages: Vec<StageMetrics>,
}

impl SweepRow {
    fn failed(arch: ArchKind, gamma: f64, err: &Error) -> Self {
        SweepRow {
            arch,
            gamma,
            status: RowStatus::Failed,
            message: Some(err.to_string()),
            final_loss: None,
            train_acc: None,
            test_acc: None,
            weight_energy: None,
            stages: Vec::new(),
        }
    }
}

/// A sweep row together with the model and log that produced it.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub row: SweepRow,
    pub model: Option<Network>,
    pub log: TrainLog,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn rows_for(&self, arch: ArchKind) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.arch == arch)
    }
}

fn sorted_gammas(gammas: &[f64]) -> Result<Vec<f64>> {
    if gammas.is_empty() {
        return Err(Error::Empty("gamma grid"));
    }
    if let Some(&g) = gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Range {
            name: "gamma",
            value: g,
            range: "[0, inf)",
        });
    }
    let mut out = gammas.to_vec();
    out.sort_by(f64::total_cmp);
    if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config {
            path: "gammas".to_string(),
            message: format!("duplicate value {}", w[0]),
        });
    }
    Ok(out)
}

fn run_one(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<SweepRun> {
    let init = Network::init(arch, &mut Rng::new(cfg.seed))?;
    let (model, log) = match train_with(&init, data, cfg, exec) {
        Ok(out) => out,
        Err(e) if e.is_numeric() => {
            return Ok(SweepRun {
                row: SweepRow::failed(arch.kind, cfg.gamma, &e),
                model: None,
                log: TrainLog::default(),
            })
        }
        Err(e) => return Err(e),
    };
    let eval = data_eval_split(data).head(cfg.ot_subsample);
    let row = SweepRow {
        arch: arch.kind,
        gamma: cfg.gamma,
        status: RowStatus::Ok,
        message: None,
        final_loss: log.epochs.last().map(|e| e.loss),
        train_acc: Some(accuracy(&model, &data.train, exec)?),
        test_acc: Some(accuracy(&model, &data.test, exec)?),
        weight_energy: Some(weight_decay_energy(&model)),
        stages: stage_metrics(&model, &eval, exec)?,
    };
    Ok(SweepRun {
        row,
        model: Some(model),
        log,
    })
}

/// Trains `arch` once per gamma, every run starting from the same seeded
/// initialization, and returns the runs ordered by gamma. A run that fails
/// numerically yields a [`RowStatus::Failed`] row; the others still run.
pub fn gamma_sweep_runs(arch: &Architecture, data: &Dataset, gammas: &[f64], cfg: &TrainConfig, exec: Exec) -> Result<Vec<SweepRun>> {
    arch.validate()?;
    let gammas = sorted_gammas(gammas)?;
    exec.map(gammas.len(), |i| {
        let cfg = TrainConfig {
            gamma: gammas[i],
            ..cfg.clone()
        };
        run_one(arch, data, &cfg, exec)
    })
    .into_iter()
    .collect()
}

pub fn gamma_sweep(arch: &Architecture, data: &Dataset, gammas: &[f64], cfg: &TrainConfig) -> Result<SweepReport> {
    Ok(SweepReport {
        rows: gamma_sweep_runs(arch, data, gammas, cfg, Exec::default())?.into_iter().map(|r| r.row).collect(),
    })
}
