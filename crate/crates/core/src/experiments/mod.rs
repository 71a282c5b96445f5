//! Datasets, gamma sweeps, noise robustness and unit elimination.

pub mod ablation;
pub mod dataset;
pub mod metrics;
pub mod noise;
pub mod robustness;
pub mod sweep;

pub use ablation::{unit_elimination_eval, unit_importance};
pub use dataset::{make_dataset, parse_idx_images, parse_idx_labels, Dataset, DatasetSpec, IdxImages, Split};
pub use metrics::{stage_lss, stage_metrics, theorem1_fraction, StageMetrics};
pub use noise::{fgsm_perturb, gaussian_perturb, perturb_split, NoiseConfig, NoiseKind};
pub use robustness::{layer_addresses, layer_name, robustness_sweep, variation_rate, variation_rates, RobustnessReport};
pub use sweep::{gamma_sweep, gamma_sweep_runs, RowStatus, SweepReport, SweepRow, SweepRun};
