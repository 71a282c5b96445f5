//! `gtl`: train plain and residual networks, sweep weight decay, and score
//! how closely their layerwise tracks follow Wasserstein geodesics.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtl::experiments::{
    gamma_sweep_runs, make_dataset, robustness_sweep, stage_metrics, theorem1_fraction, unit_elimination_eval, Dataset, NoiseKind,
    RowStatus, SweepReport,
};
use gtl::io::{
    ablation_csv, load_checkpoint, metrics_csv, plot_series, robustness_csv, save_checkpoint, save_tracks, sweep_csv, train_log_csv,
    write_atomic, Checkpoint, MetricsReport, ReportFormat, RunConfig, StageReport, TrackFile, SCHEMA_VERSION,
};
use gtl::network::{data_eval_split, train_with, Network, StateRef};
use gtl::parallel::Exec;
use gtl::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gtl", version, about = "Geodesic track laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON, see schemas/run_config.schema.json).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `train.seed` in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train` or `sweep`.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Number of evaluation samples used for tracks and transport metrics.
    #[arg(long, value_name = "N")]
    ot_subsample: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Noise {
    Gaussian,
    Fgsm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every architecture in the config; write checkpoints and logs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Per-stage track metrics of a checkpoint. With no metric flag, all
    /// metrics are reported.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        lss: bool,
        #[arg(long)]
        ots: bool,
        #[arg(long)]
        w2: bool,
        /// Fraction of track pairs meeting the geodesic separation bound.
        #[arg(long)]
        theorem1: bool,
    },
    /// One training run per gamma in the config grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N")]
        ot_subsample: Option<usize>,
    },
    /// Accuracy and per-layer variation rate under input noise.
    Robustness {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        noise: Noise,
        /// Comma-separated noise levels; defaults to the config grid.
        #[arg(long, value_delimiter = ',', value_name = "L,..")]
        levels: Option<Vec<f64>>,
    },
    /// Accuracy after overwriting the most important units of one state
    /// with the previous state.
    AblateUnits {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        stage: usize,
        /// State index inside the stage (>= 1); defaults to the last state.
        #[arg(long)]
        index: Option<usize>,
        /// Comma-separated unit counts; defaults to 0, w/8, .., w.
        #[arg(long, value_delimiter = ',', value_name = "K,..")]
        k: Option<Vec<usize>>,
    },
    /// Track files.
    Tracks {
        #[command(subcommand)]
        command: TracksCommand,
    },
}

#[derive(Subcommand, Debug)]
enum TracksCommand {
    /// Write the tracks of the evaluation subset, one file per stage.
    Export {
        #[command(flatten)]
        model: ModelArgs,
        /// Only this stage; all stages by default.
        #[arg(long)]
        stage: Option<usize>,
    },
}

struct Run {
    cfg: RunConfig,
    data: Dataset,
    out: PathBuf,
}

impl Run {
    fn load(common: &Common) -> Result<Self> {
        let mut cfg = RunConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.train.seed = seed;
        }
        let out = common.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let data = make_dataset(&cfg.dataset, cfg.train.seed)?;
        cfg.train.validate(data.train.len())?;
        Ok(Run { cfg, data, out })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        write_atomic(&self.out.join(name), contents.as_bytes())
    }

    /// Writes `value` as pretty JSON with a leading `schema_version`.
    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("schema_version".into(), SCHEMA_VERSION.into());
        match serde_json::to_value(value)? {
            serde_json::Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("report".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn wants(&self, format: ReportFormat) -> bool {
        self.cfg.wants(format)
    }

    /// Loads a checkpoint and checks it against the dataset.
    fn model(&self, path: &Path) -> Result<Checkpoint> {
        let ck = load_checkpoint(path)?;
        if ck.architecture.input_dim != self.data.dim() {
            return Err(Error::Dimension {
                context: "checkpoint input vs dataset",
                expected: self.data.dim().to_string(),
                actual: ck.architecture.input_dim.to_string(),
            });
        }
        if ck.architecture.n_classes != self.data.n_classes {
            return Err(Error::Dimension {
                context: "checkpoint classes vs dataset",
                expected: self.data.n_classes.to_string(),
                actual: ck.architecture.n_classes.to_string(),
            });
        }
        Ok(ck)
    }

    fn eval_subset(&self, ot_subsample: Option<usize>) -> Result<gtl::experiments::Split> {
        let n = ot_subsample.unwrap_or(self.cfg.train.ot_subsample);
        if n == 0 {
            return Err(Error::Config {
                path: "--ot-subsample".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(data_eval_split(&self.data).head(n))
    }
}

fn cmd_train(common: &Common) -> Result<()> {
    let run = Run::load(common)?;
    for kind in run.cfg.architecture.kind.kinds() {
        let arch = run.cfg.architecture.architecture(kind, run.data.dim(), run.data.n_classes);
        let init = Network::init(&arch, &mut gtl::numerics::Rng::new(run.cfg.train.seed))?;
        let (model, log) = train_with(&init, &run.data, &run.cfg.train, Exec::default())?;
        let name = kind.as_str();
        save_checkpoint(&run.out.join(format!("model_{name}.json")), &Checkpoint::new(arch.clone(), run.cfg.train.seed, model)?)?;
        run.write(&format!("train_{name}.csv"), &train_log_csv(&log, arch.widths.len())?)?;
        if run.wants(ReportFormat::Json) {
            run.write_json(&format!("train_{name}.json"), &log)?;
        }
        let last = log.epochs.last();
        eprintln!(
            "{name}: {} epochs, train acc {}, test acc {}",
            log.epochs.last().map_or(0, |e| e.epoch),
            last.map_or("-".into(), |e| e.train_acc.to_string()),
            last.map_or("-".into(), |e| e.test_acc.to_string()),
        );
    }
    Ok(())
}

struct Metrics {
    lss: bool,
    ots: bool,
    w2: bool,
    theorem1: bool,
}

fn cmd_analyze(model: &ModelArgs, mut want: Metrics) -> Result<()> {
    if !(want.lss || want.ots || want.w2 || want.theorem1) {
        want = Metrics {
            lss: true,
            ots: true,
            w2: true,
            theorem1: true,
        };
    }
    let run = Run::load(&model.common)?;
    let ck = run.model(&model.checkpoint)?;
    let net = &ck.weights;
    let eval = run.eval_subset(model.ot_subsample)?;
    let exec = Exec::default();
    let mut stages: Vec<StageReport> = net
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| StageReport {
            stage: k,
            width: s.width(),
            ..StageReport::default()
        })
        .collect();
    if want.lss || want.ots || want.w2 {
        for (r, m) in stages.iter_mut().zip(stage_metrics(net, &eval, exec)?) {
            if want.lss {
                r.lss = m.mean_lss;
                r.lss_skipped = Some(m.lss_skipped);
            }
            r.ots = want.ots.then_some(m.ots);
            r.w2 = want.w2.then_some(m.w2);
        }
    }
    if want.theorem1 {
        let inputs: Vec<&gtl::numerics::Vector> = eval.inputs.iter().collect();
        let trace = net.forward_batch(&net.batch_of(&inputs)?)?;
        for (k, r) in stages.iter_mut().enumerate() {
            r.theorem1 = Some(theorem1_fraction(&trace.tracks(k), exec)?);
        }
    }
    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        model_sha256: ck.weights_sha256.clone(),
        n_samples: eval.len(),
        stages,
    };
    if run.wants(ReportFormat::Json) {
        run.write("metrics.json", &report.to_json()?)?;
    }
    if run.wants(ReportFormat::Csv) {
        run.write("metrics.csv", &metrics_csv(&report)?)?;
    }
    Ok(())
}

fn cmd_sweep(common: &Common, ot_subsample: Option<usize>) -> Result<()> {
    let mut run = Run::load(common)?;
    if let Some(n) = ot_subsample {
        run.cfg.train.ot_subsample = n;
        run.cfg.train.validate(run.data.train.len())?;
    }
    let gammas = run.cfg.gamma_grid();
    let mut rows = Vec::new();
    for kind in run.cfg.architecture.kind.kinds() {
        let arch = run.cfg.architecture.architecture(kind, run.data.dim(), run.data.n_classes);
        for r in gamma_sweep_runs(&arch, &run.data, &gammas, &run.cfg.train, Exec::default())? {
            if let Some(model) = r.model {
                let path = run.out.join(format!("model_{}_g{}.json", kind.as_str(), r.row.gamma));
                save_checkpoint(&path, &Checkpoint::new(arch.clone(), run.cfg.train.seed, model)?)?;
            }
            rows.push(r.row);
        }
    }
    let report = SweepReport { rows };
    if run.wants(ReportFormat::Csv) {
        run.write("sweep.csv", &sweep_csv(&report)?)?;
        for (name, body) in plot_series(&report)? {
            run.write(&name, &body)?;
        }
    }
    if run.wants(ReportFormat::Json) {
        run.write_json("sweep.json", &report)?;
    }
    let failed: Vec<_> = report.rows.iter().filter(|r| r.status == RowStatus::Failed).collect();
    for r in &failed {
        eprintln!("{} gamma {} failed: {}", r.arch.as_str(), r.gamma, r.message.as_deref().unwrap_or(""));
    }
    if failed.len() == report.rows.len() {
        return Err(Error::NonFinite("every sweep row"));
    }
    Ok(())
}

fn cmd_robustness(model: &ModelArgs, noise: Noise, levels: Option<&[f64]>) -> Result<()> {
    let run = Run::load(&model.common)?;
    let ck = run.model(&model.checkpoint)?;
    let (kind, default_levels) = match noise {
        Noise::Gaussian => (NoiseKind::Gaussian, &run.cfg.robustness.gaussian_levels),
        Noise::Fgsm => (NoiseKind::Fgsm, &run.cfg.robustness.fgsm_levels),
    };
    let levels = levels.unwrap_or(default_levels);
    let seed = model.common.seed.unwrap_or(run.cfg.robustness.seed);
    let split = match model.ot_subsample {
        Some(n) => run.eval_subset(Some(n))?,
        None => data_eval_split(&run.data).clone(),
    };
    let report = robustness_sweep(&ck.weights, &split, kind, levels, seed, run.cfg.train.loss, Exec::default())?;
    let name = format!("robustness_{}", kind.as_str());
    if run.wants(ReportFormat::Csv) {
        run.write(&format!("{name}.csv"), &robustness_csv(&report)?)?;
    }
    if run.wants(ReportFormat::Json) {
        run.write_json(&format!("{name}.json"), &report)?;
    }
    Ok(())
}

fn cmd_ablate(model: &ModelArgs, stage: usize, index: Option<usize>, ks: Option<&[usize]>) -> Result<()> {
    let run = Run::load(&model.common)?;
    let ck = run.model(&model.checkpoint)?;
    let net = &ck.weights;
    let s = net.stages.get(stage).ok_or_else(|| Error::Config {
        path: "--stage".into(),
        message: format!("network has {} stages", net.stages.len()),
    })?;
    let index = index.unwrap_or(s.depth());
    let width = s.width();
    let ks: Vec<usize> = match ks {
        Some(ks) => ks.to_vec(),
        None => {
            let step = (width / 8).max(1);
            let mut v: Vec<usize> = (0..=width).step_by(step).collect();
            if v.last() != Some(&width) {
                v.push(width);
            }
            v
        }
    };
    let at = StateRef { stage, index };
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        rows.push((k, unit_elimination_eval(net, &run.data, at, k)?));
    }
    if run.wants(ReportFormat::Csv) {
        run.write("ablation.csv", &ablation_csv(stage, index, &rows)?)?;
    }
    if run.wants(ReportFormat::Json) {
        let rows: Vec<_> = rows.iter().map(|(k, a)| serde_json::json!({"k": k, "accuracy": a})).collect();
        run.write_json("ablation.json", &serde_json::json!({"stage": stage, "index": index, "rows": rows}))?;
    }
    Ok(())
}

fn cmd_tracks_export(model: &ModelArgs, stage: Option<usize>) -> Result<()> {
    let run = Run::load(&model.common)?;
    let ck = run.model(&model.checkpoint)?;
    let net = &ck.weights;
    let eval = run.eval_subset(model.ot_subsample)?;
    let stages: Vec<usize> = match stage {
        Some(s) if s < net.stages.len() => vec![s],
        Some(s) => {
            return Err(Error::Config {
                path: "--stage".into(),
                message: format!("stage {s} out of range; network has {}", net.stages.len()),
            })
        }
        None => (0..net.stages.len()).collect(),
    };
    let inputs: Vec<&gtl::numerics::Vector> = eval.inputs.iter().collect();
    let trace = net.forward_batch(&net.batch_of(&inputs)?)?;
    for k in stages {
        let file = TrackFile::new(k as u32, &ck.weights_sha256, trace.tracks(k))?;
        save_tracks(&run.out.join(format!("tracks_s{k}.bin")), &file)?;
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("GTL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Config {
        path: "GTL_THREADS".into(),
        message: format!("`{raw}` is not a positive integer"),
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config {
        path: "GTL_THREADS".into(),
        message: e.to_string(),
    })?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train { common } => cmd_train(&common),
        Command::Analyze {
            model,
            lss,
            ots,
            w2,
            theorem1,
        } => cmd_analyze(&model, Metrics { lss, ots, w2, theorem1 }),
        Command::Sweep { common, ot_subsample } => cmd_sweep(&common, ot_subsample),
        Command::Robustness { model, noise, levels } => cmd_robustness(&model, noise, levels.as_deref()),
        Command::AblateUnits { model, stage, index, k } => cmd_ablate(&model, stage, index, k.as_deref()),
        Command::Tracks {
            command: TracksCommand::Export { model, stage },
        } => cmd_tracks_export(&model, stage),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
