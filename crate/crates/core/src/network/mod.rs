//! Plain and residual ReLU perceptrons with track-recording forward passes.
//!
//! A [`Network`] is `head ∘ f_K ∘ P_{K-1} ∘ .. ∘ P_1 ∘ f_1 ∘ stem` where each
//! `f_k` is a fixed-width [`Stage`], `P_k` a [`DimChanger`] and the optional
//! stem lifts the raw input to the first stage width. All maps are bias-free.
//!
//! Batches are matrices with one sample per row.

mod backprop;
mod diagnostics;
mod train;

pub use backprop::{backward, backward_with, Backward, Gradients, Loss, Target};
pub use diagnostics::{
    activated_linear_map, block_energy_bound, gd_variation_check, plain_layer_energy_bound,
    ridge_solve, weight_decay_energy, EnergyBound, VariationCheck,
};
pub use train::{accuracy, data_eval_split, sgd_step, train, train_with, EpochRecord, TrainConfig, TrainLog};

use serde::{Deserialize, Serialize};

use crate::geometry::Track;
use crate::numerics::{he_init, relu_scalar, Matrix, Rng, Vector};
use crate::{Error, Result};

/// Plain stack `x -> σ(W1 x) -> σ(W2 ·) -> .. -> Wn ·`; the last layer is
/// linear. One track state per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainNet {
    pub layers: Vec<Matrix>,
}

/// Residual block `x -> x + W2 σ(W1 σ(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub w1: Matrix,
    pub w2: Matrix,
}

/// Stack of residual blocks at one width. One track state per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResNet {
    pub blocks: Vec<ResidualBlock>,
}

/// Linear map between stage widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimChanger {
    pub p: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Stage {
    Plain(PlainNet),
    Residual(ResNet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Plain,
    Resnet,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Plain => "plain",
            ArchKind::Resnet => "resnet",
        }
    }
}

/// Shape of a network. Plain stages get two layers per block so plain and
/// residual variants of one descriptor have identical parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input_dim: usize,
    /// One width per fixed-width stage (K = `widths.len()`).
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub n_classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Error::Config {
            path: path.to_string(),
            message: message.to_string(),
        };
        if self.input_dim == 0 {
            return Err(bad("input_dim", "must be >= 1"));
        }
        if self.widths.is_empty() {
            return Err(bad("widths", "need at least one stage"));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(bad(&format!("widths[{i}]"), "must be >= 1"));
        }
        if self.blocks_per_stage == 0 {
            return Err(bad("blocks_per_stage", "must be >= 1"));
        }
        if self.n_classes < 2 {
            return Err(bad("n_classes", "must be >= 2"));
        }
        Ok(())
    }

    pub fn with_kind(&self, kind: ArchKind) -> Architecture {
        Architecture { kind, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub stem: Option<DimChanger>,
    pub stages: Vec<Stage>,
    /// `changers[k]` maps stage `k` to stage `k + 1`.
    pub changers: Vec<DimChanger>,
    pub head: Matrix,
}

/// Address of a track state: `index` counts states inside stage `stage`,
/// 0 being the stage input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRef {
    pub stage: usize,
    pub index: usize,
}

/// A layer whose representation can be inspected: the raw input, a stage
/// state, or the logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Input,
    State(StateRef),
    Output,
}

impl PlainNet {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("plain net layers"));
        }
        for w in layers.windows(2) {
            if w[1].cols() != w[0].rows() {
                return Err(Error::dim("plain net layer chain", w[0].rows(), w[1].cols()));
            }
        }
        Ok(PlainNet { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// `g(x)`: ReLU after every layer but the last.
    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.input_dim() {
            return Err(Error::dim("plain net input", self.input_dim(), x.dim()));
        }
        let mut a = x.as_slice().to_vec();
        let last = self.layers.len() - 1;
        for (l, w) in self.layers.iter().enumerate() {
            a = w.matvec_slice(&a);
            if l < last {
                a.iter_mut().for_each(|v| *v = relu_scalar(*v));
            }
        }
        Ok(Vector::from_raw(a))
    }
}

impl ResidualBlock {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        let d = w1.rows();
        if w1.shape() != (d, d) || w2.shape() != (d, d) {
            return Err(Error::dim(
                "residual block",
                format!("{d}x{d}"),
                format!("{:?} / {:?}", w1.shape(), w2.shape()),
            ));
        }
        Ok(ResidualBlock { w1, w2 })
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    /// The residue `W2 σ(W1 σ(x))`.
    pub fn residue(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.width() {
            return Err(Error::dim("residual block input", self.width(), x.dim()));
        }
        let r: Vec<f64> = x.as_slice().iter().map(|&v| relu_scalar(v)).collect();
        let h: Vec<f64> = self.w1.matvec_slice(&r).into_iter().map(relu_scalar).collect();
        Ok(Vector::from_raw(self.w2.matvec_slice(&h)))
    }
}

impl Stage {
    pub fn width(&self) -> usize {
        match self {
            Stage::Plain(p) => p.input_dim(),
            Stage::Residual(r) => r.blocks[0].width(),
        }
    }

    /// Number of track segments (layers or blocks).
    pub fn depth(&self) -> usize {
        match self {
            Stage::Plain(p) => p.layers.len(),
            Stage::Residual(r) => r.blocks.len(),
        }
    }

    pub fn kind(&self) -> ArchKind {
        match self {
            Stage::Plain(_) => ArchKind::Plain,
            Stage::Residual(_) => ArchKind::Resnet,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Stage::Plain(p) => {
                let d = p.input_dim();
                if let Some(w) = p.layers.iter().find(|w| w.shape() != (d, d)) {
                    return Err(Error::dim("plain stage layer", format!("{d}x{d}"), format!("{:?}", w.shape())));
                }
                if p.layers.is_empty() {
                    return Err(Error::Empty("plain stage"));
                }
            }
            Stage::Residual(r) => {
                let first = r.blocks.first().ok_or(Error::Empty("residual stage"))?;
                let d = first.width();
                for b in &r.blocks {
                    ResidualBlock::new(b.w1.clone(), b.w2.clone())?;
                    if b.width() != d {
                        return Err(Error::dim("residual stage width", d, b.width()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies step `step` (0-based layer or block) to a batch.
    fn apply_step(&self, step: usize, x: &Matrix) -> Matrix {
        match self {
            Stage::Plain(p) => {
                let mut z = x.matmul_nt(&p.layers[step]).expect("validated shapes");
                if step + 1 < p.layers.len() {
                    relu_in_place(&mut z);
                }
                z
            }
            Stage::Residual(r) => {
                let b = &r.blocks[step];
                let mut a = x.clone();
                relu_in_place(&mut a);
                let mut h = a.matmul_nt(&b.w1).expect("validated shapes");
                relu_in_place(&mut h);
                let mut out = h.matmul_nt(&b.w2).expect("validated shapes");
                out.add_scaled(1.0, x).expect("validated shapes");
                out
            }
        }
    }

    fn params(&self) -> Vec<&Matrix> {
        match self {
            Stage::Plain(p) => p.layers.iter().collect(),
            Stage::Residual(r) => r.blocks.iter().flat_map(|b| [&b.w1, &b.w2]).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Stage::Plain(p) => p.layers.iter_mut().collect(),
            Stage::Residual(r) => r.blocks.iter_mut().flat_map(|b| [&mut b.w1, &mut b.w2]).collect(),
        }
    }
}

pub(crate) fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = relu_scalar(*v));
}

/// Every intermediate of a batch forward pass.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    /// `states[k][l]` is the batch at state `l` of stage `k`.
    pub states: Vec<Vec<Matrix>>,
    pub output: Matrix,
}

impl BatchTrace {
    /// Track of sample `row` inside stage `stage`.
    pub fn track(&self, stage: usize, row: usize) -> Track {
        Track::from_states_unchecked(
            self.states[stage]
                .iter()
                .map(|m| Vector::from_raw(m.row(row).to_vec()))
                .collect(),
        )
    }

    pub fn tracks(&self, stage: usize) -> Vec<Track> {
        (0..self.output.rows()).map(|r| self.track(stage, r)).collect()
    }

    pub fn state(&self, at: StateRef) -> &Matrix {
        &self.states[at.stage][at.index]
    }
}

impl Network {
    /// He-initialized network for `arch`. Plain and residual variants of the
    /// same descriptor draw identical initial weights from the same seed.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let w0 = arch.widths[0];
        let stem = if arch.input_dim != w0 {
            Some(DimChanger {
                p: he_init(w0, arch.input_dim, rng)?,
            })
        } else {
            None
        };
        let mut stages = Vec::with_capacity(arch.widths.len());
        let mut changers = Vec::new();
        for (k, &w) in arch.widths.iter().enumerate() {
            let stage = match arch.kind {
                ArchKind::Plain => Stage::Plain(PlainNet {
                    layers: (0..2 * arch.blocks_per_stage)
                        .map(|_| he_init(w, w, rng))
                        .collect::<Result<_>>()?,
                }),
                ArchKind::Resnet => Stage::Residual(ResNet {
                    blocks: (0..arch.blocks_per_stage)
                        .map(|_| Ok(ResidualBlock { w1: he_init(w, w, rng)?, w2: he_init(w, w, rng)? }))
                        .collect::<Result<_>>()?,
                }),
            };
            stages.push(stage);
            if let Some(&next) = arch.widths.get(k + 1) {
                changers.push(DimChanger {
                    p: he_init(next, w, rng)?,
                });
            }
        }
        let head = he_init(arch.n_classes, *arch.widths.last().expect("validated"), rng)?;
        let net = Network {
            stem,
            stages,
            changers,
            head,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Empty("network stages"));
        }
        if self.changers.len() + 1 != self.stages.len() {
            return Err(Error::dim("dimension changers", self.stages.len() - 1, self.changers.len()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        if let Some(stem) = &self.stem {
            if stem.p.rows() != self.stages[0].width() {
                return Err(Error::dim("stem output", self.stages[0].width(), stem.p.rows()));
            }
        }
        for (k, p) in self.changers.iter().enumerate() {
            let (from, to) = (self.stages[k].width(), self.stages[k + 1].width());
            if p.p.shape() != (to, from) {
                return Err(Error::dim("dimension changer", format!("{to}x{from}"), format!("{:?}", p.p.shape())));
            }
        }
        let last = self.stages[self.stages.len() - 1].width();
        if self.head.cols() != last {
            return Err(Error::dim("head input", last, self.head.cols()));
        }
        if !self.params().iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match &self.stem {
            Some(s) => s.p.cols(),
            None => self.stages[0].width(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head.rows()
    }

    /// Weight matrices in canonical order: stem, then each stage followed by
    /// its outgoing changer, then the head.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        if let Some(s) = &self.stem {
            out.push(&s.p);
        }
        for (k, stage) in self.stages.iter().enumerate() {
            out.extend(stage.params());
            if let Some(c) = self.changers.get(k) {
                out.push(&c.p);
            }
        }
        out.push(&self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        if let Some(s) = &mut self.stem {
            out.push(&mut s.p);
        }
        let mut changers = self.changers.iter_mut();
        for stage in self.stages.iter_mut() {
            out.extend(stage.params_mut());
            if let Some(c) = changers.next() {
                out.push(&mut c.p);
            }
        }
        out.push(&mut self.head);
        out
    }

    pub fn kind(&self) -> ArchKind {
        self.stages[0].kind()
    }

    /// Rows of `inputs` stacked into a batch matrix.
    pub fn batch_of(&self, inputs: &[&Vector]) -> Result<Matrix> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(inputs.len() * d);
        for x in inputs {
            if x.dim() != d {
                return Err(Error::dim("network input", d, x.dim()));
            }
            data.extend_from_slice(x.as_slice());
        }
        Matrix::from_vec(inputs.len(), d, data)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<BatchTrace> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.cols()));
        }
        let mut cur = match &self.stem {
            Some(s) => x.matmul_nt(&s.p)?,
            None => x.clone(),
        };
        let mut states = Vec::with_capacity(self.stages.len());
        for (k, stage) in self.stages.iter().enumerate() {
            let mut st = Vec::with_capacity(stage.depth() + 1);
            st.push(cur);
            for step in 0..stage.depth() {
                let next = stage.apply_step(step, st.last().expect("nonempty"));
                st.push(next);
            }
            cur = st.last().expect("nonempty").clone();
            if let Some(c) = self.changers.get(k) {
                cur = cur.matmul_nt(&c.p)?;
            }
            states.push(st);
        }
        let output = cur.matmul_nt(&self.head)?;
        Ok(BatchTrace { states, output })
    }

    /// Output and one track per fixed-width stage for a single sample.
    pub fn forward_with_track(&self, x: &Vector) -> Result<(Vector, Vec<Track>)> {
        let trace = self.forward_batch(&self.batch_of(&[x])?)?;
        let tracks = (0..self.stages.len()).map(|k| trace.track(k, 0)).collect();
        Ok((Vector::from_raw(trace.output.row(0).to_vec()), tracks))
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward_with_track(x)?.0)
    }

    /// Continues a forward pass from a batch sitting at state `at`.
    pub fn forward_from(&self, at: StateRef, x: &Matrix) -> Result<Matrix> {
        let stage = self.stages.get(at.stage).ok_or_else(|| Error::dim("stage index", self.stages.len(), at.stage))?;
        if at.index > stage.depth() {
            return Err(Error::dim("state index", stage.depth(), at.index));
        }
        if x.cols() != stage.width() {
            return Err(Error::dim("state width", stage.width(), x.cols()));
        }
        let mut cur = x.clone();
        for k in at.stage..self.stages.len() {
            let first = if k == at.stage { at.index } else { 0 };
            for step in first..self.stages[k].depth() {
                cur = self.stages[k].apply_step(step, &cur);
            }
            if let Some(c) = self.changers.get(k) {
                cur = cur.matmul_nt(&c.p)?;
            }
        }
        cur.matmul_nt(&self.head)
    }

    /// Argmax of each output row; ties resolve to the lowest class.
    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward_batch(x)?.output))
    }
}

pub(crate) fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
