//! Training of the encoder through the differentiable search.
//!
//! In imperative mode the loss needs no labels: the search is run with the
//! encoder's `P`, and the extra visited cells plus the resulting path length
//! are pushed down. Supervised mode instead matches the closed matrix to an
//! optimal path computed by Dijkstra.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{Graph, Padding, Tensor, TensorError, Var};
use crate::bench::metrics::{al_metric, exp_metric, mean_std};
use crate::dastar::{search, search_recorded, DAStarConfig, DAStarError};
use crate::encoder::{instance_tensor, Arch, EncoderError, EncoderModel};
use crate::gridmap::{PlanInstance, SQRT_2};
use crate::search::{astar, dijkstra, SearchError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: non-finite {what}")]
    Divergence {
        epoch: usize,
        what: &'static str,
        /// Parameters before the failing update.
        last_good: Box<EncoderModel>,
    },
    #[error(transparent)]
    Search(#[from] DAStarError),
    #[error(transparent)]
    Classical(#[from] SearchError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Search-quality terms of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Closed cells not on the path.
    pub area: f64,
    /// Octile length of the path.
    pub length: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(area: f64, length: f64, w_a: f64, w_l: f64) -> Self {
        Self {
            area,
            length,
            total: w_a * area + w_l * length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Imperative,
    Supervised,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Imperative => "imperative",
            Mode::Supervised => "supervised",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imperative" => Ok(Mode::Imperative),
            "supervised" => Ok(Mode::Supervised),
            other => Err(format!("unknown mode {other:?} (imperative, supervised)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub w_a: f64,
    pub w_l: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub arch: Arch,
    /// Start from a zero head, i.e. from plain A* behaviour.
    pub zero_head: bool,
    pub search: DAStarConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w_a: 1.0,
            w_l: 1.0,
            lr: 1e-3,
            optimizer: OptimizerKind::default(),
            epochs: 20,
            batch: 8,
            seed: 42,
            mode: Mode::Imperative,
            clip: Some(10.0),
            arch: Arch::default(),
            zero_head: true,
            search: DAStarConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.w_a >= 0.0 && self.w_l >= 0.0) || self.w_a + self.w_l == 0.0 {
            return bad(format!("weights w_a={} w_l={}", self.w_a, self.w_l));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad(format!("clip {c}"));
            }
        }
        self.arch.validate()?;
        Ok(())
    }
}

/// `[1, 1, 3, 3]` kernel holding the step cost to each neighbour.
pub fn distance_kernel() -> Tensor {
    Tensor::new(
        vec![1, 1, 3, 3],
        vec![SQRT_2, 1.0, SQRT_2, 1.0, 0.0, 1.0, SQRT_2, 1.0, SQRT_2],
    )
    .expect("3x3")
}

/// `⟨C - μ, 1 - μ̄⟩` with `μ̄` the forward value of `μ` held constant:
/// `|C| - |μ|` on binary inputs with `μ ⊆ C`. The mask separates path
/// cells from the never-closed ones, which `C - μ` alone cannot.
pub fn area_loss(g: &mut Graph, closed: Var, path: Var) -> Result<Var, TensorError> {
    let mut mask = g.value(path).clone();
    mask.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
    let mask = g.constant(mask);
    let d = g.sub(closed, path)?;
    g.inner(d, mask)
}

/// `⟨μ * K, μ⟩ / 2`: each path edge is counted from both of its ends.
pub fn path_length_loss(g: &mut Graph, path: Var) -> Result<Var, TensorError> {
    let shape = g.value(path).shape().to_vec();
    let [h, w] = shape[..] else {
        return Err(TensorError::Rank {
            op: "path_length_loss",
            shape,
        });
    };
    let x = g.reshape(path, &[1, h, w])?;
    let k = g.constant(distance_kernel());
    let d = g.conv2d(x, k, Padding::Same)?;
    let d = g.reshape(d, &[h, w])?;
    let l = g.inner(d, path)?;
    Ok(g.scale(l, 0.5))
}

/// Mean absolute difference between `C` and a label path.
pub fn supervised_loss(g: &mut Graph, closed: Var, label: &Tensor) -> Result<Var, TensorError> {
    let label = g.constant(label.clone());
    let d = g.sub(closed, label)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Optimal path matrix from Dijkstra.
pub fn path_label(instance: &PlanInstance) -> Result<Tensor, SearchError> {
    let r = dijkstra(instance)?;
    let map = instance.map();
    Ok(Tensor::new(
        vec![map.height(), map.width()],
        r.path_matrix.iter().map(|&v| f64::from(v)).collect(),
    )
    .expect("map-shaped"))
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, model: &EncoderModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            kind,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, model: &mut EncoderModel, grads: &[Vec<f64>]) {
        self.step += 1;
        for (i, p) in model.params_mut().enumerate() {
            let (g, m, v) = (&grads[i], &mut self.m[i], &mut self.v[i]);
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    for j in 0..g.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        p.data_mut()[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    for j in 0..g.len() {
                        m[j] = momentum * m[j] + g[j];
                        p.data_mut()[j] -= self.lr * m[j];
                    }
                }
            }
        }
    }
}

/// Loss terms and parameter gradients for one instance.
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    /// The differentiated objective (equal to `breakdown.total` in
    /// imperative mode).
    pub objective: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Forward encoder, recorded search, loss and backward pass.
pub fn instance_step(
    model: &EncoderModel,
    instance: &PlanInstance,
    label: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<StepOutput, TrainError> {
    let mut g = Graph::new();
    let fwd = model.forward_recorded(&mut g, &instance_tensor(instance))?;
    let rec = search_recorded(&mut g, instance, fwd.p, &config.search)?;
    let area_v = area_loss(&mut g, rec.closed, rec.path)?;
    let length_v = path_length_loss(&mut g, rec.path)?;
    let breakdown = LossBreakdown::new(g.value(area_v).item(), g.value(length_v).item(), config.w_a, config.w_l);
    let objective = match (config.mode, label) {
        (Mode::Imperative, _) => {
            let a = g.scale(area_v, config.w_a);
            let l = g.scale(length_v, config.w_l);
            g.add(a, l)?
        }
        (Mode::Supervised, Some(label)) => supervised_loss(&mut g, rec.closed, label)?,
        (Mode::Supervised, None) => {
            let owned = path_label(instance)?;
            supervised_loss(&mut g, rec.closed, &owned)?
        }
    };
    let value = g.value(objective).item();
    let grads = g.backward(objective)?;
    let grads = fwd
        .params
        .iter()
        .zip(model.params())
        .map(|(&v, (_, t))| grads.get_or_zeros(v, t.shape()).into_data())
        .collect();
    Ok(StepOutput {
        breakdown,
        objective: value,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_area: f64,
    pub mean_length: f64,
    pub mean_total: f64,
    pub val_al: f64,
    pub val_exp: f64,
    pub wall_s: f64,
}

pub const LOG_HEADER: &str = "epoch,mean_area,mean_length,mean_total,val_AL,val_Exp,wall_s";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.mean_area, self.mean_length, self.mean_total, self.val_al, self.val_exp, self.wall_s
        )
    }
}

pub fn write_log_csv(out: &mut impl Write, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for row in log {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

/// Whitespace-separated columns `epoch val_AL mean_total` for gnuplot.
pub fn write_log_dat(out: &mut impl Write, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(out, "# epoch val_AL mean_total")?;
    for row in log {
        writeln!(out, "{} {} {}", row.epoch, row.val_al, row.mean_total)?;
    }
    Ok(())
}

pub fn save_log(path: &Path, log: &[EpochLog]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_log_csv(&mut f, log)?;
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.with_extension("dat"))?);
    write_log_dat(&mut f, log)?;
    f.flush()
}

pub struct TrainOutcome {
    pub model: EncoderModel,
    pub log: Vec<EpochLog>,
}

fn finite(grads: &[Vec<f64>]) -> bool {
    grads.iter().flatten().all(|v| v.is_finite())
}

/// Trains from a fresh initialisation.
pub fn train(
    train_set: &[PlanInstance],
    val_set: &[PlanInstance],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut model = EncoderModel::init(config.arch, config.seed)?;
    if config.zero_head {
        model.zero_head();
    }
    train_from(model, train_set, val_set, config, |_, _| {})
}

/// Trains `model`; `on_epoch` sees each log row and the model after that
/// epoch.
pub fn train_from(
    mut model: EncoderModel,
    train_set: &[PlanInstance],
    val_set: &[PlanInstance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &EncoderModel),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let labels = match config.mode {
        Mode::Supervised => Some(
            train_set
                .par_iter()
                .map(path_label)
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Mode::Imperative => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.lr, &model);
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut area, mut length, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch) {
            let outs = chunk
                .par_iter()
                .map(|&i| {
                    let label = labels.as_ref().map(|l| &l[i]);
                    instance_step(&model, &train_set[i], label, config)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for out in &outs {
                if !out.objective.is_finite() {
                    return Err(diverged(epoch, "loss", &model));
                }
                area += out.breakdown.area;
                length += out.breakdown.length;
                total += out.breakdown.total;
                for (acc, g) in grads.iter_mut().zip(&out.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / outs.len() as f64;
            grads.iter_mut().flatten().for_each(|v| *v *= scale);
            if !finite(&grads) {
                return Err(diverged(epoch, "gradient", &model));
            }
            if let Some(max) = config.clip {
                let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                if norm > max {
                    let s = max / norm;
                    grads.iter_mut().flatten().for_each(|v| *v *= s);
                }
            }
            let before = model.clone();
            opt.update(&mut model, &grads);
            if !model.params().iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite())) {
                return Err(diverged(epoch, "parameter", &before));
            }
        }
        let n = train_set.len() as f64;
        let (mean_area, mean_length) = (area / n, length / n);
        let (val_al, val_exp) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = validate(&model, val_set, &config.search)?;
            (r.al.0, r.exp.0)
        };
        let row = EpochLog {
            epoch,
            mean_area,
            mean_length,
            mean_total: config.w_a * mean_area + config.w_l * mean_length,
            val_al,
            val_exp,
            wall_s: started.elapsed().as_secs_f64(),
        };
        debug_assert!((row.mean_total - total / n).abs() <= 1e-9 * (1.0 + row.mean_total.abs()));
        on_epoch(&row, &model);
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}

fn diverged(epoch: usize, what: &'static str, model: &EncoderModel) -> TrainError {
    TrainError::Divergence {
        epoch,
        what,
        last_good: Box::new(model.clone()),
    }
}

/// Per-instance validation numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    /// Count of closed cells.
    pub search_area: usize,
    /// Closed cells not on the path.
    pub extra_area: usize,
    pub reference_area: usize,
    pub length: f64,
    pub al: f64,
    pub exp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `(mean, std)` over solved instances.
    pub al: (f64, f64),
    pub exp: (f64, f64),
    pub pl: (f64, f64),
    pub failures: usize,
    pub instances: Vec<Option<InstanceMetrics>>,
}

/// Runs the search with the model's `P` on each instance.
pub fn validate(model: &EncoderModel, instances: &[PlanInstance], search_config: &DAStarConfig) -> Result<ValidationReport, TrainError> {
    validate_with(instances, search_config, |inst| Ok(model.predict(inst)?))
}

/// [`validate`] with an arbitrary source of `P`.
pub fn validate_with(
    instances: &[PlanInstance],
    search_config: &DAStarConfig,
    factor: impl Fn(&PlanInstance) -> Result<Tensor, TrainError> + Sync,
) -> Result<ValidationReport, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per: Vec<Option<InstanceMetrics>> = instances
        .par_iter()
        .map(|inst| -> Result<Option<InstanceMetrics>, TrainError> {
            let p = factor(inst)?;
            let out = match search(inst, &p, search_config) {
                Ok(o) => o,
                Err(DAStarError::UnreachableGoal { .. } | DAStarError::IterationCapExceeded(_)) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let reference = match astar(inst, 1.0) {
                Ok(r) => r.expansions,
                Err(_) => return Ok(None),
            };
            let area = out.search_area();
            let extra = area.saturating_sub(out.result.path_cells());
            Ok(Some(InstanceMetrics {
                search_area: area,
                reference_area: reference,
                length: out.result.cost,
                extra_area: extra,
                al: al_metric(extra, out.result.cost),
                exp: exp_metric(reference, area).expect("reference area is at least 1"),
            }))
        })
        .collect::<Result<_, _>>()?;
    let solved: Vec<&InstanceMetrics> = per.iter().flatten().collect();
    let stat = |f: fn(&InstanceMetrics) -> f64| mean_std(&solved.iter().map(|m| f(m)).collect::<Vec<_>>());
    Ok(ValidationReport {
        al: stat(|m| m.al),
        exp: stat(|m| m.exp),
        pl: stat(|m| m.length),
        failures: per.len() - solved.len(),
        instances: per,
    })
}
