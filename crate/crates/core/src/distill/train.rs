use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{project, validate_lambda, validate_weights, default_weights};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::eval::{eval_one_step, eval_trajectory};
use crate::numerics::{AdamW, AdamWConfig, Linear, LinearVars, RngState, Tape, Tensor, Var};
use crate::student::{StudentConfig, StudentModel};
use crate::teacher::{trajectory_loss, TeacherConfig, TeacherModel};

// Independent RNG streams per seed.
const STREAM_TEACHER_INIT: u64 = 0;
const STREAM_TEACHER_SHUFFLE: u64 = 1;
const STREAM_STUDENT_INIT: u64 = 2;
const STREAM_PROJECTION_INIT: u64 = 3;
const STREAM_STUDENT_SHUFFLE: u64 = 4;

/// Loop settings shared by both trainers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation-MAE improvement before stopping.
    pub patience: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Start the output head at zero so the first forecast is persistence.
    pub zero_init_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            patience: 10,
            optimizer: AdamWConfig::default(),
            seed: 0,
            zero_init_head: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct TeacherRun {
    /// Parameters from the epoch with the lowest validation MAE.
    pub best: TeacherModel,
    pub last: TeacherModel,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

#[derive(Clone, Debug)]
pub struct StudentRun {
    pub best: StudentModel,
    pub last: StudentModel,
    /// Teacher-embedding projection `φ_T` matching `best`.
    pub projection: Linear,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

struct EarlyStop {
    best_mae: f64,
    best_epoch: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            best_mae: f64::INFINITY,
            best_epoch: 0,
            patience,
        }
    }

    /// Records an epoch; returns whether it is the new best.
    fn observe(&mut self, epoch: usize, mae: f64) -> bool {
        if mae < self.best_mae {
            self.best_mae = mae;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    fn exhausted(&self, epoch: usize) -> bool {
        epoch - self.best_epoch >= self.patience
    }
}

fn check_loss(value: f32, who: &str, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!(
            "{who} loss became {value} at epoch {epoch}, batch {batch}; lower the learning rate or check the input data"
        )))
    }
}

fn shuffled(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn require_windows(train: &[Window], val: &[Window]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Usage("no training windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Usage("no validation windows".into()));
    }
    Ok(())
}

/// Named gradients, in the order of the model's `named_params`.
pub type NamedGrads = Vec<(String, Vec<f32>)>;

fn named_grads(tape: &Tape, names: Vec<(String, usize)>, vars: &[Var]) -> NamedGrads {
    names
        .into_iter()
        .zip(vars)
        .map(|((name, n), &v)| (name, tape.grad(v).map_or_else(|| vec![0.0; n], <[f32]>::to_vec)))
        .collect()
}

fn apply(opt: &mut AdamW, mut params: Vec<&mut Tensor>, grads: &NamedGrads) -> Result<()> {
    for (p, (_, g)) in params.iter_mut().zip(grads) {
        p.accumulate_grad(g)?;
    }
    opt.step(&mut params)?;
    params.iter_mut().for_each(|p| p.zero_grad());
    Ok(())
}

/// Trajectory loss of one batch and its gradient for every teacher
/// parameter.
pub fn teacher_gradients(model: &TeacherModel, batch: &[&Window]) -> Result<(f32, NamedGrads)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let tokens = tape.constant(model.batch_tokens(batch)?);
    let g = model.forward(&mut tape, &vars, tokens, batch.len())?;
    let loss = trajectory_loss(&mut tape, g.residuals, batch)?;
    tape.backward(loss)?;
    let names = model.named_params().into_iter().map(|(n, t)| (n, t.numel())).collect();
    Ok((tape.value(loss).item()?, named_grads(&tape, names, &vars.vars())))
}

/// Fits the teacher on the trajectory loss with AdamW, keeping the
/// parameters with the best validation MAE (pooled over the horizon).
pub fn train_teacher(
    train: &[Window],
    val: &[Window],
    config: TeacherConfig,
    tc: &TrainConfig,
) -> Result<TeacherRun> {
    tc.validate()?;
    require_windows(train, val)?;
    let mut model = TeacherModel::init(config, &mut RngState::stream(tc.seed, STREAM_TEACHER_INIT))?;
    if tc.zero_init_head {
        model.head = Linear::zeros(config.model_dim, config.horizon);
    }
    let mut opt = AdamW::new(tc.optimizer, model.named_params().into_iter().map(|(_, t)| t));
    let mut rng = RngState::stream(tc.seed, STREAM_TEACHER_SHUFFLE);
    let mut stop = EarlyStop::new(tc.patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for epoch in 1..=tc.epochs {
        let order = shuffled(train.len(), &mut rng);
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train[i]).collect();
            let (value, grads) = teacher_gradients(&model, &batch)?;
            check_loss(value, "teacher", epoch, b)?;
            loss_sum += value as f64 * batch.len() as f64;
            apply(&mut opt, model.params_mut(), &grads)?;
        }
        let report = eval_trajectory(&model, val)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mae: report.mae_pct,
            val_rmse: report.rmse_pct,
        });
        if stop.observe(epoch, report.mae_pct) {
            best = model.clone();
        } else if stop.exhausted(epoch) {
            break;
        }
    }
    Ok(TeacherRun {
        best,
        last: model,
        best_epoch: stop.best_epoch,
        history,
    })
}

/// Distillation settings. With `logit = false` and `lambda = 0` this is the
/// plain supervised student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub train: TrainConfig,
    /// Decay for the default projection weights.
    pub gamma: f64,
    /// Explicit projection weights; overrides `gamma` when set.
    pub weights: Option<Vec<f64>>,
    /// Feature-loss weight.
    pub lambda: f64,
    /// Include the logit (soft-target) term.
    pub logit: bool,
    /// Precompute teacher targets for every training window once instead of
    /// per batch.
    pub cache_targets: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            gamma: 0.8,
            weights: None,
            lambda: 0.1,
            logit: true,
            cache_targets: false,
        }
    }
}

impl DistillConfig {
    /// The ablation arm: ground-truth MSE only.
    pub fn no_distill(train: TrainConfig) -> Self {
        Self {
            train,
            lambda: 0.0,
            logit: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        validate_lambda(self.lambda)?;
        if let Some(w) = &self.weights {
            validate_weights(w)?;
        } else if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("decay gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Projection weights for horizon `h`.
    pub fn resolve_weights(&self, horizon: usize) -> Result<Vec<f64>> {
        match &self.weights {
            Some(w) if w.len() != horizon => Err(Error::Config(format!(
                "{} projection weights for a teacher horizon of {horizon}",
                w.len()
            ))),
            Some(w) => Ok(w.clone()),
            None => default_weights(horizon, self.gamma),
        }
    }

    fn uses_teacher(&self) -> bool {
        self.logit || self.lambda > 0.0
    }
}

/// Frozen-teacher supervision for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillTargets {
    /// Projected absolute forecast `P̃`.
    pub soft: f32,
    /// Teacher context `c`.
    pub context: Vec<f32>,
}

/// Teacher targets for `windows`, in order.
pub fn teacher_targets(teacher: &TeacherModel, windows: &[&Window], weights: &[f64]) -> Result<Vec<DistillTargets>> {
    Ok(teacher
        .forecast_batch(windows)?
        .into_iter()
        .map(|f| DistillTargets {
            soft: project(&f.absolute, weights) as f32,
            context: f.context,
        })
        .collect())
}

/// The three loss terms of one batch, each averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub mse: f32,
    pub logit: f32,
    pub feat: f32,
    pub total: f32,
}

struct BatchGraph {
    total: Var,
    mse: Var,
    logit: Option<Var>,
    feat: Option<Var>,
}

impl BatchGraph {
    fn parts(&self, tape: &Tape) -> Result<LossParts> {
        let read = |v: Option<Var>| v.map_or(Ok(0.0), |v| tape.value(v).item());
        Ok(LossParts {
            mse: tape.value(self.mse).item()?,
            logit: read(self.logit)?,
            feat: read(self.feat)?,
            total: tape.value(self.total).item()?,
        })
    }
}

fn column(tape: &mut Tape, values: Vec<f32>) -> Result<Var> {
    let n = values.len();
    Ok(tape.constant(Tensor::new(vec![n, 1], values)?))
}

fn mean_square(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

#[allow(clippy::too_many_arguments)]
fn student_graph(
    tape: &mut Tape,
    student: &StudentModel,
    svars: &crate::student::StudentVars,
    proj: Option<LinearVars>,
    batch: &[&Window],
    targets: Option<&[DistillTargets]>,
    cfg: &DistillConfig,
) -> Result<BatchGraph> {
    let n = batch.len();
    let inputs: Vec<f32> = batch.iter().flat_map(|w| w.point_input()).collect();
    let x = tape.constant(Tensor::new(vec![n, student.config().input_dim], inputs)?);
    let g = student.forward(tape, svars, x)?;

    // Targets enter on the residual scale; the anchor cancels in the difference.
    let truth = column(tape, batch.iter().map(|w| w.future_load[0] - w.anchor).collect())?;
    let mse = mean_square(tape, g.residual, truth)?;
    let mut total = mse;

    let mut logit = None;
    if cfg.logit {
        let t = targets.ok_or_else(|| Error::Usage("logit term needs teacher targets".into()))?;
        let soft = column(tape, batch.iter().zip(t).map(|(w, d)| d.soft - w.anchor).collect())?;
        let l = mean_square(tape, g.residual, soft)?;
        total = tape.add(total, l)?;
        logit = Some(l);
    }

    let mut feat = None;
    if cfg.lambda > 0.0 {
        let t = targets.ok_or_else(|| Error::Usage("feature term needs teacher targets".into()))?;
        let proj = proj.ok_or_else(|| Error::Usage("feature term needs a projection".into()))?;
        let z = g
            .embedding
            .ok_or_else(|| Error::Usage("feature term needs the student embedding head".into()))?;
        let dm = t[0].context.len();
        let ctx = tape.constant(Tensor::new(vec![n, dm], t.iter().flat_map(|d| d.context.iter().copied()).collect())?);
        let projected = proj.forward(tape, ctx)?;
        let d = tape.sub(z, projected)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        let f = tape.scale(s, 1.0 / n as f32);
        let weighted = tape.scale(f, cfg.lambda as f32);
        total = tape.add(total, weighted)?;
        feat = Some(f);
    }
    Ok(BatchGraph { total, mse, logit, feat })
}

/// Evaluates the batch loss terms without updating anything.
pub fn student_batch_loss(
    student: &StudentModel,
    projection: &Linear,
    batch: &[&Window],
    targets: Option<&[DistillTargets]>,
    cfg: &DistillConfig,
) -> Result<LossParts> {
    let mut tape = Tape::new();
    let svars = student.bind(&mut tape);
    let proj = projection.bind(&mut tape);
    student_graph(&mut tape, student, &svars, Some(proj), batch, targets, cfg)?.parts(&tape)
}

/// Composite loss of one batch and its gradient for every student
/// parameter followed by `projection.weight` and `projection.bias`.
pub fn student_gradients(
    student: &StudentModel,
    projection: &Linear,
    batch: &[&Window],
    targets: Option<&[DistillTargets]>,
    cfg: &DistillConfig,
) -> Result<(LossParts, NamedGrads)> {
    let mut tape = Tape::new();
    let svars = student.bind(&mut tape);
    let pvars = projection.bind(&mut tape);
    let g = student_graph(&mut tape, student, &svars, Some(pvars), batch, targets, cfg)?;
    tape.backward(g.total)?;
    let parts = g.parts(&tape)?;
    let mut names: Vec<(String, usize)> = student.named_params().into_iter().map(|(n, t)| (n, t.numel())).collect();
    names.push(("projection.weight".into(), projection.weight.numel()));
    names.push(("projection.bias".into(), projection.bias.numel()));
    let mut vars = svars.vars();
    vars.extend(pvars.vars());
    Ok((parts, named_grads(&tape, names, &vars)))
}

/// Trains the student on `mse + logit + λ·feat` against a frozen teacher.
/// `φ_T` is trained jointly and returned alongside the student.
pub fn distill_student(
    train: &[Window],
    val: &[Window],
    teacher: &TeacherModel,
    sc: StudentConfig,
    cfg: &DistillConfig,
) -> Result<StudentRun> {
    cfg.validate()?;
    require_windows(train, val)?;
    let tcfg = teacher.config();
    let weights = cfg.resolve_weights(tcfg.horizon)?;
    if sc.input_dim != tcfg.input_dim {
        return Err(Error::Config(format!(
            "student input_dim {} differs from teacher input_dim {}",
            sc.input_dim, tcfg.input_dim
        )));
    }
    let tc = &cfg.train;
    let mut student = StudentModel::init(sc, &mut RngState::stream(tc.seed, STREAM_STUDENT_INIT))?;
    if tc.zero_init_head {
        student.residual_head = Linear::zeros(sc.hidden_dim, 1);
    }
    let mut proj = Linear::init(
        tcfg.model_dim,
        sc.embed_dim,
        &mut RngState::stream(tc.seed, STREAM_PROJECTION_INIT),
    );
    let mut opt = AdamW::new(
        tc.optimizer,
        student.named_params().into_iter().map(|(_, t)| t).chain([&proj.weight, &proj.bias]),
    );
    let mut rng = RngState::stream(tc.seed, STREAM_STUDENT_SHUFFLE);

    let cache = if cfg.uses_teacher() && cfg.cache_targets {
        let mut all = Vec::with_capacity(train.len());
        for part in train.chunks(crate::eval::TEACHER_EVAL_CHUNK) {
            let refs: Vec<&Window> = part.iter().collect();
            all.extend(teacher_targets(teacher, &refs, &weights)?);
        }
        Some(all)
    } else {
        None
    };

    let mut stop = EarlyStop::new(tc.patience);
    let mut best = (student.clone(), proj.clone());
    let mut history = Vec::new();

    for epoch in 1..=tc.epochs {
        let order = shuffled(train.len(), &mut rng);
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train[i]).collect();
            let targets = match (&cache, cfg.uses_teacher()) {
                (Some(c), _) => Some(chunk.iter().map(|&i| c[i].clone()).collect::<Vec<_>>()),
                (None, true) => Some(teacher_targets(teacher, &batch, &weights)?),
                (None, false) => None,
            };

            let (parts, grads) = student_gradients(&student, &proj, &batch, targets.as_deref(), cfg)?;
            check_loss(parts.total, "student", epoch, b)?;
            loss_sum += parts.total as f64 * batch.len() as f64;
            let mut params = student.params_mut();
            params.extend(proj.params_mut());
            apply(&mut opt, params, &grads)?;
        }
        let report = eval_one_step(&student, val)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mae: report.mae_pct,
            val_rmse: report.rmse_pct,
        });
        if stop.observe(epoch, report.mae_pct) {
            best = (student.clone(), proj.clone());
        } else if stop.exhausted(epoch) {
            break;
        }
    }
    Ok(StudentRun {
        best: best.0,
        last: student,
        projection: best.1,
        best_epoch: stop.best_epoch,
        history,
    })
}
