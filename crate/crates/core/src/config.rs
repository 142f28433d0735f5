//! Flat, JSON-serializable run configuration covering every module.
//!
//! Every key is optional in a config file; missing keys take the defaults
//! below and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchOptions;
use crate::data::{PipelineOptions, SplitSpec};
use crate::distill::{DistillConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::AdamWConfig;
use crate::student::StudentConfig;
use crate::synth::SynthConfig;
use crate::teacher::TeacherConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // data
    pub max_gap_minutes: usize,
    pub time_encoding: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub train_stride: usize,
    pub val_stride: usize,

    // teacher
    pub history: usize,
    pub horizon: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,

    // student
    pub hidden_dim: usize,
    pub embed_dim: usize,

    // optimization
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub zero_init_head: bool,

    // distillation
    pub gamma: f64,
    pub weights: Option<Vec<f64>>,
    pub lambda: f64,
    pub logit: bool,
    pub cache_targets: bool,

    // synthetic data
    pub minutes: usize,
    pub noise_std: f64,

    // evaluation and benchmarking
    pub trace_steps: usize,
    pub bench_batch: usize,
    pub warmup: usize,
    pub iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let teacher = TeacherConfig::default();
        let student = StudentConfig::default();
        let split = SplitSpec::default();
        let opt = AdamWConfig::default();
        let train = TrainConfig::default();
        let distill = DistillConfig::default();
        let synth = SynthConfig::default();
        let bench = BenchOptions::default();
        Self {
            seed: 0,
            max_gap_minutes: crate::data::DEFAULT_MAX_GAP_MINUTES,
            time_encoding: false,
            train_frac: split.train,
            val_frac: split.val,
            test_frac: split.test,
            train_stride: 1,
            val_stride: 1,
            history: teacher.history,
            horizon: teacher.horizon,
            model_dim: teacher.model_dim,
            layers: teacher.layers,
            heads: teacher.heads,
            ff_dim: teacher.ff_dim,
            hidden_dim: student.hidden_dim,
            embed_dim: student.embed_dim,
            epochs: train.epochs,
            batch_size: train.batch_size,
            patience: train.patience,
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            zero_init_head: train.zero_init_head,
            gamma: distill.gamma,
            weights: None,
            lambda: distill.lambda,
            logit: distill.logit,
            cache_targets: distill.cache_targets,
            minutes: synth.n_minutes,
            noise_std: synth.noise_std,
            trace_steps: 300,
            bench_batch: bench.batch,
            warmup: bench.warmup,
            iters: bench.iters,
        }
    }
}

fn field(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| field(&path.display().to_string(), e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Token width implied by the feature set.
    pub fn input_dim(&self) -> usize {
        1 + crate::data::FEATURE_CHANNELS + if self.time_encoding { 2 } else { 0 }
    }

    pub fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            split: SplitSpec {
                train: self.train_frac,
                val: self.val_frac,
                test: self.test_frac,
            },
            max_gap_minutes: self.max_gap_minutes,
            time_encoding: self.time_encoding,
        }
    }

    pub fn teacher(&self) -> TeacherConfig {
        TeacherConfig {
            history: self.history,
            horizon: self.horizon,
            input_dim: self.input_dim(),
            model_dim: self.model_dim,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
        }
    }

    pub fn student(&self) -> StudentConfig {
        StudentConfig {
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            optimizer: AdamWConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
            seed: self.seed,
            zero_init_head: self.zero_init_head,
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            train: self.train(),
            gamma: self.gamma,
            weights: self.weights.clone(),
            lambda: self.lambda,
            logit: self.logit,
            cache_targets: self.cache_targets,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            n_minutes: self.minutes,
            noise_std: self.noise_std,
            ..SynthConfig::default()
        }
    }

    pub fn bench(&self) -> BenchOptions {
        BenchOptions {
            batch: self.bench_batch,
            warmup: self.warmup,
            iters: self.iters,
            seed: self.seed,
        }
    }

    /// Checks every section, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        self.pipeline().split.validate()?;
        if self.max_gap_minutes == 0 {
            return Err(Error::Config("max_gap_minutes: must be at least 1".into()));
        }
        if self.train_stride == 0 {
            return Err(Error::Config("train_stride: must be at least 1".into()));
        }
        if self.val_stride == 0 {
            return Err(Error::Config("val_stride: must be at least 1".into()));
        }
        self.teacher().validate().map_err(|e| field("teacher", e))?;
        self.student().validate().map_err(|e| field("student", e))?;
        self.distill().validate()?;
        if let Some(w) = &self.weights {
            if w.len() != self.horizon {
                return Err(Error::Config(format!(
                    "weights: {} values for horizon {}",
                    w.len(),
                    self.horizon
                )));
            }
        }
        self.synth().validate().map_err(|e| field("synth", e))?;
        if self.trace_steps == 0 {
            return Err(Error::Config("trace_steps: must be at least 1".into()));
        }
        self.bench().validate()
    }
}
