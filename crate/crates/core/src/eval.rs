//! Forecast accuracy on normalized targets, reported as percentages.
//!
//! `mae_pct = 100 · mean|e|`, `rmse_pct = 100 · sqrt(mean e²)` where `e` is
//! the prediction error in min-max normalized load units. Absolute errors
//! are sorted before summation so a report does not depend on the order in
//! which windows were evaluated.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::student::{rolling_forecast, StudentModel};
use crate::teacher::TeacherModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    OneStep,
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_pct: f64,
    pub rmse_pct: f64,
    pub n_samples: usize,
    pub mode: HorizonMode,
    /// Errors in watts, filled only when a power scale is supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae_watts: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse_watts: Option<f64>,
}

impl EvalReport {
    /// Builds a report from raw normalized errors.
    pub fn from_errors(errors: &[f64], mode: HorizonMode) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Usage("cannot evaluate on an empty test set".into()));
        }
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        if abs.iter().any(|e| !e.is_finite()) {
            return Err(Error::Training("non-finite forecast error".into()));
        }
        abs.sort_by(f64::total_cmp);
        let n = abs.len() as f64;
        let mae = abs.iter().sum::<f64>() / n;
        let mse = abs.iter().map(|e| e * e).sum::<f64>() / n;
        let report = Self {
            mae_pct: 100.0 * mae,
            rmse_pct: 100.0 * mse.sqrt(),
            n_samples: errors.len(),
            mode,
            mae_watts: None,
            rmse_watts: None,
        };
        debug_assert!(report.rmse_pct + 1e-9 >= report.mae_pct);
        Ok(report)
    }

    /// Adds watt-scale errors given the power channel's `max − min`.
    pub fn with_power_range(mut self, range_watts: f64) -> Self {
        self.mae_watts = Some(self.mae_pct / 100.0 * range_watts);
        self.rmse_watts = Some(self.rmse_pct / 100.0 * range_watts);
        self
    }
}

/// Anything that can produce `P̂_{t+1}` for a batch of windows.
pub trait OneStepForecaster {
    fn forecast_one_step(&self, windows: &[Window]) -> Result<Vec<f32>>;
}

/// Chunk size for teacher inference during evaluation.
pub const TEACHER_EVAL_CHUNK: usize = 64;

impl OneStepForecaster for TeacherModel {
    fn forecast_one_step(&self, windows: &[Window]) -> Result<Vec<f32>> {
        Ok(self
            .forecast_all(windows, TEACHER_EVAL_CHUNK)?
            .into_iter()
            .map(|f| f.absolute[0])
            .collect())
    }
}

impl OneStepForecaster for StudentModel {
    fn forecast_one_step(&self, windows: &[Window]) -> Result<Vec<f32>> {
        let inputs: Vec<f32> = windows.iter().flat_map(|w| w.point_input()).collect();
        let res = self.predict_residuals(&inputs, windows.len())?;
        Ok(windows.iter().zip(res).map(|(w, r)| w.anchor + r).collect())
    }
}

/// Persistence baseline `P̂_{t+1} = P_t`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Persistence;

impl OneStepForecaster for Persistence {
    fn forecast_one_step(&self, windows: &[Window]) -> Result<Vec<f32>> {
        Ok(windows.iter().map(|w| w.anchor).collect())
    }
}

/// One-step-ahead accuracy: each window is re-anchored on its observed
/// `P_t`.
pub fn eval_one_step(model: &dyn OneStepForecaster, windows: &[Window]) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty test set".into()));
    }
    let preds = model.forecast_one_step(windows)?;
    let errors: Vec<f64> = windows
        .iter()
        .zip(&preds)
        .map(|(w, &p)| p as f64 - w.future_load[0] as f64)
        .collect();
    EvalReport::from_errors(&errors, HorizonMode::OneStep)
}

/// Teacher accuracy pooled over all `H` steps of every window.
pub fn eval_trajectory(teacher: &TeacherModel, windows: &[Window]) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty test set".into()));
    }
    let mut errors = Vec::with_capacity(windows.len() * teacher.config().horizon);
    for (w, f) in windows.iter().zip(teacher.forecast_all(windows, TEACHER_EVAL_CHUNK)?) {
        errors.extend(f.absolute.iter().zip(&w.future_load).map(|(&p, &y)| p as f64 - y as f64));
    }
    EvalReport::from_errors(&errors, HorizonMode::Trajectory)
}

/// Student accuracy over `H` steps by pure recursion from each anchor,
/// features held at their anchor values.
pub fn eval_student_rollout(student: &StudentModel, windows: &[Window]) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty test set".into()));
    }
    let mut errors = Vec::new();
    for w in windows {
        let path = rolling_forecast(student, w.anchor, w.anchor_features(), w.horizon())?;
        errors.extend(path.iter().zip(&w.future_load).map(|(&p, &y)| p as f64 - y as f64));
    }
    EvalReport::from_errors(&errors, HorizonMode::Trajectory)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub truth: f32,
    pub pred: f32,
}

/// One-step re-anchored trace over consecutive windows of a test segment.
/// `windows` must come from one contiguous segment at stride 1; row `t`
/// forecasts the load one step after the `t`-th anchor.
pub fn export_trace(model: &dyn OneStepForecaster, windows: &[Window], n_steps: usize) -> Result<Vec<TraceRow>> {
    if windows.len() < n_steps {
        return Err(Error::Usage(format!(
            "segment has {} forecastable steps, {} requested",
            windows.len(),
            n_steps
        )));
    }
    let preds = model.forecast_one_step(&windows[..n_steps])?;
    Ok(windows[..n_steps]
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(t, (w, pred))| TraceRow {
            t,
            truth: w.future_load[0],
            pred,
        })
        .collect())
}

pub fn write_trace_to<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<trace writer>", e))?;
    Ok(())
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(rows, file)
}
