use crate::error::{dim_err, Error, Result};
use crate::numerics::Linear;
use crate::teacher::TrajectoryForecast;

/// Tolerance on `Σ w_h = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Checks that `w` is a valid set of convex weights.
pub fn validate_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Config("projection weights are empty".into()));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Config(format!("projection weight {bad} is negative or not finite")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Config(format!("projection weights sum to {s}, not 1")));
    }
    Ok(())
}

/// `w_h ∝ γ^{h−1}`, normalized.
pub fn default_weights(horizon: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("decay gamma must lie in (0, 1], got {gamma}")));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let raw: Vec<f64> = (0..horizon).map(|h| gamma.powi(h as i32)).collect();
    let s: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / s).collect())
}

/// Soft target `P̃ = Σ_h w_h P̂_{t+h}` over the teacher's absolute forecasts.
pub fn convex_project(traj: &TrajectoryForecast, w: &[f64]) -> Result<f32> {
    if w.len() != traj.absolute.len() {
        return Err(Error::Config(format!(
            "{} projection weights for a horizon of {}",
            w.len(),
            traj.absolute.len()
        )));
    }
    Ok(project(&traj.absolute, w) as f32)
}

pub(crate) fn project(values: &[f32], w: &[f64]) -> f64 {
    values.iter().zip(w).map(|(&v, &wh)| wh * v as f64).sum()
}

/// `(P̂^S − P̃^T)²`.
pub fn logit_loss(student_forecast: f32, soft_target: f32) -> f32 {
    let d = student_forecast - soft_target;
    d * d
}

/// `‖z_S − (c_T·W_t + b_t)‖²`, with `W_t` stored `[d_m, d_z]`.
pub fn feature_loss(z_student: &[f32], c_teacher: &[f32], proj: &Linear) -> Result<f32> {
    if c_teacher.len() != proj.inputs() || z_student.len() != proj.outputs() {
        return Err(dim_err!(
            "feature loss: z has {} values, c has {}, projection is {}→{}",
            z_student.len(),
            c_teacher.len(),
            proj.inputs(),
            proj.outputs()
        ));
    }
    let (w, b, dz) = (proj.weight.data(), proj.bias.data(), proj.outputs());
    Ok(z_student
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let target = b[j] + c_teacher.iter().enumerate().map(|(i, &c)| c * w[i * dz + j]).sum::<f32>();
            (z - target) * (z - target)
        })
        .sum())
}

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `mse + logit + λ·feat`.
pub fn composite_loss(mse: f32, logit: f32, feat: f32, lambda: f64) -> Result<f32> {
    validate_lambda(lambda)?;
    Ok(mse + logit + lambda as f32 * feat)
}
