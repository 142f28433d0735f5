//! Teacher training and sequence-to-point distillation into the student.
//!
//! The student objective per sample is
//!
//! ```text
//! L_S = (P̂ˢ − P_{t+1})² + (P̂ˢ − P̃ᵀ)² + λ ‖zˢ − φ_T(cᵀ)‖²
//! P̃ᵀ  = Σ_h w_h P̂ᵀ_{t+h}
//! ```
//!
//! with the teacher frozen and `φ_T` trained alongside the student.

mod losses;
mod train;

pub use losses::{
    composite_loss, convex_project, default_weights, feature_loss, logit_loss, validate_lambda, validate_weights,
    WEIGHT_SUM_TOL,
};
pub use train::{
    distill_student, student_batch_loss, student_gradients, teacher_gradients, teacher_targets, train_teacher, DistillConfig, DistillTargets,
    EpochMetrics, LossParts, NamedGrads, StudentRun, TeacherRun, TrainConfig,
};
