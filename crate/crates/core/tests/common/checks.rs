//! Structural, oracle and invariant checks shared by the oracle and
//! acceptance targets. Each returns a short detail line on success.

use super::*;
use s2pd::bench::nearest_rank;
use s2pd::checkpoint::{self, LoadOptions};
use s2pd::data::{Scaler, TelemetryRecord, CHANNELS};
use s2pd::distill::{convex_project, default_weights};
use s2pd::eval::{EvalReport, HorizonMode};
use s2pd::numerics::{Linear, RngState, Tape};
use s2pd::student::{StudentConfig, StudentModel};
use s2pd::teacher::{TeacherModel, TrajectoryForecast};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Shape sum written out for the encoder layout: input projection, per
/// layer Q/K/V/O, two norms and the feed-forward pair, pooling vector and
/// head.
pub fn teacher_closed_form(c: &TeacherConfig) -> usize {
    let (du, dm, dff, h) = (c.input_dim, c.model_dim, c.ff_dim, c.horizon);
    let layer = 4 * dm * dm + 2 * dm + (dm * dff + dff) + (dff * dm + dm) + 2 * dm;
    (du * dm + dm) + c.layers * layer + dm + (dm * h + h)
}

pub fn student_closed_form(c: &StudentConfig, embed: bool) -> usize {
    let (du, dh, dz) = (c.input_dim, c.hidden_dim, c.embed_dim);
    (du * dh + dh) + (dh * dh + dh) + (dh + 1) + if embed { dh * dz + dz } else { 0 }
}

pub fn structural() -> Check {
    let tc = TeacherConfig::default();
    let sc = StudentConfig::default();
    let teacher = TeacherModel::init(tc, &mut RngState::new(0)).map_err(|e| e.to_string())?;
    let student = StudentModel::init(sc, &mut RngState::new(0)).map_err(|e| e.to_string())?;
    let t = teacher.param_count();
    let s = student.count_params();
    ensure(t == teacher_closed_form(&tc) && t == tc.param_count(), || {
        format!("teacher count {t}, closed form {}", teacher_closed_form(&tc))
    })?;
    ensure(s == student_closed_form(&sc, true) && s == sc.param_count(true), || {
        format!("student count {s}, closed form {}", student_closed_form(&sc, true))
    })?;
    let deploy = student.count_deploy_params();
    ensure(deploy == student_closed_form(&sc, false), || format!("deploy count {deploy}"))?;
    ensure(student.fp32_bytes() == 4 * s, || format!("fp32 bytes {} for {s} params", student.fp32_bytes()))?;
    ensure(10 * s < t, || format!("student {s} x10 is not below teacher {t}"))?;
    Ok(format!("teacher {t}, student {s} ({deploy} deployed), ratio {:.1}", t as f64 / s as f64))
}

/// Tape encoder, pooling and head against the f64 reference on the
/// downsized config.
pub fn encoder_oracle() -> Check {
    let cfg = small_teacher();
    let model = TeacherModel::init(cfg, &mut RngState::new(7)).unwrap();
    let windows = random_windows(8, 4, cfg.history, cfg.horizon);
    let refs: Vec<_> = windows.iter().collect();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let tokens = tape.constant(model.batch_tokens(&refs).unwrap());
    let g = model.forward(&mut tape, &vars, tokens, refs.len()).unwrap();
    let p = params_of(model.named_params());

    let (l, dm, h) = (cfg.history, cfg.model_dim, cfg.horizon);
    let mut worst = 0.0f64;
    for (b, w) in windows.iter().enumerate() {
        let r = teacher_forward(&cfg, &p, w);
        let pairs: [(&str, &[f32], &[f64]); 4] = [
            ("encoded", &tape.value(g.encoded).data()[b * l * dm..(b + 1) * l * dm], &r.encoded),
            ("pool weights", &tape.value(g.pool_weights).data()[b * l..(b + 1) * l], &r.alpha),
            ("context", &tape.value(g.context).data()[b * dm..(b + 1) * dm], &r.context),
            ("residuals", &tape.value(g.residuals).data()[b * h..(b + 1) * h], &r.residuals),
        ];
        for (name, got, want) in pairs {
            for (x, y) in got.iter().zip(want) {
                let d = (*x as f64 - y).abs();
                ensure(d <= 1e-5, || format!("{name} of window {b}: {x} vs {y}"))?;
                worst = worst.max(d);
            }
        }
    }
    Ok(format!("max abs deviation {worst:.2e}"))
}

pub fn convex_projection_hand() -> Check {
    let traj = TrajectoryForecast::new(0.0, vec![1.0, 2.0, 4.0], vec![], vec![]);
    let got = convex_project(&traj, &[0.5, 0.25, 0.25]).map_err(|e| e.to_string())?;
    ensure(got == 2.0, || format!("0.5·1 + 0.25·2 + 0.25·4 gave {got}"))?;
    let traj = TrajectoryForecast::new(1.0, vec![0.0, 3.0], vec![], vec![]);
    let got = convex_project(&traj, &[0.75, 0.25]).map_err(|e| e.to_string())?;
    ensure(got == 1.75, || format!("0.75·1 + 0.25·4 gave {got}"))?;
    let w = default_weights(2, 0.5).map_err(|e| e.to_string())?;
    ensure(w == [2.0 / 3.0, 1.0 / 3.0], || format!("default_weights(2, 0.5) = {w:?}"))?;
    Ok("exact".into())
}

/// Nearest rank against the counting definition: the smallest sample `v`
/// with at least `p·n` samples at or below it.
pub fn nearest_rank_oracle() -> Check {
    let mut r = rng(3);
    for n in [1usize, 2, 7, 20, 100, 1000] {
        let mut xs: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..10.0)).collect();
        xs.sort_by(f64::total_cmp);
        for p in [0.5, 0.9, 0.95, 0.99, 1.0] {
            let want = *xs
                .iter()
                .find(|&&v| xs.iter().filter(|&&u| u <= v).count() as f64 >= p * n as f64)
                .unwrap();
            let got = nearest_rank(&xs, p).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("n={n} p={p}: {got} vs {want}"))?;
        }
    }
    Ok("6 sample sizes x 5 levels".into())
}

pub fn pooling_normalization() -> Check {
    let cfg = small_teacher();
    let model = TeacherModel::init(cfg, &mut RngState::new(11)).unwrap();
    let windows = random_windows(12, 16, cfg.history, cfg.horizon);
    let mut worst = 0.0f64;
    for f in model.forecast_all(&windows, 5).unwrap() {
        ensure(f.pool_weights.iter().all(|&a| a >= 0.0), || "negative pooling weight".into())?;
        let s: f64 = f.pool_weights.iter().map(|&a| a as f64).sum();
        worst = worst.max((s - 1.0).abs());
    }
    let mut tape = Tape::new();
    let x = tape.constant(s2pd::numerics::Tensor::new(vec![4, 9], uniform(&mut rng(13), 36, -20.0, 20.0)).unwrap());
    let sm = tape.softmax(x).unwrap();
    for row in tape.value(sm).data().chunks(9) {
        worst = worst.max((row.iter().map(|&a| a as f64).sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-6, || format!("row sum off by {worst:.2e}"))?;
    Ok(format!("max |sum - 1| = {worst:.1e}"))
}

pub fn residual_anchoring() -> Check {
    let cfg = small_teacher();
    let mut teacher = TeacherModel::init(cfg, &mut RngState::new(14)).unwrap();
    teacher.head = Linear::zeros(cfg.model_dim, cfg.horizon);
    let windows = random_windows(15, 8, cfg.history, cfg.horizon);
    for (f, w) in teacher.forecast_all(&windows, 3).unwrap().iter().zip(&windows) {
        ensure(f.absolute.iter().all(|&a| a == w.anchor), || "teacher forecast drifted from anchor".into())?;
    }
    let sc = StudentConfig::default();
    let mut student = StudentModel::init(sc, &mut RngState::new(16)).unwrap();
    student.residual_head = Linear::zeros(sc.hidden_dim, 1);
    let inputs: Vec<f32> = windows.iter().flat_map(|w| w.point_input()).collect();
    let res = student.predict_residuals(&inputs, windows.len()).unwrap();
    for (r, w) in res.iter().zip(&windows) {
        ensure(w.anchor + r == w.anchor, || "student forecast drifted from anchor".into())?;
    }
    Ok("teacher and student".into())
}

pub fn scaler_round_trip() -> Check {
    let mut r = rng(17);
    let records: Vec<TelemetryRecord> = (0..200)
        .map(|i| TelemetryRecord {
            timestamp: 60 * i,
            power: r.gen_range(100.0..1200.0),
            gpu_util: r.gen_range(0.0..1.0),
            mem_util: r.gen_range(0.0..1.0),
            temperature: r.gen_range(25.0..90.0),
            job_count: r.gen_range(0..8),
            job_switch: r.gen_range(0..2),
            gpu_count: r.gen_range(1..5),
        })
        .collect();
    let scaler = Scaler::fit(&records).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for rec in &records {
        let ch = rec.channels();
        for c in 0..CHANNELS {
            let back = scaler.inverse_value(c, scaler.transform_value(c, ch[c]));
            worst = worst.max((back - ch[c]).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("round trip off by {worst:.2e}"))?;
    Ok(format!("max error {worst:.1e}"))
}

pub fn projection_bounded() -> Check {
    let mut r = rng(18);
    for _ in 0..500 {
        let h = r.gen_range(1..20);
        let traj: Vec<f32> = uniform(&mut r, h, -5.0, 5.0);
        let mut w: Vec<f64> = (0..h).map(|_| r.gen_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let f = TrajectoryForecast::new(0.0, traj.clone(), vec![], vec![]);
        let Ok(p) = convex_project(&f, &w) else {
            continue;
        };
        let lo = traj.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = traj.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        ensure(lo <= p && p <= hi, || format!("{p} outside [{lo}, {hi}]"))?;
    }
    Ok("500 random trajectories".into())
}

pub fn rmse_dominates_mae() -> Check {
    let mut r = rng(19);
    for n in 1..200 {
        let errs: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let rep = EvalReport::from_errors(&errs, HorizonMode::OneStep).map_err(|e| e.to_string())?;
        ensure(rep.rmse_pct >= rep.mae_pct, || format!("rmse {} < mae {}", rep.rmse_pct, rep.mae_pct))?;
    }
    Ok("199 random error vectors".into())
}

pub fn checkpoint_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_teacher();
    let teacher = TeacherModel::init(cfg, &mut RngState::new(20)).unwrap();
    let windows = random_windows(21, 4, cfg.history, cfg.horizon);
    let refs: Vec<_> = windows.iter().collect();
    let tp = dir.path().join("t.ckpt");
    checkpoint::save_teacher(&teacher, &tp).map_err(|e| e.to_string())?;
    let back = checkpoint::load(&tp, LoadOptions::default()).and_then(|m| m.into_teacher()).map_err(|e| e.to_string())?;
    let a = teacher.forecast_batch(&refs).unwrap();
    let b = back.forecast_batch(&refs).unwrap();
    ensure(a == b, || "teacher outputs changed after reload".into())?;

    let student = StudentModel::init(StudentConfig::default(), &mut RngState::new(22)).unwrap();
    let sp = dir.path().join("s.ckpt");
    checkpoint::save_student(&student, &sp).map_err(|e| e.to_string())?;
    let inputs: Vec<f32> = windows.iter().flat_map(|w| w.point_input()).collect();
    for skip in [false, true] {
        let back = checkpoint::load(&sp, LoadOptions { skip_embed_head: skip })
            .and_then(|m| m.into_student())
            .map_err(|e| e.to_string())?;
        let a = student.predict_residuals(&inputs, 4).unwrap();
        let b = back.predict_residuals(&inputs, 4).unwrap();
        ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("student outputs changed after reload (skip_embed_head={skip})")
        })?;
    }
    Ok("teacher and student, bit-identical".into())
}
