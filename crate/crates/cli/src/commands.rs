use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use s2pd::bench::{bench_checkpoint, BenchReport};
use s2pd::checkpoint::{self, LoadOptions, Model};
use s2pd::config::RunConfig;
use s2pd::data::{prepare, read_csv, windows_over, write_csv, PreparedData, Window};
use s2pd::distill::{distill_student, train_teacher, DistillConfig, EpochMetrics};
use s2pd::error::{Error, Result};
use s2pd::eval::{
    eval_one_step, eval_student_rollout, eval_trajectory, export_trace, write_trace, EvalReport, HorizonMode,
};
use s2pd::synth::generate;
use serde::Serialize;

use crate::run_dir;

pub fn synth(cfg: &RunConfig, output: &Path) -> Result<()> {
    let records = generate(&cfg.synth())?;
    write_csv(output, &records)?;
    eprintln!("wrote {} records to {}", records.len(), output.display());
    Ok(())
}

fn load_data(cfg: &RunConfig, path: &Path) -> Result<PreparedData> {
    let data = prepare(&read_csv(path)?, &cfg.pipeline())?;
    if data.input_dim() != cfg.input_dim() {
        return Err(Error::Config(format!(
            "data has {} input channels but the config implies {}",
            data.input_dim(),
            cfg.input_dim()
        )));
    }
    Ok(data)
}

fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,val_mae,val_rmse\n");
    for m in history {
        writeln!(s, "{},{},{},{}", m.epoch, m.train_loss, m.val_mae, m.val_rmse).unwrap();
    }
    s
}

fn log_epochs(history: &[EpochMetrics]) {
    for m in history {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val mae {:.4}  val rmse {:.4}",
            m.epoch, m.train_loss, m.val_mae, m.val_rmse
        );
    }
}

fn start_run(cfg: &RunConfig, out_dir: &Path, prefix: &str) -> Result<PathBuf> {
    let dir = run_dir::create(out_dir, prefix)?;
    run_dir::write(&dir.join("config.json"), &cfg.to_json()?)?;
    Ok(dir)
}

pub fn train_teacher_cmd(cfg: &RunConfig, data: &Path, out_dir: &Path) -> Result<PathBuf> {
    let prepared = load_data(cfg, data)?;
    let tcfg = cfg.teacher();
    let train = windows_over(&prepared.train, tcfg.history, tcfg.horizon, cfg.train_stride);
    let val = windows_over(&prepared.val, tcfg.history, tcfg.horizon, cfg.val_stride);
    eprintln!("teacher: {} parameters, {} train / {} val windows", tcfg.param_count(), train.len(), val.len());

    let dir = start_run(cfg, out_dir, "teacher")?;
    let run = train_teacher(&train, &val, tcfg, &cfg.train())?;
    log_epochs(&run.history);
    run_dir::write(&dir.join("metrics.csv"), &metrics_csv(&run.history))?;
    checkpoint::save_teacher(&run.best, &dir.join("best.ckpt"))?;
    checkpoint::save_teacher(&run.last, &dir.join("final.ckpt"))?;
    eprintln!("best epoch {}; run written to {}", run.best_epoch, dir.display());
    Ok(dir)
}

pub fn distill_student_cmd(
    cfg: &RunConfig,
    data: &Path,
    teacher_path: &Path,
    no_distill: bool,
    out_dir: &Path,
) -> Result<PathBuf> {
    let teacher = checkpoint::load(teacher_path, LoadOptions::default())?.into_teacher()?;
    let tcfg = *teacher.config();
    if (tcfg.history, tcfg.horizon) != (cfg.history, cfg.horizon) {
        return Err(Error::Config(format!(
            "teacher checkpoint has history {} and horizon {}, config says {} and {}",
            tcfg.history, tcfg.horizon, cfg.history, cfg.horizon
        )));
    }
    let prepared = load_data(cfg, data)?;
    let train = windows_over(&prepared.train, tcfg.history, tcfg.horizon, cfg.train_stride);
    let val = windows_over(&prepared.val, tcfg.history, tcfg.horizon, cfg.val_stride);
    let dcfg = if no_distill {
        DistillConfig::no_distill(cfg.train())
    } else {
        cfg.distill()
    };

    let dir = start_run(cfg, out_dir, if no_distill { "student-plain" } else { "student" })?;
    let run = distill_student(&train, &val, &teacher, cfg.student(), &dcfg)?;
    log_epochs(&run.history);
    run_dir::write(&dir.join("metrics.csv"), &metrics_csv(&run.history))?;
    checkpoint::save_student(&run.best, &dir.join("best.ckpt"))?;
    checkpoint::save_student(&run.last, &dir.join("final.ckpt"))?;
    eprintln!("best epoch {}; run written to {}", run.best_epoch, dir.display());
    Ok(dir)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a str,
    checkpoint: String,
    #[serde(flatten)]
    report: EvalReport,
}

pub struct EvalArgs<'a> {
    pub model: &'a Path,
    pub data: &'a Path,
    pub mode: HorizonMode,
    pub watts: bool,
    pub trace: Option<&'a Path>,
    pub skip_embed_head: bool,
}

fn report_for(model: &Model, windows: &[Window], mode: HorizonMode) -> Result<EvalReport> {
    match (model, mode) {
        (Model::Teacher(t), HorizonMode::OneStep) => eval_one_step(t, windows),
        (Model::Teacher(t), HorizonMode::Trajectory) => eval_trajectory(t, windows),
        (Model::Student(s), HorizonMode::OneStep) => eval_one_step(s, windows),
        (Model::Student(s), HorizonMode::Trajectory) => eval_student_rollout(s, windows),
    }
}

pub fn evaluate(cfg: &RunConfig, args: &EvalArgs) -> Result<String> {
    let model = checkpoint::load(
        args.model,
        LoadOptions {
            skip_embed_head: args.skip_embed_head,
        },
    )?;
    let (history, horizon, name) = match &model {
        Model::Teacher(t) => (t.config().history, t.config().horizon, "teacher"),
        Model::Student(_) => (cfg.history, cfg.horizon, "student"),
    };
    let prepared = load_data(cfg, args.data)?;
    let test = windows_over(&prepared.test, history, horizon, 1);
    let mut report = report_for(&model, &test, args.mode)?;
    if args.watts {
        let (lo, hi) = (prepared.scaler.min()[0], prepared.scaler.max()[0]);
        report = report.with_power_range(hi - lo);
    }

    if let Some(path) = args.trace {
        // The trace runs over the first contiguous test segment only.
        let first = prepared
            .test
            .first()
            .ok_or_else(|| Error::Usage("test split is empty".into()))?;
        let segment = windows_over(std::slice::from_ref(first), history, horizon, 1);
        let steps = cfg.trace_steps.min(segment.len());
        let rows = match &model {
            Model::Teacher(t) => export_trace(t, &segment, steps)?,
            Model::Student(s) => export_trace(s, &segment, steps)?,
        };
        write_trace(&rows, path)?;
        eprintln!("wrote {} trace rows to {}", rows.len(), path.display());
    }

    eprintln!("{:<10} {:<11} {:>10} {:>10} {:>9}", "model", "mode", "MAE %", "RMSE %", "samples");
    eprintln!(
        "{:<10} {:<11} {:>10.4} {:>10.4} {:>9}",
        name,
        match args.mode {
            HorizonMode::OneStep => "one-step",
            HorizonMode::Trajectory => "trajectory",
        },
        report.mae_pct,
        report.rmse_pct,
        report.n_samples
    );
    Ok(serde_json::to_string_pretty(&EvalOutput {
        model: name,
        checkpoint: args.model.display().to_string(),
        report,
    })?)
}

pub fn bench(cfg: &RunConfig, model: &Path, skip_embed_head: bool) -> Result<BenchReport> {
    let report = bench_checkpoint(model, LoadOptions { skip_embed_head }, &cfg.bench())?;
    eprintln!(
        "{}: {} params, {:.2} KB fp32, {:.2} KB on disk, latency mean {:.4} ms, p95 {:.4} ms ({})",
        report.model,
        report.params,
        report.fp32_mem_kb,
        report.on_disk_kb,
        report.latency_mean_ms,
        report.latency_p95_ms,
        report.thread_pinning
    );
    Ok(report)
}
