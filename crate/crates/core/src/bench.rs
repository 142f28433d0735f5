//! Deployment measurements: parameter count, FP32 memory, on-disk size and
//! single-thread CPU latency.
//!
//! Latency is wall-clock per forward call on a monotonic clock, after
//! warmup, with the calling thread pinned to one CPU. The student is timed
//! on its residual path only; the embedding head is a training artifact.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, LoadOptions, Model};
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// Fewest measured iterations accepted.
pub const MIN_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch: 1,
            warmup: 50,
            iters: 1000,
            seed: 0,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("bench batch must be at least 1".into()));
        }
        if self.iters < MIN_ITERS {
            return Err(Error::Config(format!(
                "bench needs at least {MIN_ITERS} measured iterations, got {}",
                self.iters
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub params: usize,
    pub fp32_mem_kb: f64,
    pub on_disk_kb: f64,
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_min_ms: f64,
    pub batch_size: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub thread_pinning: String,
}

/// Nearest-rank percentile of ascending `sorted`: the value at 1-based rank
/// `⌈p·n⌉`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Usage("percentile of an empty sample".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Usage(format!("percentile {p} outside (0, 1]")));
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Exact size of a checkpoint file in bytes.
pub fn measure_disk(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

/// Restores the thread's original CPU mask when dropped.
pub struct CpuPin {
    #[cfg(target_os = "linux")]
    original: libc::cpu_set_t,
    cpu: usize,
}

impl CpuPin {
    pub fn cpu(&self) -> usize {
        self.cpu
    }
}

#[cfg(target_os = "linux")]
impl Drop for CpuPin {
    fn drop(&mut self) {
        // SAFETY: `original` was filled by sched_getaffinity for this thread.
        unsafe {
            libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &self.original);
        }
    }
}

/// Pins the calling thread to the CPU it is running on and checks that the
/// kernel now reports exactly one allowed CPU.
#[cfg(target_os = "linux")]
pub fn pin_current_thread() -> Result<CpuPin> {
    let size = std::mem::size_of::<libc::cpu_set_t>();
    // SAFETY: plain libc calls on zero-initialized cpu_set_t values owned
    // by this frame; pid 0 addresses the calling thread.
    unsafe {
        let mut original: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, size, &mut original) != 0 {
            return Err(Error::Bench(format!(
                "sched_getaffinity failed: {}",
                std::io::Error::last_os_error()
            )));
        }
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return Err(Error::Bench(format!("sched_getcpu failed: {}", std::io::Error::last_os_error())));
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        if libc::sched_setaffinity(0, size, &set) != 0 {
            return Err(Error::Bench(format!(
                "cannot pin benchmark thread to cpu {cpu}: {}",
                std::io::Error::last_os_error()
            )));
        }
        let mut check: libc::cpu_set_t = std::mem::zeroed();
        libc::sched_getaffinity(0, size, &mut check);
        if libc::CPU_COUNT(&check) != 1 {
            libc::sched_setaffinity(0, size, &original);
            return Err(Error::Bench("thread affinity did not narrow to a single cpu".into()));
        }
        Ok(CpuPin {
            original,
            cpu: cpu as usize,
        })
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread() -> Result<CpuPin> {
    Err(Error::Bench("single-cpu pinning is only implemented on Linux".into()))
}

fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen::<f32>()).collect()).expect("shape")
}

/// Times single-threaded forward passes of `model` on fixed random inputs
/// in `[0, 1)`.
pub fn bench_latency(model: &Model, on_disk_bytes: u64, opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    let mut rng = RngState::new(opts.seed);
    let b = opts.batch;
    let mut call: Box<dyn FnMut() -> Result<f32>> = match model {
        Model::Teacher(t) => {
            let c = *t.config();
            let tokens = random_tensor(&[b * c.history, c.input_dim], &mut rng);
            Box::new(move || Ok(t.predict_tokens(black_box(tokens.clone()), b)?[0]))
        }
        Model::Student(s) => {
            let inputs = random_tensor(&[b, s.config().input_dim], &mut rng).into_data();
            Box::new(move || Ok(s.predict_residuals(black_box(&inputs), b)?[0]))
        }
    };

    let pin = pin_current_thread()?;
    for _ in 0..opts.warmup {
        black_box(call()?);
    }
    let mut samples = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        let start = Instant::now();
        black_box(call()?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let note = format!("single thread pinned to cpu {}", pin.cpu());
    drop(pin);

    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    let params = model.param_count();
    Ok(BenchReport {
        model: match model {
            Model::Teacher(_) => "teacher".into(),
            Model::Student(_) => "student".into(),
        },
        params,
        fp32_mem_kb: 4.0 * params as f64 / 1024.0,
        on_disk_kb: on_disk_bytes as f64 / 1024.0,
        latency_mean_ms: mean,
        latency_p95_ms: nearest_rank(&samples, 0.95)?,
        latency_min_ms: samples[0],
        batch_size: b,
        warmup_iters: opts.warmup,
        measured_iters: opts.iters,
        thread_pinning: note,
    })
}

/// Loads a checkpoint and benchmarks it.
pub fn bench_checkpoint(path: &Path, load: LoadOptions, opts: &BenchOptions) -> Result<BenchReport> {
    let model = checkpoint::load(path, load)?;
    bench_latency(&model, measure_disk(path)?, opts)
}
