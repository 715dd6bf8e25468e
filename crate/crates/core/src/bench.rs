//! Inference latency harness.
//!
//! Times forward passes only. Each run pushes one batch through the model;
//! the per-sample time of a run is its wall time divided by the batch size.
//! The first [`WARMUP_RUNS`] runs are discarded.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt::Write as _;
use std::hint::black_box;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSample;
use crate::error::{Error, Result};
use crate::model::{logits, ModelParams, Variant};
use crate::seed;
use crate::tensor::{Matrix, Real};

pub const WARMUP_RUNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub runs: usize,
    pub batch_size: usize,
    pub precision: Precision,
    /// 1 times the sequential path; more uses a worker pool per batch.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            batch_size: 64,
            precision: Precision::F32,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub n_min: usize,
    pub n_mean: f64,
    pub n_max: usize,
    pub max_len: usize,
    pub dim: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub mean_sample_time_s: f64,
    pub p99_sample_time_s: f64,
    pub samples_per_sec: f64,
    pub runs: usize,
    pub batch_size: usize,
    pub timed_samples: usize,
    pub total_time_s: f64,
    pub precision: Precision,
    pub workers: usize,
    pub shape: ShapeSummary,
    /// Peak heap bytes during the timed runs, when [`TrackingAllocator`] is installed.
    pub peak_heap_bytes: Option<usize>,
}

/// Time `cfg.runs` batches of forward passes over `samples` (cycled).
pub fn bench_inference(
    samples: &[PreparedSample],
    params: &ModelParams,
    variant: Variant,
    cfg: &BenchConfig,
    label: &str,
) -> Result<BenchReport> {
    match cfg.precision {
        Precision::F32 => bench_typed::<f32>(samples, params, variant, cfg, label),
        Precision::F64 => bench_typed::<f64>(samples, params, variant, cfg, label),
    }
}

fn bench_typed<T: Real>(
    samples: &[PreparedSample],
    params: &ModelParams,
    variant: Variant,
    cfg: &BenchConfig,
    label: &str,
) -> Result<BenchReport> {
    if samples.is_empty() || cfg.runs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "bench needs samples, runs >= 1 and batch_size >= 1".into(),
        ));
    }
    let dims = params.dims();
    if let Some(s) = samples
        .iter()
        .find(|s| s.max_len() != dims.max_len || s.vocab_size != dims.vocab_size)
    {
        return Err(Error::Config(format!(
            "bench sample has K={}, |E|={} but the model has K={}, |E|={}",
            s.max_len(),
            s.vocab_size,
            dims.max_len,
            dims.vocab_size
        )));
    }
    let typed_params: ModelParams<T> = params.cast();
    let inputs: Vec<(&[usize], Matrix<T>)> = samples
        .iter()
        .map(|s| (s.index_map.as_slice(), s.membership.cast()))
        .collect();
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let run_batch = |start: usize| -> Result<()> {
        let idx = |i: usize| (start + i) % inputs.len();
        match &pool {
            None => {
                for i in 0..cfg.batch_size {
                    let (map, c) = &inputs[idx(i)];
                    black_box(logits(map, c, &typed_params, variant)?);
                }
                Ok(())
            }
            Some(pool) => pool.install(|| {
                (0..cfg.batch_size).into_par_iter().try_for_each(|i| {
                    let (map, c) = &inputs[idx(i)];
                    black_box(logits(map, c, &typed_params, variant)?);
                    Ok(())
                })
            }),
        }
    };

    let mut per_sample = Vec::with_capacity(cfg.runs);
    let mut total = 0.0;
    let tracking = TrackingAllocator::is_active();
    for run in 0..WARMUP_RUNS + cfg.runs {
        if run == WARMUP_RUNS && tracking {
            TrackingAllocator::reset_peak();
        }
        let start = Instant::now();
        run_batch(run * cfg.batch_size)?;
        let elapsed = start.elapsed().as_secs_f64();
        if run >= WARMUP_RUNS {
            total += elapsed;
            per_sample.push(elapsed / cfg.batch_size as f64);
        }
    }
    let timed_samples = cfg.runs * cfg.batch_size;
    let ns: Vec<usize> = samples.iter().map(|s| s.universe_size()).collect();
    Ok(BenchReport {
        label: label.to_string(),
        mean_sample_time_s: total / timed_samples as f64,
        p99_sample_time_s: percentile(&per_sample, 0.99),
        samples_per_sec: timed_samples as f64 / total,
        runs: cfg.runs,
        batch_size: cfg.batch_size,
        timed_samples,
        total_time_s: total,
        precision: cfg.precision,
        workers: cfg.workers.max(1),
        shape: ShapeSummary {
            n_min: ns.iter().copied().min().unwrap_or(0),
            n_mean: ns.iter().sum::<usize>() as f64 / ns.len() as f64,
            n_max: ns.iter().copied().max().unwrap_or(0),
            max_len: dims.max_len,
            dim: dims.dim,
            vocab_size: dims.vocab_size,
        },
        peak_heap_bytes: tracking.then(TrackingAllocator::peak_bytes),
    })
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// A sample with exactly `n` universe elements over `max_len` steps. Each
/// element appears in each step with probability `density`, and at least once.
pub fn synthetic_sample(
    n: usize,
    max_len: usize,
    vocab_size: usize,
    density: f64,
    seed: u64,
) -> Result<PreparedSample> {
    if n == 0 || n > vocab_size || max_len == 0 {
        return Err(Error::Config(format!(
            "synthetic sample needs 1 <= N <= |E| and K >= 1, got N={n}, K={max_len}, |E|={vocab_size}"
        )));
    }
    let mut rng = seed::rng_for(seed, "bench-sample");
    let mut ids: Vec<usize> = (0..vocab_size).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n);
    ids.sort_unstable();
    let mut membership = Matrix::zeros(n, max_len);
    for i in 0..n {
        for j in 0..max_len {
            if rng.random_bool(density) {
                membership[(i, j)] = 1.0;
            }
        }
        let j = rng.random_range(0..max_len);
        membership[(i, j)] = 1.0;
    }
    Ok(PreparedSample {
        index_map: ids,
        membership,
        target: Vec::new(),
        vocab_size,
        history_len: max_len,
    })
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

pub fn reports_table(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>22} {:>21} {:>14}",
        "Shape", "Mean Sample Time (s)", "P99 Sample Time (s)", "samples/sec"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:>22.6} {:>21.6} {:>14.2}",
            r.label, r.mean_sample_time_s, r.p99_sample_time_s, r.samples_per_sec
        );
    }
    out
}

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// Counting wrapper around the system allocator. Install with
/// `#[global_allocator]` to get peak-heap numbers in bench reports.
pub struct TrackingAllocator;

impl TrackingAllocator {
    pub fn is_active() -> bool {
        ACTIVE.load(Ordering::Relaxed)
    }

    pub fn current_bytes() -> usize {
        CURRENT.load(Ordering::Relaxed)
    }

    pub fn peak_bytes() -> usize {
        PEAK.load(Ordering::Relaxed)
    }

    pub fn reset_peak() {
        PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            ACTIVE.store(true, Ordering::Relaxed);
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&[3.0], 0.99), 3.0);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (s, b, r2) = linear_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_sample_shape() {
        let s = synthetic_sample(50, 7, 200, 0.2, 1).unwrap();
        assert_eq!(s.universe_size(), 50);
        assert_eq!(s.membership.shape(), (50, 7));
        assert!(s.membership.row_iter().all(|r| r.contains(&1.0)));
        assert!(synthetic_sample(300, 7, 200, 0.2, 1).is_err());
    }

    #[test]
    fn report_arithmetic() {
        let p = init_params(200, 8, 7, 0).unwrap();
        let samples: Vec<_> = (0..5)
            .map(|i| synthetic_sample(20 + i, 7, 200, 0.3, i as u64).unwrap())
            .collect();
        for precision in [Precision::F32, Precision::F64] {
            for workers in [1, 2] {
                let cfg = BenchConfig {
                    runs: 10,
                    batch_size: 4,
                    precision,
                    workers,
                };
                let r = bench_inference(&samples, &p, Variant::Full, &cfg, "t").unwrap();
                assert_eq!(r.timed_samples, 40);
                let expect = r.timed_samples as f64 / r.total_time_s;
                assert!((r.samples_per_sec - expect).abs() / expect < 0.01);
                assert!((r.samples_per_sec * r.mean_sample_time_s - 1.0).abs() < 1e-9);
                assert!(r.p99_sample_time_s >= 0.0);
                assert_eq!((r.shape.n_min, r.shape.n_max), (20, 24));
            }
        }
        let table =
            reports_table(&[bench_inference(&samples, &p, Variant::Full, &BenchConfig::default(), "x").unwrap()]);
        assert!(table.contains("P99 Sample Time (s)"));
    }

    #[test]
    fn bench_rejects_mismatched_shapes() {
        let p = init_params(200, 8, 7, 0).unwrap();
        let s = synthetic_sample(20, 5, 200, 0.3, 0).unwrap();
        assert!(bench_inference(&[s], &p, Variant::Full, &BenchConfig::default(), "x").is_err());
    }
}
