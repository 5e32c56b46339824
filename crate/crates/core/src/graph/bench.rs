//! Single-thread synthesis timing.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::model::Model;
use crate::graph::spec::{text_to_ids, ModelSpec};
use crate::graph::synth::{synthesize, SynthOptions};
use crate::tensor::Tensor;

const BENCH_TEXT: &str = "the quick brown fox jumps over the lazy dog. ";

/// `n` ids of deterministic benchmark text, the last one end-of-sentence.
pub fn bench_ids(n: usize) -> Vec<usize> {
    let chars: String = BENCH_TEXT
        .chars()
        .cycle()
        .take(n.saturating_sub(1))
        .collect();
    text_to_ids(&chars)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub run: String,
    pub frames: usize,
    pub threads: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub model: String,
    pub runs: Vec<BenchRow>,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    /// Output of the last timed run; identical across runs and seeds-equal invocations.
    pub mel: Tensor<f32>,
}

impl BenchReport {
    /// Timed runs followed by `median`, `p10` and `p90` summary rows.
    pub fn rows(&self) -> Vec<BenchRow> {
        let frames = self.mel.cols();
        let mut rows = self.runs.clone();
        for (name, s) in [
            ("median", self.median),
            ("p10", self.p10),
            ("p90", self.p90),
        ] {
            rows.push(BenchRow {
                run: name.into(),
                frames,
                threads: 1,
                seconds: s,
            });
        }
        rows
    }
}

/// Linear-interpolated percentile of sorted values, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Restricts the calling thread to a single CPU for its lifetime; the
/// previous affinity is restored on drop.
pub struct SingleCpuGuard {
    #[cfg(target_os = "linux")]
    previous: libc::cpu_set_t,
}

impl SingleCpuGuard {
    #[cfg(target_os = "linux")]
    pub fn acquire() -> Result<Self> {
        // SAFETY: cpu_set_t is plain data; the libc calls only read/write
        // the sets we pass for the calling thread (pid 0).
        unsafe {
            let size = std::mem::size_of::<libc::cpu_set_t>();
            let mut previous: libc::cpu_set_t = std::mem::zeroed();
            if libc::sched_getaffinity(0, size, &mut previous) != 0 {
                return Err(Error::ThreadRestriction(
                    std::io::Error::last_os_error().to_string(),
                ));
            }
            let cpu = (0..libc::CPU_SETSIZE as usize)
                .find(|&c| libc::CPU_ISSET(c, &previous))
                .ok_or_else(|| Error::ThreadRestriction("empty affinity mask".into()))?;
            let mut one: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_SET(cpu, &mut one);
            if libc::sched_setaffinity(0, size, &one) != 0 {
                return Err(Error::ThreadRestriction(
                    std::io::Error::last_os_error().to_string(),
                ));
            }
            Ok(Self { previous })
        }
    }

    #[cfg(not(target_os = "linux"))]
    pub fn acquire() -> Result<Self> {
        Err(Error::ThreadRestriction(
            "cannot pin the benchmark thread on this platform".into(),
        ))
    }
}

impl Drop for SingleCpuGuard {
    fn drop(&mut self) {
        #[cfg(target_os = "linux")]
        // SAFETY: restores the mask saved in `acquire`.
        unsafe {
            libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &self.previous);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub seed: u64,
    pub frames: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub t_text: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 200,
            repeats: 5,
            warmup: 1,
            t_text: 64,
        }
    }
}

/// Times `repeats` fixed-length syntheses of seeded random weights on one
/// pinned thread. Warm-up runs are excluded from the statistics.
pub fn bench_synthesize(spec: &ModelSpec, opts: BenchOptions) -> Result<BenchReport> {
    if opts.repeats == 0 || opts.frames == 0 || opts.t_text == 0 {
        return Err(Error::InvalidArgument(
            "frames, repeats and text length must be positive".into(),
        ));
    }
    let model = Model::<f32>::init(spec.clone(), opts.seed)?.prepare()?;
    let ids = bench_ids(opts.t_text);
    let synth = SynthOptions::fixed(opts.frames);
    let _pin = SingleCpuGuard::acquire()?;
    for _ in 0..opts.warmup {
        synthesize(&model, &ids, synth)?;
    }
    let mut runs = Vec::with_capacity(opts.repeats);
    let mut mel = None;
    for run in 0..opts.repeats {
        let start = Instant::now();
        let out = synthesize(&model, &ids, synth)?;
        let seconds = start.elapsed().as_secs_f64();
        runs.push(BenchRow {
            run: run.to_string(),
            frames: opts.frames,
            threads: 1,
            seconds,
        });
        mel = Some(out.mel);
    }
    let mut times: Vec<f64> = runs.iter().map(|r| r.seconds).collect();
    times.sort_by(f64::total_cmp);
    Ok(BenchReport {
        model: spec.name.clone(),
        runs,
        median: percentile(&times, 0.5),
        p10: percentile(&times, 0.1),
        p90: percentile(&times, 0.9),
        mel: mel.expect("at least one run"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::spec::{builtin_spec, Builtin};

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn bench_ids_length() {
        let ids = bench_ids(64);
        assert_eq!(ids.len(), 64);
        assert_eq!(*ids.last().unwrap(), 1);
    }

    #[test]
    fn three_repeats_three_rows_plus_summary() {
        let r = bench_synthesize(
            &builtin_spec(Builtin::FastDctts),
            BenchOptions {
                frames: 4,
                repeats: 3,
                t_text: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.runs.len(), 3);
        assert_eq!(r.rows().len(), 6);
        assert_eq!(r.mel.shape(), &[80, 4]);
    }
}
