//! Wall-clock benchmarks of DSA scoring.
//!
//! Timings cover scoring only: for the optimized path the [`DsaIndex`] is
//! built before the clock starts, while the naive path has no preparation to
//! exclude. Every run's scores are compared against the naive result before
//! its time is recorded, so a fast but wrong run can never be reported.

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, SaError};
use crate::sampling::sample_uniform;
use crate::surprise::{dsa_scores_naive, with_threads, DsaIndex, SurpriseScores};
use crate::trace::TraceSet;

/// Largest absolute difference tolerated between naive and optimized scores.
pub const SCORE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub scenario: String,
    #[serde(rename = "impl")]
    pub implementation: String,
    pub threads: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub ratio: f64,
    pub ms: f64,
    pub qps: f64,
}

impl BenchResult {
    fn new(
        scenario: &str,
        implementation: &str,
        threads: usize,
        dims: Dims,
        ratio: f64,
        t: Duration,
    ) -> Self {
        let secs = t.as_secs_f64();
        BenchResult {
            scenario: scenario.into(),
            implementation: implementation.into(),
            threads,
            n: dims.n,
            q: dims.q,
            d: dims.d,
            ratio,
            ms: secs * 1e3,
            qps: if secs > 0.0 {
                dims.q as f64 / secs
            } else {
                f64::INFINITY
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub q: usize,
    pub d: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    /// Timed repetitions per cell; the median is reported.
    pub reps: usize,
    /// Run each cell once untimed first.
    pub warmup: bool,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 5,
            warmup: true,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Gaussian traces around per-class centers, labels cycling through the
/// classes so that every class is populated.
pub fn synthetic_pair(dims: Dims, seed: u64) -> Result<(TraceSet, TraceSet)> {
    if dims.n == 0 || dims.q == 0 || dims.d == 0 {
        return Err(SaError::invalid("benchmark sizes must be positive"));
    }
    if dims.classes < 2 || dims.classes > dims.n {
        return Err(SaError::invalid(format!(
            "benchmark needs 2 <= classes <= N, got {} classes",
            dims.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..dims.classes)
        .map(|_| (0..dims.d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let mut draw = |count: usize, name: &str| {
        let labels: Vec<usize> = (0..count).map(|i| i % dims.classes).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| {
                centers[c]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        TraceSet::from_rows(&rows, labels, Some(dims.classes), name)
    };
    let train = draw(dims.n, "bench-train")?;
    let queries = draw(dims.q, "bench-queries")?;
    Ok((train, queries))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

fn check_scores(got: &SurpriseScores, want: &SurpriseScores, what: &str) -> Result<()> {
    let worst = got
        .values
        .iter()
        .zip(&want.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if got.values.len() != want.values.len() || worst > SCORE_TOLERANCE {
        return Err(SaError::invalid(format!(
            "{what} scores diverge from the naive reference (max |diff| {worst:e})"
        )));
    }
    Ok(())
}

fn time_runs<F>(opts: &BenchOptions, mut run: F) -> Result<(Duration, SurpriseScores)>
where
    F: FnMut() -> Result<SurpriseScores>,
{
    if opts.reps == 0 {
        return Err(SaError::invalid("repetitions must be >= 1"));
    }
    if opts.warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(opts.reps);
    let mut first: Option<SurpriseScores> = None;
    for _ in 0..opts.reps {
        let start = Instant::now();
        let scores = run()?;
        times.push(start.elapsed());
        match &first {
            None => first = Some(scores),
            Some(f) if f.values != scores.values => {
                return Err(SaError::invalid("scores changed between repetitions"));
            }
            Some(_) => {}
        }
    }
    Ok((median(times), first.expect("at least one repetition")))
}

/// Naive single-threaded DSA against the optimized path at each thread
/// count, on one synthetic scenario.
pub fn bench_dsa(
    dims: Dims,
    threads: &[usize],
    include_naive: bool,
    opts: &BenchOptions,
) -> Result<Vec<BenchResult>> {
    let (train, queries) = synthetic_pair(dims, opts.seed)?;
    let mut out = Vec::new();
    let reference = if include_naive {
        let (t, scores) = time_runs(opts, || dsa_scores_naive(&train, &queries))?;
        out.push(BenchResult::new("dsa", "naive", 1, dims, 1.0, t));
        scores
    } else {
        dsa_scores_naive(&train, &queries)?
    };
    for &t in threads {
        let elapsed = with_threads(t, || -> Result<Duration> {
            let index = DsaIndex::build(&train)?;
            time_runs(opts, || {
                let s = index.score(&queries, opts.batch_size)?;
                check_scores(&s, &reference, "optimized")?;
                Ok(s)
            })
            .map(|(t, _)| t)
        })??;
        out.push(BenchResult::new("dsa", "optimized", t, dims, 1.0, elapsed));
    }
    Ok(out)
}

/// Optimized DSA time against uniform sampling ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingBench {
    pub results: Vec<BenchResult>,
    /// Least-squares fit of milliseconds on sampled training size.
    pub slope_ms_per_row: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
}

pub fn bench_sampling(
    dims: Dims,
    ratios: &[f64],
    threads: usize,
    opts: &BenchOptions,
) -> Result<SamplingBench> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(SaError::invalid("ratios must lie in (0, 1]"));
    }
    let (train, queries) = synthetic_pair(dims, opts.seed)?;
    let mut results = Vec::with_capacity(ratios.len());
    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let sel = sample_uniform(&train, ratio, opts.seed)?;
        let sub = train.restrict(&sel)?;
        if sub.populated_classes() < 2 {
            return Err(SaError::invalid(format!(
                "ratio {ratio} leaves fewer than 2 classes in the sample"
            )));
        }
        let reference = dsa_scores_naive(&sub, &queries)?;
        let elapsed = with_threads(threads, || -> Result<Duration> {
            let index = DsaIndex::build(&sub)?;
            time_runs(opts, || {
                let s = index.score(&queries, opts.batch_size)?;
                check_scores(&s, &reference, "sampled")?;
                Ok(s)
            })
            .map(|(t, _)| t)
        })??;
        let r = BenchResult::new(
            &format!("sampling:{ratio}"),
            "optimized",
            threads,
            Dims {
                n: sub.len(),
                ..dims
            },
            ratio,
            elapsed,
        );
        points.push((sub.len() as f64, r.ms));
        results.push(r);
    }
    let (slope, intercept, r2) = linear_fit(&points);
    Ok(SamplingBench {
        results,
        slope_ms_per_row: slope,
        intercept_ms: intercept,
        r_squared: r2,
    })
}

/// Ordinary least squares `y = slope * x + intercept` with R². Degenerate
/// inputs (fewer than two distinct x) give a zero slope and NaN R².
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (0.0, 0.0, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, f64::NAN);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

pub fn write_csv<W: Write + ?Sized>(results: &[BenchResult], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "scenario,impl,threads,N,Q,D,ms,qps")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.3},{:.1}",
            r.scenario, r.implementation, r.threads, r.n, r.q, r.d, r.ms, r.qps
        )?;
    }
    Ok(())
}

pub fn format_table(results: &[BenchResult]) -> String {
    let mut s = format!(
        "{:<14} {:<9} {:>7} {:>7} {:>7} {:>5} {:>11} {:>11}\n",
        "scenario", "impl", "threads", "N", "Q", "D", "ms", "queries/s"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<14} {:<9} {:>7} {:>7} {:>7} {:>5} {:>11.1} {:>11.0}",
            r.scenario, r.implementation, r.threads, r.n, r.q, r.d, r.ms, r.qps
        );
    }
    s
}
