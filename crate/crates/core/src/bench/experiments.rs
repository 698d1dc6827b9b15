use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::dataset::Sample;
use super::{derive_seed, erode_seeds, error_rate};
use crate::error::{Error, Result};
use crate::exec::map_indices;
use crate::pipeline::{segment, SegConfig, SegmentationResult};

/// One segmentation of one image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub image: String,
    pub k: usize,
    pub sigma: f64,
    pub omega: f64,
    pub lambda: String,
    pub error_rate: f64,
    pub error_rate_excluding_former_seeds: Option<f64>,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    /// Mean wall time of the `segment` call alone.
    pub time_ms: f64,
    pub seed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub mean_error: f64,
    pub mean_time_ms: f64,
    /// Per-image rows at the best `k` of the searched grid.
    pub best_k_rows: Option<Vec<BenchRow>>,
    pub best_k_mean_error: Option<f64>,
    /// Truth pixels equal to 128 count as background and are not evaluated.
    pub truth_binarization: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    /// Timed repetitions per image; the reported time is their mean.
    pub repeats: usize,
    /// Searched per image when present.
    pub k_grid: Option<Vec<usize>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repeats: 1, k_grid: None }
    }
}

/// `{2, ..., 40}` followed by `{50, 60, ..., 250}`.
pub fn default_k_grid() -> Vec<usize> {
    (2..=40).chain((50..=250).step_by(10)).collect()
}

fn timed_segment(sample: &Sample, cfg: &SegConfig, repeats: usize) -> Result<(SegmentationResult, f64)> {
    let repeats = repeats.max(1);
    let mut total = 0.0;
    let mut last = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let r = segment(&sample.image, &sample.seeds, cfg)?;
        total += t.elapsed().as_secs_f64();
        last = Some(r);
    }
    let result = last.expect("at least one repetition");
    Ok((result, total * 1e3 / repeats as f64))
}

fn row(sample: &Sample, cfg: &SegConfig, r: &SegmentationResult, time_ms: f64, err: f64) -> BenchRow {
    BenchRow {
        image: sample.id.clone(),
        k: cfg.k,
        sigma: cfg.sigma,
        omega: cfg.omega,
        lambda: cfg.lambda.to_string(),
        error_rate: err,
        error_rate_excluding_former_seeds: None,
        stage1_iterations: r.stage1_iterations,
        stage2_iterations: r.stage2_iterations,
        time_ms,
        seed_fraction: sample.seeds.labeled_count() as f64 / sample.seeds.len() as f64,
    }
}

/// Segments one sample and scores it on its evaluation mask.
pub fn evaluate(sample: &Sample, cfg: &SegConfig, repeats: usize) -> Result<BenchRow> {
    let (r, time_ms) = timed_segment(sample, cfg, repeats)?;
    let err = error_rate(&r.labels, &sample.truth, &sample.eval_mask)
        .map_err(|e| Error::UndefinedMetric(format!("{}: {e}", sample.id)))?;
    Ok(row(sample, cfg, &r, time_ms, err))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

fn best_k_row(sample: &Sample, cfg: &SegConfig, grid: &[usize]) -> Result<BenchRow> {
    let mut best: Option<BenchRow> = None;
    for &k in grid {
        let row = evaluate(sample, &SegConfig { k, ..cfg.clone() }, 1)?;
        if best.as_ref().is_none_or(|b| row.error_rate < b.error_rate) {
            best = Some(row);
        }
    }
    best.ok_or_else(|| Error::param("empty k grid"))
}

/// Evaluates every sample with `cfg`; rows follow sample order.
pub fn run_grabcut(samples: &[Sample], cfg: &SegConfig, opts: &BenchOptions) -> Result<BenchSummary> {
    if samples.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    let exec = cfg.execution;
    let rows = map_indices(exec, samples.len(), |i| evaluate(&samples[i], cfg, opts.repeats))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let best_k_rows = match &opts.k_grid {
        Some(grid) => Some(
            map_indices(exec, samples.len(), |i| best_k_row(&samples[i], cfg, grid))
                .into_iter()
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(BenchSummary {
        mean_error: mean(rows.iter().map(|r| r.error_rate)),
        mean_time_ms: mean(rows.iter().map(|r| r.time_ms)),
        best_k_mean_error: best_k_rows
            .as_ref()
            .map(|rs| mean(rs.iter().map(|r| r.error_rate))),
        best_k_rows,
        rows,
        truth_binarization: "foreground iff truth > 128; truth == 128 excluded",
    })
}

/// Mean errors over all samples and trials at one erasure probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErosionPoint {
    pub p: f64,
    /// Over every pixel left unlabeled, erased seeds included.
    pub mean_error_all: f64,
    /// Over the original unknown region only.
    pub mean_error_excluding_former_seeds: f64,
    pub trials: usize,
    pub runs: usize,
}

/// Seed-erosion curves: for each `p`, every sample is segmented `trials`
/// times with independently eroded seeds.
pub fn seed_sensitivity(
    samples: &[Sample],
    p_grid: &[f64],
    trials: usize,
    rng_seed: u64,
    cfg: &SegConfig,
) -> Result<Vec<ErosionPoint>> {
    if trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    if samples.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    let runs = samples.len() * trials;
    p_grid
        .iter()
        .map(|&p| {
            let errors = map_indices(cfg.execution, runs, |r| {
                let (i, t) = (r / trials, r % trials);
                erosion_trial(&samples[i], p, derive_seed(rng_seed, i, t), cfg)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Ok(ErosionPoint {
                p,
                mean_error_all: mean(errors.iter().map(|e| e.0)),
                mean_error_excluding_former_seeds: mean(errors.iter().map(|e| e.1)),
                trials,
                runs,
            })
        })
        .collect()
}

fn erosion_trial(sample: &Sample, p: f64, seed: u64, cfg: &SegConfig) -> Result<(f64, f64)> {
    let eroded = erode_seeds(&sample.seeds, p, seed)?;
    let r = segment(&sample.image, &eroded, cfg)?;
    let all: Vec<bool> = sample
        .eval_mask
        .iter()
        .zip(sample.seeds.labels().iter().zip(eroded.labels()))
        .zip(&sample.ambiguous)
        .map(|((&eval, (&before, &after)), &amb)| (eval || (before != 0 && after == 0)) && !amb)
        .collect();
    Ok((
        error_rate(&r.labels, &sample.truth, &all)?,
        error_rate(&r.labels, &sample.truth, &sample.eval_mask)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Sigma,
    Omega,
}

impl SweepParam {
    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &SegConfig, value: f64) -> Result<SegConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::param(format!("k must be a positive integer, got {value}")));
                }
                out.k = value as usize;
            }
            SweepParam::Sigma => out.sigma = value,
            SweepParam::Omega => out.omega = value,
        }
        Ok(out)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParam::K),
            "sigma" => Ok(SweepParam::Sigma),
            "omega" => Ok(SweepParam::Omega),
            other => Err(Error::param(format!(
                "unknown sweep parameter {other:?}; expected k, sigma or omega"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::K => "k",
            SweepParam::Sigma => "sigma",
            SweepParam::Omega => "omega",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub mean_error: f64,
    pub mean_time_ms: f64,
    pub mean_stage1_iterations: f64,
    pub mean_stage2_iterations: f64,
}

/// Mean error and time over all samples at each grid value.
pub fn parameter_sweep(
    samples: &[Sample],
    param: SweepParam,
    grid: &[f64],
    cfg: &SegConfig,
    repeats: usize,
) -> Result<Vec<SweepPoint>> {
    let opts = BenchOptions { repeats, k_grid: None };
    grid.iter()
        .map(|&value| {
            let c = param.apply(cfg, value)?;
            c.validate(2)?;
            let s = run_grabcut(samples, &c, &opts)?;
            Ok(SweepPoint {
                param,
                value,
                mean_error: s.mean_error,
                mean_time_ms: s.mean_time_ms,
                mean_stage1_iterations: mean(s.rows.iter().map(|r| r.stage1_iterations as f64)),
                mean_stage2_iterations: mean(s.rows.iter().map(|r| r.stage2_iterations as f64)),
            })
        })
        .collect()
}
