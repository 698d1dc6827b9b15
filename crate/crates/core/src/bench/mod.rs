//! Evaluation harness: error rates against ground truth, dataset runs,
//! parameter sweeps and the seed-erosion experiment.

mod dataset;
mod experiments;
mod report;

pub use dataset::{binarize_truth, discover, load_dataset, load_sample, DatasetEntry, Sample};
pub use experiments::{
    default_k_grid, evaluate, parameter_sweep, run_grabcut, seed_sensitivity, BenchOptions,
    BenchRow, BenchSummary, ErosionPoint, SweepParam, SweepPoint,
};
pub use report::{write_csv, write_json};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::resample::LabelMap;

/// Largest erasure probability accepted by [`erode_seeds`].
pub const MAX_ERASE_PROBABILITY: f64 = 0.99;

/// Fraction of masked pixels where `pred` and `truth` disagree.
pub fn error_rate(pred: &LabelMap, truth: &LabelMap, eval_mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != eval_mask.len() {
        return Err(Error::dim(format!(
            "prediction has {} pixels, truth {}, mask {}",
            pred.len(),
            truth.len(),
            eval_mask.len()
        )));
    }
    let mut total = 0usize;
    let mut wrong = 0usize;
    for ((&p, &t), &m) in pred.labels().iter().zip(truth.labels()).zip(eval_mask) {
        if m {
            total += 1;
            wrong += usize::from(p != t);
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("evaluation mask is empty".into()));
    }
    Ok(wrong as f64 / total as f64)
}

/// Erases each seed independently with probability `p`.
///
/// Seed `i` (in pixel order) is erased when the `i`-th uniform draw of a
/// generator seeded with `rng_seed` falls below `p`, so for a fixed seed
/// the surviving sets shrink monotonically as `p` grows.
pub fn erode_seeds(seeds: &LabelMap, p: f64, rng_seed: u64) -> Result<LabelMap> {
    if !(0.0..=MAX_ERASE_PROBABILITY).contains(&p) {
        return Err(Error::param(format!(
            "erasure probability must lie in [0, {MAX_ERASE_PROBABILITY}], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let labels = seeds
        .labels()
        .iter()
        .map(|&l| {
            if l != 0 && rng.gen::<f64>() < p {
                0
            } else {
                l
            }
        })
        .collect();
    LabelMap::new(seeds.width(), seeds.height(), labels, seeds.num_classes())
}

/// Seed for trial `trial` on image `image` derived from a master seed.
pub fn derive_seed(master: u64, image: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((image as u64) << 32) | trial as u64);
    rng.gen()
}

/// Parses `A:STEP:B` (inclusive arithmetic range) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::param(format!("bad grid {spec:?}; use A:STEP:B or v1,v2,..."));
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, step, b] = parts[..] else {
            return Err(bad());
        };
        let (a, step, b) = (parse(a)?, parse(step)?, parse(b)?);
        if step.is_nan() || step <= 0.0 || !a.is_finite() || !b.is_finite() || b < a {
            return Err(bad());
        }
        // tolerate float drift in the last step
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| a + i as f64 * step).collect()
    } else {
        spec.split(',').map(parse).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}
