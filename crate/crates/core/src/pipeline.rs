//! End-to-end two-stage segmentation and the conversion of user input
//! (scribble images, trimaps) into seed label maps.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{image_features, LambdaPreset};
use crate::graphs::{build_grid_digraph, build_knn_digraph, KnnDigraph};
use crate::propagation::{
    argmax_label, init_domination, run_stage_observed, threshold_label, ConvergenceState,
    DominationMatrix, StageOutcome,
};
use crate::resample::{
    downscale_bicubic, downscale_nearest, upscale_bilinear, GrayImage, LabelMap, RgbImage,
};

/// Every tunable of a segmentation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    /// Out-degree of the stage-one k-NN digraph.
    pub k: usize,
    /// Gaussian kernel width for edge weights.
    pub sigma: f64,
    /// Convergence threshold on the average maximum domination.
    pub omega: f64,
    pub lambda: LambdaPreset,
    /// Stage-one confidence a pixel needs to be labeled before stage two.
    pub tau: f64,
    pub check_interval: usize,
    /// Cap per stage.
    pub max_iterations: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            k: 10,
            sigma: 0.5,
            omega: 1e-4,
            lambda: LambdaPreset::uniform(),
            tau: 0.999,
            check_interval: 10,
            max_iterations: 100_000,
            execution: Execution::default(),
        }
    }
}

impl SegConfig {
    /// Checks the parameters against a problem with `classes` classes.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.omega.is_nan() || self.omega <= 0.0 {
            return Err(Error::param(format!("omega must be > 0, got {}", self.omega)));
        }
        if self.check_interval == 0 {
            return Err(Error::param("check interval must be >= 1"));
        }
        if self.tau > 1.0 || (classes > 1 && self.tau <= 1.0 / classes as f64) || self.tau.is_nan() {
            return Err(Error::param(format!(
                "tau must lie in (1/{classes}, 1], got {}",
                self.tau
            )));
        }
        Ok(())
    }

    fn convergence(&self) -> Result<ConvergenceState> {
        ConvergenceState::new(self.check_interval, self.omega, self.max_iterations)
    }
}

/// Wall-clock time of each phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    #[serde(serialize_with = "as_millis")]
    pub downscale: Duration,
    #[serde(serialize_with = "as_millis")]
    pub stage1_features: Duration,
    #[serde(serialize_with = "as_millis")]
    pub knn_graph: Duration,
    #[serde(serialize_with = "as_millis")]
    pub stage1: Duration,
    #[serde(serialize_with = "as_millis")]
    pub upscale: Duration,
    #[serde(serialize_with = "as_millis")]
    pub stage2_features: Duration,
    #[serde(serialize_with = "as_millis")]
    pub grid_graph: Duration,
    #[serde(serialize_with = "as_millis")]
    pub stage2: Duration,
    #[serde(serialize_with = "as_millis")]
    pub total: Duration,
}

fn as_millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentationResult {
    /// Final labeling; every pixel has a class.
    #[serde(skip)]
    pub labels: LabelMap,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub stage1_converged: bool,
    pub stage2_converged: bool,
    /// Fraction of all pixels labeled by the stage-one threshold.
    pub stage1_labeled_fraction: f64,
    pub seed_pixels: usize,
    pub stage1_pixels: usize,
    pub stage2_pixels: usize,
    /// Pixels per class, index `c - 1` for class `c`.
    pub class_counts: Vec<usize>,
    #[serde(rename = "timings_ms")]
    pub timing: PhaseTimings,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Runs both stages with the default observer.
pub fn segment(img: &RgbImage, seeds: &LabelMap, cfg: &SegConfig) -> Result<SegmentationResult> {
    segment_observed(img, seeds, cfg, &mut |_, _, _| {})
}

fn check_inputs(img: &RgbImage, seeds: &LabelMap, cfg: &SegConfig) -> Result<()> {
    if (img.width(), img.height()) != (seeds.width(), seeds.height()) {
        return Err(Error::dim(format!(
            "image is {}x{}, seeds are {}x{}",
            img.width(),
            img.height(),
            seeds.width(),
            seeds.height()
        )));
    }
    if seeds.num_classes() == 0 || seeds.labeled_count() == 0 {
        return Err(Error::MissingSeeds);
    }
    cfg.validate(seeds.num_classes())
}

/// Downscaled image and seeds of stage one.
struct StageOneInput {
    image: RgbImage,
    seeds: LabelMap,
}

fn stage_one_input(img: &RgbImage, seeds: &LabelMap) -> Result<StageOneInput> {
    let image = downscale_bicubic(img)?;
    let seeds = downscale_nearest(seeds, image.width(), image.height())?;
    Ok(StageOneInput { image, seeds })
}

/// The stage-one k-NN digraph exactly as [`segment`] builds it.
pub fn stage1_graph(img: &RgbImage, seeds: &LabelMap, cfg: &SegConfig) -> Result<KnnDigraph> {
    check_inputs(img, seeds, cfg)?;
    let input = stage_one_input(img, seeds)?;
    let feats = image_features(&input.image, &cfg.lambda)?;
    build_knn_digraph(&feats, input.seeds.labels(), cfg.k, cfg.sigma, cfg.execution)
}

/// [`segment`] with `observer(stage, iteration, state)` called after every
/// propagation step of either stage.
pub fn segment_observed(
    img: &RgbImage,
    seeds: &LabelMap,
    cfg: &SegConfig,
    observer: &mut dyn FnMut(Stage, usize, &DominationMatrix),
) -> Result<SegmentationResult> {
    check_inputs(img, seeds, cfg)?;
    let classes = seeds.num_classes();
    let conv = cfg.convergence()?;
    let exec = cfg.execution;
    let mut timing = PhaseTimings::default();
    let mut warnings = Vec::new();
    let start = Instant::now();
    let mut clock = Instant::now();
    let mut lap = || {
        let now = Instant::now();
        let d = now - clock;
        clock = now;
        d
    };

    // Stage one: k-NN digraph on the one-third image.
    let small = stage_one_input(img, seeds)?;
    let (sw, sh) = (small.image.width(), small.image.height());
    timing.downscale = lap();
    let init = init_domination(small.seeds.labels(), classes)?;
    let stage1 = if small.image.len() >= 2 {
        let feats = image_features(&small.image, &cfg.lambda)?;
        timing.stage1_features = lap();
        let knn = build_knn_digraph(&feats, small.seeds.labels(), cfg.k, cfg.sigma, exec)?;
        if knn.k_clamped {
            warnings.push(format!(
                "k reduced from {} to {} on a {}-pixel stage-one image",
                cfg.k,
                knn.effective_k,
                small.image.len()
            ));
        }
        timing.knn_graph = lap();
        run_stage_observed(&knn.graph, init, conv, exec, &mut |it, d| {
            observer(Stage::One, it, d)
        })?
    } else {
        StageOutcome {
            dom: init,
            iterations: 0,
            converged: true,
            final_avg: None,
        }
    };
    if !stage1.converged {
        warnings.push("stage one hit the iteration cap".into());
    }
    timing.stage1 = lap();

    // Enlarge, keep confident pixels, clamp everything labeled so far.
    let (w, h) = (img.width(), img.height());
    let mut dom = upscale_bilinear(&stage1.dom, sw, sh, w, h)?;
    let labeled = threshold_label(&dom, seeds, cfg.tau)?;
    for (i, &l) in labeled.labels().iter().enumerate() {
        if l != 0 {
            dom.clamp(i, usize::from(l) - 1);
        }
    }
    let seed_pixels = seeds.labeled_count();
    let stage1_pixels = labeled.labeled_count() - seed_pixels;
    timing.upscale = lap();

    // Stage two: 8-neighborhood grid over the pixels still unlabeled.
    let unlabeled: Vec<bool> = labeled.labels().iter().map(|&l| l == 0).collect();
    let stage2 = if unlabeled.iter().any(|&u| u) {
        let feats = image_features(img, &cfg.lambda)?;
        timing.stage2_features = lap();
        let grid = build_grid_digraph(&feats, &unlabeled, w, h, cfg.sigma, exec)?;
        timing.grid_graph = lap();
        run_stage_observed(&grid, dom, conv, exec, &mut |it, d| observer(Stage::Two, it, d))?
    } else {
        StageOutcome {
            dom,
            iterations: 0,
            converged: true,
            final_avg: None,
        }
    };
    if !stage2.converged {
        warnings.push("stage two hit the iteration cap".into());
    }
    let labels = argmax_label(&stage2.dom, &labeled)?;
    timing.stage2 = lap();
    timing.total = start.elapsed();

    let n = labels.len();
    Ok(SegmentationResult {
        width: w,
        height: h,
        num_classes: classes,
        stage1_iterations: stage1.iterations,
        stage2_iterations: stage2.iterations,
        stage1_converged: stage1.converged,
        stage2_converged: stage2.converged,
        stage1_labeled_fraction: stage1_pixels as f64 / n as f64,
        seed_pixels,
        stage1_pixels,
        stage2_pixels: n - seed_pixels - stage1_pixels,
        class_counts: labels.class_counts(),
        labels,
        timing,
        warnings,
    })
}

/// Maps a scribble image to seeds: pixels of `background` are unlabeled,
/// every other distinct color becomes a class, numbered from 1 in ascending
/// `(R, G, B)` order.
pub fn parse_scribbles(scrib: &RgbImage, background: [u8; 3]) -> Result<LabelMap> {
    let rgb = scrib.to_rgb8();
    let mut colors: BTreeMap<[u8; 3], u16> = rgb
        .iter()
        .filter(|&&p| p != background)
        .map(|&p| (p, 0))
        .collect();
    if colors.len() > 255 {
        return Err(Error::TooManyClasses(colors.len()));
    }
    for (id, v) in colors.values_mut().enumerate() {
        *v = id as u16 + 1;
    }
    let labels = rgb
        .iter()
        .map(|p| colors.get(p).copied().unwrap_or(0))
        .collect();
    LabelMap::new(scrib.width(), scrib.height(), labels, colors.len())
}

/// Trimap levels.
pub mod trimap {
    /// Ignored region, seeded as background.
    pub const IGNORED: u8 = 0;
    pub const BACKGROUND: u8 = 64;
    pub const UNKNOWN: u8 = 128;
    pub const FOREGROUND: u8 = 255;
}

/// Class id of background seeds in trimaps and ground truth.
pub const BACKGROUND_CLASS: u16 = 1;
/// Class id of foreground seeds in trimaps and ground truth.
pub const FOREGROUND_CLASS: u16 = 2;

/// Converts a trimap into two-class seeds and the evaluation mask (true
/// exactly on the unknown region).
pub fn parse_trimap(tri: &GrayImage) -> Result<(LabelMap, Vec<bool>)> {
    let mut labels = Vec::with_capacity(tri.data.len());
    let mut eval = Vec::with_capacity(tri.data.len());
    for (i, &v) in tri.data.iter().enumerate() {
        let label = match v {
            trimap::IGNORED | trimap::BACKGROUND => BACKGROUND_CLASS,
            trimap::FOREGROUND => FOREGROUND_CLASS,
            trimap::UNKNOWN => 0,
            value => {
                return Err(Error::TrimapValue {
                    value,
                    x: i % tri.width,
                    y: i / tri.width,
                })
            }
        };
        labels.push(label);
        eval.push(v == trimap::UNKNOWN);
    }
    Ok((LabelMap::new(tri.width, tri.height, labels, 2)?, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Left half black, right half white.
    fn two_halves(w: usize, h: usize) -> RgbImage {
        let px = (0..w * h)
            .map(|i| if i % w < w / 2 { [0.0; 3] } else { [1.0; 3] })
            .collect();
        RgbImage::new(w, h, px).unwrap()
    }

    #[test]
    fn two_halves_single_seeds() {
        let img = two_halves(64, 64);
        let mut seeds = LabelMap::empty(64, 64, 2);
        seeds.set(30 * 64 + 16, 1);
        seeds.set(30 * 64 + 48, 2);
        let r = segment(&img, &seeds, &SegConfig::default()).unwrap();
        for (i, &l) in r.labels.labels().iter().enumerate() {
            assert_eq!(l, if i % 64 < 32 { 1 } else { 2 }, "pixel {i}");
        }
        assert_eq!(r.seed_pixels + r.stage1_pixels + r.stage2_pixels, 64 * 64);
        assert_eq!(r.class_counts, vec![2048, 2048]);
        assert_eq!(r.stage1_iterations % 10, 0);
    }

    #[test]
    fn single_class_fills_everything() {
        let img = two_halves(12, 9);
        let mut seeds = LabelMap::empty(12, 9, 1);
        seeds.set(5, 1);
        let r = segment(&img, &seeds, &SegConfig::default()).unwrap();
        assert!(r.labels.labels().iter().all(|&l| l == 1));
        assert_eq!(r.stage2_iterations, 0);
    }

    #[test]
    fn missing_seeds_and_bad_inputs() {
        let img = two_halves(9, 9);
        let seeds = LabelMap::empty(9, 9, 2);
        assert!(matches!(
            segment(&img, &seeds, &SegConfig::default()),
            Err(Error::MissingSeeds)
        ));
        let seeds = LabelMap::new(3, 3, vec![1; 9], 1).unwrap();
        assert!(matches!(
            segment(&img, &seeds, &SegConfig::default()),
            Err(Error::Dimension(_))
        ));
        let mut seeds = LabelMap::empty(9, 9, 2);
        seeds.set(0, 1);
        let cfg = SegConfig { k: 0, ..SegConfig::default() };
        assert!(matches!(segment(&img, &seeds, &cfg), Err(Error::Parameter(_))));
        let cfg = SegConfig { tau: 0.5, ..SegConfig::default() };
        assert!(matches!(segment(&img, &seeds, &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn tiny_image_skips_stage_one_graph() {
        let img = two_halves(3, 3);
        let mut seeds = LabelMap::empty(3, 3, 2);
        seeds.set(0, 1);
        seeds.set(2, 2);
        let r = segment(&img, &seeds, &SegConfig::default()).unwrap();
        assert_eq!(r.stage1_iterations, 0);
        assert!(r.labels.labels().iter().all(|&l| l != 0));
        assert_eq!(r.labels.labels()[0], 1);
        assert_eq!(r.labels.labels()[2], 2);
    }

    #[test]
    fn scribble_colors_are_ordered() {
        let white = [255, 255, 255];
        let img = RgbImage::from_rgb8(
            4,
            1,
            &[white, [255, 0, 0], [0, 0, 255], [255, 0, 0]],
        )
        .unwrap();
        let map = parse_scribbles(&img, white).unwrap();
        assert_eq!(map.labels(), &[0, 2, 1, 2]);
        assert_eq!(map.num_classes(), 2);

        let blank = RgbImage::from_rgb8(2, 1, &[white, white]).unwrap();
        let map = parse_scribbles(&blank, white).unwrap();
        assert_eq!(map.num_classes(), 0);
        assert_eq!(map.labeled_count(), 0);

        let green = RgbImage::from_rgb8(2, 1, &[[0, 0, 0], [0, 255, 0]]).unwrap();
        let map = parse_scribbles(&green, [0, 0, 0]).unwrap();
        assert_eq!((map.labels(), map.num_classes()), (&[0u16, 1][..], 1));
    }

    #[test]
    fn too_many_scribble_colors() {
        let px: Vec<[u8; 3]> = (0..300u32).map(|i| [(i % 256) as u8, (i / 256) as u8, 7]).collect();
        let img = RgbImage::from_rgb8(300, 1, &px).unwrap();
        assert!(matches!(
            parse_scribbles(&img, [0, 0, 0]),
            Err(Error::TooManyClasses(300))
        ));
    }

    #[test]
    fn trimap_levels() {
        let tri = GrayImage {
            width: 4,
            height: 1,
            data: vec![0, 64, 128, 255],
        };
        let (seeds, eval) = parse_trimap(&tri).unwrap();
        assert_eq!(seeds.labels(), &[1, 1, 0, 2]);
        assert_eq!(eval, vec![false, false, true, false]);

        let bad = GrayImage {
            width: 2,
            height: 2,
            data: vec![0, 64, 128, 200],
        };
        assert!(matches!(
            parse_trimap(&bad),
            Err(Error::TrimapValue { value: 200, x: 1, y: 1 })
        ));
    }

    #[test]
    fn config_json_overrides() {
        let cfg: SegConfig = serde_json::from_str(r#"{"k": 8, "lambda": "location"}"#).unwrap();
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.lambda, LambdaPreset::location());
        assert_eq!(cfg.sigma, 0.5);
        assert!(serde_json::from_str::<SegConfig>(r#"{"kk": 8}"#).is_err());
    }

    #[test]
    fn report_serializes_timings() {
        let img = two_halves(9, 9);
        let mut seeds = LabelMap::empty(9, 9, 2);
        seeds.set(0, 1);
        seeds.set(8, 2);
        let r = segment(&img, &seeds, &SegConfig::default()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["timings_ms"]["total"].as_f64().unwrap() >= 0.0);
        assert_eq!(v["width"], 9);
    }
}
