//! Interactive image segmentation by two-stage label propagation.
//!
//! Scribble labels are first propagated through a k-nearest-neighbor digraph
//! built over a one-third-scale copy of the image, then refined on an
//! 8-neighborhood grid digraph at full resolution. The crate also carries the
//! network statistics (clustering, efficiency, small-world-ness) and the
//! dataset benchmark harness used to evaluate the method.
//!
//! ```no_run
//! use lapseg_core::{pipeline, resample};
//!
//! let img = resample::decode_image(&std::fs::read("dog.png")?)?;
//! let tri = resample::decode_gray(&std::fs::read("dog-trimap.png")?)?;
//! let (seeds, _eval) = pipeline::parse_trimap(&tri)?;
//! let result = pipeline::segment(&img, &seeds, &pipeline::SegConfig::default())?;
//! std::fs::write("out.png", resample::encode_labelmap(&result.labels)?)?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod bench;
pub mod error;
pub mod exec;
pub mod features;
pub mod graphs;
pub mod netmetrics;
pub mod pipeline;
pub mod propagation;
pub mod resample;

pub use error::{Error, Result};
pub use exec::Execution;
pub use features::{FeatureMatrix, LambdaPreset};
pub use graphs::SparseDigraph;
pub use pipeline::{segment, SegConfig, SegmentationResult};
pub use propagation::DominationMatrix;
pub use resample::{GrayImage, LabelMap, RgbImage};
