// SPDX-License-Identifier: MIT OR Apache-2.0

//! Temporal segmentation of feature streams.
//!
//! Agglomerative clustering over-segments, a multivariate ADWIN detector
//! under-segments with a statistical guarantee, and [`fusion::rcluster`]
//! reconciles the two by exactly minimizing a Potts energy on the frame chain.
//!
//! Typical flow:
//!
//! ```no_run
//! use rcluster::pipeline::{segment, Method, MethodParams};
//! use rcluster::stream::{load_features, CsvLayout, FeatureFormat};
//!
//! let raw = load_features("day1.csv".as_ref(), FeatureFormat::Csv, CsvLayout::default())?;
//! let seg = segment(&raw, Method::Rcluster, &MethodParams::default())?;
//! println!("{} segments", seg.num_segments());
//! # Ok::<(), rcluster::Error>(())
//! ```

pub mod adwin;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod pipeline;
pub mod preprocess;
pub mod stream;

pub use error::{Error, Result};
pub use stream::{FeatureStream, GroundTruth, Segmentation, Source};
