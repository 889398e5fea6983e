//! Handgun detection in single-energy X-ray baggage images.
//!
//! The pipeline thresholds the image to find metal, describes the metal
//! regions with dense multi-scale SIFT (PHOW) descriptors, quantizes them
//! against a k-means "metallic" vocabulary, lifts the word histograms with an
//! explicit additive χ² kernel map and scores Selective Search proposals with
//! a linear SVM. Positive boxes are filtered for outliers and fused into a
//! single detection.
//!
//! Modules follow the pipeline order:
//!
//! - [`imagecore`]: raster types, Gaussian filtering, metal mask.
//! - [`features`]: dense SIFT grid and descriptors.
//! - [`vocab`]: k-means vocabulary.
//! - [`encode`]: word histograms and the χ² feature map.
//! - [`svm`]: regularized least-squares linear SVM.
//! - [`proposals`]: graph-based segmentation and Selective Search.
//! - [`eval`]: overlap, classification metrics, PR and learning curves.
//! - [`detect`]: proposal datasets and the online detector.
//! - [`cli`]: the `xray-bovw` command-line tool.

// `!(x > 0.0)` is the NaN-rejecting form used by every validator
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cli;
pub mod config;
pub mod detect;
pub mod encode;
mod error;
pub mod eval;
pub mod features;
pub mod imagecore;
pub mod proposals;
pub mod svm;
pub mod synth;
pub mod vocab;

pub use config::RunConfig;
pub use detect::{Detection, Detector, ScoredBox};
pub use encode::{FeatureMapVector, Histogram, KernelMapConfig, KernelWindow};
pub use error::{Error, Result};
pub use eval::Annotation;
pub use features::{Descriptor, Keypoint, PhowParams};
pub use imagecore::{BinaryMask, GrayImage};
pub use proposals::BoundingBox;
pub use svm::Label;
pub use svm::{LabeledSet, SvmModel};
pub use vocab::Vocabulary;
