//! Lifting normalized disparity maps into 3D point clouds by fitting camera
//! parameters against a prior shape, and merging the lifted points with the
//! occluded part of the prior.

pub mod cli;
pub mod error;
pub mod fitter;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod synth;
pub mod visibility;

pub use error::{Error, Result};
pub use fitter::{fit_params, FitConfig, FitResult};
pub use geometry::{DisparityMap, PointCloud, ProjectionParams, Tag, ViewConfig};
pub use metrics::{chamfer, fscore, NnIndex};
pub use pipeline::{refine, RefineOptions, RefineReport};
pub use projection::{project_disparity, render_disparity};
