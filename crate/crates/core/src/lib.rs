//! Realized abundance from plot counts.
//!
//! An inhomogeneous Poisson intensity surface with coarse and fine Gaussian
//! radial bases is fitted to counts in small plots, then integrated over the
//! unsampled part of the study region. Variances shrink to zero as the plots
//! approach a full census, and several overdispersion corrections are offered.

pub mod basis;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod fit;
pub mod geometry;
pub mod glm;
pub mod knots;
pub mod nelder_mead;
pub mod sim;

pub use error::{Error, Result};
pub use estimator::{estimate_abundance, AbundanceReport, EstimatorConfig, PlotCount, VarianceKind};
pub use fit::{fit_model, FitConfig, FitStatus, ModelFit};
pub use geometry::{Point2, Polygon, PredictionGrid, RectPlot, StudyRegion};
pub use knots::KnotSet;
