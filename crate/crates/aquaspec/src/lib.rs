//! Estimation of water parameters (chlorophyll a, green algae, diatoms,
//! CDOM, turbidity) from hyperspectral reflectance spectra.
//!
//! The crate bundles everything the workflow needs:
//!
//! * [`data`] — shared domain types (wavelength grids, spectra, sample
//!   tables, metrics).
//! * [`ingest`] — readers for cube files, ROI masks, spectra CSVs and
//!   reference logs, plus table construction with linear interpolation of
//!   the reference values.
//! * [`preprocess`] — band selection, standardization and PCA.
//! * [`knn`], [`tree`], [`svr`], [`mars`] — the five regressors
//!   (k-NN, random forest, gradient boosting, SVR, adaptive regression
//!   splines), each trained from scratch behind a uniform fit/predict
//!   surface.
//! * [`eval`] — stratified train/test splitting, cross-validated
//!   hyperparameter selection, and the full with/without-PCA evaluation
//!   grid with CSV and SVG reports.
//! * [`synth`] — a deterministic bio-optical forward model that generates
//!   labeled spectra for end-to-end verification.

pub mod data;
pub mod eval;
pub mod ingest;
pub mod knn;
pub mod mars;
pub mod preprocess;
pub mod serialize;
pub mod stream;
pub mod svr;
pub mod synth;
pub mod tree;

pub use data::{Matrix, Metrics, ParameterKind, SampleTable, Spectrum, WavelengthGrid};
