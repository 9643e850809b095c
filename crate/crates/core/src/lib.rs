//! Sign-gesture classification built from first principles: image
//! preprocessing, a small CNN engine, training, evaluation, and the
//! operator surfaces (CLI and HTTP service) around them.

pub mod app;
pub mod nn;
pub mod data;
pub mod metrics;
pub mod model;
pub mod preproc;
pub mod train;
