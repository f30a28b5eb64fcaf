pub mod error;
pub mod linalg;
pub mod domain;
pub mod allen_cahn;
pub mod spectrum;
pub mod critical_points;
pub mod varifold;
pub mod limit_surface;
pub mod harness;
