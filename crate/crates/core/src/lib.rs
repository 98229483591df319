//! Terrain mapping, self-supervised labeling and contrastive label
//! disambiguation for traversability estimation on grid maps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod disambiguation;
pub mod encoder;
mod error;
pub mod eval;
pub mod labeling;
pub mod pipeline;
pub mod synthworld;
pub mod terrain;

pub use error::{CoreError, Result};

pub type ElevationGrid32 = terrain::ElevationGrid<f32>;
pub type ElevationGrid64 = terrain::ElevationGrid<f64>;
pub type FeatureMap32 = terrain::FeatureMap<f32>;
pub type FeatureMap64 = terrain::FeatureMap<f64>;
pub type Encoder32 = encoder::Encoder<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type Classifier32 = disambiguation::Classifier<f32>;
pub type Classifier64 = disambiguation::Classifier<f64>;
