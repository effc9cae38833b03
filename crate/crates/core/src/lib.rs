//! Monocular metric localization against a geotagged panorama database.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
mod codec;
pub mod features;
pub mod geo;
pub mod geometry;
pub mod ingest;
pub mod pose;
pub mod retrieval;
pub mod vocab;

pub use codec::PersistError;
