//! Geographical-diversity scoring of image collections.
//!
//! Images are questioned by a vision-language backend about entity
//! appearance and background, and rated on socio-economic scales. Answer and
//! rating distributions are scored with the normalized Hill number and
//! aggregated per dataset, entity and country.

pub mod aggregate;
pub mod backend;
pub mod cache;
pub mod catalog;
pub mod fixture;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod sevi;
pub mod validation;
pub mod vqa;

pub use scalar::Scalar;

pub type Distribution = metrics::Distribution<f64>;
pub type PairedSamples = metrics::PairedSamples<f64>;
pub type Distribution32 = metrics::Distribution<f32>;
pub type PairedSamples32 = metrics::PairedSamples<f32>;
