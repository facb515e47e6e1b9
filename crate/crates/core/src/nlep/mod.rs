//! Spectral stability of pulse configurations.

pub mod condition;
pub mod inner;
pub mod spectrum;
