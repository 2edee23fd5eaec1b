//! On-disk formats: `EFT1` tensors and text manifests.

pub mod eft;
pub mod manifest;
