pub mod calibration;
pub mod cli;
pub mod datamodel;
pub mod device_inference;
pub mod error;
pub mod fusion;
pub mod ingestion;
pub mod metrics;
pub mod normalization;
pub mod quality_gate;
pub mod synthetic;
