//! Batch driver for the occrisk pipeline: generate -> risk -> plan -> eval.

pub mod commands;
pub mod config;
pub mod stages;
