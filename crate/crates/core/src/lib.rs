//! Core building blocks for the step benchmarking pipeline: the unified
//! scene format, dataset adapters, sample extraction, perturbations,
//! splitting procedures, prediction models, and evaluation metrics.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`scene`]: the internal scene format, validation, resampling, frame
//!   transforms, and map rasterization.
//! - [`ingest`]: adapters that load raw data and convert it into scene sets,
//!   plus a synthetic scenario generator and gap-acceptance classification.
//! - [`sample`]: extraction of past/future samples from scenes under a data
//!   parameter setting, and corpus assembly.
//! - [`perturb`]: white-noise and adversarial perturbations with displacement
//!   budgets and kinematic feasibility constraints.
//! - [`split`]: train/test splitting procedures.
//! - [`model`]: the model contract, built-in baselines, density estimation,
//!   gradient access, and the subprocess plugin protocol.
//! - [`metrics`]: displacement, behavior, and likelihood metrics with
//!   batch-wise aggregation.

pub mod ingest;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod sample;
pub mod scene;
pub mod split;
