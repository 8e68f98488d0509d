//! Deterministic simulator for compressed proximal federated learning.
//!
//! The crate provides the FedCEF algorithm (compressed error feedback with
//! momentum and a proximal server step), a proximal FedAvg baseline, a
//! centralized proximal gradient oracle, synthetic problems, sparsifying
//! compressors with exact byte accounting, and the diagnostics used to check
//! convergence: the proximal gradient mapping, step-size conditions and a
//! Lyapunov potential.

pub mod algorithms;
pub mod compressor;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod problem;
pub mod regularizer;
pub mod rng;
pub mod vector;

pub use algorithms::{
    run_centralized_pgd, run_fedcef, run_prox_fedavg, ClientState, HyperParams, RoundTranscript,
    RunOptions, RunOutput, ServerState,
};
pub use compressor::{CompressorKind, CompressorSpec, Retain, SparsePayload};
pub use config::{parse_config, Algorithm, Preset, RunConfig};
pub use error::{Error, Result};
pub use metrics::{MetricsRow, MetricsSeries, StepConditionReport};
pub use problem::{
    generate_synthetic, BatchSize, FederatedProblem, HeteroSpread, LossKind, PartitionSpec,
    SyntheticSpec,
};
pub use regularizer::Regularizer;
pub use rng::{derive_stream, RngStream};
pub use vector::ParamVector;
