//! Federated algorithms: FedCEF, the proximal FedAvg baseline and the
//! centralized proximal gradient oracle.

mod fedavg;
mod fedcef;
mod pgd;

pub use fedavg::run_prox_fedavg;
pub use fedcef::{
    client_downlink, client_uplink, linear_accumulator, local_update, run_fedcef, server_aggregate,
    server_finalize, ClientState, RoundTranscript, ServerState,
};
pub use pgd::{run_centralized_pgd, run_centralized_pgd_from};

use crate::error::{Error, Result};
use crate::metrics::{MetricsSeries, StepConditionReport};
use crate::problem::BatchSize;
use crate::vector::ParamVector;

/// Step sizes and schedule. The global step `beta = alpha * eta_g * K` is
/// always derived, never set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Local step size.
    pub alpha: f64,
    /// Server step scale.
    pub eta_g: f64,
    /// Local steps per round (`K`).
    pub local_steps: usize,
    /// Momentum parameter in `(0, 1]`.
    pub momentum: f64,
    pub batch: BatchSize,
    /// Communication rounds (`T`).
    pub rounds: usize,
}

impl HyperParams {
    pub fn beta(&self) -> f64 {
        self.alpha * self.eta_g * self.local_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.eta_g > 0.0 && self.eta_g.is_finite()) {
            return fail(format!("eta_g must be positive, got {}", self.eta_g));
        }
        if self.local_steps == 0 {
            return fail("K must be at least 1".into());
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return fail(format!(
                "momentum must lie in (0, 1], got {}",
                self.momentum
            ));
        }
        if self.rounds == 0 {
            return fail("T must be at least 1".into());
        }
        if self.batch == BatchSize::Samples(0) {
            return fail("batch size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Starting model; zero when absent.
    pub initial: Option<ParamVector>,
    pub lyapunov: bool,
    /// Keep per-round payloads and local gradients.
    pub keep_transcripts: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: MetricsSeries,
    /// `z^0, ..., z^T`
    pub iterates: Vec<ParamVector>,
    pub transcripts: Vec<RoundTranscript>,
    /// Present for runs that have a step-size theory (FedCEF).
    pub step_report: Option<StepConditionReport>,
    /// `max_i ||v_i^t - c_i^t||` for `t = 1..=T`; empty for baselines.
    pub control_deviation: Vec<f64>,
}
