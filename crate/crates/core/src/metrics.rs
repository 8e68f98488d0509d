//! Optimality measures, step-size conditions, the Lyapunov diagnostic and
//! communication accounting.

use crate::algorithms::{ClientState, HyperParams, RoundTranscript, ServerState};
use crate::error::{Error, Result};
use crate::problem::{BatchSize, FederatedProblem};
use crate::regularizer::Regularizer;
use crate::vector::ParamVector;

/// One row per round; `round = 0` describes the initial model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    /// `F(z^t)`
    pub objective: f64,
    /// `||G_beta(z^t)||^2`
    pub prox_grad_sq: f64,
    /// Cumulative.
    pub uplink_bytes: u64,
    /// Cumulative, including the initial model broadcast.
    pub downlink_bytes: u64,
    pub nnz: usize,
    pub lyapunov: Option<f64>,
    pub condition_ok: bool,
}

impl MetricsRow {
    #[allow(clippy::too_many_arguments)]
    pub fn measure(
        prob: &FederatedProblem,
        reg: &Regularizer,
        z: &ParamVector,
        beta: f64,
        round: usize,
        uplink_bytes: u64,
        downlink_bytes: u64,
        lyapunov: Option<f64>,
        condition_ok: bool,
    ) -> Result<Self> {
        Ok(MetricsRow {
            round,
            objective: prob.objective_value(reg, z)?,
            prox_grad_sq: prox_gradient_mapping(prob, reg, z, beta)?.sq_norm(),
            uplink_bytes,
            downlink_bytes,
            nnz: z.nnz(),
            lyapunov,
            condition_ok,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn prox_grad_sq(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.prox_grad_sq).collect()
    }
}

/// `G_beta(z) = (z - prox_{beta h}(z - beta grad f(z))) / beta`, using the
/// exact global gradient. It vanishes exactly at stationary points.
pub fn prox_gradient_mapping(
    prob: &FederatedProblem,
    reg: &Regularizer,
    z: &ParamVector,
    beta: f64,
) -> Result<ParamVector> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let g = prob.full_global_gradient(z)?;
    let forward = z.axpy(-beta, &g)?;
    z.sub(&reg.prox(beta, &forward)?)?.scale(1.0 / beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConditionReport {
    /// `min(eta^2, (1-q)^2) / (25 L)`
    pub beta_bound: f64,
    pub beta_ok: bool,
    /// `sqrt(16 (1-q)^2 + 161 eta^2) / (5 eta (1-q))`
    pub eta_g_bound: f64,
    pub eta_g_ok: bool,
    /// `1 / (8 K L)`
    pub alpha_local_bound: f64,
    pub alpha_ok: bool,
}

impl StepConditionReport {
    pub fn all_ok(&self) -> bool {
        self.beta_ok && self.eta_g_ok && self.alpha_ok
    }
}

/// Evaluate the global step, server scale and local step conditions under
/// which the convergence guarantee holds. `q` is the compression factor
/// (square root of the contraction factor). Never fails; flags only.
pub fn check_step_conditions(hp: &HyperParams, smoothness: f64, q: f64) -> StepConditionReport {
    let eta = hp.momentum;
    let gap = 1.0 - q;
    let beta_bound = eta.powi(2).min(gap.powi(2)) / (25.0 * smoothness);
    let eta_g_bound = (16.0 * gap.powi(2) + 161.0 * eta.powi(2)).sqrt() / (5.0 * eta * gap);
    let alpha_local_bound = 1.0 / (8.0 * hp.local_steps as f64 * smoothness);
    StepConditionReport {
        beta_bound,
        beta_ok: hp.beta() <= beta_bound,
        eta_g_bound,
        eta_g_ok: hp.eta_g >= eta_g_bound,
        alpha_local_bound,
        alpha_ok: hp.alpha <= alpha_local_bound,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub value: f64,
    /// False at `t = 0`, where only `F(z^0)` is available.
    pub complete: bool,
}

/// Single-trajectory evaluation of the potential
///
/// ```text
/// Psi^t = F(z^t) + 70 eta beta / (1-q)^2 * (1/N) sum_i ||v_i - grad f_i(z^{t-1})||^2
///               + 8 beta / eta * ||v - grad f(z^{t-1})||^2
///               + 17 beta / (1-q) * (1/N) sum_i ||v_i - c_i||^2
/// ```
///
/// with `v` the mean of the client estimators.
pub fn lyapunov_diagnostic(
    server: &ServerState,
    clients: &[ClientState],
    prob: &FederatedProblem,
    reg: &Regularizer,
    hp: &HyperParams,
    q: f64,
) -> Result<LyapunovValue> {
    let objective = prob.objective_value(reg, &server.z)?;
    let Some(prev) = &server.previous_z else {
        return Ok(LyapunovValue {
            value: objective,
            complete: false,
        });
    };
    let n = clients.len() as f64;
    let beta = hp.beta();
    let eta = hp.momentum;
    let gap = 1.0 - q;

    let mut local_err = 0.0;
    let mut comp_err = 0.0;
    for (i, cs) in clients.iter().enumerate() {
        local_err += cs.v.sub(&prob.client_gradient(i, prev)?)?.sq_norm();
        comp_err += cs.v.sub(&cs.c_local)?.sq_norm();
    }
    let vs: Vec<ParamVector> = clients.iter().map(|c| c.v.clone()).collect();
    let global_err = ParamVector::mean(&vs)?
        .sub(&prob.full_global_gradient(prev)?)?
        .sq_norm();

    let value = objective
        + 70.0 * eta * beta / gap.powi(2) * local_err / n
        + 8.0 * beta / eta * global_err
        + 17.0 * beta / gap * comp_err / n;
    Ok(LyapunovValue {
        value,
        complete: true,
    })
}

/// Inputs of [`theorem_residual_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBoundInputs {
    pub smoothness: f64,
    /// Compression factor `q`.
    pub q: f64,
    /// Subgradient bound `B_h`.
    pub subgradient_bound: f64,
    pub sigma_sq: f64,
    pub clients: usize,
    pub psi0: f64,
    pub rounds: usize,
}

pub const RATE_CONSTANT: f64 = 0.15;

/// `C_stoc = 6.7 (17 eta / N + 14 eta^2 / (1-q) + 140 eta^3 / (1-q)^2)`
pub fn stochastic_coefficient(eta: f64, q: f64, clients: usize) -> f64 {
    let gap = 1.0 - q;
    6.7 * (17.0 * eta / clients as f64
        + 14.0 * eta.powi(2) / gap
        + 140.0 * eta.powi(3) / gap.powi(2))
}

/// `C_approx = (18.4 / 0.15) (16 + 161 eta^2 / (1-q)^2)`
pub fn approximation_coefficient(eta: f64, q: f64) -> f64 {
    18.4 / RATE_CONSTANT * (16.0 + 161.0 * eta.powi(2) / (1.0 - q).powi(2))
}

/// Right-hand side of the averaged stationarity guarantee:
///
/// ```text
/// Psi^0 / (0.15 beta T) + C_stoc sigma^2 / (K B) + C_approx L^2 beta^2 B_h^2 / eta_g^2
/// ```
///
/// A full-batch run has no sampling noise, so its stochastic term is zero.
pub fn theorem_residual_bound(hp: &HyperParams, inputs: &ResidualBoundInputs) -> f64 {
    let beta = hp.beta();
    let eta = hp.momentum;
    let decay = inputs.psi0 / (RATE_CONSTANT * beta * inputs.rounds as f64);
    let stochastic = match hp.batch {
        BatchSize::Full => 0.0,
        BatchSize::Samples(b) => {
            stochastic_coefficient(eta, inputs.q, inputs.clients) * inputs.sigma_sq
                / (hp.local_steps as f64 * b as f64)
        }
    };
    let approx = approximation_coefficient(eta, inputs.q)
        * inputs.smoothness.powi(2)
        * beta.powi(2)
        * inputs.subgradient_bound.powi(2)
        / hp.eta_g.powi(2);
    decay + stochastic + approx
}

/// Cumulative `(uplink, downlink)` bytes after each transcribed round. The
/// initial broadcast of `z^0` (4 bytes per coordinate) is charged to the
/// downlink before round 0.
pub fn comm_accounting(dim: usize, transcripts: &[RoundTranscript]) -> Vec<(u64, u64)> {
    let mut up = 0u64;
    let mut down = 4 * dim as u64;
    transcripts
        .iter()
        .map(|t| {
            up += t.uplink.iter().map(|p| p.payload_bytes()).sum::<u64>();
            down += t.downlink.payload_bytes();
            (up, down)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Shard;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn hp(alpha: f64, eta_g: f64, k: usize, eta: f64) -> HyperParams {
        HyperParams {
            alpha,
            eta_g,
            local_steps: k,
            momentum: eta,
            batch: BatchSize::Full,
            rounds: 10,
        }
    }

    #[test]
    fn zero_regularizer_mapping_is_gradient() {
        let prob = FederatedProblem::hetero_quadratic(vec![pv(&[2.0, 1.0])], vec![pv(&[1.0, 1.0])])
            .unwrap();
        let z = pv(&[0.0, 3.0]);
        let g = prox_gradient_mapping(&prob, &Regularizer::Zero, &z, 0.5).unwrap();
        assert_eq!(g, prob.full_global_gradient(&z).unwrap());
    }

    #[test]
    fn one_dimensional_lasso_mapping() {
        // f = 0.5 (z - 2)^2 from a single sample a = 1, b = 2; h = |z|
        let shard = Shard::new(1, vec![vec![1.0]], vec![2.0]).unwrap();
        let prob =
            FederatedProblem::from_shards(crate::problem::LossKind::SquaredError, 1, vec![shard])
                .unwrap();
        let g =
            prox_gradient_mapping(&prob, &Regularizer::l1(1.0).unwrap(), &pv(&[0.0]), 1.0).unwrap();
        assert_eq!(g, pv(&[-1.0]));
    }

    #[test]
    fn step_condition_values() {
        let r = check_step_conditions(&hp(0.001, 3.0, 10, 1.0), 1.0, 0.0);
        assert!((r.beta_bound - 0.04).abs() < 1e-15);
        assert!((r.eta_g_bound - 177f64.sqrt() / 5.0).abs() < 1e-15);
        assert!((r.eta_g_bound - 2.6608).abs() < 1e-4);
        assert!(r.all_ok());

        let r = check_step_conditions(&hp(0.01, 1.0, 10, 1.0), 2.0, 0.0);
        assert!((r.alpha_local_bound - 0.00625).abs() < 1e-15);
        assert!(!r.alpha_ok && !r.eta_g_ok && !r.beta_ok);
    }

    #[test]
    fn residual_coefficients() {
        assert!((stochastic_coefficient(1.0, 0.0, 1) - 1145.7).abs() < 1e-9);
        let h = hp(0.01, 1.0, 2, 1.0);
        let inputs = ResidualBoundInputs {
            smoothness: 1.0,
            q: 0.0,
            subgradient_bound: 0.0,
            sigma_sq: 0.0,
            clients: 1,
            psi0: 3.0,
            rounds: 100,
        };
        let b = theorem_residual_bound(&h, &inputs);
        assert!((b - 3.0 / (0.15 * 0.02 * 100.0)).abs() < 1e-9);
        let doubled = theorem_residual_bound(
            &h,
            &ResidualBoundInputs {
                rounds: 200,
                ..inputs
            },
        );
        assert!((b / doubled - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stochastic_term_uses_batch() {
        let mut h = hp(0.01, 1.0, 2, 0.5);
        h.batch = BatchSize::Samples(4);
        let inputs = ResidualBoundInputs {
            smoothness: 1.0,
            q: 0.5,
            subgradient_bound: 0.0,
            sigma_sq: 2.0,
            clients: 3,
            psi0: 0.0,
            rounds: 1,
        };
        let want = stochastic_coefficient(0.5, 0.5, 3) * 2.0 / 8.0;
        assert!((theorem_residual_bound(&h, &inputs) - want).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_at_stationarity_is_objective() {
        let prob = FederatedProblem::hetero_quadratic(
            vec![pv(&[1.0, 2.0]), pv(&[3.0, 1.0])],
            vec![pv(&[1.0, -1.0]), pv(&[-1.0, 2.0])],
        )
        .unwrap();
        // x* = sum H m / sum H
        let xs = pv(&[(1.0 - 3.0) / 4.0, (-2.0 + 2.0) / 3.0]);
        let mut server = ServerState::new(&xs, 2);
        server.previous_z = Some(xs.clone());
        let clients: Vec<ClientState> = (0..2)
            .map(|i| {
                let mut c = ClientState::new(&xs);
                c.v = prob.client_gradient(i, &xs).unwrap();
                c.c_local = c.v.clone();
                c
            })
            .collect();
        let h = hp(0.01, 3.0, 5, 1.0);
        let psi =
            lyapunov_diagnostic(&server, &clients, &prob, &Regularizer::Zero, &h, 0.0).unwrap();
        assert!(psi.complete);
        let f = prob.objective_value(&Regularizer::Zero, &xs).unwrap();
        assert!((psi.value - f).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_first_round_is_flagged() {
        let prob = FederatedProblem::hetero_quadratic(vec![pv(&[1.0])], vec![pv(&[2.0])]).unwrap();
        let z = pv(&[0.0]);
        let server = ServerState::new(&z, 1);
        let psi = lyapunov_diagnostic(
            &server,
            &[ClientState::new(&z)],
            &prob,
            &Regularizer::Zero,
            &hp(0.1, 1.0, 1, 1.0),
            0.0,
        )
        .unwrap();
        assert!(!psi.complete);
        assert_eq!(psi.value, 2.0);
    }
}
