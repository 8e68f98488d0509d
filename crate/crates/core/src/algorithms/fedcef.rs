//! FedCEF as explicit client and server state machines.
//!
//! One round is `local_update -> client_uplink` on every client,
//! `server_aggregate` on the server, then `client_downlink` on every client
//! and `server_finalize` on the server. Only the compressed deviations go up
//! and only the pre-proximal iterate `z~ = z - beta c` comes down; clients
//! recover the new global control from it.

use log::warn;

use super::{HyperParams, RunOptions, RunOutput};
use crate::compressor::{CompressorKind, CompressorSpec, SparsePayload};
use crate::error::{Error, Result};
use crate::metrics::{check_step_conditions, lyapunov_diagnostic, MetricsRow, MetricsSeries};
use crate::problem::FederatedProblem;
use crate::regularizer::Regularizer;
use crate::rng::{derive_stream, RngStream};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    /// Pre-proximal local model.
    pub x_hat: ParamVector,
    /// Post-proximal local model.
    pub x: ParamVector,
    /// Local control `c_i`.
    pub c_local: ParamVector,
    /// Momentum estimator `v_i`.
    pub v: ParamVector,
    /// Last global model received; the reconstruction baseline.
    pub z_prev: ParamVector,
    /// The client's copy of the global control, as reconstructed from the
    /// last downlink.
    pub c_global: ParamVector,
}

impl ClientState {
    pub fn new(z0: &ParamVector) -> Self {
        let zero = ParamVector::zeros(z0.len());
        ClientState {
            x_hat: z0.clone(),
            x: z0.clone(),
            c_local: zero.clone(),
            v: zero.clone(),
            z_prev: z0.clone(),
            c_global: zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub z: ParamVector,
    pub c_global: ParamVector,
    pub round: usize,
    pub num_clients: usize,
    /// `z^{t-1}`; `None` before the first round completes.
    pub previous_z: Option<ParamVector>,
}

impl ServerState {
    pub fn new(z0: &ParamVector, num_clients: usize) -> Self {
        ServerState {
            z: z0.clone(),
            c_global: ParamVector::zeros(z0.len()),
            round: 0,
            num_clients,
            previous_z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub round: usize,
    pub uplink: Vec<SparsePayload>,
    pub downlink: SparsePayload,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Per client, the `K` stochastic gradients of the round.
    pub local_gradients: Vec<Vec<ParamVector>>,
}

/// Run `K` decoupled proximal local steps from `z`.
///
/// The pre-proximal state accumulates `x^_{k+1} = x^_k - alpha (g_i(x_k) + c - c_i)`
/// linearly, and the post-proximal model is `x_{k+1} = prox_{(k+1) alpha h}(x^_{k+1})`.
/// Returns the gradients evaluated at each step.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    cs: &mut ClientState,
    z: &ParamVector,
    c_global: &ParamVector,
    prob: &FederatedProblem,
    client: usize,
    reg: &Regularizer,
    hp: &HyperParams,
    rng: &mut RngStream,
) -> Result<Vec<ParamVector>> {
    let at_step = |step: usize| {
        move |e: Error| Error::Local {
            round: 0,
            client,
            step,
            source: Box::new(e),
        }
    };
    cs.z_prev = z.clone();
    cs.c_global = c_global.clone();
    cs.x_hat = z.clone();
    cs.x = z.clone();
    let drift = c_global.sub(&cs.c_local).map_err(at_step(0))?;
    let mut grads = Vec::with_capacity(hp.local_steps);
    for k in 0..hp.local_steps {
        let g = prob
            .stochastic_gradient(client, &cs.x, hp.batch, rng)
            .map_err(at_step(k))?;
        let direction = g.add(&drift).map_err(at_step(k))?;
        cs.x_hat = cs.x_hat.axpy(-hp.alpha, &direction).map_err(at_step(k))?;
        cs.x = reg
            .prox((k + 1) as f64 * hp.alpha, &cs.x_hat)
            .map_err(at_step(k))?;
        grads.push(g);
    }
    Ok(grads)
}

/// `(x^_0 - x^_K) / (alpha K) + c_i - c`, equal to the mean local gradient of
/// the round.
pub fn linear_accumulator(cs: &ClientState, hp: &HyperParams) -> Result<ParamVector> {
    let scale = 1.0 / (hp.alpha * hp.local_steps as f64);
    cs.z_prev
        .sub(&cs.x_hat)?
        .scale(scale)?
        .add(&cs.c_local)?
        .sub(&cs.c_global)
}

/// Momentum update, compressed deviation and error-feedback control update.
pub fn client_uplink(
    cs: &mut ClientState,
    hp: &HyperParams,
    spec: &CompressorSpec,
    rng: Option<&mut RngStream>,
) -> Result<SparsePayload> {
    let acc = linear_accumulator(cs, hp)?;
    cs.v = cs.v.scale(1.0 - hp.momentum)?.axpy(hp.momentum, &acc)?;
    let deviation = cs.v.sub(&cs.c_local)?;
    let (payload, delta) = spec.compress(&deviation, rng)?;
    cs.c_local = cs.c_local.add(&delta)?;
    Ok(payload)
}

/// Fold the uplink payloads (ascending client order) into the global
/// control and return the pre-proximal broadcast `z - beta c^{t+1}`.
pub fn server_aggregate(
    ss: &mut ServerState,
    payloads: &[SparsePayload],
    hp: &HyperParams,
) -> Result<ParamVector> {
    if payloads.len() != ss.num_clients {
        return Err(Error::invalid(format!(
            "expected {} payloads, got {}",
            ss.num_clients,
            payloads.len()
        )));
    }
    let dense: Vec<ParamVector> = payloads.iter().map(SparsePayload::densify).collect();
    let mean = ParamVector::mean(&dense)?;
    ss.c_global = ss.c_global.add(&mean)?;
    ss.z.axpy(-hp.beta(), &ss.c_global)
}

/// Server-side mirror of the client prox so the server holds `z^{t+1}`.
pub fn server_finalize(
    ss: &mut ServerState,
    z_tilde: &ParamVector,
    reg: &Regularizer,
    hp: &HyperParams,
) -> Result<()> {
    let next = reg.prox(hp.beta(), z_tilde)?;
    ss.previous_z = Some(std::mem::replace(&mut ss.z, next));
    ss.round += 1;
    Ok(())
}

/// Reconstruct `c^{t+1} = (z^t - z~^{t+1}) / beta` and apply the global prox.
pub fn client_downlink(
    cs: &mut ClientState,
    z_tilde: &ParamVector,
    reg: &Regularizer,
    hp: &HyperParams,
) -> Result<ParamVector> {
    let beta = hp.beta();
    if beta == 0.0 {
        return Err(Error::invalid("global step beta is zero"));
    }
    let reconstructed = cs.z_prev.sub(z_tilde)?.scale(1.0 / beta)?;
    cs.z_prev = reg.prox(beta, z_tilde)?;
    cs.c_global = reconstructed.clone();
    Ok(reconstructed)
}

fn batch_stream(seed: u64, client: usize, round: usize) -> RngStream {
    derive_stream(seed, &format!("client/{client}/round/{round}/batch")).expect("nonempty")
}

fn compress_stream(seed: u64, client: usize, round: usize) -> RngStream {
    derive_stream(seed, &format!("client/{client}/round/{round}/compress")).expect("nonempty")
}

/// Run FedCEF for `hp.rounds` rounds with full participation.
pub fn run_fedcef(
    prob: &FederatedProblem,
    reg: &Regularizer,
    hp: &HyperParams,
    spec: &CompressorSpec,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    hp.validate()?;
    let dim = prob.dim();
    let n = prob.num_clients();
    let z0 = opts
        .initial
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(dim));
    if z0.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "run_fedcef",
            left: z0.len(),
            right: dim,
        });
    }
    let q = spec.contraction_factor(dim)?.sqrt();
    let beta = hp.beta();
    let report = check_step_conditions(hp, prob.smoothness().value, q);
    if !report.all_ok() {
        warn!("step sizes violate the convergence conditions: {report:?}");
    }

    let mut clients: Vec<ClientState> = (0..n).map(|_| ClientState::new(&z0)).collect();
    let mut server = ServerState::new(&z0, n);
    let bootstrap = 4 * dim as u64;
    let (mut uplink_total, mut downlink_total) = (0u64, bootstrap);

    let mut rows = Vec::with_capacity(hp.rounds + 1);
    let lyap0 = if opts.lyapunov {
        Some(lyapunov_diagnostic(&server, &clients, prob, reg, hp, q)?.value)
    } else {
        None
    };
    rows.push(MetricsRow::measure(
        prob,
        reg,
        &z0,
        beta,
        0,
        0,
        bootstrap,
        lyap0,
        report.all_ok(),
    )?);
    let mut iterates = vec![z0];
    let mut transcripts = Vec::new();
    let mut control_deviation = Vec::with_capacity(hp.rounds);

    for t in 0..hp.rounds {
        let round = |e: Error| match e {
            Error::Local {
                client,
                step,
                source,
                ..
            } => Error::Local {
                round: t,
                client,
                step,
                source,
            },
            other => other.in_round(t),
        };
        let mut payloads = Vec::with_capacity(n);
        let mut gradients = Vec::new();
        for (i, cs) in clients.iter_mut().enumerate() {
            let z = cs.z_prev.clone();
            let c = cs.c_global.clone();
            let mut rng = batch_stream(seed, i, t);
            let grads = local_update(cs, &z, &c, prob, i, reg, hp, &mut rng).map_err(round)?;
            let mut crng =
                (spec.kind == CompressorKind::RandK).then(|| compress_stream(seed, i, t));
            payloads.push(client_uplink(cs, hp, spec, crng.as_mut()).map_err(round)?);
            if opts.keep_transcripts {
                gradients.push(grads);
            }
        }
        let z_tilde = server_aggregate(&mut server, &payloads, hp).map_err(round)?;
        for cs in clients.iter_mut() {
            client_downlink(cs, &z_tilde, reg, hp).map_err(round)?;
        }
        server_finalize(&mut server, &z_tilde, reg, hp).map_err(round)?;
        debug_assert!(control_gap(&server, &clients) <= 1e-10 * (1.0 + server.c_global.inf_norm()));

        let up: u64 = payloads.iter().map(SparsePayload::payload_bytes).sum();
        let downlink = SparsePayload::dense(z_tilde.into_inner());
        let down = downlink.payload_bytes();
        uplink_total += up;
        downlink_total += down;

        control_deviation.push(
            clients
                .iter()
                .map(|cs| cs.v.sub(&cs.c_local).map(|d| d.norm()))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max),
        );
        let lyap = if opts.lyapunov {
            Some(
                lyapunov_diagnostic(&server, &clients, prob, reg, hp, q)
                    .map_err(round)?
                    .value,
            )
        } else {
            None
        };
        rows.push(
            MetricsRow::measure(
                prob,
                reg,
                &server.z,
                beta,
                t + 1,
                uplink_total,
                downlink_total,
                lyap,
                report.all_ok(),
            )
            .map_err(round)?,
        );
        iterates.push(server.z.clone());
        if opts.keep_transcripts {
            transcripts.push(RoundTranscript {
                round: t,
                uplink: payloads,
                downlink,
                uplink_bytes: up,
                downlink_bytes: down,
                local_gradients: gradients,
            });
        }
    }

    Ok(RunOutput {
        series: MetricsSeries { rows },
        iterates,
        transcripts,
        step_report: Some(report),
        control_deviation,
    })
}

fn control_gap(server: &ServerState, clients: &[ClientState]) -> f64 {
    let locals: Vec<ParamVector> = clients.iter().map(|c| c.c_local.clone()).collect();
    match ParamVector::mean(&locals).and_then(|m| m.sub(&server.c_global)) {
        Ok(d) => d.inf_norm(),
        Err(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BatchSize;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn hp(alpha: f64, k: usize) -> HyperParams {
        HyperParams {
            alpha,
            eta_g: 1.0,
            local_steps: k,
            momentum: 1.0,
            batch: BatchSize::Full,
            rounds: 1,
        }
    }

    fn quad() -> FederatedProblem {
        FederatedProblem::hetero_quadratic(vec![pv(&[1.0, 2.0])], vec![pv(&[3.0, -1.0])]).unwrap()
    }

    #[test]
    fn single_step_is_a_gradient_step() {
        let prob = quad();
        let z = pv(&[1.0, 1.0]);
        let zero = ParamVector::zeros(2);
        let mut cs = ClientState::new(&z);
        let mut rng = derive_stream(0, "t").unwrap();
        let h = hp(0.1, 1);
        local_update(
            &mut cs,
            &z,
            &zero,
            &prob,
            0,
            &Regularizer::Zero,
            &h,
            &mut rng,
        )
        .unwrap();
        let g = prob.client_gradient(0, &z).unwrap();
        assert_eq!(cs.x_hat, z.axpy(-0.1, &g).unwrap());
    }

    #[test]
    fn constant_gradient_telescopes() {
        // x^_K = z - alpha (sum_k g_k + K (c - c_i))
        let prob = quad();
        let z = pv(&[0.0, 0.0]);
        let c = pv(&[0.5, -0.25]);
        let mut cs = ClientState::new(&z);
        cs.c_local = pv(&[0.125, 0.0]);
        let h = HyperParams {
            alpha: 0.01,
            local_steps: 7,
            ..hp(0.01, 7)
        };
        let mut rng = derive_stream(0, "t").unwrap();
        let grads =
            local_update(&mut cs, &z, &c, &prob, 0, &Regularizer::Zero, &h, &mut rng).unwrap();
        let sum = ParamVector::sum(&grads).unwrap();
        let drift = c.sub(&cs.c_local).unwrap().scale(7.0).unwrap();
        let expected = z.axpy(-0.01, &sum.add(&drift).unwrap()).unwrap();
        assert!(cs.x_hat.sub(&expected).unwrap().inf_norm() < 1e-14);
    }

    #[test]
    fn identity_uplink_sets_control_to_momentum() {
        let prob = quad();
        let z = pv(&[0.0, 0.0]);
        let mut cs = ClientState::new(&z);
        let h = hp(0.05, 3);
        let mut rng = derive_stream(0, "t").unwrap();
        let zero = ParamVector::zeros(2);
        let grads = local_update(
            &mut cs,
            &z,
            &zero,
            &prob,
            0,
            &Regularizer::Zero,
            &h,
            &mut rng,
        )
        .unwrap();
        client_uplink(&mut cs, &h, &CompressorSpec::identity(), None).unwrap();
        assert_eq!(cs.c_local, cs.v);
        // momentum 1, zero init: v is the mean local gradient
        let mean = ParamVector::mean(&grads).unwrap();
        assert!(cs.v.sub(&mean).unwrap().inf_norm() < 1e-12);
    }

    #[test]
    fn aggregate_with_zero_payloads() {
        let mut ss = ServerState::new(&pv(&[1.0, 2.0]), 2);
        ss.c_global = pv(&[1.0, -1.0]);
        let zero = SparsePayload::from_entries(2, vec![]).unwrap();
        let h = hp(0.5, 2);
        let zt = server_aggregate(&mut ss, &[zero.clone(), zero.clone()], &h).unwrap();
        assert_eq!(zt, pv(&[0.0, 3.0]));
        assert!(server_aggregate(&mut ss, &[zero], &h).is_err());
    }

    #[test]
    fn downlink_reconstruction() {
        let z = pv(&[1.0, -2.0]);
        let mut cs = ClientState::new(&z);
        let h = hp(0.25, 2);
        let c = client_downlink(&mut cs, &z, &Regularizer::Zero, &h).unwrap();
        assert_eq!(c, ParamVector::zeros(2));
        let zt = pv(&[0.5, -1.0]);
        let c = client_downlink(&mut cs, &zt, &Regularizer::Zero, &h).unwrap();
        assert_eq!(cs.z_prev, zt);
        assert_eq!(c, pv(&[1.0, -2.0]));
    }

    #[test]
    fn zero_beta_downlink_is_an_error() {
        let z = pv(&[1.0]);
        let mut cs = ClientState::new(&z);
        let h = HyperParams {
            alpha: 0.0,
            ..hp(1.0, 1)
        };
        assert!(client_downlink(&mut cs, &z, &Regularizer::Zero, &h).is_err());
    }

    #[test]
    fn full_retention_matches_identity() {
        let prob = FederatedProblem::hetero_quadratic(
            vec![pv(&[1.0, 2.0]), pv(&[0.5, 1.5])],
            vec![pv(&[3.0, -1.0]), pv(&[-2.0, 4.0])],
        )
        .unwrap();
        let h = HyperParams {
            rounds: 20,
            momentum: 0.5,
            ..hp(0.01, 4)
        };
        let opts = RunOptions::default();
        let a = run_fedcef(
            &prob,
            &Regularizer::Zero,
            &h,
            &CompressorSpec::identity(),
            3,
            &opts,
        )
        .unwrap();
        let b = run_fedcef(
            &prob,
            &Regularizer::Zero,
            &h,
            &CompressorSpec::top_ratio(1.0),
            3,
            &opts,
        )
        .unwrap();
        assert_eq!(a.iterates, b.iterates);
        // byte counters differ by construction (dense vs sparse accounting)
        for (ra, rb) in a.series.rows.iter().zip(&b.series.rows) {
            assert_eq!(ra.objective, rb.objective);
            assert_eq!(ra.prox_grad_sq, rb.prox_grad_sq);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let z0 = pv(&[3.0, -1.0]);
        let prob =
            FederatedProblem::hetero_quadratic(vec![pv(&[1.0, 2.0])], vec![z0.clone()]).unwrap();
        let h = HyperParams {
            rounds: 10,
            ..hp(0.1, 3)
        };
        let opts = RunOptions {
            initial: Some(z0.clone()),
            ..Default::default()
        };
        let out = run_fedcef(
            &prob,
            &Regularizer::Zero,
            &h,
            &CompressorSpec::top_k(1),
            0,
            &opts,
        )
        .unwrap();
        assert!(out.iterates.iter().all(|z| *z == z0));
    }

    #[test]
    fn dimension_mismatch_in_initial_point() {
        let prob = quad();
        let opts = RunOptions {
            initial: Some(pv(&[1.0])),
            ..Default::default()
        };
        let h = hp(0.1, 1);
        assert!(run_fedcef(
            &prob,
            &Regularizer::Zero,
            &h,
            &CompressorSpec::identity(),
            0,
            &opts
        )
        .is_err());
    }

    #[test]
    fn divergence_reports_round_context() {
        let prob = FederatedProblem::hetero_quadratic(vec![pv(&[10.0])], vec![pv(&[1.0])]).unwrap();
        let h = HyperParams {
            alpha: 5.0,
            rounds: 2000,
            ..hp(5.0, 5)
        };
        let err = run_fedcef(
            &prob,
            &Regularizer::Zero,
            &h,
            &CompressorSpec::identity(),
            0,
            &RunOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::Round { .. } | Error::Local { .. }),
            "{err:?}"
        );
    }
}
