//! Naive proximal FedAvg: local proximal SGD, then plain averaging of the
//! post-proximal models. Without drift correction its fixed point moves away
//! from the true stationary point when client objectives disagree.

use super::{HyperParams, RunOptions, RunOutput};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, MetricsSeries};
use crate::problem::FederatedProblem;
use crate::regularizer::Regularizer;
use crate::rng::derive_stream;
use crate::vector::ParamVector;

/// Run proximal FedAvg. Uploads and broadcasts are dense and uncompressed.
pub fn run_prox_fedavg(
    prob: &FederatedProblem,
    reg: &Regularizer,
    hp: &HyperParams,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    hp.validate()?;
    let dim = prob.dim();
    let n = prob.num_clients();
    let mut z = opts
        .initial
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(dim));
    if z.len() != dim {
        return Err(Error::DimensionMismatch {
            op: "run_prox_fedavg",
            left: z.len(),
            right: dim,
        });
    }
    let beta = hp.beta();
    let per_round_up = (n * 4 * dim) as u64;
    let per_round_down = (4 * dim) as u64;
    let mut rows = vec![MetricsRow::measure(
        prob, reg, &z, beta, 0, 0, 0, None, true,
    )?];
    let mut iterates = vec![z.clone()];
    for t in 0..hp.rounds {
        let mut locals = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = derive_stream(seed, &format!("client/{i}/round/{t}/batch"))?;
            let mut x = z.clone();
            for k in 0..hp.local_steps {
                let step = |e: Error| Error::Local {
                    round: t,
                    client: i,
                    step: k,
                    source: Box::new(e),
                };
                let g = prob
                    .stochastic_gradient(i, &x, hp.batch, &mut rng)
                    .map_err(step)?;
                x = reg
                    .prox(hp.alpha, &x.axpy(-hp.alpha, &g).map_err(step)?)
                    .map_err(step)?;
            }
            locals.push(x);
        }
        z = ParamVector::mean(&locals).map_err(|e| e.in_round(t))?;
        let round = (t + 1) as u64;
        rows.push(
            MetricsRow::measure(
                prob,
                reg,
                &z,
                beta,
                t + 1,
                round * per_round_up,
                round * per_round_down,
                None,
                true,
            )
            .map_err(|e| e.in_round(t))?,
        );
        iterates.push(z.clone());
    }
    Ok(RunOutput {
        series: MetricsSeries { rows },
        iterates,
        transcripts: Vec::new(),
        step_report: None,
        control_deviation: Vec::new(),
    })
}
