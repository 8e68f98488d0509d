use crate::error::{Error, Result};
use crate::problem::FederatedProblem;
use crate::regularizer::Regularizer;
use crate::vector::ParamVector;

/// Centralized proximal gradient descent from the origin.
///
/// Returns `z^0, ..., z^rounds` with `z^{t+1} = prox_{step h}(z^t - step grad f(z^t))`.
pub fn run_centralized_pgd(
    prob: &FederatedProblem,
    reg: &Regularizer,
    step: f64,
    rounds: usize,
) -> Result<Vec<ParamVector>> {
    run_centralized_pgd_from(prob, reg, step, rounds, &ParamVector::zeros(prob.dim()))
}

pub fn run_centralized_pgd_from(
    prob: &FederatedProblem,
    reg: &Regularizer,
    step: f64,
    rounds: usize,
    z0: &ParamVector,
) -> Result<Vec<ParamVector>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "pgd step must be positive, got {step}"
        )));
    }
    let mut traj = Vec::with_capacity(rounds + 1);
    traj.push(z0.clone());
    let mut z = z0.clone();
    for t in 0..rounds {
        let g = prob.full_global_gradient(&z).map_err(|e| e.in_round(t))?;
        z = reg
            .prox(step, &z.axpy(-step, &g).map_err(|e| e.in_round(t))?)
            .map_err(|e| e.in_round(t))?;
        traj.push(z.clone());
    }
    Ok(traj)
}
