//! Non-smooth regularizers and their proximal operators.

use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Proper closed convex regularizer `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `lambda * ||x||_1`
    L1 {
        lambda: f64,
    },
}

impl Regularizer {
    pub fn l1(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "l1 weight must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Regularizer::L1 { lambda })
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => *lambda,
        }
    }

    /// `argmin_u h(u) + ||u - x||^2 / (2 tau)`.
    ///
    /// For L1 this is soft-thresholding at `tau * lambda`; a zero step or the
    /// zero regularizer returns `x` unchanged.
    pub fn prox(&self, tau: f64, x: &ParamVector) -> Result<ParamVector> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!(
                "prox step must be finite and nonnegative, got {tau}"
            )));
        }
        let threshold = tau * self.lambda();
        if threshold == 0.0 {
            return Ok(x.clone());
        }
        x.map("prox", |v| soft_threshold(v, threshold))
    }

    pub fn evaluate(&self, x: &ParamVector) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => {
                let mut acc = 0.0;
                for v in x {
                    acc += v.abs();
                }
                lambda * acc
            }
        }
    }

    /// Worst-case bound `B_h >= ||h'(z)||^2` over all subgradients.
    ///
    /// For L1 every subgradient coordinate lies in `[-lambda, lambda]`, so the
    /// bound is `lambda^2 * dim`. It is attained only where no coordinate is
    /// zero; tighter local bounds exist but are not used.
    pub fn subgradient_bound(&self, dim: usize) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * lambda * dim as f64,
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    /// Brute-force argmin of `0.5 (u - x)^2 + tau * lambda * |u|` on a grid.
    fn grid_prox(x: f64, tau_lambda: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let steps = 100_000;
        for i in 0..=steps {
            let u = -5.0 + 10.0 * i as f64 / steps as f64;
            let val = 0.5 * (u - x).powi(2) + tau_lambda * u.abs();
            if val < best.0 {
                best = (val, u);
            }
        }
        best.1
    }

    #[test]
    fn zero_regularizer_is_identity() {
        let x = pv(&[1.0, -2.0]);
        assert_eq!(Regularizer::Zero.prox(0.5, &x).unwrap(), x);
        assert_eq!(Regularizer::Zero.evaluate(&x), 0.0);
    }

    #[test]
    fn zero_step_is_identity() {
        let x = pv(&[3.0, -1.0]);
        assert_eq!(Regularizer::l1(1.0).unwrap().prox(0.0, &x).unwrap(), x);
    }

    #[test]
    fn soft_threshold_matches_grid_oracle() {
        let x = [3.0, -1.0, 0.5];
        let oracle: Vec<f64> = x.iter().map(|v| grid_prox(*v, 1.0)).collect();
        for (o, want) in oracle.iter().zip([2.0, 0.0, 0.0]) {
            assert!((o - want).abs() < 1e-4, "oracle {o} vs {want}");
        }
        let got = Regularizer::l1(1.0).unwrap().prox(1.0, &pv(&x)).unwrap();
        assert_eq!(got, pv(&[2.0, 0.0, 0.0]));
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() <= 1e-4);
        }
    }

    #[test]
    fn negative_step_rejected() {
        assert!(Regularizer::Zero.prox(-1.0, &pv(&[1.0])).is_err());
        assert!(Regularizer::l1(-0.1).is_err());
    }

    #[test]
    fn evaluate_l1() {
        assert_eq!(
            Regularizer::l1(2.0).unwrap().evaluate(&pv(&[1.0, -3.0])),
            8.0
        );
        let x = pv(&[0.25, -1.5, 3.0, 0.0, -0.125]);
        let independent: f64 = x.as_slice().iter().rev().map(|v| 1e-5 * v.abs()).sum();
        let got = Regularizer::l1(1e-5).unwrap().evaluate(&x);
        assert!((got - independent).abs() <= 1e-18);
    }

    #[test]
    fn subgradient_bounds() {
        assert_eq!(Regularizer::Zero.subgradient_bound(100), 0.0);
        assert_eq!(Regularizer::l1(1.0).unwrap().subgradient_bound(4), 4.0);
        let b = Regularizer::l1(1e-5).unwrap().subgradient_bound(20);
        assert!((b - 2e-9).abs() < 1e-22);
    }

    fn vec_pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-10.0f64..10.0, dim),
            prop::collection::vec(-10.0f64..10.0, dim),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn prox_is_nonexpansive((x, y) in vec_pair(8), tau in 0.0f64..3.0, lambda in 0.0f64..2.0) {
            let reg = Regularizer::l1(lambda).unwrap();
            let (x, y) = (pv(&x), pv(&y));
            let px = reg.prox(tau, &x).unwrap();
            let py = reg.prox(tau, &y).unwrap();
            let lhs = px.sub(&py).unwrap().norm();
            let rhs = x.sub(&y).unwrap().norm();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn prox_satisfies_optimality(x in prop::collection::vec(-10.0f64..10.0, 8), tau in 0.01f64..3.0, lambda in 0.01f64..2.0) {
            let reg = Regularizer::l1(lambda).unwrap();
            let x = pv(&x);
            let u = reg.prox(tau, &x).unwrap();
            let t = tau * lambda;
            for j in 0..x.len() {
                // Moreau: x = u + tau * s with s in the subdifferential of lambda|.|
                let s = (x[j] - u[j]) / tau;
                prop_assert!(s.abs() <= lambda * (1.0 + 1e-12));
                prop_assert!((x[j] - u[j]).abs() <= t * (1.0 + 1e-12));
                if u[j] != 0.0 {
                    prop_assert!((s - lambda * u[j].signum()).abs() <= 1e-9);
                }
            }
        }
    }
}
