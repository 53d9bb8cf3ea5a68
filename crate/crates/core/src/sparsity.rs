//! Reweighted ℓ1 surrogate for the illuminated-beam count.

use nalgebra::DMatrix;

/// Default smoothing, W².
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Smallest smoothing reached by continuation, W².
pub const MIN_EPSILON: f64 = 1e-12;

/// Reweighting weights `ψ` over beams and slots plus the continuation state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightState {
    pub psi: DMatrix<f64>,
    pub epsilon: f64,
    pub iteration: usize,
}

impl ReweightState {
    /// Initial weights `1/P̄_n`, so that the weighted count starts as
    /// `Σ P_n/P̄_n`, a convex under-estimate of the true beam count.
    pub fn new(max_beam_power: &[f64], n_slots: usize) -> Self {
        Self {
            psi: DMatrix::from_fn(max_beam_power.len(), n_slots, |n, _| 1.0 / max_beam_power[n]),
            epsilon: DEFAULT_EPSILON,
            iteration: 0,
        }
    }

    /// Recomputes the weights from beam powers, then halves `ε` down to its floor.
    pub fn advance(&mut self, powers: &DMatrix<f64>) {
        self.psi = update_weights(powers, self.epsilon);
        self.epsilon = (0.5 * self.epsilon).max(MIN_EPSILON);
        self.iteration += 1;
    }
}

pub fn weight(p: f64, epsilon: f64) -> f64 {
    (p * p + epsilon).sqrt().recip()
}

/// `ψ = (P² + ε)^{-1/2}` elementwise.
pub fn update_weights(powers: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    powers.map(|p| weight(p, epsilon))
}

/// Relaxed beam count `Σ_n ψ_n P_n`.
pub fn weighted_activity(powers: &[f64], psi: &[f64]) -> f64 {
    powers.iter().zip(psi).map(|(p, w)| p * w).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert!((weight(0.0, 1e-4) - 100.0).abs() < 1e-9);
        assert!((weight(3.0, 1e-2) - 9.01f64.powf(-0.5)).abs() < 1e-15);
        assert!((weight(3.0, 1e-2) - 0.33315).abs() < 1e-5);
        assert!(weight(1e12, 1e-6) < 1e-11);
    }

    #[test]
    fn activity_examples() {
        let eps = 1e-6;
        let p = [30.0, 12.0, 0.0, 55.0];
        let psi: Vec<f64> = p.iter().map(|&x| weight(x, eps)).collect();
        assert!((weighted_activity(&p, &psi) - 3.0).abs() < 1e-6);
        assert_eq!(weighted_activity(&[0.0, 0.0], &[5.0, 7.0]), 0.0);
        let single = eps.sqrt();
        assert!((single * weight(single, eps) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn continuation_halves_to_floor() {
        let mut st = ReweightState::new(&[100.0, 50.0], 2);
        assert_eq!(st.psi[(1, 1)], 0.02);
        for _ in 0..40 {
            st.advance(&DMatrix::zeros(2, 2));
        }
        assert_eq!(st.epsilon, MIN_EPSILON);
        assert_eq!(st.iteration, 40);
    }

    proptest! {
        #[test]
        fn contribution_below_one(p in 0.0f64..1e4, eps in 1e-12f64..1.0) {
            let v = p * weight(p, eps);
            prop_assert!((0.0..1.0).contains(&v));
        }

        #[test]
        fn order_reversing(a in 0.0f64..1e3, b in 0.0f64..1e3, eps in 1e-12f64..1.0) {
            if a < b {
                prop_assert!(weight(a, eps) >= weight(b, eps));
            }
        }
    }
}
