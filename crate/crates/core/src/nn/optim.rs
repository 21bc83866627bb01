//! SGD with exponential-smoothing momentum.
//!
//! M <- lambda * M + (1 - lambda) * g, then w <- w - lr * M. With
//! lambda = 0 this reduces to plain SGD. The momentum buffer doubles as
//! the regrowth signal for pruning, so it is always updated on the full
//! (unmasked) gradient.

use super::{ParamVector, Scalar};

#[derive(Clone, Debug)]
pub struct MomentumState<F> {
    values: Vec<F>,
    smoothing: F,
}

impl<F: Scalar> MomentumState<F> {
    /// Zero momentum with the given smoothing factor lambda in [0, 1).
    pub fn zeros(len: usize, smoothing: F) -> Self {
        assert!(
            smoothing >= F::zero() && smoothing < F::one(),
            "momentum smoothing must lie in [0, 1)"
        );
        Self {
            values: vec![F::zero(); len],
            smoothing,
        }
    }

    #[inline]
    pub fn values(&self) -> &[F] {
        &self.values
    }

    #[inline]
    pub fn smoothing(&self) -> F {
        self.smoothing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// M <- lambda * M + (1 - lambda) * g.
    pub fn update(&mut self, grad: &[F]) {
        debug_assert_eq!(self.values.len(), grad.len());
        let lambda = self.smoothing;
        let one_minus = F::one() - lambda;
        for (m, g) in self.values.iter_mut().zip(grad.iter()) {
            *m = lambda * *m + one_minus * *g;
        }
    }
}

/// One SGD-with-momentum step over the full parameter vector.
pub fn sgd_momentum_step<F: Scalar>(
    params: &mut ParamVector<F>,
    grad: &ParamVector<F>,
    momentum: &mut MomentumState<F>,
    lr: F,
) {
    debug_assert!(params.same_layout(grad));
    debug_assert_eq!(params.len(), momentum.len());
    momentum.update(grad.values());
    for (w, m) in params.values_mut().iter_mut().zip(momentum.values.iter()) {
        *w = *w - lr * *m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerKind, LayerShape};

    fn scalar_params(v: f64) -> ParamVector<f64> {
        let segs = vec![LayerShape {
            layer_id: 0,
            kind: LayerKind::Dense,
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
        }];
        // one weight + one bias; tests use the weight slot
        let mut p = ParamVector::zeros(segs);
        p.values_mut()[0] = v;
        p
    }

    #[test]
    fn plain_sgd_step_matches_arithmetic() {
        let mut p = scalar_params(1.0);
        let mut g = scalar_params(0.0);
        g.values_mut()[0] = 0.5;
        let mut m = MomentumState::zeros(p.len(), 0.0);
        sgd_momentum_step(&mut p, &g, &mut m, 0.01);
        assert!((p.values()[0] - 0.995).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_decays_momentum_and_coasts() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(0.0);
        let mut m = MomentumState::zeros(p.len(), 0.9);
        m.values[0] = 1.0;
        sgd_momentum_step(&mut p, &g, &mut m, 0.1);
        assert!((m.values()[0] - 0.9).abs() < 1e-12);
        assert!((p.values()[0] - (1.0 - 0.1 * 0.9)).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut p = scalar_params(2.5);
        let mut g = scalar_params(0.0);
        g.values_mut()[0] = 123.0;
        let mut m = MomentumState::zeros(p.len(), 0.5);
        sgd_momentum_step(&mut p, &g, &mut m, 0.0);
        assert_eq!(p.values()[0], 2.5);
    }
}
