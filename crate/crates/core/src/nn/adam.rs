use super::mlp::DenseParams;
use crate::error::{Error, Result};

/// Adam moments for one [`DenseParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: DenseParams,
    pub v: DenseParams,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &DenseParams, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut DenseParams, grads: &DenseParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::Shape("adam: gradients, moments and parameters must share a shape".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);

        let tensors = params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64) -> DenseParams {
        DenseParams::from_layers(vec![Dense {
            weight: array![[w]],
            bias: array![[0.0]],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = DenseParams::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001; bias-corrected both become g and g², so the
        // update is lr * 1 / (1 + eps).
        let mut p = scalar_net(0.0);
        let mut adam = AdamState::new(&p, 0.1);
        adam.step(&mut p, &scalar_net(1.0)).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.layers[0].weight[[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(p.layers[0].bias[[0, 0]], 0.0);
    }

    #[test]
    fn repeated_steps_are_bitwise_deterministic() {
        let g = scalar_net(0.37);
        let run = || {
            let mut p = scalar_net(1.0);
            let mut a = AdamState::new(&p, 0.01);
            a.step(&mut p, &g).unwrap();
            a.step(&mut p, &g).unwrap();
            p.layers[0].weight[[0, 0]].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = scalar_net(0.0);
        let mut adam = AdamState::new(&p, 0.1);
        let wrong = DenseParams::from_layers(vec![Dense {
            weight: Array2::zeros((2, 1)),
            bias: Array2::zeros((1, 1)),
            activation: Activation::Identity,
        }])
        .unwrap();
        assert!(matches!(adam.step(&mut p, &wrong), Err(Error::Shape(_))));
        assert_eq!(adam.step, 0);
    }
}
