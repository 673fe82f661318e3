use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "Adam state holds {} entries, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001 after one step; bias correction gives m_hat = v_hat = 1.
        let mut s = AdamState::new(1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], 0.01).unwrap();
        let expected = -0.01 * 1.0 / (1.0 + EPSILON);
        assert!((p[0] - expected).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        let mut s = AdamState::new(2);
        let mut p = [0.5, -0.25];
        s.step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, [0.5, -0.25]);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0], &[0.0], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn fresh_update_is_odd_and_bounded(g in -1e3f64..1e3, lr in 1e-4f64..1.0) {
            prop_assume!(g.abs() > 1e-6);
            let (mut a, mut b) = ([0.0], [0.0]);
            AdamState::new(1).step(&mut a, &[g], lr).unwrap();
            AdamState::new(1).step(&mut b, &[-g], lr).unwrap();
            prop_assert_eq!(a[0], -b[0]);
            prop_assert!(a[0].abs() <= lr * (1.0 + 1e-9));
        }
    }
}
