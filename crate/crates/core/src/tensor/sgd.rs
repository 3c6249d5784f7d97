use super::Tensor;
use crate::error::{Error, Result};

/// SGD with classical momentum: `v <- momentum * v - lr * g`, `p <- p + v`.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    /// Zero velocities for parameters of the given sizes.
    pub fn new(learning_rate: f64, momentum: f64, sizes: &[usize]) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "sgd_step",
                "parameter count",
                self.velocity.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, ((p, g), v)) in params.iter().zip(grads).zip(&self.velocity).enumerate() {
            if p.numel() != v.len() || g.numel() != v.len() {
                return Err(Error::dim(
                    "sgd_step",
                    format!("parameter {i}"),
                    v.len(),
                    format!("{} / grad {}", p.numel(), g.numel()),
                ));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv - self.learning_rate * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut p = Tensor::scalar(0.0);
        let mut s = SgdState::new(0.1, 0.0, &[1]).unwrap();
        s.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.5, -1.25]);
        let mut s = SgdState::new(0.3, 0.9, &[2]).unwrap();
        for _ in 0..50 {
            s.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -1.25]);
    }

    #[test]
    fn momentum_matches_geometric_series() {
        // After k steps on constant g: v_k = -lr g (1 - m^k)/(1 - m),
        // p_k = sum_{j=1..k} v_j.
        let (lr, m, g) = (0.05, 0.9, 2.0);
        let mut p = Tensor::scalar(1.0);
        let mut s = SgdState::new(lr, m, &[1]).unwrap();
        for _ in 0..3 {
            s.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();
        }
        let closed: f64 = (1..=3)
            .map(|k| -lr * g * (1.0 - f64::powi(m, k)) / (1.0 - m))
            .sum();
        assert!((p.item() - (1.0 + closed)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut s = SgdState::new(0.1, 0.0, &[2]).unwrap();
        assert!(s.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
        assert!(SgdState::new(0.1, 1.0, &[1]).is_err());
    }
}
