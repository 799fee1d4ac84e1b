use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and follow the order in which parameters are passed.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub params: AdamParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Adam { params, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. A `None` gradient counts as zero, so the moments of that
    /// parameter still decay.
    pub fn step(&mut self, lr: f64, params: Vec<&mut Tensor>, grads: &[Option<&Tensor>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        let inv_bc2_sqrt = 1.0 / bc2.sqrt();
        for (k, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = p.data_mut();
            match grads[k] {
                Some(g) => {
                    for (((x, mi), vi), gi) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *x -= step_size * *mi / (vi.sqrt() * inv_bc2_sqrt + eps);
                    }
                }
                None => {
                    for ((x, mi), vi) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi *= beta1;
                        *vi *= beta2;
                        *x -= step_size * *mi / (vi.sqrt() * inv_bc2_sqrt + eps);
                    }
                }
            }
        }
    }
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at_epoch(lr0: f64, epoch: usize, halve_every: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / halve_every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = Tensor::from_vec(vec![1.0]);
            let grad = Tensor::from_vec(vec![g]);
            let mut adam = Adam::new(AdamParams::default());
            adam.step(0.01, vec![&mut p], &[Some(&grad)]);
            let moved = p.data()[0] - 1.0;
            let expect = -0.01 * g.signum() * g.abs() / (g.abs() + 1e-8);
            assert!((moved - expect).abs() < 1e-15, "{moved} vs {expect}");
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = Tensor::from_vec(vec![0.5, -2.0]);
        let g = Tensor::from_vec(vec![1.0, 1.0]);
        let mut adam = Adam::new(AdamParams::default());
        adam.step(0.0, vec![&mut p], &[Some(&g)]);
        assert_eq!(p.data(), &[0.5, -2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Tensor::from_vec(vec![3.0, -4.0]);
        let mut adam = Adam::new(AdamParams::default());
        for _ in 0..3000 {
            let g = p.map(|x| 2.0 * x);
            adam.step(0.05, vec![&mut p], &[Some(&g)]);
        }
        assert!(p.data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn schedule_halves() {
        assert_eq!(lr_at_epoch(1e-4, 0, 4), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, 3, 4), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, 4, 4), 5e-5);
        assert_eq!(lr_at_epoch(1e-4, 19, 4), 1e-4 * 0.0625);
    }
}
