use alloc::vec::Vec;

use super::params::ModelParams;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale the whole gradient when its norm exceeds this value.
    pub max_grad_norm: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
            max_grad_norm: None,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradient buffers of `params`.
    pub fn step(&mut self, params: &mut ModelParams) {
        let n = params.count();
        if self.m.len() != n {
            self.m = alloc::vec![0.0; n];
            self.v = alloc::vec![0.0; n];
        }
        let clip = match self.max_grad_norm {
            Some(max) => {
                let norm = params.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let mut k = 0;
        for id in params.ids().collect::<Vec<_>>() {
            let t = params.tensor_mut(id);
            for (p, g) in t.data.iter_mut().zip(t.grad.iter()) {
                let g = g * clip;
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[k] / bc1;
                let vhat = self.v[k] / bc2;
                *p -= self.lr * (mhat / (libm::sqrt(vhat) + self.eps) + self.weight_decay * *p);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Init;
    use rand::SeedableRng;

    #[test]
    fn minimises_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::new();
        let id = p.add("g", "x", &[3], Init::Constant(2.0), &mut rng);
        let mut opt = AdamW::new(0.05);
        for _ in 0..500 {
            p.zero_grad();
            let t = p.tensor_mut(id);
            for i in 0..3 {
                t.grad[i] = 2.0 * (t.data[i] - 1.0);
            }
            opt.step(&mut p);
        }
        assert!(p.tensor(id).data.iter().all(|x| (x - 1.0).abs() < 1e-2));
    }
}
