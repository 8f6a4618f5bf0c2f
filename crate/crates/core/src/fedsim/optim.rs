use ndarray::Zip;

use super::model::LoraAdapter;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with decoupled weight decay over the adapter tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    step: u32,
    first: LoraAdapter,
    second: LoraAdapter,
}

impl AdamW {
    pub fn new(like: &LoraAdapter, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            step: 0,
            first: like.zeros_like(),
            second: like.zeros_like(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut LoraAdapter, grads: &LoraAdapter) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let (lr, wd) = (self.lr, self.weight_decay);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *p *= 1.0 - lr * wd;
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            });
        }
    }
}
