use crate::model::Model;
use crate::tensor::Scalar;

/// Linear warmup to `peak` over `warmup` updates, then cosine decay to
/// `floor` at update `total`. Updates are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.warmup > 0 && step <= self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.peak;
        }
        let progress = ((step - self.warmup) as f64 / (self.total - self.warmup) as f64).min(1.0);
        self.floor + (self.peak - self.floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled weight decay, applied to tensors of rank ≥ 2 only.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(model: &Model<F>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<F>> = model
            .tensors()
            .iter()
            .map(|(_, t)| vec![F::zero(); t.len()])
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model<F>, grads: &Model<F>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let one = F::one();
        let c1 = F::c(1.0 - self.beta1.powi(self.t));
        let c2 = F::c(1.0 - self.beta2.powi(self.t));
        let lr_f = F::c(lr);
        let eps = F::c(self.eps);
        let grad_tensors = grads.tensors();
        for (i, (_, p)) in model.tensors_mut().into_iter().enumerate() {
            let wd = if p.rank() >= 2 { F::c(self.weight_decay) } else { F::zero() };
            let g = grad_tensors[i].1.data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w = *w - lr_f * (mhat / (vhat.sqrt() + eps) + wd * *w);
            }
        }
    }
}
