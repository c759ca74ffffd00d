use crate::{ParamStore, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over every non-frozen parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let m = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect::<Vec<_>>();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64(c.beta1).unwrap();
        let b2 = T::from_f64(c.beta2).unwrap();
        let eps = T::from_f64(c.eps).unwrap();
        let t = self.step as i32;
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        let lr = T::from_f64(c.lr).unwrap();
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            if e.frozen {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = e.grad.data();
            for (((p, &gi), mi), vi) in e.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / corr1;
                let vh = *vi / corr2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grad();
    }
}
