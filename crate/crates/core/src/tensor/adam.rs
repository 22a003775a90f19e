use super::{ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads[i]` is the gradient of parameter `i`; `None` entries
    /// are treated as zero gradients.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.tensor(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = grads.get(i).and_then(Option::as_ref);
            let p = store.tensor_mut(id).data_mut();
            for k in 0..p.len() {
                let g = grad.map_or(0.0, |t| t.data()[k].as_f64());
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                let delta = lr * mhat / (vhat.sqrt() + eps);
                if delta != 0.0 {
                    p[k] = T::of(p[k].as_f64() - delta);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = single(1.5);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut s, &[Some(Tensor::scalar(0.0))]);
        }
        assert_eq!(s.tensor(s.get("x").unwrap()).item(), 1.5);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut s = single(0.0);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut s, &[Some(Tensor::scalar(1.0))]);
        let x = s.tensor(s.get("x").unwrap()).item();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -3e-4 / (1.0 + 1e-8);
        assert!((x - expected).abs() < 1e-15, "{x}");
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = single(0.0);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..100 {
            opt.step(&mut s, &[Some(Tensor::scalar(-2.0))]);
        }
        assert!(s.tensor(s.get("x").unwrap()).item() > 0.0);
    }
}
