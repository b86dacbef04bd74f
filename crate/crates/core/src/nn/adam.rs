use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer over the trainable entries of a
/// [`ParamStore`]. Moment buffers are indexed like the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |p: &super::Param| if p.trainable { vec![0.0; p.value.len()] } else { Vec::new() };
        Self { config, t: 0, m: store.iter().map(zeros).collect(), v: store.iter().map(zeros).collect() }
    }

    /// Applies one update with learning rate `lr` using the gradients
    /// currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let c2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 * c2.sqrt() / c1) as f32;
        let eps_hat = (eps as f64 * c2.sqrt()) as f32;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                *w -= step * *mi / (vi.sqrt() + eps_hat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[2], vec![1.0, -1.0], true);
        store.add("buf", &[1], vec![5.0], false);
        store.get_mut(id).grad = vec![0.3, -2.0];
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store, 0.1);
        let w = &store.get(id).value;
        assert!((w[0] - 0.9).abs() < 1e-5 && (w[1] + 0.9).abs() < 1e-5);
        assert_eq!(store.get(1).value, vec![5.0]);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_exact_noop() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[3], vec![0.123, -4.5, 1e-7], true);
        let before = store.get(id).value.clone();
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store, 1.0);
        assert_eq!(store.get(id).value, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[1], vec![3.0], true);
        let mut opt = Adam::new(AdamConfig::default(), &store);
        for _ in 0..500 {
            let w = store.get(id).value[0];
            store.get_mut(id).grad[0] = 2.0 * (w - 1.0);
            opt.step(&mut store, 0.05);
        }
        assert!((store.get(id).value[0] - 1.0).abs() < 1e-2);
    }
}
