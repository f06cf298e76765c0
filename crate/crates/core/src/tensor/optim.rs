use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-9,
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            step: 0,
            config,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update using the gradients held in `store`.
/// Frozen parameters keep their values.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, p) in store.params_mut().iter_mut().enumerate() {
        if p.frozen {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Inverse-square-root schedule with linear warmup:
/// `factor · D^-½ · min(step^-½, step · warmup^-1.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoamSchedule {
    pub d_model: usize,
    pub warmup: u64,
    pub factor: f64,
}

impl NoamSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup.max(1) as f64;
        self.factor
            * (self.d_model as f64).powf(-0.5)
            * step.powf(-0.5).min(step * warmup.powf(-1.5))
    }
}
