use super::tensor::ParamSet;

/// Adam with bias correction. Moments are kept per parameter of one set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update to every parameter that requires grad.
    pub fn update(&mut self, params: &mut ParamSet) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let (value, grad) = ParamSet::split_value_grad(p);
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
