/// AdamW with decoupled weight decay (`p -= lr * wd * p` on masked entries,
/// applied before the adaptive step).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    mask: Vec<bool>,
    t: i32,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            mask: decay_mask,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state size");
        assert_eq!(grad.len(), self.m.len(), "gradient size");
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = (1.0 - self.beta1.powi(self.t)) as f32;
        let bc2 = (1.0 - self.beta2.powi(self.t)) as f32;
        let lr = self.lr as f32;
        let decay = (self.lr * self.weight_decay) as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            if self.mask[i] {
                params[i] -= decay * params[i];
            }
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let p0 = vec![0.3f32, -1.7, 2.5e-3];
        for wd in [0.0, 0.01] {
            let mut p = p0.clone();
            let mut opt = AdamW::new(0.0, wd, vec![true, false, true]);
            for _ in 0..5 {
                opt.step(&mut p, &[1.0, -2.0, 0.5]);
            }
            assert_eq!(p, p0);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr * sign(g)
        let mut p = vec![1.0f32, 1.0];
        let mut opt = AdamW::new(0.1, 0.0, vec![true, true]);
        opt.step(&mut p, &[3.0, -0.02]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] - 1.1).abs() < 1e-5, "{p:?}");
    }

    #[test]
    fn decay_only_touches_masked_entries() {
        let mut p = vec![2.0f32, 2.0];
        let mut opt = AdamW::new(0.5, 0.1, vec![true, false]);
        opt.step(&mut p, &[0.0, 0.0]);
        assert!((p[0] - 1.9).abs() < 1e-6);
        assert_eq!(p[1], 2.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![5.0f32, -3.0];
        let mut opt = AdamW::new(0.05, 0.0, vec![true, true]);
        for _ in 0..2000 {
            let g: Vec<f32> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
