/// Adam over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step_f32(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let (c1, c2) = self.corrections();
        for i in 0..params.len() {
            let g = grads[i] as f64 + self.weight_decay * params[i] as f64;
            let (m, v) = self.moments(i, g);
            params[i] -= (self.lr * (m / c1) / ((v / c2).sqrt() + self.eps)) as f32;
        }
    }

    pub fn step_f64(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let (c1, c2) = self.corrections();
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            let (m, v) = self.moments(i, g);
            params[i] -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
        }
    }

    fn corrections(&self) -> (f64, f64) {
        (1.0 - self.beta1.powi(self.t), 1.0 - self.beta2.powi(self.t))
    }

    fn moments(&mut self, i: usize, g: f64) -> (f64, f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        (self.m[i], self.v[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![3.0f64, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step_f64(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
