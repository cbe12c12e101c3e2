use super::Tensor;

/// Trainable tensor with Adam moment buffers.
pub struct Parameter {
    pub tensor: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam over a fixed parameter list. Parameters without a gradient in a
/// step are left untouched.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    params: Vec<Parameter>,
}

impl Adam {
    /// Betas default to (0.5, 0.999).
    pub fn new(params: Vec<Tensor>, lr: f64) -> Adam {
        let params = params
            .into_iter()
            .map(|t| {
                let n = t.numel();
                Parameter { tensor: t, m: vec![0.0; n], v: vec![0.0; n] }
            })
            .collect();
        Adam { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8, step: 0, params }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn step(&mut self) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for p in &mut self.params {
            let Some(g) = p.tensor.grad() else { continue };
            let (m, v) = (&mut p.m, &mut p.v);
            p.tensor.update_data(|data| {
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    data[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let x = Tensor::param(vec![3.0, -2.0], &[2]).unwrap();
        let mut opt = Adam::new(vec![x.clone()], 0.1);
        for _ in 0..500 {
            opt.zero_grad();
            x.square().sum().backward().unwrap();
            opt.step();
        }
        assert!(x.to_vec().iter().all(|v| v.abs() < 1e-2), "{:?}", x.to_vec());
    }

    #[test]
    fn zero_gradient_means_no_update() {
        let x = Tensor::param(vec![1.5], &[1]).unwrap();
        let mut opt = Adam::new(vec![x.clone()], 0.1);
        for _ in 0..10 {
            opt.zero_grad();
            x.mul_scalar(0.0).sum().backward().unwrap();
            opt.step();
        }
        assert_eq!(x.to_vec(), vec![1.5]);
    }
}
