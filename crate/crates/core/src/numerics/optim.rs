use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam with decoupled weight decay. Moments are kept per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = |_| params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self { config, step: 0, first: zeros(()), second: zeros(()) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Parameters with no gradient still receive weight decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients / {} moment slots for {} parameters",
                grads.len(),
                self.first.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::ShapeMismatch(format!("gradient for {}", params.name(id))));
                }
            }
        }
        self.step += 1;
        let t = self.step;
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            match &grads[i] {
                Some(g) => adamw_update(p, g.data(), m, v, t, &self.config, lr),
                None => {
                    let zero = vec![0.0; p.len()];
                    adamw_update(p, &zero, m, v, t, &self.config, lr)
                }
            }
        }
        Ok(())
    }
}

/// In-place AdamW update of one flat parameter at step `t` (1-based).
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
    cfg: &AdamWConfig,
    lr: f64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(first.iter_mut()).zip(second.iter_mut()) {
        *p -= lr * cfg.weight_decay * *p;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Half-cosine decay from `lr_initial` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_initial: f64, lr_min: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("step {step} beyond total {total_steps}")));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_initial - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(&[values.len()], values).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_zero_decay_is_noop() {
        let mut s = store_with(vec![1.0, -2.0]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        opt.step(&mut s, &[Some(Tensor::zeros(&[2]))], 0.1).unwrap();
        assert_eq!(s.get(s.id("p").unwrap()).data(), &[1.0, -2.0]);
    }

    #[test]
    fn pure_decay() {
        let mut s = store_with(vec![1.0, -2.0]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.1, ..Default::default() }, &s);
        opt.step(&mut s, &[Some(Tensor::zeros(&[2]))], 1.0).unwrap();
        let got = s.get(s.id("p").unwrap()).data();
        assert!((got[0] - 0.9).abs() < 1e-15 && (got[1] + 1.8).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_scalar_state_machine() {
        let cfg = AdamWConfig { weight_decay: 0.01, ..Default::default() };
        let mut s = store_with(vec![0.7]);
        let mut opt = AdamW::new(cfg, &s);
        let (lr, g) = (0.05, 0.3);
        let (mut p, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            opt.step(&mut s, &[Some(Tensor::new(&[1], vec![g]).unwrap())], lr).unwrap();
            p *= 1.0 - lr * 0.01;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(opt.step_count(), 3);
        assert!((s.get(s.id("p").unwrap()).data()[0] - p).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = store_with(vec![1.0, 2.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        assert!(opt.step(&mut s, &[Some(Tensor::zeros(&[3]))], 0.1).is_err());
        assert!(opt.step(&mut s, &[], 0.1).is_err());
        assert!(opt.step(&mut s, &[None], 0.0).is_err());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-5).unwrap(), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-5).unwrap() - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-3, 1e-5).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 1.0, 0.0).is_err());
        let mut prev = f64::INFINITY;
        for s in 0..=37 {
            let lr = cosine_lr(s, 37, 0.5, 0.01).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
