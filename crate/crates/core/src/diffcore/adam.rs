use serde::{Deserialize, Serialize};

use super::array::{DenseArray, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied as `p -= lr * weight_decay * p`.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// Moment estimates for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    m: Vec<DenseArray<T>>,
    v: Vec<DenseArray<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[DenseArray<T>]) -> Self {
        let zeros = || params.iter().map(|p| DenseArray::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(
        config: AdamConfig,
        m: Vec<DenseArray<T>>,
        v: Vec<DenseArray<T>>,
        step: u64,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::shape("adam", "first and second moments disagree"));
        }
        Ok(Self { config, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[DenseArray<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[DenseArray<T>] {
        &self.v
    }

    /// Appends zero moments for parameters added after construction.
    pub fn extend(&mut self, params: &[DenseArray<T>]) {
        for p in params {
            self.m.push(DenseArray::zeros(p.shape()));
            self.v.push(DenseArray::zeros(p.shape()));
        }
    }

    /// One bias-corrected update of every parameter in place.
    pub fn update(&mut self, params: &mut [DenseArray<T>], grads: &[DenseArray<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adam",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);
        let decay = T::lit(c.lr * c.weight_decay);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (((pv, &gv), mv), vv) in pd.iter_mut().zip(g.data()).zip(md).zip(vd) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let denom = vv.sqrt() * inv_sqrt_bc2 + eps;
                *pv = *pv - step_size * *mv / denom - decay * *pv;
            }
            if !p.all_finite() {
                return Err(Error::NonFinite { op: "adam" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![DenseArray::<f64>::vector(vec![1.0, -2.0]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &p);
        st.update(&mut p, &[DenseArray::zeros(&[2])]).unwrap();
        assert!(p[0].bitwise_eq(&before[0]));
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn single_step_descends_on_square() {
        let mut p = vec![DenseArray::<f64>::vector(vec![1.0]).unwrap()];
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &p);
        let g = p[0].scale(2.0).unwrap();
        st.update(&mut p, &[g]).unwrap();
        assert!(p[0].data()[0] < 1.0);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = vec![DenseArray::<f64>::vector(vec![1.0, -0.5]).unwrap()];
        let mut st = AdamState::new(AdamConfig::with_lr(0.05), &p);
        let scales = [1.0, 3.0];
        let loss = |p: &DenseArray<f64>| -> f64 {
            p.data().iter().zip(scales).map(|(x, s)| s * x * x).sum()
        };
        for _ in 0..500 {
            let g = DenseArray::vector(p[0].data().iter().zip(scales).map(|(x, s)| 2.0 * s * x).collect()).unwrap();
            st.update(&mut p, &[g]).unwrap();
        }
        assert!(loss(&p[0]) < 1e-6, "loss {}", loss(&p[0]));
        assert_eq!(st.step_count(), 500);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![DenseArray::<f32>::zeros(&[2, 2])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(st.update(&mut p, &[DenseArray::zeros(&[4])]).is_err());
        assert!(st.update(&mut p, &[]).is_err());
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let run = || {
            let mut p = vec![DenseArray::<f32>::vector(vec![0.3, -0.7, 1.1]).unwrap()];
            let mut st = AdamState::new(AdamConfig::with_lr(1e-2), &p);
            for k in 0..10 {
                let g = p[0].map(|x| x * (k as f32 + 1.0)).unwrap();
                st.update(&mut p, &[g]).unwrap();
            }
            p.remove(0)
        };
        assert!(run().bitwise_eq(&run()));
    }
}
