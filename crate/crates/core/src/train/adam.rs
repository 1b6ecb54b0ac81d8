use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias-corrected moments. Moment buffers are created lazily per
/// parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `params`. Gradients are checked
    /// before anything is modified, so an error leaves parameters and state intact.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            let g =
                grads.get(name).ok_or_else(|| Error::Lookup(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{name}: gradient {:?} vs {:?}", g.shape(), p.shape()),
                ));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at element {i} of parameter {name}",
                    g.data()[i]
                )));
            }
        }
        self.step += 1;
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let (c1, c2) = (1.0 - self.beta1_pow, 1.0 - self.beta2_pow);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let update = lr * (*mv / c1) / (libm::sqrt(*vv / c2) + self.eps);
                *pv -= update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w".into(), Tensor::vector(alloc::vec![v]));
        p
    }

    fn grads(v: f64) -> BTreeMap<String, Tensor> {
        let mut g = BTreeMap::new();
        g.insert("w".into(), Tensor::vector(alloc::vec![v]));
        g
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = store(1.5);
        adam.step(&mut p, &grads(0.0), 0.1).unwrap();
        assert_eq!(p["w"].data(), &[1.5]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_is_unit_update() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = store(0.0);
        adam.step(&mut p, &grads(1.0), 0.1).unwrap();
        assert!((p["w"].data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = store(0.123_456_789);
        adam.step(&mut p, &grads(3.7), 0.0).unwrap();
        assert_eq!(p["w"].data()[0].to_bits(), 0.123_456_789f64.to_bits());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = store(1.0);
        let err = adam.step(&mut p, &grads(f64::NAN), 0.1).unwrap_err();
        assert!(matches!(&err, Error::Numeric(msg) if msg.contains("parameter w")), "{err}");
        assert_eq!(p["w"].data(), &[1.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut p = store(3.0);
        for _ in 0..2000 {
            let w = p["w"].data()[0];
            adam.step(&mut p, &grads(2.0 * (w - 1.0)), 0.01).unwrap();
        }
        assert!((p["w"].data()[0] - 1.0).abs() < 1e-3);
    }
}
