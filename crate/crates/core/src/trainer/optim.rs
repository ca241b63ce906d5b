use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::models::ParamStore;
use crate::tensor::RealArray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam step on `param` in place; `t` is the 1-based
/// step count.
pub fn adam_update(param: &mut [f64], grad: &[f64], moments: &mut Moments, h: &AdamHyper, t: u64) {
    assert_eq!(param.len(), grad.len(), "gradient length mismatch");
    assert_eq!(param.len(), moments.m.len(), "moment length mismatch");
    let c1 = 1.0 - math::pow(h.beta1, t as f64);
    let c2 = 1.0 - math::pow(h.beta2, t as f64);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(&mut moments.m)
        .zip(&mut moments.v)
    {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= h.lr * m_hat / (math::sqrt(v_hat) + h.eps);
    }
}

/// Adam state for every tensor of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub step: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &ParamStore) -> Self {
        Self {
            hyper,
            step: 0,
            moments: params
                .values()
                .iter()
                .map(|p| Moments::zeros(p.len()))
                .collect(),
        }
    }

    /// Applies one step; `grads[i]` pairs with tensor `i` of the store.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[RealArray]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        for (i, g) in grads.iter().enumerate() {
            let mut p = params.get(i).data().to_vec();
            adam_update(
                &mut p,
                g.data(),
                &mut self.moments[i],
                &self.hyper,
                self.step,
            );
            let shape = params.get(i).shape().to_vec();
            params.set(i, RealArray::new(shape, p)?);
        }
        Ok(())
    }
}

/// `ema ← decay·ema + (1 − decay)·current`, tensor by tensor.
pub fn ema_update(ema: &mut ParamStore, current: &ParamStore, decay: f64) -> Result<()> {
    assert_eq!(ema.len(), current.len(), "EMA layout mismatch");
    for i in 0..ema.len() {
        let data = ema
            .get(i)
            .data()
            .iter()
            .zip(current.get(i).data())
            .map(|(&e, &c)| decay * e + (1.0 - decay) * c)
            .collect();
        let shape = ema.get(i).shape().to_vec();
        ema.set(i, RealArray::new(shape, data)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [1.0, -2.0, 3.5];
        let mut m = Moments::zeros(3);
        for t in 1..=5 {
            adam_update(&mut p, &[0.0; 3], &mut m, &hyper(0.1), t);
        }
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let g = [0.3, -4.0, 1e-3, 0.0];
        let mut p = [0.0; 4];
        let mut m = Moments::zeros(4);
        let h = hyper(0.01);
        adam_update(&mut p, &g, &mut m, &h, 1);
        for (x, gi) in p.iter().zip(g) {
            // Bias correction makes m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps).
            let expected = -h.lr * gi / (gi.abs() + h.eps);
            assert!((x - expected).abs() <= 1e-15, "{x} vs {expected}");
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut x = [1.0];
        let mut m = Moments::zeros(1);
        let mut last = 1.0f64;
        for t in 1..=10 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut m, &hyper(0.1), t);
            assert!(x[0].abs() < last);
            last = x[0].abs();
        }
    }

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", RealArray::from_rows(&[&[v, 2.0 * v]]).unwrap());
        s
    }

    #[test]
    fn ema_degenerate_decays() {
        let mut ema = store(1.0);
        ema_update(&mut ema, &store(5.0), 0.0).unwrap();
        assert!(ema.bitwise_eq(&store(5.0)));
        let mut ema = store(1.0);
        ema_update(&mut ema, &store(5.0), 1.0).unwrap();
        assert!(ema.bitwise_eq(&store(1.0)));
    }

    #[test]
    fn ema_three_steps_closed_form() {
        let d = 0.999;
        let snaps = [0.7, -1.3, 2.9];
        let init = 0.25;
        let mut ema = store(init);
        for &s in &snaps {
            ema_update(&mut ema, &store(s), d).unwrap();
        }
        let expected = d * d * d * init + (1.0 - d) * (d * d * snaps[0] + d * snaps[1] + snaps[2]);
        let got = ema.get(0).data()[0];
        assert!((got - expected).abs() <= 1e-14);
    }
}
