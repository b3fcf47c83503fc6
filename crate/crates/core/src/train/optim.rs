use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::math;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Weight decay is decoupled (applied to the
/// parameter, not folded into the moments).
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(contract("gradient list does not match the parameter store"));
    }
    for (id, name, p) in store.iter() {
        let g = &grads[id.index()];
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
        if let Some(index) = g.first_non_finite() {
            return Err(Error::NonFinite {
                context: alloc::format!("gradient of {name}"),
                index,
            });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - math::pow(cfg.beta1, t);
    let c2 = 1.0 - math::pow(cfg.beta2, t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = state.v[i].data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((p, &m), &v) in store.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
            let update = (m / c1) / (math::sqrt(v / c2) + cfg.eps);
            *p -= lr * (update + weight_decay * *p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scalar(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = one_scalar(2.0);
        let mut st = AdamState::new(&s);
        st.m[0] = Tensor::scalar(1.0);
        st.v[0] = Tensor::scalar(1.0);
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        adam_step(&mut s, &[Tensor::scalar(0.0)], &mut st, &cfg, 0.1, 0.0).unwrap();
        assert!((st.m[0].get(0, 0) - 0.9).abs() < 1e-15);
        assert!((st.v[0].get(0, 0) - 0.999).abs() < 1e-15);

        let mut s = one_scalar(2.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(0.0)], &mut st, &cfg, 0.1, 0.0).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).get(0, 0), 2.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one_scalar(0.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::scalar(1.0)], &mut st, &AdamConfig::default(), 0.01, 0.0).unwrap();
        assert!((s.get(s.find("w").unwrap()).get(0, 0) + 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = |w - c|^2 with optimum 0 at w = c
        let c = [1.5, -0.5, 3.0];
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(3, 1));
        let mut st = AdamState::new(&s);
        for _ in 0..100 {
            let w = s.get(id).clone();
            let g = Tensor::from_fn(3, 1, |r, _| 2.0 * (w.get(r, 0) - c[r]));
            adam_step(&mut s, &[g], &mut st, &AdamConfig::default(), 0.3, 0.0).unwrap();
        }
        let w = s.get(id);
        let f: f64 = (0..3).map(|r| (w.get(r, 0) - c[r]).powi(2)).sum();
        assert!(f < 1e-3, "loss {f}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = one_scalar(0.0);
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[Tensor::scalar(f64::NAN)], &mut st, &AdamConfig::default(), 0.1, 0.0);
        match err {
            Err(Error::NonFinite { context, index: 0 }) => assert!(context.contains('w')),
            other => panic!("{other:?}"),
        }
    }
}
