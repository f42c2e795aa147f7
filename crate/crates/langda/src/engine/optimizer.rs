//! AdamW with decoupled weight decay and per-tensor learning rates.
//!
//! Moment state is stored flat per tensor, aligned with the canonical
//! parameter visit order; the step function re-checks tensor names so a
//! mismatched traversal fails loudly instead of silently corrupting state.

use super::EngineError;
use ndarray::{ArrayViewD, ArrayViewMutD};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAM_WEIGHT_DECAY: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct AdamW {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    /// Builds zeroed moments matching the given (name, length) layout.
    pub fn new(layout: &[(String, usize)]) -> Self {
        Self {
            names: layout.iter().map(|(n, _)| n.clone()).collect(),
            m: layout.iter().map(|(_, len)| vec![0.0; *len]).collect(),
            v: layout.iter().map(|(_, len)| vec![0.0; *len]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update: params[i] receives grads[i] under lr_for(name). Weight
    /// decay is decoupled (applied directly to the parameter, scaled by
    /// the same learning rate).
    pub fn step(
        &mut self,
        params: &mut [(String, ArrayViewMutD<f64>)],
        grads: &[(String, ArrayViewD<f64>)],
        lr_for: &dyn Fn(&str) -> f64,
        weight_decay: f64,
    ) -> Result<(), EngineError> {
        if params.len() != self.names.len() || grads.len() != self.names.len() {
            return Err(EngineError::Shape {
                what: format!(
                    "optimizer holds {} tensors, got {} params / {} grads",
                    self.names.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..self.names.len() {
            let (pn, param) = &mut params[i];
            let (gn, grad) = &grads[i];
            if pn != &self.names[i] || gn != &self.names[i] {
                return Err(EngineError::Shape {
                    what: format!("optimizer slot {i} is {}, got {pn}/{gn}", self.names[i]),
                });
            }
            let lr = lr_for(pn);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((slot, &g), (ms, vs)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *ms = ADAM_BETA1 * *ms + (1.0 - ADAM_BETA1) * g;
                *vs = ADAM_BETA2 * *vs + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *ms / bc1;
                let v_hat = *vs / bc2;
                *slot -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *slot);
            }
        }
        Ok(())
    }
}

/// Linear warmup factor for 0-indexed step `t`: ramps from 1/warmup to 1
/// over the first `warmup` steps, then stays at 1.
pub fn warmup_factor(t: usize, warmup: usize) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        (((t + 1) as f64) / warmup as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn one_tensor(vals: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap()
    }

    #[test]
    fn first_step_matches_hand_calculation() {
        let mut p = one_tensor(&[1.0]);
        let g = one_tensor(&[0.5]);
        let layout = vec![("w".to_string(), 1)];
        let mut opt = AdamW::new(&layout);
        let mut params = vec![("w".to_string(), p.view_mut())];
        let grads = vec![("w".to_string(), g.view())];
        opt.step(&mut params, &grads, &|_| 0.1, 0.01).unwrap();
        drop(params);
        // t=1: m_hat = g, v_hat = g^2, so the adaptive term is
        // g / (|g| + eps) ~ sign(g); update = -lr * (that + wd * p).
        let adaptive = 0.5 / (0.5 + ADAM_EPS);
        let expected = 1.0 - 0.1 * (adaptive + 0.01 * 1.0);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_weights() {
        let mut p = one_tensor(&[2.0]);
        let g = one_tensor(&[0.0]);
        let layout = vec![("w".to_string(), 1)];
        let mut opt = AdamW::new(&layout);
        for _ in 0..3 {
            let mut params = vec![("w".to_string(), p.view_mut())];
            let grads = vec![("w".to_string(), g.view())];
            opt.step(&mut params, &grads, &|_| 0.1, 0.01).unwrap();
        }
        let expected = 2.0 * (1.0 - 0.1 * 0.01f64).powi(3);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn per_tensor_learning_rates_apply_by_name() {
        let mut a = one_tensor(&[1.0]);
        let mut b = one_tensor(&[1.0]);
        let g = one_tensor(&[1.0]);
        let layout = vec![("enc.w".to_string(), 1), ("dec.w".to_string(), 1)];
        let mut opt = AdamW::new(&layout);
        let mut params = vec![
            ("enc.w".to_string(), a.view_mut()),
            ("dec.w".to_string(), b.view_mut()),
        ];
        let grads = vec![
            ("enc.w".to_string(), g.view()),
            ("dec.w".to_string(), g.view()),
        ];
        opt.step(
            &mut params,
            &grads,
            &|n| if n.starts_with("enc.") { 0.01 } else { 0.1 },
            0.0,
        )
        .unwrap();
        drop(params);
        let delta_a = 1.0 - a[0];
        let delta_b = 1.0 - b[0];
        assert!((delta_b / delta_a - 10.0).abs() < 1e-9);
    }

    #[test]
    fn misaligned_names_are_rejected() {
        let mut p = one_tensor(&[1.0]);
        let g = one_tensor(&[1.0]);
        let layout = vec![("w".to_string(), 1)];
        let mut opt = AdamW::new(&layout);
        let mut params = vec![("wrong".to_string(), p.view_mut())];
        let grads = vec![("wrong".to_string(), g.view())];
        assert!(opt.step(&mut params, &grads, &|_| 0.1, 0.0).is_err());
    }

    #[test]
    fn warmup_ramps_linearly_then_holds() {
        assert!((warmup_factor(0, 4) - 0.25).abs() < 1e-15);
        assert!((warmup_factor(1, 4) - 0.5).abs() < 1e-15);
        assert!((warmup_factor(3, 4) - 1.0).abs() < 1e-15);
        assert!((warmup_factor(100, 4) - 1.0).abs() < 1e-15);
        assert_eq!(warmup_factor(0, 0), 1.0);
    }
}
