//! Bias-corrected Adam over every parameter block of a model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGradients};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One optimizer step. Non-finite gradients abort before anything is
/// modified; the error names the offending block and index. Histogram widths
/// are floored afterwards.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ParamGradients<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    let names: Vec<String> = params.blocks().into_iter().map(|b| b.name).collect();
    let grad_blocks = grads.blocks();
    if grad_blocks.len() != names.len() {
        return Err(Error::config(format!(
            "gradient has {} blocks, model has {}",
            grad_blocks.len(),
            names.len()
        )));
    }
    for (name, g) in names.iter().zip(&grad_blocks) {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} in {name}[{i}] at step {}",
                g[i],
                params.adam.step + 1
            )));
        }
    }

    let step = params.adam.step + 1;
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (a1, a2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let (lr, eps) = (cfg.lr, cfg.epsilon);

    let mut first = std::mem::take(&mut params.adam.first);
    let mut second = std::mem::take(&mut params.adam.second);
    for (((p, g), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(&grad_blocks)
        .zip(&mut first)
        .zip(&mut second)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + a1 * g[i];
            v[i] = b2 * v[i] + a2 * g[i] * g[i];
            let m_hat = m[i].as_f64() / c1;
            let v_hat = v[i].as_f64() / c2;
            p[i] -= T::from_f64(lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    params.adam.first = first;
    params.adam.second = second;
    params.adam.step = step;
    if let Some(h) = &mut params.hist {
        h.clamp_widths();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Direction, NetworkConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams<f64> {
        let cfg = NetworkConfig::new(Direction::RawToSrgb, Architecture::Scene).with_hidden(3);
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn filled(p: &ModelParams<f64>, v: f64) -> ParamGradients<f64> {
        let mut g = p.zero_gradients();
        g.hist_centers
            .iter_mut()
            .chain(&mut g.hist_widths)
            .for_each(|x| *x = v);
        for c in &mut g.convs {
            c.kernel.iter_mut().chain(&mut c.bias).for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn zero_gradient_only_advances_step() {
        let mut p = model();
        let before = p.flatten();
        let g = p.zero_gradients();
        adam_step(&mut p, &g, &AdamConfig::default()).unwrap();
        assert_eq!(p.flatten(), before);
        assert_eq!(p.adam.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op_on_parameters() {
        let mut p = model();
        let before = p.flatten();
        let g = filled(&p, 0.3);
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        adam_step(&mut p, &g, &cfg).unwrap();
        assert_eq!(p.flatten(), before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = model();
        let before = p.flatten();
        let g = filled(&p, 1.0);
        adam_step(&mut p, &g, &AdamConfig::default()).unwrap();
        // m_hat = v_hat = 1 at t = 1, so the step is lr / (1 + eps).
        let expected = 1e-3 / (1.0 + 1e-8);
        let widths = p.hist.as_ref().unwrap().centers.len()..2 * p.hist.as_ref().unwrap().centers.len();
        for (i, (a, b)) in p.flatten().iter().zip(&before).enumerate() {
            if widths.contains(&i) {
                continue; // widths may hit the floor
            }
            assert!(((b - a) - expected).abs() < 1e-15, "index {i}: {}", b - a);
        }
    }

    #[test]
    fn second_step_follows_the_recurrence() {
        let mut p = model();
        let x0 = p.convs[0].bias[0];
        let cfg = AdamConfig::default();
        let g = filled(&p, 1.0);
        adam_step(&mut p, &g, &cfg).unwrap();
        let g = filled(&p, -2.0);
        adam_step(&mut p, &g, &cfg).unwrap();
        let (b1, b2) = (0.9f64, 0.999f64);
        let m1 = (1.0 - b1) * 1.0;
        let v1 = (1.0 - b2) * 1.0;
        let x1 = x0 - 1e-3 * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + 1e-8);
        let m2 = b1 * m1 + (1.0 - b1) * -2.0;
        let v2 = b2 * v1 + (1.0 - b2) * 4.0;
        let x2 = x1 - 1e-3 * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + 1e-8);
        assert!((p.convs[0].bias[0] - x2).abs() < 1e-15);
    }

    #[test]
    fn widths_are_floored() {
        let mut p = model();
        let cfg = AdamConfig {
            lr: 10.0,
            ..Default::default()
        };
        let g = filled(&p, 1.0);
        adam_step(&mut p, &g, &cfg).unwrap();
        assert!(p.hist.as_ref().unwrap().widths.iter().all(|w| *w == 1e-3));
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = model();
        let before = p.clone();
        let mut g = filled(&p, 0.5);
        g.convs[1].kernel[7] = f64::NAN;
        let err = adam_step(&mut p, &g, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("conv1.kernel[7]"), "{err}");
        assert_eq!(p, before);
    }

    #[test]
    fn identical_gradients_give_identical_updates() {
        let mut p = model();
        p.convs[0].bias.iter_mut().for_each(|b| *b = 0.25);
        let mut g = p.zero_gradients();
        g.convs[0].bias.iter_mut().for_each(|b| *b = 0.7);
        adam_step(&mut p, &g, &AdamConfig::default()).unwrap();
        let b = &p.convs[0].bias;
        assert!(b.iter().all(|v| *v == b[0]));
    }
}
