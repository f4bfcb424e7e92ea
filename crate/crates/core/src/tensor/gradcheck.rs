//! Central finite-difference checks for hand-written backward passes.
//!
//! Errors are relative: `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
//! The floor keeps coordinates whose true gradient is zero from reporting
//! huge relative errors for round-off sized differences.

use std::fmt;

use rand::Rng;

use super::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    pub denominator_floor: f64,
    /// Skip coordinates where a kink of a piecewise-linear op lies within the
    /// finite-difference stencil.
    pub kink_guard: bool,
}

impl GradCheckConfig {
    /// Smooth ops: step `1e-5`, tolerance `1e-5`.
    pub fn smooth() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-5,
            denominator_floor: 1e-3,
            kink_guard: false,
        }
    }

    /// Piecewise-linear ops and composed networks: step `1e-6`, tolerance `1e-4`.
    pub fn piecewise() -> Self {
        GradCheckConfig {
            epsilon: 1e-6,
            tolerance: 1e-4,
            denominator_floor: 1e-3,
            kink_guard: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub tolerance: f64,
    /// Set when a loss evaluation or analytic entry was not finite.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<28} max_rel={:.3e} max_abs={:.3e} tol={:.0e} checked={} skipped={}",
            self.name,
            self.max_rel_error,
            self.max_abs_error,
            self.tolerance,
            self.checked,
            self.skipped_kinks
        )?;
        if let Some(i) = self.worst_index {
            write!(f, " worst@{i}")?;
        }
        if let Some(msg) = &self.failure {
            write!(f, " ({msg})")?;
        }
        Ok(())
    }
}

/// Compares `analytic` against central differences of the scalar `loss` at `point`.
pub fn gradient_check(
    name: &str,
    point: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
        tolerance: cfg.tolerance,
        failure: None,
    };
    if analytic.len() != point.len() {
        report.failure = Some(format!(
            "analytic gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        ));
        return report;
    }
    let eps = cfg.epsilon;
    let mut x = point.to_vec();
    let center = if cfg.kink_guard { loss(&x) } else { 0.0 };
    if !center.is_finite() {
        report.failure = Some("loss is not finite at the base point".into());
        return report;
    }
    for i in 0..x.len() {
        let a = analytic[i];
        if !a.is_finite() {
            report.failure = Some(format!("analytic gradient not finite at index {i}"));
            return report;
        }
        let orig = x[i];
        x[i] = orig + eps;
        let plus = loss(&x);
        x[i] = orig - eps;
        let minus = loss(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            report.failure = Some(format!("loss not finite when perturbing index {i}"));
            return report;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(cfg.denominator_floor);
        if cfg.kink_guard {
            // A slope change inside the stencil biases the central estimate by
            // half the second difference over 2 eps.
            let contamination = (plus - 2.0 * center + minus).abs() / (2.0 * eps);
            if contamination > 0.5 * cfg.tolerance * denom {
                report.skipped_kinks += 1;
                continue;
            }
        }
        let abs = (a - numeric).abs();
        let rel = abs / denom;
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}

/// Checks a tensor-to-tensor op through a random linear projection of its
/// output: `L(x) = sum(r * op(x))`, whose gradient is `backward(x, r)`.
pub fn check_tensor_op<R: Rng + ?Sized>(
    name: &str,
    input: &Tensor<f64>,
    forward: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    backward: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport {
    let out_shape = forward(input).shape();
    let projection = random_tensor(out_shape, -1.0, 1.0, rng);
    let analytic = backward(input, &projection);
    let shape = input.shape();
    let loss = |x: &[f64]| {
        let t = Tensor::from_vec(shape, x.to_vec()).expect("shape preserved");
        forward(&t)
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    gradient_check(name, input.data(), loss, analytic.data(), cfg)
}

pub fn random_tensor<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Tensor<f64> {
    let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
