use std::fmt;

use rand::seq::index::sample;
use serde::Serialize;

use super::ParamSet;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Coordinates checked per tensor; tensors at or below this size are
    /// checked exhaustively. Values below 64 are raised to 64.
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// The relative-error denominator is floored at
    /// `max(1e-8, resolution_factor * EPSILON * |f| / h)`, the smallest
    /// derivative central differences can resolve for a loss of size `|f|`.
    /// Zero leaves the plain `1e-8` floor.
    pub resolution_factor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, tol: 1e-4, coords_per_tensor: 64, seed: 0, resolution_factor: 1e4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// The same maximum with the plain `1e-8` denominator floor.
    pub max_strict_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tol: f64,
    pub h: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_strict_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_strict_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<4} {:<28} checked {:>4}/{:<7} max rel err {:.3e} (strict {:.3e}; worst at {}: {:.6e} vs {:.6e})",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.checked,
                p.numel,
                p.max_rel_error,
                p.max_strict_rel_error,
                p.worst_index,
                p.worst_analytic,
                p.worst_numeric
            )?;
        }
        Ok(())
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss(model, backward)` must return the scalar loss; when `backward` is
/// true it must also accumulate analytic gradients into the model's
/// parameters. Gradients are zeroed before the analytic pass, and parameter
/// values are restored exactly after every perturbation.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    M: ParamSet,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grads();
    loss(model, true);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();

    let per_tensor = cfg.coords_per_tensor.max(64);
    let mut rng = stream(cfg.seed, Stream::GradCheck);
    let mut params = Vec::with_capacity(names.len());

    for (pi, name) in names.into_iter().enumerate() {
        let numel = analytic[pi].len();
        let coords: Vec<usize> = if numel <= per_tensor {
            (0..numel).collect()
        } else {
            let mut c = sample(&mut rng, numel, per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = (0.0f64, 0usize, 0.0f64, 0.0f64);
        let mut worst_strict = 0.0f64;
        for &j in &coords {
            let orig = model.params_mut()[pi].value.data()[j];
            model.params_mut()[pi].value.data_mut()[j] = orig + cfg.h;
            let fp = loss(model, false);
            model.params_mut()[pi].value.data_mut()[j] = orig - cfg.h;
            let fm = loss(model, false);
            model.params_mut()[pi].value.data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * cfg.h);
            let a = analytic[pi][j];
            let scale = a.abs().max(numeric.abs());
            let strict = (a - numeric).abs() / scale.max(1e-8);
            let resolution = cfg.resolution_factor * f64::EPSILON * fp.abs().max(fm.abs()) / cfg.h;
            let err = (a - numeric).abs() / scale.max(1e-8).max(resolution);
            if !worst_strict.is_nan() && (strict.is_nan() || strict > worst_strict) {
                worst_strict = strict;
            }
            // NaN must register as a failure.
            if !worst.0.is_nan() && (err.is_nan() || err > worst.0) {
                worst = (err, j, a, numeric);
            }
        }
        params.push(ParamCheck {
            name,
            numel,
            checked: coords.len(),
            max_rel_error: worst.0,
            max_strict_rel_error: worst_strict,
            worst_index: worst.1,
            worst_analytic: worst.2,
            worst_numeric: worst.3,
            passed: worst.0 < cfg.tol,
        });
    }
    model.zero_grads();
    GradCheckReport { tol: cfg.tol, h: cfg.h, params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Parameter, Tensor};

    #[test]
    fn square_function_passes() {
        let mut p = vec![Parameter::new(Tensor::vector(vec![3.0]))];
        let report = grad_check(
            &mut p,
            |m, backward| {
                let x = m[0].value.data()[0];
                if backward {
                    m[0].grad.data_mut()[0] += 2.0 * x;
                }
                x * x
            },
            &GradCheckConfig::default(),
        );
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-6 / 6.0);
        assert_eq!(report.max_rel_error(), report.max_strict_rel_error());
        assert_eq!(p[0].value.data()[0], 3.0);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let mut p = vec![Parameter::new(Tensor::vector(vec![3.0]))];
        let report = grad_check(
            &mut p,
            |m, backward| {
                let x = m[0].value.data()[0];
                if backward {
                    m[0].grad.data_mut()[0] += 4.0 * x;
                }
                x * x
            },
            &GradCheckConfig::default(),
        );
        assert!(!report.passed());
        assert!((report.max_rel_error() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn resolution_floor_only_affects_unresolvable_derivatives() {
        // f = 1 + 1e-9 x; the derivative sits below what differences of an
        // O(1) loss can resolve at h = 1e-5, so a 1% analytic error hides
        // in rounding, while the same error on an O(1) derivative does not.
        let run = |slope: f64, resolution_factor: f64| {
            let mut p = vec![Parameter::new(Tensor::vector(vec![0.3]))];
            grad_check(
                &mut p,
                |m, backward| {
                    let x = m[0].value.data()[0];
                    if backward {
                        m[0].grad.data_mut()[0] += 1.01 * slope;
                    }
                    1.0 + slope * x
                },
                &GradCheckConfig { resolution_factor, ..Default::default() },
            )
        };
        assert!(run(1e-9, 1e4).passed());
        assert!(!run(1e-9, 0.0).passed());
        assert!(!run(1.0, 1e4).passed());
    }

    #[test]
    fn large_tensors_are_sampled() {
        let mut p = vec![Parameter::new(Tensor::vector(vec![0.5; 500]))];
        let report = grad_check(
            &mut p,
            |m, backward| {
                let v = m[0].value.data().to_vec();
                if backward {
                    for (g, x) in m[0].grad.data_mut().iter_mut().zip(&v) {
                        *g += 3.0 * x * x;
                    }
                }
                v.iter().map(|x| x * x * x).sum()
            },
            &GradCheckConfig { coords_per_tensor: 10, ..Default::default() },
        );
        assert_eq!(report.params[0].checked, 64);
        assert!(report.passed());
    }
}
