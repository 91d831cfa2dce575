use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ElboProblem, GpHyperparams, Normalization, PreferenceDataset, UtilityPosterior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop when the best ELBO improves by less than `stall_tol·max(1, |ELBO|)`
    /// over `stall_window` iterations.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub min_inducing: usize,
    pub jitter: f64,
    pub init_lengthscale: f64,
    pub init_signal_variance: f64,
    pub init_noise: f64,
    pub noise_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    pub variance_bounds: (f64, f64),
    pub init_step: f64,
    pub max_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-5,
            stall_window: 100,
            stall_tol: 1e-9,
            min_inducing: 64,
            jitter: 1e-6,
            init_lengthscale: 0.5,
            init_signal_variance: 1.0,
            init_noise: 0.1,
            noise_bounds: (1e-3, 10.0),
            lengthscale_bounds: (1e-2, 1e2),
            variance_bounds: (1e-4, 1e4),
            init_step: 0.02,
            max_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    Stalled,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub elbo_initial: f64,
    pub elbo: f64,
    pub grad_norm: f64,
    pub stop: StopReason,
    pub num_inducing: usize,
    pub hyperparams: GpHyperparams,
}

impl FitReport {
    /// True unless the iteration cap was hit.
    pub fn converged(&self) -> bool {
        self.stop != StopReason::IterationCap
    }
}

/// Fit the variational posterior by maximizing the ELBO with a sign-based
/// adaptive step rule (one step size per parameter, grown while the gradient
/// sign persists and halved when it flips). The best iterate is returned.
pub fn fit(
    dataset: &PreferenceDataset,
    normalization: Normalization,
    config: &FitConfig,
) -> Result<(UtilityPosterior, FitReport)> {
    let problem = ElboProblem::from_dataset(
        dataset,
        &normalization,
        config.min_inducing,
        config.jitter,
        config.noise_bounds,
    )?;
    let dim = dataset.dim();
    let init = GpHyperparams {
        lengthscales: vec![config.init_lengthscale; dim],
        signal_variance: config.init_signal_variance,
        noise_level: config.init_noise,
    };
    let mut params = problem.initial_params(&init);
    let n = problem.num_inducing();
    let hyper_start = n + n * (n + 1) / 2;
    let (ls_lo, ls_hi) = (config.lengthscale_bounds.0.ln(), config.lengthscale_bounds.1.ln());
    let (var_lo, var_hi) = (config.variance_bounds.0.ln(), config.variance_bounds.1.ln());

    let mut x = params.to_vec();
    let len = x.len();
    let mut step = vec![config.init_step; len];
    let mut prev_grad = vec![0.0; len];
    let mut prev_dx = vec![0.0; len];
    let mut prev_value = f64::NEG_INFINITY;

    let mut best_x = x.clone();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_grad_norm = f64::INFINITY;
    let mut elbo_initial = f64::NAN;
    let mut history: Vec<f64> = Vec::with_capacity(config.max_iters);
    let mut stop = StopReason::IterationCap;
    let mut iterations = 0;

    for it in 0..config.max_iters {
        iterations = it + 1;
        params.assign(&x);
        let (value, grad) = problem.value_and_grad(&params)?;
        let mut g = grad.to_vec();
        // Project out gradient components pushing clamped hyperparameters
        // further past their bounds.
        let bounds = (0..dim)
            .map(|d| (hyper_start + d, ls_lo, ls_hi))
            .chain(std::iter::once((hyper_start + dim, var_lo, var_hi)));
        for (i, lo, hi) in bounds {
            if (x[i] <= lo && g[i] < 0.0) || (x[i] >= hi && g[i] > 0.0) {
                g[i] = 0.0;
            }
        }
        if it == 0 {
            elbo_initial = value;
        }
        let grad_norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if value > best_value || !best_value.is_finite() {
            best_value = value;
            best_x.clone_from(&x);
            best_grad_norm = grad_norm;
        }
        history.push(best_value);
        if grad_norm < config.grad_tol {
            best_grad_norm = grad_norm;
            best_x.clone_from(&x);
            best_value = value;
            stop = StopReason::GradientTolerance;
            break;
        }
        if it >= config.stall_window {
            let old = history[it - config.stall_window];
            if best_value - old <= config.stall_tol * best_value.abs().max(1.0) {
                stop = StopReason::Stalled;
                break;
            }
        }
        let worse = value < prev_value;
        for i in 0..len {
            let s = prev_grad[i] * g[i];
            let dx = if s > 0.0 {
                step[i] = (step[i] * 1.2).min(config.max_step);
                step[i] * g[i].signum()
            } else if s < 0.0 {
                step[i] = (step[i] * 0.5).max(1e-12);
                g[i] = 0.0;
                if worse {
                    -prev_dx[i]
                } else {
                    0.0
                }
            } else {
                step[i] * g[i].signum()
            };
            x[i] += dx;
            prev_dx[i] = dx;
        }
        for v in &mut x[hyper_start..hyper_start + dim] {
            *v = v.clamp(ls_lo, ls_hi);
        }
        x[hyper_start + dim] = x[hyper_start + dim].clamp(var_lo, var_hi);
        prev_grad = g;
        prev_value = value;
    }

    if stop == StopReason::IterationCap {
        log::warn!(
            "ELBO optimization hit the iteration cap ({}) with gradient norm {best_grad_norm:.3e}",
            config.max_iters
        );
    }
    params.assign(&best_x);
    let posterior = problem.posterior(&params, dataset.space(), normalization)?;
    let report = FitReport {
        iterations,
        elbo_initial,
        elbo: best_value,
        grad_norm: best_grad_norm,
        stop,
        num_inducing: n,
        hyperparams: posterior.hyperparams().clone(),
    };
    Ok((posterior, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{elbo, InputSpace, Origin, QueryPair, Response};

    fn one_dim_dataset(values: &[(f64, f64)]) -> PreferenceDataset {
        let mut d = PreferenceDataset::new(InputSpace::Objective, 1);
        for &(a, b) in values {
            let r = if a >= b { Response::First } else { Response::Second };
            d.push(QueryPair::new(vec![a], vec![b], Origin::Initial), r).unwrap();
        }
        d
    }

    #[test]
    fn single_comparison_fit_ascends() {
        let d = one_dim_dataset(&[(0.2, 0.7)]);
        let norm = Normalization::from_points(1, d.observed_points()).unwrap();
        let (post, report) = fit(&d, norm, &FitConfig::default()).unwrap();
        assert!(report.elbo >= report.elbo_initial);
        assert!((elbo(&d, &post).unwrap() - report.elbo).abs() < 1e-9 * report.elbo.abs().max(1.0));
        assert!(post.mean(&[0.7]).unwrap() > post.mean(&[0.2]).unwrap());
    }

    #[test]
    fn noise_free_linear_data_is_ranked_correctly() {
        let xs = [0.05, 0.9, 0.3, 0.6, 0.15, 0.75, 0.45, 0.95, 0.0, 0.55];
        let pairs: Vec<(f64, f64)> = xs.chunks(2).map(|c| (c[0], c[1])).chain([(0.3, 0.95), (0.0, 0.6)]).collect();
        let d = one_dim_dataset(&pairs);
        let norm = Normalization::from_points(1, d.observed_points()).unwrap();
        let (post, _) = fit(&d, norm, &FitConfig::default()).unwrap();
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let (mean, _) = post.predict_marginals(&pts).unwrap();
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] > xs[j] {
                    assert!(mean[i] > mean[j], "{:?} vs {:?}", (xs[i], mean[i]), (xs[j], mean[j]));
                }
            }
        }
    }
}
