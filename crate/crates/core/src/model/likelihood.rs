use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::Response;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability of `choice` under the logistic comparison model,
/// `exp(u_c/λ) / (exp(u₁/λ) + exp(u₂/λ))`.
///
/// The smaller of the two probabilities is computed directly and the larger
/// as its complement, so the two choices sum to exactly one.
pub fn likelihood(u1: f64, u2: f64, lambda: f64, choice: Response) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("noise level must be > 0, got {lambda}")));
    }
    if !u1.is_finite() || !u2.is_finite() {
        return Err(Error::NonFinite("utility".into()));
    }
    let x = (u1 - u2) / lambda;
    let small = sigmoid(-x.abs());
    let p1 = if x >= 0.0 { 1.0 - small } else { small };
    Ok(match choice {
        Response::First => p1,
        Response::Second => {
            if x >= 0.0 {
                small
            } else {
                1.0 - small
            }
        }
    })
}

/// Gauss–Hermite nodes `t` and weights normalized to sum to one, so that
/// `E[g(X)] ≈ Σ wₕ g(√2 σ tₕ + μ)` for `X ~ N(μ, σ²)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize to remove eigen-solver asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let t = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-t, w);
        pairs[j] = (t, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(t, w)| (t, w / total)).unzip()
}

/// Minimum variance used inside the quadrature.
pub(crate) const VAR_FLOOR: f64 = 1e-12;

/// `E[log σ(D/λ)]` for `D ~ N(μ, v)` together with its partial derivatives
/// with respect to `μ`, `v` and `λ`.
pub fn expected_log_sigmoid(
    mu: f64,
    v: f64,
    lambda: f64,
    nodes: &[f64],
    weights: &[f64],
) -> (f64, f64, f64, f64) {
    let v = v.max(VAR_FLOOR);
    let sd2 = (2.0 * v).sqrt();
    let (mut e, mut d_mu, mut d_v, mut d_lambda) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &w) in nodes.iter().zip(weights) {
        let z = (mu + sd2 * t) / lambda;
        let s = sigmoid(-z);
        e += w * log_sigmoid(z);
        d_mu += w * s;
        d_v += w * s * t;
        d_lambda -= w * s * z;
    }
    (e, d_mu / lambda, d_v / (lambda * sd2), d_lambda / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_examples() {
        assert_eq!(likelihood(0.4, 0.4, 0.3, Response::First).unwrap(), 0.5);
        let p = likelihood(3f64.ln() * 0.2, 0.0, 0.2, Response::First).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
        assert!(likelihood(1.0, 0.0, 0.0, Response::First).is_err());
        assert!(likelihood(1.0, 0.0, -1.0, Response::First).is_err());
    }

    #[test]
    fn normalization_is_exact() {
        for i in 0..200 {
            let u1 = (i as f64 * 0.731).sin() * 30.0;
            let u2 = (i as f64 * 1.37).cos() * 30.0;
            for lambda in [1e-6, 0.01, 0.3, 1.0, 17.0] {
                let a = likelihood(u1, u2, lambda, Response::First).unwrap();
                let b = likelihood(u1, u2, lambda, Response::Second).unwrap();
                assert_eq!(a + b, 1.0);
            }
        }
    }

    #[test]
    fn quadrature_integrates_moments() {
        let (t, w) = gauss_hermite(20);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m2: f64 = t.iter().zip(&w).map(|(t, w)| w * 2.0 * t * t).sum();
        let m4: f64 = t.iter().zip(&w).map(|(t, w)| w * 4.0 * t.powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
        assert!(t.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn expected_log_sigmoid_derivatives() {
        let (t, w) = gauss_hermite(20);
        let (mu, v, l) = (0.3, 0.8, 0.4);
        let (_, dm, dv, dl) = expected_log_sigmoid(mu, v, l, &t, &w);
        let f = |mu: f64, v: f64, l: f64| expected_log_sigmoid(mu, v, l, &t, &w).0;
        let h = 1e-6;
        let fd_m = (f(mu + h, v, l) - f(mu - h, v, l)) / (2.0 * h);
        let fd_v = (f(mu, v + h, l) - f(mu, v - h, l)) / (2.0 * h);
        let fd_l = (f(mu, v, l + h) - f(mu, v, l - h)) / (2.0 * h);
        assert!((dm - fd_m).abs() < 1e-8);
        assert!((dv - fd_v).abs() < 1e-8);
        assert!((dl - fd_l).abs() < 1e-8);
    }
}
