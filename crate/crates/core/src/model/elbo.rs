use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::model::likelihood::{expected_log_sigmoid, gauss_hermite};
use crate::model::posterior::{lower_inverse, prior_factor};
use crate::model::{GpHyperparams, InputSpace, Matern52, Normalization, PreferenceDataset, UtilityPosterior};
use crate::sobol::sobol_points;

const QUADRATURE_NODES: usize = 20;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconstrained ELBO parameters.
///
/// `sqrt_raw` is lower triangular; its diagonal passes through softplus to
/// give the Cholesky-like square root `R` of the whitened covariance. The
/// noise level is `λ = exp(ln lo + (ln hi − ln lo)·logistic(noise_raw))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboParams {
    pub mean: DVector<f64>,
    pub sqrt_raw: DMatrix<f64>,
    pub log_lengthscales: Vec<f64>,
    pub log_variance: f64,
    pub noise_raw: f64,
}

impl ElboParams {
    pub fn len(&self) -> usize {
        let n = self.mean.len();
        n + n * (n + 1) / 2 + self.log_lengthscales.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let n = self.mean.len();
        let mut v = Vec::with_capacity(self.len());
        v.extend(self.mean.iter());
        for j in 0..n {
            for i in j..n {
                v.push(self.sqrt_raw[(i, j)]);
            }
        }
        v.extend(&self.log_lengthscales);
        v.push(self.log_variance);
        v.push(self.noise_raw);
        v
    }

    /// Overwrite all entries from a flat vector laid out as [`Self::to_vec`].
    pub fn assign(&mut self, v: &[f64]) {
        let n = self.mean.len();
        let mut k = 0;
        for i in 0..n {
            self.mean[i] = v[k];
            k += 1;
        }
        for j in 0..n {
            for i in j..n {
                self.sqrt_raw[(i, j)] = v[k];
                k += 1;
            }
        }
        for l in self.log_lengthscales.iter_mut() {
            *l = v[k];
            k += 1;
        }
        self.log_variance = v[k];
        self.noise_raw = v[k + 1];
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        let mut r = self.sqrt_raw.lower_triangle();
        for i in 0..r.nrows() {
            r[(i, i)] = softplus(r[(i, i)]);
        }
        r
    }
}

/// Gradients of the ELBO with respect to the natural (constrained)
/// quantities, before any reparameterization.
struct NaturalGradient {
    mean: DVector<f64>,
    sqrt: DMatrix<f64>,
    log_lengthscales: Vec<f64>,
    log_variance: f64,
    noise: f64,
}

/// The fixed data of a variational fit: normalized inducing points,
/// normalized comparison points, and (winner, loser) index pairs.
#[derive(Debug, Clone)]
pub struct ElboProblem {
    inducing: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    jitter: f64,
    noise_bounds: (f64, f64),
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ElboProblem {
    pub fn new(
        inducing: Vec<Vec<f64>>,
        points: Vec<Vec<f64>>,
        pairs: Vec<(usize, usize)>,
        jitter: f64,
        noise_bounds: (f64, f64),
    ) -> Result<Self> {
        if inducing.is_empty() {
            return Err(Error::Empty("ELBO needs inducing points"));
        }
        let dim = inducing[0].len();
        for p in inducing.iter().chain(&points) {
            check_dim(dim, p.len())?;
        }
        if pairs.iter().any(|&(w, l)| w >= points.len() || l >= points.len()) {
            return Err(Error::InvalidParameter("comparison index out of range".into()));
        }
        if !(noise_bounds.0 > 0.0 && noise_bounds.0 < noise_bounds.1) {
            return Err(Error::InvalidParameter(format!("bad noise bounds {noise_bounds:?}")));
        }
        let (nodes, weights) = gauss_hermite(QUADRATURE_NODES);
        Ok(Self {
            inducing,
            points,
            pairs,
            jitter,
            noise_bounds,
            nodes,
            weights,
        })
    }

    /// Problem for `dataset`: every distinct comparison point becomes an
    /// inducing point, followed by Sobol points of the unit cube up to
    /// `max(min_inducing, #distinct)`.
    pub fn from_dataset(
        dataset: &PreferenceDataset,
        normalization: &Normalization,
        min_inducing: usize,
        jitter: f64,
        noise_bounds: (f64, f64),
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("dataset has no comparisons"));
        }
        check_dim(dataset.dim(), normalization.dim())?;
        let (points, pairs) = distinct_points(dataset, normalization);
        let mut inducing = points.clone();
        let fill = min_inducing.saturating_sub(points.len());
        inducing.extend(sobol_points(dataset.dim(), fill)?);
        Self::new(inducing, points, pairs, jitter, noise_bounds)
    }

    /// Problem evaluating `dataset` under an existing posterior's inducing
    /// set and normalization.
    pub fn for_posterior(dataset: &PreferenceDataset, posterior: &UtilityPosterior) -> Result<Self> {
        check_dim(posterior.dim(), dataset.dim())?;
        let (points, pairs) = distinct_points(dataset, posterior.normalization());
        let lam = posterior.hyperparams().noise_level;
        Self::new(
            posterior.inducing_normalized().to_vec(),
            points,
            pairs,
            posterior.jitter(),
            (lam * 0.5, lam * 2.0),
        )
    }

    pub fn inducing(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    pub fn num_comparisons(&self) -> usize {
        self.pairs.len()
    }

    pub fn noise_bounds(&self) -> (f64, f64) {
        self.noise_bounds
    }

    pub fn noise_level(&self, raw: f64) -> f64 {
        let (lo, hi) = (self.noise_bounds.0.ln(), self.noise_bounds.1.ln());
        (lo + (hi - lo) * logistic(raw)).exp()
    }

    pub fn noise_raw(&self, lambda: f64) -> f64 {
        let (lo, hi) = (self.noise_bounds.0.ln(), self.noise_bounds.1.ln());
        let t = ((lambda.ln() - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
        (t / (1.0 - t)).ln()
    }

    /// Parameters for `q = prior` at the given hyperparameters.
    pub fn initial_params(&self, hyper: &GpHyperparams) -> ElboParams {
        let n = self.inducing.len();
        let mut sqrt_raw = DMatrix::zeros(n, n);
        let one = softplus_inverse(1.0);
        for i in 0..n {
            sqrt_raw[(i, i)] = one;
        }
        ElboParams {
            mean: DVector::zeros(n),
            sqrt_raw,
            log_lengthscales: hyper.lengthscales.iter().map(|l| l.ln()).collect(),
            log_variance: hyper.signal_variance.ln(),
            noise_raw: self.noise_raw(hyper.noise_level),
        }
    }

    pub fn hyperparams(&self, params: &ElboParams) -> GpHyperparams {
        GpHyperparams {
            lengthscales: params.log_lengthscales.iter().map(|l| l.exp()).collect(),
            signal_variance: params.log_variance.exp(),
            noise_level: self.noise_level(params.noise_raw),
        }
    }

    pub fn posterior(
        &self,
        params: &ElboParams,
        space: InputSpace,
        normalization: Normalization,
    ) -> Result<UtilityPosterior> {
        UtilityPosterior::from_whitened(
            space,
            normalization,
            self.inducing.clone(),
            self.hyperparams(params),
            self.jitter,
            params.mean.clone(),
            params.sqrt(),
        )
    }

    pub fn value(&self, params: &ElboParams) -> Result<f64> {
        let hyper = self.hyperparams(params);
        Ok(self.evaluate(&params.mean, &params.sqrt(), &hyper, false)?.0)
    }

    /// ELBO and its gradient with respect to the unconstrained parameters.
    pub fn value_and_grad(&self, params: &ElboParams) -> Result<(f64, ElboParams)> {
        let hyper = self.hyperparams(params);
        let (value, nat) = self.evaluate(&params.mean, &params.sqrt(), &hyper, true)?;
        let nat = nat.expect("gradient requested");
        let n = params.mean.len();
        let mut sqrt_raw = nat.sqrt;
        for i in 0..n {
            sqrt_raw[(i, i)] *= logistic(params.sqrt_raw[(i, i)]);
        }
        let (lo, hi) = (self.noise_bounds.0.ln(), self.noise_bounds.1.ln());
        let s = logistic(params.noise_raw);
        let dlambda = hyper.noise_level * (hi - lo) * s * (1.0 - s);
        Ok((
            value,
            ElboParams {
                mean: nat.mean,
                sqrt_raw,
                log_lengthscales: nat.log_lengthscales,
                log_variance: nat.log_variance,
                noise_raw: nat.noise * dlambda,
            },
        ))
    }

    /// ELBO for whitened mean `m`, lower-triangular square root `r` and
    /// hyperparameters, optionally with natural-parameter gradients.
    fn evaluate(
        &self,
        m: &DVector<f64>,
        r: &DMatrix<f64>,
        hyper: &GpHyperparams,
        want_grad: bool,
    ) -> Result<(f64, Option<NaturalGradient>)> {
        let n = self.inducing.len();
        check_dim(n, m.len())?;
        let kernel = Matern52::new(hyper.lengthscales.clone(), hyper.signal_variance);
        let sigma2 = hyper.signal_variance;
        let lambda = hyper.noise_level;

        let mut log_det = 0.0;
        for i in 0..n {
            if r[(i, i)] <= 0.0 {
                return Err(Error::NotPsd("variational covariance is singular".into()));
            }
            log_det += r[(i, i)].ln();
        }
        let kl = 0.5 * (r.norm_squared() + m.norm_squared() - n as f64 - 2.0 * log_det);

        let (chol, kzz, _) = prior_factor(&kernel, &self.inducing, self.jitter)?;
        let linv = lower_inverse(&chol);
        let kzp = kernel.cross(&self.inducing, &self.points);

        let nj = self.pairs.len();
        let mut b = DMatrix::zeros(n, nj);
        let mut kpair = vec![0.0; nj];
        for (j, &(w, l)) in self.pairs.iter().enumerate() {
            let mut col = b.column_mut(j);
            col += kzp.column(w);
            col -= kzp.column(l);
            kpair[j] = kernel.eval(&self.points[w], &self.points[l]);
        }
        let a = &linv * &b;
        let mu = a.tr_mul(m);
        let wmat = r.tr_mul(&a);

        let mut ell = 0.0;
        let mut g_mu = DVector::zeros(nj);
        let mut g_v = DVector::zeros(nj);
        let mut g_lambda = 0.0;
        for j in 0..nj {
            let c = 2.0 * sigma2 - 2.0 * kpair[j];
            let v = c - a.column(j).norm_squared() + wmat.column(j).norm_squared();
            let (e, dm, dv, dl) = expected_log_sigmoid(mu[j], v, lambda, &self.nodes, &self.weights);
            ell += e;
            g_mu[j] = dm;
            g_v[j] = dv;
            g_lambda += dl;
        }
        let value = ell - kl;
        if !want_grad {
            return Ok((value, None));
        }

        let grad_m = &a * &g_mu - m;

        let mut a_scaled = a.clone();
        for j in 0..nj {
            a_scaled.column_mut(j).scale_mut(g_v[j]);
        }
        let mut grad_r = (&a_scaled * wmat.transpose()) * 2.0 - r;
        for i in 0..n {
            grad_r[(i, i)] += 1.0 / r[(i, i)];
        }
        let grad_r = grad_r.lower_triangle();

        // Abar = m g_μᵀ + (2 R W − 2 A) diag(g_v)
        let mut abar = (r * &wmat - &a) * 2.0;
        for j in 0..nj {
            abar.column_mut(j).scale_mut(g_v[j]);
        }
        abar.ger(1.0, m, &g_mu, 1.0);
        let bbar = linv.tr_mul(&abar);
        let lbar = -(&bbar * a.transpose()).lower_triangle();
        let mut phi = chol.tr_mul(&lbar).lower_triangle();
        for i in 0..n {
            phi[(i, i)] *= 0.5;
        }
        let kbar_half = linv.tr_mul(&phi) * &linv;
        let kbar = (&kbar_half + kbar_half.transpose()) * 0.5;

        let mut gzp = DMatrix::zeros(n, self.points.len());
        for (j, &(w, l)) in self.pairs.iter().enumerate() {
            let mut cw = gzp.column_mut(w);
            cw += bbar.column(j);
            let mut cl = gzp.column_mut(l);
            cl -= bbar.column(j);
        }

        let mut g_logvar = kbar.component_mul(&kzz).sum() + gzp.component_mul(&kzp).sum();
        for j in 0..nj {
            g_logvar += g_v[j] * (2.0 * sigma2 - 2.0 * kpair[j]);
        }

        let mut g_ls = kernel.lengthscale_gradient(&self.inducing, &kbar);
        let g_cross = kernel.cross_lengthscale_gradient(&self.inducing, &self.points, &gzp);
        for (g, c) in g_ls.iter_mut().zip(&g_cross) {
            *g += c;
        }
        for (j, &(w, l)) in self.pairs.iter().enumerate() {
            kernel.accumulate_lengthscale_gradient(&self.points[w], &self.points[l], -2.0 * g_v[j], &mut g_ls);
        }

        Ok((
            value,
            Some(NaturalGradient {
                mean: grad_m,
                sqrt: grad_r,
                log_lengthscales: g_ls,
                log_variance: g_logvar,
                noise: g_lambda,
            }),
        ))
    }
}

/// Distinct comparison points (in order of first appearance, normalized) and
/// the (winner, loser) index of each comparison.
fn distinct_points(
    dataset: &PreferenceDataset,
    normalization: &Normalization,
) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut points = Vec::new();
    let mut lookup = |p: &[f64], points: &mut Vec<Vec<f64>>| -> usize {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        *index.entry(key).or_insert_with(|| {
            points.push(normalization.apply(p));
            points.len() - 1
        })
    };
    let pairs = dataset
        .comparisons()
        .iter()
        .map(|c| {
            let w = lookup(c.winner(), &mut points);
            let l = lookup(c.loser(), &mut points);
            (w, l)
        })
        .collect();
    (points, pairs)
}

/// Evidence lower bound of `dataset` under `posterior`.
pub fn elbo(dataset: &PreferenceDataset, posterior: &UtilityPosterior) -> Result<f64> {
    let problem = ElboProblem::for_posterior(dataset, posterior)?;
    problem
        .evaluate(
            posterior.whitened_mean(),
            posterior.whitened_sqrt(),
            posterior.hyperparams(),
            false,
        )
        .map(|r| r.0)
}

/// Expected log-likelihood and KL term reported separately.
#[allow(dead_code)]
pub(crate) fn elbo_terms(dataset: &PreferenceDataset, posterior: &UtilityPosterior) -> Result<(f64, f64)> {
    let n = posterior.num_inducing() as f64;
    let r = posterior.whitened_sqrt();
    let m = posterior.whitened_mean();
    let log_det: f64 = (0..r.nrows()).map(|i| r[(i, i)].ln()).sum();
    let kl = 0.5 * (r.norm_squared() + m.norm_squared() - n - 2.0 * log_det);
    let total = elbo(dataset, posterior)?;
    Ok((total + kl, kl))
}
