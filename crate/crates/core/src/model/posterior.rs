use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::linalg::{psd_factor, solve_lower_mat, MatrixDoc};
use crate::model::{GpHyperparams, InputSpace, Matern52};
use crate::seed;

/// Per-dimension affine map `x ↦ (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        Self {
            offset: bounds.iter().map(|b| b.0).collect(),
            scale: bounds.iter().map(|b| b.1 - b.0).collect(),
        }
    }

    /// Map the bounding box of `points` onto the unit cube. A dimension with
    /// zero spread gets unit width centered on its single value.
    pub fn from_points<'a>(dim: usize, points: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for p in points {
            check_dim(dim, p.len())?;
            any = true;
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if !any {
            return Err(Error::Empty("normalization needs at least one point"));
        }
        let (offset, scale) = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| if h > l { (l, h - l) } else { (l - 0.5, 1.0) })
            .unzip();
        Ok(Self { offset, scale })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }

    pub fn invert(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| o + v * s)
            .collect()
    }
}

/// Cholesky factor of `K + jitter·σ²·I`, escalating the jitter by decades
/// on failure. Returns the factor and the jitter used.
pub(crate) fn prior_factor(
    kernel: &Matern52,
    inducing: &[Vec<f64>],
    jitter: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let gram = kernel.gram(inducing);
    let mut eps = jitter;
    for _ in 0..6 {
        let mut k = gram.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += eps * kernel.variance;
        }
        if let Some(c) = k.clone().cholesky() {
            return Ok((c.l(), k, eps));
        }
        eps *= 10.0;
    }
    Err(Error::NotPsd("inducing-point covariance".into()))
}

/// Inverse of a lower-triangular matrix.
pub(crate) fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    solve_lower_mat(l, &DMatrix::identity(l.nrows(), l.ncols()))
}

/// Sparse variational GP posterior, stored in whitened form: the inducing
/// values are `u = L v` with `K = L Lᵀ` and `q(v) = N(m, R Rᵀ)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PosteriorDoc", into = "PosteriorDoc")]
pub struct UtilityPosterior {
    space: InputSpace,
    normalization: Normalization,
    inducing: Vec<Vec<f64>>,
    hyper: GpHyperparams,
    jitter: f64,
    whitened_mean: DVector<f64>,
    whitened_sqrt: DMatrix<f64>,
    kernel: Matern52,
    chol: DMatrix<f64>,
    chol_inv: DMatrix<f64>,
    sqrt_t: DMatrix<f64>,
}

impl UtilityPosterior {
    /// Build from whitened variational parameters. `inducing` is given in
    /// normalized coordinates.
    pub fn from_whitened(
        space: InputSpace,
        normalization: Normalization,
        inducing: Vec<Vec<f64>>,
        hyper: GpHyperparams,
        jitter: f64,
        whitened_mean: DVector<f64>,
        whitened_sqrt: DMatrix<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = inducing.len();
        if n == 0 {
            return Err(Error::Empty("posterior needs inducing points"));
        }
        let dim = normalization.dim();
        check_dim(dim, hyper.lengthscales.len())?;
        for z in &inducing {
            check_dim(dim, z.len())?;
        }
        check_dim(n, whitened_mean.len())?;
        if whitened_sqrt.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: whitened_sqrt.nrows(),
            });
        }
        check_finite(whitened_mean.as_slice(), "variational mean")?;
        check_finite(whitened_sqrt.as_slice(), "variational square root")?;
        let kernel = Matern52::new(hyper.lengthscales.clone(), hyper.signal_variance);
        let (chol, _, used) = prior_factor(&kernel, &inducing, jitter)?;
        let chol_inv = lower_inverse(&chol);
        let sqrt_t = whitened_sqrt.transpose();
        Ok(Self {
            space,
            normalization,
            inducing,
            hyper,
            jitter: used,
            whitened_mean,
            whitened_sqrt,
            kernel,
            chol,
            chol_inv,
            sqrt_t,
        })
    }

    /// The prior restricted to the inducing points (`m = 0`, `R = I`).
    pub fn prior(
        space: InputSpace,
        normalization: Normalization,
        inducing: Vec<Vec<f64>>,
        hyper: GpHyperparams,
    ) -> Result<Self> {
        let n = inducing.len();
        Self::from_whitened(
            space,
            normalization,
            inducing,
            hyper,
            1e-6,
            DVector::zeros(n),
            DMatrix::identity(n, n),
        )
    }

    /// Build from the unwhitened moments `μ′`, `Σ′` of the inducing values.
    pub fn from_moments(
        space: InputSpace,
        normalization: Normalization,
        inducing: Vec<Vec<f64>>,
        hyper: GpHyperparams,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<Self> {
        let base = Self::prior(space, normalization, inducing, hyper)?;
        let n = base.inducing.len();
        check_dim(n, mean.len())?;
        if cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        let m = &base.chol_inv * mean;
        let s = &base.chol_inv * cov * base.chol_inv.transpose();
        let s = (&s + s.transpose()) * 0.5;
        let r = psd_factor(&s);
        let residual = (&r * r.transpose() - &s).abs().max();
        if residual > 1e-8 * s.abs().max().max(1.0) {
            return Err(Error::NotPsd(format!(
                "variational covariance (factorization residual {residual:.3e})"
            )));
        }
        Self::from_whitened(
            base.space,
            base.normalization,
            base.inducing,
            base.hyper,
            base.jitter,
            m,
            r,
        )
    }

    pub fn input_space(&self) -> InputSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.len()
    }

    /// Inducing points in normalized coordinates.
    pub fn inducing_normalized(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    /// Inducing points in the original input coordinates.
    pub fn inducing_points(&self) -> Vec<Vec<f64>> {
        self.inducing.iter().map(|z| self.normalization.invert(z)).collect()
    }

    pub fn whitened_mean(&self) -> &DVector<f64> {
        &self.whitened_mean
    }

    pub fn whitened_sqrt(&self) -> &DMatrix<f64> {
        &self.whitened_sqrt
    }

    /// `μ′ = L m`
    pub fn variational_mean(&self) -> DVector<f64> {
        &self.chol * &self.whitened_mean
    }

    /// `Σ′ = L R Rᵀ Lᵀ`
    pub fn variational_cov(&self) -> DMatrix<f64> {
        let lr = &self.chol * &self.whitened_sqrt;
        &lr * lr.transpose()
    }

    /// Predictive mean vector and covariance matrix at `points` (original
    /// coordinates).
    pub fn predict(&self, points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let feats = self.features(points)?;
        let refs: Vec<&PointFeatures> = feats.iter().collect();
        Ok(self.joint(&refs))
    }

    /// Per-point quantities from which any joint predictive distribution is
    /// assembled. Building every prediction from these makes a covariance
    /// entry depend only on its two points, never on the rest of the batch.
    pub fn features(&self, points: &[Vec<f64>]) -> Result<Vec<PointFeatures>> {
        points
            .iter()
            .map(|p| {
                check_dim(self.dim(), p.len())?;
                check_finite(p, "input point")?;
                Ok(self.point_features(self.normalization.apply(p)))
            })
            .collect()
    }

    pub(crate) fn point_features(&self, x: Vec<f64>) -> PointFeatures {
        let k = DVector::from_iterator(
            self.inducing.len(),
            self.inducing.iter().map(|z| self.kernel.eval(z, &x)),
        );
        let a = &self.chol_inv * k;
        let w = &self.sqrt_t * &a;
        let mean = a.dot(&self.whitened_mean);
        let var = (self.kernel.variance - a.norm_squared() + w.norm_squared()).max(0.0);
        PointFeatures { x, a, w, mean, var }
    }

    pub fn joint(&self, feats: &[&PointFeatures]) -> (DVector<f64>, DMatrix<f64>) {
        let p = feats.len();
        let mean = DVector::from_iterator(p, feats.iter().map(|f| f.mean));
        let mut cov = DMatrix::zeros(p, p);
        for i in 0..p {
            cov[(i, i)] = feats[i].var;
            for j in 0..i {
                let c = self.cross_cov(feats[i], feats[j]);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        (mean, cov)
    }

    #[inline]
    pub fn cross_cov(&self, a: &PointFeatures, b: &PointFeatures) -> f64 {
        self.kernel.eval(&a.x, &b.x) - a.a.dot(&b.a) + a.w.dot(&b.w)
    }

    /// Predictive means and variances.
    pub fn predict_marginals(&self, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let feats = self.features(points)?;
        Ok(feats.iter().map(|f| (f.mean, f.var)).unzip())
    }

    pub fn mean(&self, point: &[f64]) -> Result<f64> {
        Ok(self.predict_marginals(std::slice::from_ref(&point.to_vec()))?.0[0])
    }

    /// Joint draws from the predictive distribution, one row per sample.
    pub fn sample_utility(&self, points: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
        }
        let (mean, cov) = self.predict(points)?;
        let f = psd_factor(&cov);
        let p = points.len();
        let mut rng = seed::rng(seed, "sample-utility", 0);
        let z = DMatrix::<f64>::from_fn(p, n_samples, |_, _| StandardNormal.sample(&mut rng));
        let mut s = (&f * z).transpose();
        for mut row in s.row_iter_mut() {
            row += mean.transpose();
        }
        Ok(s)
    }
}

/// Predictive building blocks for one point: `a = L⁻¹ k(Z, x)` and
/// `w = Rᵀ a`, with the marginal mean and variance.
#[derive(Debug, Clone)]
pub struct PointFeatures {
    x: Vec<f64>,
    a: DVector<f64>,
    w: DVector<f64>,
    pub mean: f64,
    pub var: f64,
}

/// Serialized posterior. Matrices are row-major with explicit shapes; the
/// unwhitened moments are included for readers that do not know the
/// parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDoc {
    pub input_space: InputSpace,
    pub normalization: Normalization,
    pub hyperparams: GpHyperparams,
    pub jitter: f64,
    pub inducing_points: MatrixDoc,
    pub variational_mean: Vec<f64>,
    pub variational_cov: MatrixDoc,
    pub whitened_mean: Vec<f64>,
    pub whitened_sqrt: MatrixDoc,
}

impl From<UtilityPosterior> for PosteriorDoc {
    fn from(p: UtilityPosterior) -> Self {
        PosteriorDoc::from(&p)
    }
}

impl From<&UtilityPosterior> for PosteriorDoc {
    fn from(p: &UtilityPosterior) -> Self {
        let n = p.inducing.len();
        let d = p.dim();
        let z = DMatrix::from_fn(n, d, |i, j| p.inducing[i][j]);
        PosteriorDoc {
            input_space: p.space,
            normalization: p.normalization.clone(),
            hyperparams: p.hyper.clone(),
            jitter: p.jitter,
            inducing_points: MatrixDoc::from(&z),
            variational_mean: p.variational_mean().iter().copied().collect(),
            variational_cov: MatrixDoc::from(&p.variational_cov()),
            whitened_mean: p.whitened_mean.iter().copied().collect(),
            whitened_sqrt: MatrixDoc::from(&p.whitened_sqrt),
        }
    }
}

impl TryFrom<PosteriorDoc> for UtilityPosterior {
    type Error = Error;
    fn try_from(doc: PosteriorDoc) -> Result<Self> {
        let z = DMatrix::try_from(&doc.inducing_points)?;
        let inducing = (0..z.nrows())
            .map(|i| z.row(i).iter().copied().collect())
            .collect();
        let r = DMatrix::try_from(&doc.whitened_sqrt)?;
        UtilityPosterior::from_whitened(
            doc.input_space,
            doc.normalization,
            inducing,
            doc.hyperparams,
            doc.jitter,
            DVector::from_vec(doc.whitened_mean),
            r,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(dim: usize) -> GpHyperparams {
        GpHyperparams {
            lengthscales: vec![0.3; dim],
            signal_variance: 1.5,
            noise_level: 0.1,
        }
    }

    fn grid() -> Vec<Vec<f64>> {
        (0..5).map(|i| vec![i as f64 / 4.0]).collect()
    }

    #[test]
    fn prior_predicts_zero_mean_and_signal_variance() {
        let p = UtilityPosterior::prior(InputSpace::Objective, Normalization::identity(1), grid(), hyper(1))
            .unwrap();
        let (m, v) = p.predict_marginals(&[vec![0.37], vec![3.0]]).unwrap();
        assert!(m.iter().all(|x| x.abs() < 1e-15));
        assert!(v.iter().all(|x| (x - 1.5).abs() < 1e-9), "{v:?}");
    }

    #[test]
    fn zero_covariance_pins_inducing_values() {
        let z = grid();
        let mean = DVector::from_vec(vec![0.1, 0.5, -0.2, 0.3, 1.0]);
        let p = UtilityPosterior::from_moments(
            InputSpace::Objective,
            Normalization::identity(1),
            z.clone(),
            hyper(1),
            &mean,
            &DMatrix::zeros(5, 5),
        )
        .unwrap();
        let (m, v) = p.predict_marginals(&z).unwrap();
        for i in 0..5 {
            assert!((m[i] - mean[i]).abs() < 1e-5, "{m:?}");
            assert!(v[i] < 1e-5, "{v:?}");
        }
    }

    #[test]
    fn distant_points_are_nearly_uncorrelated() {
        let p = UtilityPosterior::prior(InputSpace::Objective, Normalization::identity(1), grid(), hyper(1))
            .unwrap();
        let (_, c) = p.predict(&[vec![0.0], vec![10.0]]).unwrap();
        assert!((c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt()).abs() < 0.01);
    }

    #[test]
    fn normalization_round_trips_and_handles_degenerate_dims() {
        let pts = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalization::from_points(2, pts.iter().map(|p| p.as_slice())).unwrap();
        assert_eq!(n.apply(&[1.0, 5.0]), vec![0.0, 0.5]);
        assert_eq!(n.apply(&[3.0, 5.0]), vec![1.0, 0.5]);
        assert_eq!(n.invert(&n.apply(&[2.5, 4.0])), vec![2.5, 4.0]);
        assert!(Normalization::from_points(2, std::iter::empty()).is_err());
    }

    #[test]
    fn serialization_is_lossless() {
        let mean = DVector::from_vec(vec![0.1, 0.5, -0.2, 0.3, 1.0 / 3.0]);
        let cov = DMatrix::from_fn(5, 5, |i, j| if i == j { 0.2 } else { 0.05 });
        let p = UtilityPosterior::from_moments(
            InputSpace::Decision,
            Normalization::from_bounds(&[(0.0, 2.0)]),
            grid(),
            hyper(1),
            &mean,
            &cov,
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: UtilityPosterior = serde_json::from_str(&s).unwrap();
        let x = vec![vec![0.3], vec![1.7]];
        let (m1, c1) = p.predict(&x).unwrap();
        let (m2, c2) = back.predict(&x).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(c1, c2);
        let doc: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(doc["variational_cov"]["shape"], serde_json::json!([5, 5]));
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_points_are_constant() {
        let z = grid();
        let mean = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let p = UtilityPosterior::from_moments(
            InputSpace::Objective,
            Normalization::identity(1),
            z,
            hyper(1),
            &mean,
            &DMatrix::identity(5, 5),
        )
        .unwrap();
        let x = vec![vec![0.2], vec![0.9]];
        let a = p.sample_utility(&x, 50, 3).unwrap();
        assert_eq!(a, p.sample_utility(&x, 50, 3).unwrap());
        assert_ne!(a, p.sample_utility(&x, 50, 4).unwrap());
        assert_eq!(a.shape(), (50, 2));
        assert!(p.sample_utility(&x, 0, 3).is_err());
    }
}
