use nalgebra::DMatrix;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn ν = 5/2 covariance with one lengthscale per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Matern52 {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
}

impl Matern52 {
    pub fn new(lengthscales: Vec<f64>, variance: f64) -> Self {
        Self {
            lengthscales,
            variance,
        }
    }

    fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Correlation (unit variance) as a function of the scaled distance.
    #[inline]
    pub fn correlation(r: f64) -> f64 {
        let s = SQRT5 * r;
        (1.0 + s + s * s / 3.0) * (-s).exp()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.variance * Self::correlation(self.scaled_distance(a, b))
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(&a[i], &b[j]))
    }

    /// Add `w ∂k(a,b)/∂log ℓ_d` to `out[d]` for every dimension.
    #[inline]
    pub(crate) fn accumulate_lengthscale_gradient(&self, a: &[f64], b: &[f64], w: f64, out: &mut [f64]) {
        if w == 0.0 {
            return;
        }
        let mut r2 = 0.0;
        for d in 0..out.len() {
            let t = (a[d] - b[d]) / self.lengthscales[d];
            r2 += t * t;
        }
        let s = SQRT5 * r2.sqrt();
        // ∂k/∂log ℓ_d = σ² (5/3) e^{-s} (1 + s) (Δ_d / ℓ_d)²
        let common = w * self.variance * (5.0 / 3.0) * (-s).exp() * (1.0 + s);
        for d in 0..out.len() {
            let t = (a[d] - b[d]) / self.lengthscales[d];
            out[d] += common * t * t;
        }
    }

    /// `Σᵢⱼ G[i,j] ∂k(xᵢ,xⱼ)/∂log ℓ_d` over the Gram matrix of `points`.
    pub fn lengthscale_gradient(&self, points: &[Vec<f64>], g: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.lengthscales.len()];
        for i in 0..points.len() {
            for j in 0..i {
                self.accumulate_lengthscale_gradient(&points[i], &points[j], g[(i, j)] + g[(j, i)], &mut out);
            }
        }
        out
    }

    /// `Σᵢⱼ G[i,j] ∂k(aᵢ,bⱼ)/∂log ℓ_d` over a cross-covariance block.
    pub fn cross_lengthscale_gradient(&self, a: &[Vec<f64>], b: &[Vec<f64>], g: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.lengthscales.len()];
        for i in 0..a.len() {
            for j in 0..b.len() {
                self.accumulate_lengthscale_gradient(&a[i], &b[j], g[(i, j)], &mut out);
            }
        }
        out
    }
}
