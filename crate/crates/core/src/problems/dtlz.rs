//! DTLZ2 and DTLZ7 in their native (minimization) form.

use std::f64::consts::PI;

/// DTLZ2: spherical front `Σ fᵢ² = 1` when the distance variables sit at 0.5.
pub fn dtlz2(x: &[f64], m: usize) -> Vec<f64> {
    let g: f64 = x[m - 1..].iter().map(|&v| (v - 0.5) * (v - 0.5)).sum();
    let half_pi = PI / 2.0;
    (0..m)
        .map(|i| {
            let mut f = 1.0 + g;
            for &xj in &x[..m - 1 - i] {
                f *= (xj * half_pi).cos();
            }
            if i > 0 {
                f *= (x[m - 1 - i] * half_pi).sin();
            }
            f
        })
        .collect()
}

/// DTLZ7: disconnected front; the first `m-1` objectives are the position
/// variables themselves.
pub fn dtlz7(x: &[f64], m: usize) -> Vec<f64> {
    let k = x.len() - m + 1;
    let g = 1.0 + 9.0 / k as f64 * x[m - 1..].iter().sum::<f64>();
    let mut f: Vec<f64> = x[..m - 1].to_vec();
    let h = m as f64
        - f.iter()
            .map(|&fi| fi / (1.0 + g) * (1.0 + (3.0 * PI * fi).sin()))
            .sum::<f64>();
    f.push((1.0 + g) * h);
    f
}
