//! WFG3 (linear, degenerate front) in its native minimization form.
//!
//! Decision variable `i` (1-based) ranges over `[0, 2i]`. The first `k`
//! variables are position parameters, the remaining `l` distance parameters.

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn s_linear(y: f64, a: f64) -> f64 {
    clamp01((y - a).abs() / ((a - y).floor() + a).abs())
}

/// Non-separable reduction of a pair of values (degree 2).
fn r_nonsep_pair(a: f64, b: f64) -> f64 {
    clamp01((a + b + 2.0 * (a - b).abs()) / 3.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Smallest position count `k = t·(m-1)` leaving a non-empty, even number of
/// distance parameters, or `None` when no such split exists.
pub fn position_parameters(d: usize, m: usize) -> Option<usize> {
    (1..)
        .map(|t| t * (m - 1))
        .take_while(|&k| k < d)
        .find(|&k| (d - k).is_multiple_of(2))
}

pub fn wfg3(z: &[f64], m: usize, k: usize) -> Vec<f64> {
    let n = z.len();
    let l = n - k;
    let y: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(i, &v)| clamp01(v / (2.0 * (i + 1) as f64)))
        .collect();

    let t1: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < k { v } else { s_linear(v, 0.35) })
        .collect();

    let mut t2: Vec<f64> = t1[..k].to_vec();
    t2.extend((0..l / 2).map(|i| r_nonsep_pair(t1[k + 2 * i], t1[k + 2 * i + 1])));

    let group = k / (m - 1);
    let mut t3: Vec<f64> = (0..m - 1)
        .map(|i| mean(&t2[i * group..(i + 1) * group]))
        .collect();
    t3.push(mean(&t2[k..]));

    // Degenerate shape: only the first position parameter keeps full range.
    let xm = t3[m - 1];
    let x: Vec<f64> = (0..m - 1)
        .map(|i| {
            let a = if i == 0 { 1.0 } else { 0.0 };
            xm.max(a) * (t3[i] - 0.5) + 0.5
        })
        .collect();

    (1..=m)
        .map(|obj| {
            let h = if obj == 1 {
                x.iter().product::<f64>()
            } else {
                let upto = m - obj;
                x[..upto].iter().product::<f64>() * (1.0 - x[upto])
            };
            xm + 2.0 * obj as f64 * h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_split() {
        assert_eq!(position_parameters(14, 9), Some(8));
        assert_eq!(position_parameters(6, 3), Some(2));
        // d=5, m=3: k=2 gives l=3 (odd), k=4 gives l=1 (odd).
        assert_eq!(position_parameters(5, 3), None);
    }

    #[test]
    fn optimal_distance_values_give_linear_front() {
        // Distance variables at 0.35 * 2i put them on the front (x_M = 0).
        let (m, k, d) = (3, 2, 6);
        let mut z: Vec<f64> = (0..d).map(|i| 0.35 * 2.0 * (i + 1) as f64).collect();
        z[0] = 0.4 * 2.0;
        z[1] = 0.9 * 4.0;
        let f = wfg3(&z, m, k);
        // x_M = 0 collapses x_2 to 0.5, so f = (x1, 2 x1, 6 (1 - x1)).
        let expected = [0.4, 0.8, 3.6];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }
}
