//! Virtual comparisons that nudge the utility model towards monotonicity.

use rand::Rng;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{Normalization, Origin, QueryPair};
use crate::problems::dominance::dominates_max;
use crate::seed;

/// Rejection attempts per pair before falling back to coordinate-wise
/// max/min assignment.
pub const MAX_REJECTION_ATTEMPTS: usize = 100;

/// `count` pairs whose first point Pareto-dominates the second, drawn
/// uniformly from the bounding box of `seen` expanded by `delta` box widths
/// on every side.
pub fn generate_monotonicity_pairs(
    seen: &[Vec<f64>],
    count: usize,
    delta: f64,
    seed: u64,
) -> Result<Vec<QueryPair>> {
    if seen.is_empty() {
        return Err(Error::Empty("monotonicity pairs need observed objectives"));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    let m = seen[0].len();
    for y in seen {
        check_dim(m, y.len())?;
        check_finite(y, "objective vector")?;
    }
    let norm = Normalization::from_points(m, seen.iter().map(|v| v.as_slice()))?;
    let mut rng = seed::rng(seed, "monotonicity-pairs", 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..m).map(|_| rng.gen_range(-delta..=1.0 + delta)).collect()
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pair = None;
        let mut last = (Vec::new(), Vec::new());
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            if dominates_max(&a, &b) {
                pair = Some((a, b));
                break;
            }
            if dominates_max(&b, &a) {
                pair = Some((b, a));
                break;
            }
            last = (a, b);
        }
        let (hi, lo) = pair.unwrap_or_else(|| {
            let (a, b) = last;
            let hi = a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect();
            let lo = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
            (hi, lo)
        });
        out.push(QueryPair::new(
            norm.invert(&hi),
            norm.invert(&lo),
            Origin::VirtualMonotonicity,
        ));
    }
    Ok(out)
}
