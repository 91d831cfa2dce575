use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    Maximize,
    Minimize,
}

/// `a` dominates `b` when all objectives are maximized.
#[inline]
pub fn dominates_max(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

pub fn pareto_dominates(a: &[f64], b: &[f64], orientation: &[Sense]) -> Result<bool> {
    check_dim(a.len(), b.len())?;
    check_dim(a.len(), orientation.len())?;
    let mut strict = false;
    for ((&x, &y), s) in a.iter().zip(b).zip(orientation) {
        let (better, worse) = match s {
            Sense::Maximize => (x > y, x < y),
            Sense::Minimize => (x < y, x > y),
        };
        if worse {
            return Ok(false);
        }
        strict |= better;
    }
    Ok(strict)
}

/// Indices of points not dominated by any other point in the list.
pub fn non_dominated_filter(points: &[Vec<f64>], orientation: &[Sense]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Empty("non_dominated_filter needs at least one point"));
    }
    for p in points {
        check_dim(orientation.len(), p.len())?;
    }
    let flipped: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            p.iter()
                .zip(orientation)
                .map(|(&v, s)| if *s == Sense::Minimize { -v } else { v })
                .collect()
        })
        .collect();
    Ok((0..flipped.len())
        .filter(|&i| !flipped.iter().any(|q| dominates_max(q, &flipped[i])))
        .collect())
}
