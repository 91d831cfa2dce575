use crate::error::{Error, Result};

/// Number of simplex-lattice points for `m` objectives and `p` partitions.
pub fn das_dennis_count(m: usize, p: usize) -> usize {
    // C(p + m - 1, m - 1), computed incrementally to stay exact.
    let k = m - 1;
    (1..=k).fold(1usize, |acc, i| acc * (p + i) / i)
}

/// Das–Dennis lattice: all points of the unit simplex whose coordinates are
/// multiples of `1/p`, in lexicographically decreasing order of the first
/// coordinate.
pub fn das_dennis(m: usize, p: usize) -> Result<Vec<Vec<f64>>> {
    if m < 2 || p < 1 {
        return Err(Error::InvalidParameter(format!("das-dennis needs m >= 2 and p >= 1, got m={m}, p={p}")));
    }
    let mut out = Vec::with_capacity(das_dennis_count(m, p));
    let mut cur = vec![0usize; m];
    fn rec(out: &mut Vec<Vec<f64>>, cur: &mut Vec<usize>, i: usize, left: usize, p: usize) {
        let m = cur.len();
        if i == m - 1 {
            cur[i] = left;
            out.push(cur.iter().map(|&c| c as f64 / p as f64).collect());
            return;
        }
        for c in (0..=left).rev() {
            cur[i] = c;
            rec(out, cur, i + 1, left - c, p);
        }
    }
    rec(&mut out, &mut cur, 0, p, p);
    Ok(out)
}

/// Reference directions for a requested population: the smallest partition
/// count giving at least `population` directions, and the population rounded
/// up to the next multiple of four of the direction count.
pub fn reference_directions(m: usize, population: usize) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut p = 1;
    while das_dennis_count(m, p) < population {
        p += 1;
    }
    let dirs = das_dennis(m, p)?;
    let pop = dirs.len().div_ceil(4) * 4;
    Ok((dirs, pop))
}
