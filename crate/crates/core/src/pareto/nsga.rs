//! NSGA-II and NSGA-III on minimization-form objectives.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{crowding_distance, fronts_min};

pub(crate) const SBX_ETA: f64 = 15.0;
pub(crate) const SBX_PROB: f64 = 0.9;
pub(crate) const PM_ETA: f64 = 20.0;

pub(crate) struct Individual {
    pub x: Vec<f64>,
    /// Objectives in minimization form.
    pub f: Vec<f64>,
}

/// Simulated binary crossover with bound handling.
pub(crate) fn sbx(p1: &[f64], p2: &[f64], bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.gen::<f64>() > SBX_PROB {
        return (c1, c2);
    }
    let e = 1.0 / (SBX_ETA + 1.0);
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if rng.gen::<f64>() > 0.5 || (p1[i] - p2[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[i] < p2[i] { (p1[i], p2[i]) } else { (p2[i], p1[i]) };
        let u: f64 = rng.gen();
        let betaq = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(SBX_ETA + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(e)
            } else {
                (1.0 / (2.0 - u * alpha)).powf(e)
            }
        };
        let b1 = betaq(1.0 + 2.0 * (y1 - lo) / (y2 - y1));
        let b2 = betaq(1.0 + 2.0 * (hi - y2) / (y2 - y1));
        let mut a = (0.5 * ((y1 + y2) - b1 * (y2 - y1))).clamp(lo, hi);
        let mut b = (0.5 * ((y1 + y2) + b2 * (y2 - y1))).clamp(lo, hi);
        if rng.gen::<f64>() < 0.5 {
            std::mem::swap(&mut a, &mut b);
        }
        c1[i] = a;
        c2[i] = b;
    }
    (c1, c2)
}

/// Polynomial mutation with per-variable probability `1/d`.
pub(crate) fn polynomial_mutation(x: &mut [f64], bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) {
    let pm = 1.0 / x.len() as f64;
    let e = 1.0 / (PM_ETA + 1.0);
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        if rng.gen::<f64>() >= pm {
            continue;
        }
        let w = hi - lo;
        let d1 = (*v - lo) / w;
        let d2 = (hi - *v) / w;
        let r: f64 = rng.gen();
        let dq = if r < 0.5 {
            let val = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(PM_ETA + 1.0);
            val.powf(e) - 1.0
        } else {
            let val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(PM_ETA + 1.0);
            1.0 - val.powf(e)
        };
        *v = (*v + dq * w).clamp(lo, hi);
    }
}

/// Offspring from consecutive parent pairs.
pub(crate) fn offspring(parents: &[&[f64]], bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(parents.len());
    for pair in parents.chunks(2) {
        let (mut a, mut b) = sbx(pair[0], pair[1 % pair.len()], bounds, rng);
        polynomial_mutation(&mut a, bounds, rng);
        polynomial_mutation(&mut b, bounds, rng);
        out.push(a);
        out.push(b);
    }
    out.truncate(parents.len());
    out
}

/// Rank and crowding of each member of a population.
pub(crate) fn rank_and_crowding(pop: &[Individual]) -> (Vec<usize>, Vec<f64>) {
    let objs: Vec<&[f64]> = pop.iter().map(|p| p.f.as_slice()).collect();
    let fronts = fronts_min(&objs);
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, front) in fronts.iter().enumerate() {
        let cd = crowding_distance(&objs, front);
        for (&i, c) in front.iter().zip(cd) {
            rank[i] = r;
            crowd[i] = c;
        }
    }
    (rank, crowd)
}

/// Binary tournament on rank, then crowding distance, then the first drawn.
pub(crate) fn tournament(n: usize, rank: &[usize], crowd: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let a = rng.gen_range(0..rank.len());
            let b = rng.gen_range(0..rank.len());
            if rank[b] < rank[a] || (rank[b] == rank[a] && crowd[b] > crowd[a]) {
                b
            } else {
                a
            }
        })
        .collect()
}

/// NSGA-II environmental selection on the merged population.
pub(crate) fn survive_nsga2(merged: Vec<Individual>, n: usize) -> Vec<Individual> {
    let objs: Vec<&[f64]> = merged.iter().map(|p| p.f.as_slice()).collect();
    let fronts = fronts_min(&objs);
    let mut keep = Vec::with_capacity(n);
    for front in fronts {
        if keep.len() + front.len() <= n {
            keep.extend(front);
            if keep.len() == n {
                break;
            }
        } else {
            let cd = crowding_distance(&objs, &front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| cd[b].total_cmp(&cd[a]).then(a.cmp(&b)));
            keep.extend(order.into_iter().take(n - keep.len()).map(|i| front[i]));
            break;
        }
    }
    take(merged, &keep)
}

fn take(pop: Vec<Individual>, idx: &[usize]) -> Vec<Individual> {
    let mut slots: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
    idx.iter().map(|&i| slots[i].take().expect("unique index")).collect()
}

/// Normalize translated objectives by hyperplane intercepts through the
/// extreme points, falling back to the worst values of the candidate set.
fn intercepts(translated: &[Vec<f64>], m: usize) -> Vec<f64> {
    let worst: Vec<f64> = (0..m)
        .map(|j| translated.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut extremes = DMatrix::zeros(m, m);
    for j in 0..m {
        let asf = |f: &[f64]| {
            (0..m)
                .map(|i| f[i] / if i == j { 1.0 } else { 1e-6 })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let best = translated
            .iter()
            .min_by(|a, b| asf(a).total_cmp(&asf(b)))
            .expect("non-empty");
        for i in 0..m {
            extremes[(j, i)] = best[i];
        }
    }
    let fallback = || worst.iter().map(|&w| if w > 1e-10 { w } else { 1.0 }).collect();
    let Some(a) = extremes.lu().solve(&DVector::from_element(m, 1.0)) else {
        return fallback();
    };
    let ints: Vec<f64> = a.iter().map(|&v| 1.0 / v).collect();
    if ints.iter().zip(&worst).any(|(&v, &w)| !v.is_finite() || v <= 1e-6 || v > 1e6 * w.max(1.0)) {
        return fallback();
    }
    ints
}

/// NSGA-III environmental selection with reference-direction niching.
pub(crate) fn survive_nsga3(merged: Vec<Individual>, n: usize, dirs: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Individual> {
    let objs: Vec<&[f64]> = merged.iter().map(|p| p.f.as_slice()).collect();
    let fronts = fronts_min(&objs);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut last: Vec<usize> = Vec::new();
    for front in fronts {
        if chosen.len() + front.len() <= n {
            chosen.extend(front);
            if chosen.len() == n {
                break;
            }
        } else {
            last = front;
            break;
        }
    }
    if last.is_empty() {
        return take(merged, &chosen);
    }
    let m = objs[0].len();
    let pool: Vec<usize> = chosen.iter().chain(&last).copied().collect();
    let ideal: Vec<f64> = (0..m)
        .map(|j| pool.iter().map(|&i| objs[i][j]).fold(f64::INFINITY, f64::min))
        .collect();
    let translated: Vec<Vec<f64>> = pool
        .iter()
        .map(|&i| objs[i].iter().zip(&ideal).map(|(a, b)| a - b).collect())
        .collect();
    let ints = intercepts(&translated, m);
    let norms: Vec<f64> = dirs.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>()).collect();
    let assoc: Vec<(usize, f64)> = translated
        .iter()
        .map(|t| {
            let f: Vec<f64> = t.iter().zip(&ints).map(|(a, b)| a / b).collect();
            let ff: f64 = f.iter().map(|v| v * v).sum();
            let mut best = (0, f64::INFINITY);
            for (j, d) in dirs.iter().enumerate() {
                let dot: f64 = f.iter().zip(d).map(|(a, b)| a * b).sum();
                let dist = (ff - dot * dot / norms[j]).max(0.0);
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect();
    let mut niche = vec![0usize; dirs.len()];
    for k in 0..chosen.len() {
        niche[assoc[k].0] += 1;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dirs.len()];
    for k in chosen.len()..pool.len() {
        members[assoc[k].0].push(k);
    }
    let mut active: Vec<usize> = (0..dirs.len()).filter(|&j| !members[j].is_empty()).collect();
    while chosen.len() < n {
        let lo = active.iter().map(|&j| niche[j]).min().expect("members remain");
        let ties: Vec<usize> = active.iter().copied().filter(|&j| niche[j] == lo).collect();
        let j = *ties.choose(rng).expect("non-empty");
        let list = &mut members[j];
        let pick = if niche[j] == 0 {
            let (pos, _) = list
                .iter()
                .enumerate()
                .min_by(|a, b| assoc[*a.1].1.total_cmp(&assoc[*b.1].1))
                .expect("non-empty");
            pos
        } else {
            rng.gen_range(0..list.len())
        };
        let k = list.remove(pick);
        chosen.push(pool[k]);
        niche[j] += 1;
        if list.is_empty() {
            active.retain(|&a| a != j);
        }
    }
    take(merged, &chosen)
}

pub(crate) fn shuffled_pairs(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
