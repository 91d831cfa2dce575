//! Menus: small sets of options maximizing the expected utility of the
//! decision-maker's best pick.

use serde::{Deserialize, Serialize};

use crate::acquisition::mc::{IncrementalPaths, SamplePaths};
use crate::acquisition::{
    self, check_model_dim, expected_best, maximize_qeubo, realize, AcquisitionConfig, CandidateSet, Guarded,
    McEstimate, SearchDomain,
};
use crate::error::{Error, Result};
use crate::model::UtilityPosterior;
use crate::problems::{CountingEvaluator, DecisionVector, ObjectiveVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    Greedy,
    /// Exhaustive search over all k-subsets of a finite set, or the joint
    /// pair search for k = 2 over the full space.
    JointEnumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MenuConfig {
    /// Samples behind reported menu values.
    pub mc_samples: usize,
    pub construction: Construction,
    /// Upper limit on subsets visited by joint enumeration.
    pub max_joint_subsets: usize,
    /// Greedy menus over larger finite sets draw from a pool of this size:
    /// the posterior-mean maximizer plus the best candidates by
    /// `mean + 2·sd`.
    pub max_greedy_pool: usize,
    /// Optimizer, per-step sample count and seed for the search.
    pub search: AcquisitionConfig,
}

impl Default for MenuConfig {
    fn default() -> Self {
        Self {
            mc_samples: 8192,
            construction: Construction::Greedy,
            max_joint_subsets: 1_000_000,
            max_greedy_pool: 256,
            search: AcquisitionConfig::default(),
        }
    }
}

impl MenuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 64 {
            return Err(Error::InvalidParameter("menu mc_samples must be >= 64".into()));
        }
        if self.max_greedy_pool < 16 {
            return Err(Error::InvalidParameter("max_greedy_pool must be >= 16".into()));
        }
        self.search.validate()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            search: self.search.with_seed(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuResult {
    pub decisions: Vec<DecisionVector>,
    pub objectives: Vec<ObjectiveVector>,
    /// Candidate indices for finite-set menus.
    pub candidates: Option<Vec<usize>>,
    pub expected_best_utility: f64,
    pub std_error: f64,
    /// Posterior mean and variance of each item's utility.
    pub posterior_mean: Vec<f64>,
    pub posterior_var: Vec<f64>,
    pub construction: Construction,
}

impl MenuResult {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// The first `k` items. Greedy menus of size `k` are exactly these.
    pub fn prefix_decisions(&self, k: usize) -> &[DecisionVector] {
        &self.decisions[..k.min(self.len())]
    }
}

/// Expected maximum posterior utility over `points` (model input space).
/// With two points this is the query acquisition value for the same seed.
pub fn menu_objective(posterior: &UtilityPosterior, points: &[Vec<f64>], config: &MenuConfig) -> Result<McEstimate> {
    expected_best(posterior, points, config.mc_samples, config.search.seed)
}

pub fn select_menu(
    posterior: &UtilityPosterior,
    evaluator: &CountingEvaluator,
    domain: SearchDomain,
    k: usize,
    config: &MenuConfig,
) -> Result<MenuResult> {
    config.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("menu size must be >= 1".into()));
    }
    check_model_dim(posterior, evaluator)?;
    match (domain, config.construction) {
        (SearchDomain::Candidates(set), c) => {
            if k > set.len() {
                return Err(Error::InvalidParameter(format!(
                    "menu size {k} exceeds the {} candidates",
                    set.len()
                )));
            }
            let (idx, value) = match c {
                Construction::Greedy => greedy_indices(posterior, set, k, config)?,
                Construction::JointEnumeration => {
                    let idx = joint_indices(posterior, set, k, config)?;
                    let points = pick(set.model_points(posterior.input_space()), &idx);
                    let value = menu_objective(posterior, &points, config)?;
                    (idx, value)
                }
            };
            describe(
                posterior,
                pick(&set.decisions, &idx),
                pick(&set.objectives, &idx),
                Some(idx.clone()),
                &pick(set.model_points(posterior.input_space()), &idx),
                value,
                c,
            )
        }
        (SearchDomain::FullSpace, Construction::Greedy) => greedy_full_space(posterior, evaluator, k, config),
        (SearchDomain::FullSpace, Construction::JointEnumeration) => match k {
            1 => greedy_full_space(posterior, evaluator, 1, config).map(|mut r| {
                r.construction = Construction::JointEnumeration;
                r
            }),
            2 => {
                let sel = maximize_qeubo(posterior, evaluator, SearchDomain::FullSpace, &config.search)?;
                let objectives = match sel.objectives {
                    Some([a, b]) => vec![a, b],
                    None => sel.decisions.iter().map(|x| evaluator.evaluate(x)).collect::<Result<_>>()?,
                };
                let points = vec![sel.pair.first, sel.pair.second];
                let value = menu_objective(posterior, &points, config)?;
                describe(posterior, sel.decisions.to_vec(), objectives, None, &points, value, Construction::JointEnumeration)
            }
            _ => Err(Error::InvalidParameter(
                "joint menu optimization over the full space is limited to k <= 2".into(),
            )),
        },
    }
}

fn pick(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

/// Greedy selection on shared sample paths. The first item is the exact
/// posterior-mean maximizer; ties go to the earliest index.
fn greedy_indices(
    posterior: &UtilityPosterior,
    set: &CandidateSet,
    k: usize,
    config: &MenuConfig,
) -> Result<(Vec<usize>, McEstimate)> {
    let all = set.model_points(posterior.input_space());
    let pool: Vec<usize> = if all.len() > config.max_greedy_pool {
        let feats = posterior.features(all)?;
        let first = argmax(feats.iter().map(|f| f.mean));
        let mut pool = acquisition::ucb_prefilter(&feats, config.max_greedy_pool - 1);
        if !pool.contains(&first) {
            pool.push(first);
            pool.sort_unstable();
        }
        pool
    } else {
        (0..all.len()).collect()
    };
    let points = pick(all, &pool);
    let paths = SamplePaths::new(posterior, &points, config.mc_samples, config.search.seed)?;
    let mut chosen = vec![argmax(paths.means().iter().copied())];
    let mut running = paths.running_max(&chosen);
    while chosen.len() < k {
        let next = argmax((0..paths.len()).map(|c| {
            if chosen.contains(&c) {
                f64::NEG_INFINITY
            } else {
                paths.value_with(&running, c).value
            }
        }));
        chosen.push(next);
        running = paths.running_max(&chosen);
    }
    let value = paths.value(&chosen)?;
    Ok((chosen.into_iter().map(|c| pool[c]).collect(), value))
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Best k-subset by exhaustive search, visiting subsets in lexicographic
/// order and keeping the first maximum.
fn joint_indices(posterior: &UtilityPosterior, set: &CandidateSet, k: usize, config: &MenuConfig) -> Result<Vec<usize>> {
    let n = set.len();
    if binomial(n, k) > config.max_joint_subsets as f64 {
        return Err(Error::InvalidParameter(format!(
            "joint enumeration of {k}-subsets of {n} candidates exceeds {} subsets",
            config.max_joint_subsets
        )));
    }
    let points = set.model_points(posterior.input_space());
    let feats = posterior.features(points)?;
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best = (subset.clone(), f64::NEG_INFINITY);
    loop {
        let pts: Vec<Vec<f64>> = subset.iter().map(|&i| points[i].clone()).collect();
        let fs: Vec<_> = subset.iter().map(|&i| &feats[i]).collect();
        let v = acquisition::mc::expected_max_of_features(posterior, &pts, &fs, config.search.mc_samples, config.search.seed);
        if v.value > best.1 {
            best = (subset.clone(), v.value);
        }
        let Some(i) = (0..k).rev().find(|&i| subset[i] < n - k + i) else {
            break;
        };
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
    Ok(best.0)
}

fn describe(
    posterior: &UtilityPosterior,
    decisions: Vec<DecisionVector>,
    objectives: Vec<ObjectiveVector>,
    candidates: Option<Vec<usize>>,
    points: &[Vec<f64>],
    value: McEstimate,
    construction: Construction,
) -> Result<MenuResult> {
    let (mean, var) = posterior.predict_marginals(points)?;
    Ok(MenuResult {
        decisions,
        objectives,
        candidates,
        expected_best_utility: value.value,
        std_error: value.std_error,
        posterior_mean: mean.to_vec(),
        posterior_var: var.to_vec(),
        construction,
    })
}

/// Greedy menu over the whole decision box. Each step searches the unit cube
/// with the query optimizer; paths of chosen items are frozen, so the menu
/// value never decreases as items are added.
fn greedy_full_space(
    posterior: &UtilityPosterior,
    evaluator: &CountingEvaluator,
    k: usize,
    config: &MenuConfig,
) -> Result<MenuResult> {
    let space = posterior.input_space();
    let d = evaluator.problem().d;
    let search = &config.search;
    let mut paths = IncrementalPaths::new(config.mc_samples, search.seed);
    let mut decisions = Vec::with_capacity(k);
    let mut objectives = Vec::with_capacity(k);
    let mut points = Vec::with_capacity(k);
    for step in 0..k {
        let step_seed = crate::seed::derive(search.seed, "menu-step", step as u64);
        let guard = Guarded::new();
        let best = {
            let mut objective = |u: &[f64]| -> f64 {
                guard.score(realize(evaluator, space, u).and_then(|r| {
                    let f = posterior.features(&[r.model_point().to_vec()])?.remove(0);
                    Ok(if step == 0 {
                        f.mean
                    } else {
                        paths.value_with(posterior, &f, search.mc_samples).value
                    })
                }))
            };
            acquisition::search::multistart(&mut objective, d, search.optimizer, search.restarts, search.eval_budget, step_seed)?
        };
        guard.finish()?;
        let r = realize(evaluator, space, &best.x)?;
        let point = r.model_point().to_vec();
        paths.push(posterior, posterior.features(std::slice::from_ref(&point))?.remove(0));
        let y = match r.objectives {
            Some(y) => y,
            None => evaluator.evaluate(&r.decision)?,
        };
        decisions.push(r.decision);
        objectives.push(y);
        points.push(point);
    }
    let value = paths.value()?;
    describe(posterior, decisions, objectives, None, &points, value, Construction::Greedy)
}
