//! Query selection: the expected utility of the better of two options,
//! estimated by Monte Carlo and maximized over realizable pairs.

pub mod mc;
pub mod monotone;
pub mod search;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{InputSpace, Origin, PointFeatures, QueryPair, UtilityPosterior};
use crate::problems::{CountingEvaluator, DecisionVector, ObjectiveVector};

pub use mc::{expected_max, McEstimate};
pub use monotone::generate_monotonicity_pairs;
pub use search::{Optimizer, SearchResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    /// Samples per estimate during search.
    pub mc_samples: usize,
    /// Samples for the reported value of the selected pair.
    pub final_mc_samples: usize,
    pub optimizer: Optimizer,
    pub restarts: usize,
    /// Acquisition evaluations per restart.
    pub eval_budget: usize,
    /// Finite candidate sets up to this size are searched exhaustively;
    /// larger sets are first cut down to this many by an upper confidence
    /// bound.
    pub max_enumeration: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mc_samples: 256,
            final_mc_samples: 4096,
            optimizer: Optimizer::PatternSearchRestarts,
            restarts: 8,
            eval_budget: 2000,
            max_enumeration: 200,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 64 || self.final_mc_samples < 64 {
            return Err(Error::InvalidParameter("mc_samples must be >= 64".into()));
        }
        if self.restarts < 1 || self.eval_budget < 1 {
            return Err(Error::InvalidParameter("restarts and eval_budget must be >= 1".into()));
        }
        if self.max_enumeration < 2 {
            return Err(Error::InvalidParameter("max_enumeration must be >= 2".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A finite set of realizable options (decision and objective vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub decisions: Vec<DecisionVector>,
    pub objectives: Vec<ObjectiveVector>,
}

impl CandidateSet {
    pub fn new(decisions: Vec<DecisionVector>, objectives: Vec<ObjectiveVector>) -> Result<Self> {
        check_dim(decisions.len(), objectives.len())?;
        Ok(Self {
            decisions,
            objectives,
        })
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Points in the posterior's input space.
    pub fn model_points(&self, space: InputSpace) -> &[Vec<f64>] {
        match space {
            InputSpace::Objective => &self.objectives,
            InputSpace::Decision => &self.decisions,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SearchDomain<'a> {
    FullSpace,
    Candidates(&'a CandidateSet),
}

/// The pair chosen by [`maximize_qeubo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySelection {
    pub decisions: [DecisionVector; 2],
    /// Objective vectors, when they were needed by the search. Decision-space
    /// searches never evaluate the objective function and leave this empty.
    pub objectives: Option<[ObjectiveVector; 2]>,
    /// Candidate indices for finite-set searches.
    pub candidates: Option<[usize; 2]>,
    /// The pair in the posterior's input space.
    pub pair: QueryPair,
    /// Acquisition value of the pair at the search sample count.
    pub search_value: f64,
    /// Acquisition value re-estimated with the final sample count.
    pub value: McEstimate,
    pub evaluations: usize,
}

/// Expected maximum of the posterior utility over `points`. Points are put in
/// canonical order and exact duplicates dropped first, so the estimate
/// ignores listing order and multiplicity.
pub fn expected_best(
    posterior: &UtilityPosterior,
    points: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if points.is_empty() {
        return Err(Error::Empty("expected maximum over an empty set"));
    }
    let feats = posterior.features(points)?;
    let refs: Vec<&PointFeatures> = feats.iter().collect();
    Ok(mc::expected_max_of_features(posterior, points, &refs, n_samples, seed))
}

/// Expected utility of the better of the two points of `pair`.
pub fn qeubo(posterior: &UtilityPosterior, pair: &QueryPair, config: &AcquisitionConfig) -> Result<McEstimate> {
    expected_best(
        posterior,
        &[pair.first.clone(), pair.second.clone()],
        config.mc_samples,
        config.seed,
    )
}

/// Find the pair with the highest expected best utility.
///
/// Over the full decision box the search runs on the concatenated pair in
/// unit coordinates. In objective-space mode every trial pair is mapped
/// through `f`; in decision-space mode `f` is never called.
pub fn maximize_qeubo(
    posterior: &UtilityPosterior,
    evaluator: &CountingEvaluator,
    domain: SearchDomain,
    config: &AcquisitionConfig,
) -> Result<QuerySelection> {
    config.validate()?;
    match domain {
        SearchDomain::FullSpace => maximize_full_space(posterior, evaluator, config),
        SearchDomain::Candidates(set) => maximize_over_candidates(posterior, set, config),
    }
}

/// One option located by a continuous search.
#[derive(Debug, Clone)]
pub(crate) struct Realized {
    pub decision: DecisionVector,
    /// Present only for objective-space models.
    pub objectives: Option<ObjectiveVector>,
}

impl Realized {
    pub fn model_point(&self) -> &[f64] {
        self.objectives.as_deref().unwrap_or(&self.decision)
    }
}

/// Map unit-cube coordinates to an option, evaluating `f` only when the
/// model lives in objective space.
pub(crate) fn realize(evaluator: &CountingEvaluator, space: InputSpace, u: &[f64]) -> Result<Realized> {
    let decision = evaluator.problem().from_unit(u);
    let objectives = match space {
        InputSpace::Objective => Some(evaluator.evaluate(&decision)?),
        InputSpace::Decision => None,
    };
    Ok(Realized {
        decision,
        objectives,
    })
}

pub(crate) fn check_model_dim(posterior: &UtilityPosterior, evaluator: &CountingEvaluator) -> Result<()> {
    let problem = evaluator.problem();
    let expected = match posterior.input_space() {
        InputSpace::Objective => problem.m,
        InputSpace::Decision => problem.d,
    };
    check_dim(expected, posterior.dim())
}

/// Wrap a fallible objective for the searchers: errors score `-inf` and the
/// first one is kept for reporting.
pub(crate) struct Guarded {
    failure: RefCell<Option<Error>>,
}

impl Guarded {
    pub fn new() -> Self {
        Self {
            failure: RefCell::new(None),
        }
    }

    pub fn score(&self, value: Result<f64>) -> f64 {
        match value {
            Ok(v) => v,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn maximize_full_space(
    posterior: &UtilityPosterior,
    evaluator: &CountingEvaluator,
    config: &AcquisitionConfig,
) -> Result<QuerySelection> {
    check_model_dim(posterior, evaluator)?;
    let space = posterior.input_space();
    let d = evaluator.problem().d;
    let realize_pair = |u: &[f64]| -> Result<[Realized; 2]> {
        Ok([realize(evaluator, space, &u[..d])?, realize(evaluator, space, &u[d..])?])
    };
    let guard = Guarded::new();
    let mut objective = |u: &[f64]| -> f64 {
        guard.score(realize_pair(u).and_then(|[a, b]| {
            let pts = [a.model_point().to_vec(), b.model_point().to_vec()];
            expected_best(posterior, &pts, config.mc_samples, config.seed).map(|v| v.value)
        }))
    };
    let best = search::multistart(
        &mut objective,
        2 * d,
        config.optimizer,
        config.restarts,
        config.eval_budget,
        config.seed,
    )?;
    guard.finish()?;
    let [a, b] = realize_pair(&best.x)?;
    let (p1, p2) = (a.model_point().to_vec(), b.model_point().to_vec());
    let value = expected_best(posterior, &[p1.clone(), p2.clone()], config.final_mc_samples, config.seed)?;
    let objectives = match (a.objectives, b.objectives) {
        (Some(y1), Some(y2)) => Some([y1, y2]),
        _ => None,
    };
    Ok(QuerySelection {
        decisions: [a.decision, b.decision],
        objectives,
        candidates: None,
        pair: QueryPair::new(p1, p2, Origin::Elicited),
        search_value: best.value,
        value,
        evaluations: best.evaluations,
    })
}

/// Indices of the `keep` candidates with the largest `mean + 2·sd`
/// (ties by index), returned in index order.
pub(crate) fn ucb_prefilter(feats: &[PointFeatures], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..feats.len()).collect();
    let ucb = |i: usize| feats[i].mean + 2.0 * feats[i].var.sqrt();
    idx.sort_by(|&a, &b| ucb(b).total_cmp(&ucb(a)).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

fn maximize_over_candidates(
    posterior: &UtilityPosterior,
    set: &CandidateSet,
    config: &AcquisitionConfig,
) -> Result<QuerySelection> {
    if set.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let points = set.model_points(posterior.input_space());
    let feats = posterior.features(points)?;
    let pool: Vec<usize> = if feats.len() > config.max_enumeration {
        ucb_prefilter(&feats, config.max_enumeration)
    } else {
        (0..feats.len()).collect()
    };
    let mut best: Option<(usize, usize, f64)> = None;
    let mut evaluations = 0;
    if pool.len() == 1 {
        let i = pool[0];
        let v = mc::expected_max_of_features(posterior, &[points[i].clone()], &[&feats[i]], config.mc_samples, config.seed);
        best = Some((i, i, v.value));
        evaluations = 1;
    }
    for (a, &i) in pool.iter().enumerate() {
        for &j in &pool[a + 1..] {
            let pair = [points[i].clone(), points[j].clone()];
            let v = mc::expected_max_of_features(posterior, &pair, &[&feats[i], &feats[j]], config.mc_samples, config.seed);
            evaluations += 1;
            if best.is_none_or(|b| v.value > b.2) {
                best = Some((i, j, v.value));
            }
        }
    }
    let (i, j, search_value) = best.expect("non-empty pool");
    let value = expected_best(posterior, &[points[i].clone(), points[j].clone()], config.final_mc_samples, config.seed)?;
    Ok(QuerySelection {
        decisions: [set.decisions[i].clone(), set.decisions[j].clone()],
        objectives: Some([set.objectives[i].clone(), set.objectives[j].clone()]),
        candidates: Some([i, j]),
        pair: QueryPair::new(points[i].clone(), points[j].clone(), Origin::Elicited),
        search_value,
        value,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GpHyperparams, Normalization};
    use crate::problems::ProblemSpec;
    use crate::testing::{posterior_with_moments, random_cov, random_points};
    use nalgebra::DMatrix;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn config(n: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            mc_samples: n,
            final_mc_samples: n,
            seed: 11,
            ..Default::default()
        }
    }

    fn pair(a: &[f64], b: &[f64]) -> QueryPair {
        QueryPair::new(a.to_vec(), b.to_vec(), Origin::Elicited)
    }

    /// E[max(X1, X2)] for a bivariate normal.
    fn bivariate_max(m1: f64, m2: f64, v1: f64, v2: f64, c: f64) -> f64 {
        let theta = (v1 + v2 - 2.0 * c).sqrt();
        let a = (m1 - m2) / theta;
        let n = Normal::new(0.0, 1.0).unwrap();
        let pdf = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        m1 * n.cdf(a) + m2 * n.cdf(-a) + theta * pdf
    }

    #[test]
    fn matches_closed_form_bivariate_maximum() {
        let pts = vec![vec![0.1, 0.2], vec![0.8, 0.6]];
        for (mean, cov) in [
            ([0.3, 0.1], [[1.0, 0.4], [0.4, 0.5]]),
            ([-1.0, 0.5], [[0.2, -0.1], [-0.1, 2.0]]),
            ([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
        ] {
            let c = DMatrix::from_row_slice(2, 2, &[cov[0][0], cov[0][1], cov[1][0], cov[1][1]]);
            let post = posterior_with_moments(&pts, &mean, &c);
            let est = qeubo(&post, &pair(&pts[0], &pts[1]), &config(20_000)).unwrap();
            let exact = bivariate_max(mean[0], mean[1], cov[0][0], cov[1][1], cov[0][1]);
            assert!(
                (est.value - exact).abs() < 4.0 * est.std_error + 1e-4,
                "{} vs {exact} (se {})",
                est.value,
                est.std_error
            );
        }
    }

    #[test]
    fn symmetric_and_shift_equivariant() {
        let pts = random_points(2, 3, 4);
        let cov = random_cov(2, 4);
        let post = posterior_with_moments(&pts, &[0.2, -0.3], &cov);
        let shifted = posterior_with_moments(&pts, &[2.7, 2.2], &cov);
        let cfg = config(512);
        let ab = qeubo(&post, &pair(&pts[0], &pts[1]), &cfg).unwrap();
        let ba = qeubo(&post, &pair(&pts[1], &pts[0]), &cfg).unwrap();
        assert_eq!(ab.value.to_bits(), ba.value.to_bits());
        let sh = qeubo(&shifted, &pair(&pts[0], &pts[1]), &cfg).unwrap();
        assert!((sh.value - ab.value - 2.5).abs() < 1e-5);
    }

    #[test]
    fn degenerate_pair_is_the_posterior_mean() {
        let pts = random_points(2, 2, 9);
        let post = posterior_with_moments(&pts, &[0.4, -0.2], &random_cov(2, 9));
        let x = vec![0.3, 0.55];
        let v = qeubo(&post, &pair(&x, &x), &config(256)).unwrap();
        assert!((v.value - post.mean(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn enumeration_finds_the_best_of_all_pairs() {
        let pts = random_points(5, 2, 21);
        let mean = [0.1, 0.3, -0.2, 0.25, 0.0];
        let post = posterior_with_moments(&pts, &mean, &random_cov(5, 21));
        let set = CandidateSet::new(pts.clone(), pts.clone()).unwrap();
        let problem = ProblemSpec::dtlz2(2, 2).unwrap();
        let eval = CountingEvaluator::new(&problem);
        let cfg = config(1024);
        let sel = maximize_qeubo(&post, &eval, SearchDomain::Candidates(&set), &cfg).unwrap();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..5 {
            for j in i + 1..5 {
                let v = qeubo(&post, &pair(&pts[i], &pts[j]), &cfg).unwrap().value;
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        assert_eq!(sel.candidates, Some([best.0, best.1]));
        assert_eq!(sel.search_value.to_bits(), best.2.to_bits());
        assert_eq!(sel.evaluations, 10);
        assert_eq!(eval.calls(), 0);
    }

    #[test]
    fn prefilter_keeps_the_highest_upper_bounds() {
        let pts = random_points(12, 2, 5);
        let mean: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let post = posterior_with_moments(&pts, &mean, &(DMatrix::identity(12, 12) * 0.01));
        let set = CandidateSet::new(pts.clone(), pts.clone()).unwrap();
        let problem = ProblemSpec::dtlz2(2, 2).unwrap();
        let eval = CountingEvaluator::new(&problem);
        let cfg = AcquisitionConfig {
            max_enumeration: 3,
            ..config(256)
        };
        let sel = maximize_qeubo(&post, &eval, SearchDomain::Candidates(&set), &cfg).unwrap();
        let [i, j] = sel.candidates.unwrap();
        assert!(i >= 9 && j >= 9);
        assert_eq!(sel.evaluations, 3);
    }

    fn decision_prior(problem: &ProblemSpec, space: InputSpace) -> UtilityPosterior {
        let dim = match space {
            InputSpace::Decision => problem.d,
            InputSpace::Objective => problem.m,
        };
        let norm = match space {
            InputSpace::Decision => Normalization::from_bounds(&problem.bounds),
            InputSpace::Objective => Normalization::identity(dim),
        };
        let inducing = random_points(8, dim, 3).iter().map(|u| norm.invert(u)).collect();
        let hyper = GpHyperparams {
            lengthscales: vec![0.5; dim],
            signal_variance: 1.0,
            noise_level: 0.1,
        };
        UtilityPosterior::prior(space, norm, inducing, hyper).unwrap()
    }

    #[test]
    fn decision_space_search_never_evaluates_objectives() {
        let problem = ProblemSpec::dtlz2(3, 2).unwrap();
        let cfg = AcquisitionConfig {
            restarts: 2,
            eval_budget: 60,
            ..config(64)
        };
        let post = decision_prior(&problem, InputSpace::Decision);
        let eval = CountingEvaluator::new(&problem);
        let sel = maximize_qeubo(&post, &eval, SearchDomain::FullSpace, &cfg).unwrap();
        assert_eq!(eval.calls(), 0);
        assert!(sel.objectives.is_none());
        assert_eq!(sel.pair.first, sel.decisions[0]);
        problem.check_decision(&sel.decisions[1]).unwrap();

        let post = decision_prior(&problem, InputSpace::Objective);
        let eval = CountingEvaluator::new(&problem);
        let sel = maximize_qeubo(&post, &eval, SearchDomain::FullSpace, &cfg).unwrap();
        assert!(eval.calls() > 0);
        assert_eq!(sel.objectives.as_ref().unwrap()[0], sel.pair.first);
    }

    #[test]
    fn full_space_search_is_deterministic() {
        let problem = ProblemSpec::dtlz2(3, 2).unwrap();
        let post = decision_prior(&problem, InputSpace::Decision);
        let cfg = AcquisitionConfig {
            restarts: 2,
            eval_budget: 40,
            ..config(64)
        };
        let eval = CountingEvaluator::new(&problem);
        let a = maximize_qeubo(&post, &eval, SearchDomain::FullSpace, &cfg).unwrap();
        let b = maximize_qeubo(&post, &eval, SearchDomain::FullSpace, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// One-sample Kolmogorov–Smirnov statistic.
    fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn monotonicity_pairs_follow_order_statistic_laws() {
        let seen = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.2]];
        let pairs = generate_monotonicity_pairs(&seen, 10_000, 0.0, 2).unwrap();
        let crit = 1.95 / (10_000f64).sqrt();
        for d in 0..2 {
            let hi: Vec<f64> = pairs.iter().map(|p| p.first[d]).collect();
            let lo: Vec<f64> = pairs.iter().map(|p| p.second[d]).collect();
            assert!(ks(hi, |x| x * x) < crit);
            assert!(ks(lo, |x| 1.0 - (1.0 - x) * (1.0 - x)) < crit);
        }
        for p in &pairs {
            assert!(crate::problems::dominance::dominates_max(&p.first, &p.second));
            assert_eq!(p.origin, Origin::VirtualMonotonicity);
        }
    }

    #[test]
    fn monotonicity_pairs_map_back_to_the_seen_box() {
        let seen = vec![vec![-3.0, 10.0], vec![-1.0, 14.0]];
        let pairs = generate_monotonicity_pairs(&seen, 500, 0.1, 8).unwrap();
        for p in &pairs {
            for v in [&p.first, &p.second] {
                assert!((-3.2..=-0.8).contains(&v[0]));
                assert!((9.6..=14.4).contains(&v[1]));
            }
        }
        assert_eq!(pairs, generate_monotonicity_pairs(&seen, 500, 0.1, 8).unwrap());
    }
}
