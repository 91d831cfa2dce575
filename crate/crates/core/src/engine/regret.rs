//! Ground-truth optima and regret of menus under the true utility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::session::Session;
use crate::acquisition::search::{multistart, Optimizer};
use crate::error::{Error, Result};
use crate::problems::{evaluate_objectives, true_utility, ProblemKind, ProblemSpec, UtilitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub problem: String,
    pub utility: UtilitySpec,
    /// Best utility found.
    pub value: f64,
    pub argmax: Vec<f64>,
    pub evaluations: u64,
    pub method: String,
    /// Maximum over the analytic Pareto front, where one is known.
    pub front_value: Option<f64>,
}

/// Estimate `max_x u(f(x))` by multistart pattern search over the decision
/// box. For DTLZ2 the result is cross-checked against a search over the
/// analytic front (the unit-sphere octant), and the larger value is kept.
pub fn estimate_optimum(problem: &ProblemSpec, utility: &UtilitySpec, budget: usize, seed: u64) -> Result<GroundTruth> {
    const RESTARTS: usize = 20;
    if budget < RESTARTS {
        return Err(Error::InvalidParameter(format!("ground-truth budget {budget} is below {RESTARTS}")));
    }
    let failure = crate::acquisition::Guarded::new();
    let mut objective = |u: &[f64]| {
        let x = problem.from_unit(u);
        failure.score(evaluate_objectives(problem, &x).and_then(|y| true_utility(utility, &y)))
    };
    let best = multistart(
        &mut objective,
        problem.d,
        Optimizer::PatternSearchRestarts,
        RESTARTS,
        budget / RESTARTS,
        seed,
    )?;
    failure.finish()?;
    let mut truth = GroundTruth {
        problem: problem.name(),
        utility: utility.clone(),
        value: best.value,
        argmax: problem.from_unit(&best.x),
        evaluations: best.evaluations as u64,
        method: format!("multistart pattern search, {RESTARTS} restarts, {} evaluations", best.evaluations),
        front_value: None,
    };
    if problem.kind == ProblemKind::Dtlz2 {
        let (front, angles) = dtlz2_front_optimum(problem.m, utility, budget, seed)?;
        truth.front_value = Some(front);
        if front > truth.value {
            truth.value = front;
            truth.argmax = dtlz2_decision(problem, &angles);
            truth.method.push_str("; analytic front search was higher");
        }
    }
    Ok(truth)
}

/// Point of the DTLZ2 front (maximization form) for angles in `[0,1]^{m-1}`
/// (scaled by π/2).
pub fn dtlz2_front_point(angles: &[f64]) -> Vec<f64> {
    let m = angles.len() + 1;
    let t: Vec<f64> = angles.iter().map(|a| a * std::f64::consts::FRAC_PI_2).collect();
    (0..m)
        .map(|i| {
            let mut v: f64 = t[..m - 1 - i].iter().map(|a| a.cos()).product();
            if i > 0 {
                v *= t[m - 1 - i].sin();
            }
            -v
        })
        .collect()
}

fn dtlz2_decision(problem: &ProblemSpec, angles: &[f64]) -> Vec<f64> {
    let mut x = vec![0.5; problem.d];
    x[..angles.len()].copy_from_slice(angles);
    x
}

fn dtlz2_front_optimum(m: usize, utility: &UtilitySpec, budget: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let failure = crate::acquisition::Guarded::new();
    let mut objective = |a: &[f64]| failure.score(true_utility(utility, &dtlz2_front_point(a)));
    let best = multistart(&mut objective, m - 1, Optimizer::PatternSearchRestarts, 20, budget / 20, seed)?;
    failure.finish()?;
    Ok((best.value, best.x))
}

/// On-disk table of ground-truth optima.
#[derive(Debug)]
pub struct GroundTruthCache {
    path: PathBuf,
    entries: BTreeMap<String, GroundTruth>,
}

impl GroundTruthCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { path, entries })
    }

    pub fn get_or_estimate(
        &mut self,
        problem: &ProblemSpec,
        utility: &UtilitySpec,
        budget: usize,
        seed: u64,
    ) -> Result<GroundTruth> {
        let key = format!("{}|{}|{budget}|{seed}", problem.name(), serde_json::to_string(utility)?);
        if let Some(t) = self.entries.get(&key) {
            return Ok(t.clone());
        }
        let t = estimate_optimum(problem, utility, budget, seed)?;
        self.entries.insert(key, t.clone());
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.entries)?)?;
        std::fs::rename(tmp, &self.path)?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuRegret {
    pub k: usize,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    /// Elicited comparisons so far.
    pub n: usize,
    pub regrets: Vec<MenuRegret>,
    pub walltime_ms: Option<u64>,
}

impl RegretRecord {
    pub fn regret(&self, k: usize) -> Option<f64> {
        self.regrets.iter().find(|r| r.k == k).map(|r| r.regret)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub records: Vec<RegretRecord>,
}

/// Regret `u(x*) − max_{i ≤ k} u(f(x̂_i))` for each configured menu size,
/// read off prefixes of one greedy menu of the largest size.
pub fn regret_record(session: &Session, truth: &GroundTruth, utility: &UtilitySpec) -> Result<RegretRecord> {
    let variant = session.variant();
    let menu = session.compute_menu(variant.max_k())?;
    let utils: Vec<f64> = menu
        .objectives
        .iter()
        .map(|y| true_utility(utility, y))
        .collect::<Result<_>>()?;
    let regrets = variant
        .menu_k
        .iter()
        .map(|&k| {
            let best = utils[..k.min(utils.len())].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            MenuRegret {
                k,
                regret: truth.value - best,
            }
        })
        .collect();
    Ok(RegretRecord {
        n: session.interaction_index(),
        regrets,
        walltime_ms: None,
    })
}

/// Run a simulated session to completion, recording regret after the
/// initial fit and after every answered query.
pub fn run_with_regret(
    session: &mut Session,
    truth: &GroundTruth,
    utility: &UtilitySpec,
    record_walltime: bool,
) -> Result<RegretTrace> {
    let start = std::time::Instant::now();
    let mut trace = RegretTrace::default();
    session.run_simulated(|s| {
        let mut r = regret_record(s, truth, utility)?;
        if record_walltime {
            r.walltime_ms = Some(start.elapsed().as_millis() as u64);
        }
        trace.records.push(r);
        Ok(())
    })?;
    Ok(trace)
}

/// Recompute the regret trace of a logged session by replaying it.
pub fn replay_trace(events: Vec<super::Event>, truth: &GroundTruth, utility: &UtilitySpec) -> Result<RegretTrace> {
    let mut trace = RegretTrace::default();
    Session::replay(events, false, |s| {
        trace.records.push(regret_record(s, truth, utility)?);
        Ok(())
    })?;
    Ok(trace)
}
