//! Benchmark problems, their paired utilities, and Pareto-dominance machinery.
//!
//! Every benchmark here is natively a minimization problem. The engine works
//! in maximization form throughout, so [`evaluate_objectives`] returns the
//! negated native objectives and `native_sense` records the conversion.

pub mod carcab;
pub mod dominance;
pub mod dtlz;
pub mod utility;
pub mod wfg;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use dominance::{non_dominated_filter, pareto_dominates, Sense};
pub use utility::{true_utility, PiecewiseLinear, UtilitySpec};

pub type DecisionVector = Vec<f64>;
pub type ObjectiveVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Dtlz2,
    Dtlz7,
    Wfg3,
    CarCab,
}

impl ProblemKind {
    fn prefix(self) -> &'static str {
        match self {
            ProblemKind::Dtlz2 => "dtlz2",
            ProblemKind::Dtlz7 => "dtlz7",
            ProblemKind::Wfg3 => "wfg3",
            ProblemKind::CarCab => "carcab",
        }
    }
}

/// Declarative problem description. Bounds and orientation are derived from
/// `(kind, d, m)` on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemDecl", into = "ProblemDecl")]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub d: usize,
    pub m: usize,
    pub bounds: Vec<(f64, f64)>,
    /// Sense of each objective in the benchmark's own definition.
    pub native_sense: Vec<Sense>,
    /// WFG position-parameter count (zero for other families).
    pub wfg_k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemDecl {
    kind: ProblemKind,
    d: usize,
    m: usize,
}

impl TryFrom<ProblemDecl> for ProblemSpec {
    type Error = Error;
    fn try_from(p: ProblemDecl) -> Result<Self> {
        ProblemSpec::new(p.kind, p.d, p.m)
    }
}

impl From<ProblemSpec> for ProblemDecl {
    fn from(p: ProblemSpec) -> Self {
        ProblemDecl {
            kind: p.kind,
            d: p.d,
            m: p.m,
        }
    }
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, d: usize, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!("need m >= 2, got {m}")));
        }
        let mut wfg_k = 0;
        let bounds = match kind {
            ProblemKind::Dtlz2 | ProblemKind::Dtlz7 => {
                if d < m {
                    return Err(Error::InvalidParameter(format!(
                        "{} needs d >= m, got d={d}, m={m}",
                        kind.prefix()
                    )));
                }
                vec![(0.0, 1.0); d]
            }
            ProblemKind::Wfg3 => {
                wfg_k = wfg::position_parameters(d, m).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "wfg3 with d={d}, m={m}: no position/distance split with an even distance count"
                    ))
                })?;
                (1..=d).map(|i| (0.0, 2.0 * i as f64)).collect()
            }
            ProblemKind::CarCab => {
                if d != 7 || m != 9 {
                    return Err(Error::InvalidParameter(format!(
                        "car cab design is fixed at d=7, m=9, got d={d}, m={m}"
                    )));
                }
                carcab::BOUNDS.to_vec()
            }
        };
        Ok(Self {
            kind,
            d,
            m,
            bounds,
            native_sense: vec![Sense::Minimize; m],
            wfg_k,
        })
    }

    pub fn dtlz2(d: usize, m: usize) -> Result<Self> {
        Self::new(ProblemKind::Dtlz2, d, m)
    }

    pub fn dtlz7(d: usize, m: usize) -> Result<Self> {
        Self::new(ProblemKind::Dtlz7, d, m)
    }

    pub fn wfg3(d: usize, m: usize) -> Result<Self> {
        Self::new(ProblemKind::Wfg3, d, m)
    }

    pub fn car_cab() -> Self {
        Self::new(ProblemKind::CarCab, 7, 9).expect("fixed dimensions")
    }

    /// Canonical identifier such as `dtlz2-9-6`.
    pub fn name(&self) -> String {
        format!("{}-{}-{}", self.kind.prefix(), self.d, self.m)
    }

    /// Orientation of the values returned by [`evaluate_objectives`].
    pub fn orientation(&self) -> Vec<Sense> {
        vec![Sense::Maximize; self.m]
    }

    pub fn objective_names(&self) -> Vec<String> {
        match self.kind {
            ProblemKind::CarCab => carcab::OBJECTIVE_NAMES.iter().map(|s| s.to_string()).collect(),
            _ => (1..=self.m).map(|i| format!("f{i}")).collect(),
        }
    }

    pub fn lower(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b.0).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b.1).collect()
    }

    /// Map a point of the unit cube onto the decision box.
    pub fn from_unit(&self, u: &[f64]) -> DecisionVector {
        u.iter()
            .zip(&self.bounds)
            .map(|(&t, &(lo, hi))| (lo + t * (hi - lo)).clamp(lo, hi))
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn check_decision(&self, x: &[f64]) -> Result<()> {
        check_dim(self.d, x.len())?;
        for (i, (&v, &(lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            if !(lo..=hi).contains(&v) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ProblemSpec {
    type Err = Error;

    /// Parses `<family>-<d>-<m>` (`dtlz2`, `dtlz7`, `wfg3`, `carcab`).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let bad = || Error::UnknownProblem(s.to_string());
        let kind = match parts.first().copied() {
            Some("dtlz2") => ProblemKind::Dtlz2,
            Some("dtlz7") => ProblemKind::Dtlz7,
            Some("wfg3") => ProblemKind::Wfg3,
            Some("carcab") if parts.len() == 1 => return Ok(Self::car_cab()),
            Some("carcab") => ProblemKind::CarCab,
            _ => return Err(bad()),
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        let d = parts[1].parse().map_err(|_| bad())?;
        let m = parts[2].parse().map_err(|_| bad())?;
        Self::new(kind, d, m)
    }
}

/// The four benchmark configurations with their paired utilities.
pub fn catalog() -> Vec<(ProblemSpec, UtilitySpec)> {
    let problems = [
        ProblemSpec::dtlz7(5, 3).expect("valid"),
        ProblemSpec::dtlz2(9, 6).expect("valid"),
        ProblemSpec::wfg3(14, 9).expect("valid"),
        ProblemSpec::car_cab(),
    ];
    problems
        .into_iter()
        .map(|p| {
            let u = UtilitySpec::paired_with(&p);
            (p, u)
        })
        .collect()
}

/// Evaluate `f(x)` in maximization form.
pub fn evaluate_objectives(problem: &ProblemSpec, x: &[f64]) -> Result<ObjectiveVector> {
    problem.check_decision(x)?;
    let native = match problem.kind {
        ProblemKind::Dtlz2 => dtlz::dtlz2(x, problem.m),
        ProblemKind::Dtlz7 => dtlz::dtlz7(x, problem.m),
        ProblemKind::Wfg3 => wfg::wfg3(x, problem.m, problem.wfg_k),
        ProblemKind::CarCab => carcab::car_cab(x),
    };
    Ok(native
        .into_iter()
        .zip(&problem.native_sense)
        .map(|(v, s)| match s {
            Sense::Minimize => -v,
            Sense::Maximize => v,
        })
        .collect())
}

/// Evaluator that counts calls, used to audit how often `f` is touched.
#[derive(Debug)]
pub struct CountingEvaluator<'a> {
    problem: &'a ProblemSpec,
    calls: AtomicU64,
}

impl<'a> CountingEvaluator<'a> {
    pub fn new(problem: &'a ProblemSpec) -> Self {
        Self {
            problem,
            calls: AtomicU64::new(0),
        }
    }

    pub fn problem(&self) -> &ProblemSpec {
        self.problem
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<ObjectiveVector> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        evaluate_objectives(self.problem, x)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
