//! The elicitation loop: sessions, regret tracking and experiment batches.

pub mod experiment;
pub mod regret;
pub mod session;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::menu::MenuConfig;
use crate::model::{FitConfig, InputSpace};
use crate::problems::ProblemSpec;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentSummary, NoiseSetting};
pub use regret::{estimate_optimum, GroundTruth, GroundTruthCache, RegretRecord, RegretTrace};
pub use session::{Event, QueryKind, QueryRecord, Session, SessionStatus, LOG_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interaction {
    /// Queries range over the whole decision box.
    Interactive,
    /// Queries range over a precomputed Pareto-set approximation.
    APosteriori,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Monotonicity {
    Off,
    On { count: usize, delta: f64 },
}

impl FromStr for Monotonicity {
    type Err = Error;

    /// `off` or `<count>:<delta>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "off" {
            return Ok(Monotonicity::Off);
        }
        let bad = || Error::Parse(format!("expected `off` or `<count>:<delta>`, got {s:?}"));
        let (c, d) = s.split_once(':').ok_or_else(bad)?;
        Ok(Monotonicity::On {
            count: c.parse().map_err(|_| bad())?,
            delta: d.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryPolicy {
    /// Maximize the expected utility of the better option.
    Qeubo,
    /// Uniformly random pairs, as a baseline.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegretCandidates {
    /// Menus are chosen among the points queried so far.
    QueriedPoints,
    /// Menus are chosen over the decision box (interactive) or the whole
    /// Pareto approximation (a posteriori).
    FullSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub interaction: Interaction,
    pub model_space: InputSpace,
    /// Elicited comparisons after the initial pairs.
    pub budget: usize,
    /// Initial random pairs; `None` means `2(d+1)`.
    pub initial_pairs: Option<usize>,
    /// Menu sizes evaluated for regret.
    pub menu_k: Vec<usize>,
    pub monotonicity: Monotonicity,
    pub query_policy: QueryPolicy,
    pub regret_candidates: RegretCandidates,
    pub seeds: Vec<u64>,
    pub acquisition: AcquisitionConfig,
    pub menu: MenuConfig,
    pub fit: FitConfig,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            interaction: Interaction::Interactive,
            model_space: InputSpace::Objective,
            budget: 50,
            initial_pairs: None,
            menu_k: vec![1],
            monotonicity: Monotonicity::Off,
            query_policy: QueryPolicy::Qeubo,
            regret_candidates: RegretCandidates::QueriedPoints,
            seeds: vec![0],
            acquisition: AcquisitionConfig::default(),
            menu: MenuConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl VariantConfig {
    /// Variant from a label such as `int-obj` or `post-dec`, optionally
    /// suffixed with `-random` for the random-query baseline.
    pub fn from_label(label: &str) -> Result<Self> {
        let (base, query_policy) = match label.strip_suffix("-random") {
            Some(b) => (b, QueryPolicy::Random),
            None => (label, QueryPolicy::Qeubo),
        };
        let (interaction, model_space) = parse_label(base)?;
        Ok(Self {
            interaction,
            model_space,
            query_policy,
            ..Default::default()
        })
    }

    pub fn label(&self) -> String {
        let i = match self.interaction {
            Interaction::Interactive => "int",
            Interaction::APosteriori => "post",
        };
        let s = match self.model_space {
            InputSpace::Objective => "obj",
            InputSpace::Decision => "dec",
        };
        let mut label = format!("{i}-{s}");
        if self.query_policy == QueryPolicy::Random {
            label.push_str("-random");
        }
        label
    }

    pub fn initial_pairs_for(&self, problem: &ProblemSpec) -> usize {
        self.initial_pairs.unwrap_or(2 * (problem.d + 1))
    }

    pub fn max_k(&self) -> usize {
        self.menu_k.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_pairs == Some(0) {
            return Err(Error::InvalidParameter("initial_pairs must be >= 1".into()));
        }
        if self.menu_k.is_empty() || self.menu_k.contains(&0) {
            return Err(Error::InvalidParameter("menu sizes must be >= 1".into()));
        }
        if let Monotonicity::On { count, delta } = self.monotonicity {
            if self.model_space == InputSpace::Decision {
                return Err(Error::InvalidParameter(
                    "monotonicity pairs need an objective-space model".into(),
                ));
            }
            if count == 0 || !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "monotonicity needs count >= 1 and delta >= 0, got {count}:{delta}"
                )));
            }
        }
        self.acquisition.validate()?;
        self.menu.validate()
    }
}

fn parse_label(label: &str) -> Result<(Interaction, InputSpace)> {
    let (i, s) = label
        .split_once('-')
        .ok_or_else(|| Error::Parse(format!("variant label {label:?} is not <int|post>-<obj|dec>")))?;
    let interaction = match i {
        "int" => Interaction::Interactive,
        "post" => Interaction::APosteriori,
        _ => return Err(Error::Parse(format!("unknown interaction {i:?}"))),
    };
    let space = match s {
        "obj" => InputSpace::Objective,
        "dec" => InputSpace::Decision,
        _ => return Err(Error::Parse(format!("unknown model space {s:?}"))),
    };
    Ok((interaction, space))
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
