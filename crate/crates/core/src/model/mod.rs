//! Gaussian-process utility model learned from pairwise comparisons.
//!
//! The model works over either objective vectors or decision vectors. Inputs
//! are affinely normalized per dimension before they reach the kernel; the
//! variational posterior lives on a set of inducing points in that
//! normalized space.

mod elbo;
mod fit;
mod kernel;
mod likelihood;
mod posterior;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};

pub use elbo::{elbo, ElboParams, ElboProblem};
pub use fit::{fit, FitConfig, FitReport, StopReason};
pub use kernel::Matern52;
pub use likelihood::{expected_log_sigmoid, gauss_hermite, likelihood, log_sigmoid, sigmoid};
pub use posterior::{Normalization, PointFeatures, PosteriorDoc, UtilityPosterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSpace {
    Objective,
    Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Elicited,
    Initial,
    VirtualMonotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPair {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub origin: Origin,
}

impl QueryPair {
    pub fn new(first: Vec<f64>, second: Vec<f64>, origin: Origin) -> Self {
        Self {
            first,
            second,
            origin,
        }
    }
}

/// Which item of a pair the decision-maker preferred. Serialized as `1` or `2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Response {
    First,
    Second,
}

impl Response {
    pub fn choice(self) -> u8 {
        match self {
            Response::First => 1,
            Response::Second => 2,
        }
    }
}

impl TryFrom<u8> for Response {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Response::First),
            2 => Ok(Response::Second),
            _ => Err(Error::InvalidParameter(format!("choice must be 1 or 2, got {v}"))),
        }
    }
}

impl From<Response> for u8 {
    fn from(r: Response) -> u8 {
        r.choice()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pair: QueryPair,
    pub response: Response,
}

impl Comparison {
    pub fn winner(&self) -> &[f64] {
        match self.response {
            Response::First => &self.pair.first,
            Response::Second => &self.pair.second,
        }
    }

    pub fn loser(&self) -> &[f64] {
        match self.response {
            Response::First => &self.pair.second,
            Response::Second => &self.pair.first,
        }
    }
}

/// Ordered comparison history over one input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    space: InputSpace,
    dim: usize,
    comparisons: Vec<Comparison>,
}

impl PreferenceDataset {
    pub fn new(space: InputSpace, dim: usize) -> Self {
        Self {
            space,
            dim,
            comparisons: Vec::new(),
        }
    }

    pub fn space(&self) -> InputSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, pair: QueryPair, response: Response) -> Result<()> {
        check_dim(self.dim, pair.first.len())?;
        check_dim(self.dim, pair.second.len())?;
        check_finite(&pair.first, "query point")?;
        check_finite(&pair.second, "query point")?;
        if pair.origin == Origin::VirtualMonotonicity && response != Response::First {
            return Err(Error::InvalidParameter(
                "virtual monotonicity pairs list the dominating point first".into(),
            ));
        }
        self.comparisons.push(Comparison { pair, response });
        Ok(())
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn len(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.comparisons.iter().filter(|c| c.pair.origin == origin).count()
    }

    /// Replace all virtual pairs with `pairs`.
    pub fn set_virtual(&mut self, pairs: Vec<QueryPair>) -> Result<()> {
        self.comparisons.retain(|c| c.pair.origin != Origin::VirtualMonotonicity);
        for p in pairs {
            if p.origin != Origin::VirtualMonotonicity {
                return Err(Error::InvalidParameter("expected a virtual pair".into()));
            }
            self.push(p, Response::First)?;
        }
        Ok(())
    }

    /// Points shown to the decision-maker (virtual pairs excluded).
    pub fn observed_points(&self) -> impl Iterator<Item = &[f64]> {
        self.comparisons
            .iter()
            .filter(|c| c.pair.origin != Origin::VirtualMonotonicity)
            .flat_map(|c| [c.pair.first.as_slice(), c.pair.second.as_slice()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_level: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.lengthscales.iter().all(|&l| positive(l))
            || !positive(self.signal_variance)
            || !positive(self.noise_level)
        {
            return Err(Error::InvalidParameter(format!(
                "hyperparameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}
