//! Ground-truth utility functions paired with each benchmark. All of them are
//! non-decreasing in every objective (maximization form).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProblemKind, ProblemSpec};
use crate::error::{check_dim, check_finite, Error, Result};

const DEFAULT_CAR_CAB_TABLE: &str = include_str!("../../data/carcab_utility_v1.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilitySpec {
    /// `u(y) = Σ yᵢ`
    LinearSum,
    /// `u(y) = -(Σ (zᵢ - yᵢ)³)^(1/3)` with the real (signed) cube root.
    CubicNormToIdeal { ideal: Vec<f64> },
    /// `u(y) = -θ⁻¹ log Σ exp(-θ yᵢ)`, a smooth minimum.
    SoftMinExponential { theta: f64 },
    /// `u(y) = Σ hᵢ(yᵢ)` with piecewise-linear `hᵢ`.
    PiecewiseLinearSum { pieces: Vec<PiecewiseLinear> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let h = Self { breakpoints, slopes };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(Error::InvalidParameter("piecewise-linear needs a breakpoint".into()));
        }
        if self.slopes.len() != self.breakpoints.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} breakpoints need {} slopes, got {}",
                self.breakpoints.len(),
                self.breakpoints.len() + 1,
                self.slopes.len()
            )));
        }
        check_finite(&self.breakpoints, "breakpoints")?;
        check_finite(&self.slopes, "slopes")?;
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Continuous, with `h(first breakpoint) = 0`.
    pub fn eval(&self, y: f64) -> f64 {
        let b = &self.breakpoints;
        if y <= b[0] {
            return self.slopes[0] * (y - b[0]);
        }
        let mut acc = 0.0;
        for i in 1..b.len() {
            if y <= b[i] {
                return acc + self.slopes[i] * (y - b[i - 1]);
            }
            acc += self.slopes[i] * (b[i] - b[i - 1]);
        }
        acc + self.slopes[b.len()] * (y - b[b.len() - 1])
    }
}

/// Parse a table of `index | breakpoints | slopes` lines (`#` comments).
pub fn parse_piecewise_table(text: &str) -> Result<Vec<PiecewiseLinear>> {
    let mut rows: Vec<(usize, PiecewiseLinear)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err("expected `index | breakpoints | slopes`"));
        }
        let index: usize = fields[0].parse().map_err(|_| err("bad objective index"))?;
        let nums = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number `{t}`"))))
                .collect()
        };
        let h = PiecewiseLinear::new(nums(fields[1])?, nums(fields[2])?)
            .map_err(|e| err(&e.to_string()))?;
        rows.push((index, h));
    }
    rows.sort_by_key(|r| r.0);
    for (expected, (index, _)) in rows.iter().enumerate() {
        if *index != expected {
            return Err(Error::Parse(format!(
                "objective indices must be 0..n without gaps; found {index} at position {expected}"
            )));
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty piecewise-linear table".into()));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn load_piecewise_table(path: &Path) -> Result<Vec<PiecewiseLinear>> {
    parse_piecewise_table(&std::fs::read_to_string(path)?)
}

pub fn default_car_cab_tables() -> Vec<PiecewiseLinear> {
    parse_piecewise_table(DEFAULT_CAR_CAB_TABLE).expect("bundled table parses")
}

impl UtilitySpec {
    /// The utility each benchmark is paired with.
    pub fn paired_with(problem: &ProblemSpec) -> Self {
        match problem.kind {
            ProblemKind::Dtlz7 => UtilitySpec::LinearSum,
            ProblemKind::Dtlz2 => UtilitySpec::CubicNormToIdeal {
                ideal: (1..=problem.m)
                    .map(|i| if i % 2 == 0 { 0.2 } else { 0.0 })
                    .collect(),
            },
            ProblemKind::Wfg3 => UtilitySpec::SoftMinExponential { theta: 4.0 },
            ProblemKind::CarCab => UtilitySpec::PiecewiseLinearSum {
                pieces: default_car_cab_tables(),
            },
        }
    }

    /// Required objective count, if this utility fixes one.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            UtilitySpec::LinearSum | UtilitySpec::SoftMinExponential { .. } => None,
            UtilitySpec::CubicNormToIdeal { ideal } => Some(ideal.len()),
            UtilitySpec::PiecewiseLinearSum { pieces } => Some(pieces.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UtilitySpec::SoftMinExponential { theta } if !(*theta > 0.0 && theta.is_finite()) => {
                Err(Error::InvalidParameter(format!("soft-min temperature must be > 0, got {theta}")))
            }
            UtilitySpec::CubicNormToIdeal { ideal } => check_finite(ideal, "ideal"),
            UtilitySpec::PiecewiseLinearSum { pieces } => pieces.iter().try_for_each(|p| p.validate()),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            UtilitySpec::LinearSum => "linear-sum",
            UtilitySpec::CubicNormToIdeal { .. } => "cubic-norm-to-ideal",
            UtilitySpec::SoftMinExponential { .. } => "soft-min-exponential",
            UtilitySpec::PiecewiseLinearSum { .. } => "piecewise-linear-sum",
        }
    }
}

pub fn true_utility(spec: &UtilitySpec, y: &[f64]) -> Result<f64> {
    if let Some(m) = spec.dimension() {
        check_dim(m, y.len())?;
    }
    check_finite(y, "y")?;
    Ok(match spec {
        UtilitySpec::LinearSum => y.iter().sum(),
        UtilitySpec::CubicNormToIdeal { ideal } => {
            let s: f64 = ideal.iter().zip(y).map(|(z, v)| (z - v).powi(3)).sum();
            -s.cbrt()
        }
        UtilitySpec::SoftMinExponential { theta } => {
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = y.iter().map(|v| (-theta * (v - lo)).exp()).sum();
            lo - s.ln() / theta
        }
        UtilitySpec::PiecewiseLinearSum { pieces } => {
            pieces.iter().zip(y).map(|(h, &v)| h.eval(v)).sum()
        }
    })
}
