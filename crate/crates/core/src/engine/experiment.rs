//! Batches of simulated sessions and their CSV outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::regret::{run_with_regret, GroundTruthCache, RegretTrace};
use super::session::Session;
use super::{Interaction, VariantConfig};
use crate::dm::{CalibrationCache, CalibrationConfig, DmConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::pareto::{approximate_pareto, ParetoApproximation, ParetoSettings};
use crate::problems::{ProblemSpec, UtilitySpec};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum NoiseSetting {
    None,
    /// Logistic noise calibrated to this error rate among near-optimal pairs.
    ErrorRate { target: f64 },
    /// Logistic noise with a fixed λ.
    Lambda { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEntry {
    pub problem: ProblemSpec,
    /// Defaults to the utility paired with the problem.
    #[serde(default)]
    pub utility: Option<UtilitySpec>,
}

impl ProblemEntry {
    pub fn utility(&self) -> UtilitySpec {
        self.utility.clone().unwrap_or_else(|| UtilitySpec::paired_with(&self.problem))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problems: Vec<ProblemEntry>,
    pub variants: Vec<VariantConfig>,
    #[serde(default = "default_noise")]
    pub noise: NoiseSetting,
    pub out_dir: PathBuf,
    /// Calibrations, optima and Pareto sets are cached here; defaults to
    /// `<out_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Wall-clock columns make outputs differ between identical runs.
    #[serde(default = "default_true")]
    pub record_walltime: bool,
    #[serde(default = "default_truth_budget")]
    pub ground_truth_budget: usize,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    /// Defaults to the standard settings for the objective count.
    #[serde(default)]
    pub pareto: Option<ParetoSettings>,
    /// Externally produced Pareto sets by problem name.
    #[serde(default)]
    pub pareto_files: BTreeMap<String, PathBuf>,
    #[serde(default = "default_true")]
    pub write_session_logs: bool,
}

fn default_noise() -> NoiseSetting {
    NoiseSetting::None
}

fn default_true() -> bool {
    true
}

fn default_truth_budget() -> usize {
    1_000_000
}

impl ExperimentConfig {
    pub fn new(problems: Vec<ProblemEntry>, variants: Vec<VariantConfig>, out_dir: PathBuf) -> Self {
        Self {
            problems,
            variants,
            noise: NoiseSetting::None,
            out_dir,
            cache_dir: None,
            record_walltime: true,
            ground_truth_budget: default_truth_budget(),
            calibration: CalibrationConfig::default(),
            pareto: None,
            pareto_files: BTreeMap::new(),
            write_session_logs: true,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.problems.is_empty() || self.variants.is_empty() {
            return Err(Error::InvalidParameter("a batch needs at least one problem and one variant".into()));
        }
        for v in &self.variants {
            v.validate()?;
            if v.seeds.is_empty() {
                return Err(Error::InvalidParameter(format!("variant {} has no seeds", v.label())));
            }
        }
        for p in &self.problems {
            p.utility().validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub problem: String,
    pub variant: String,
    pub seed: u64,
    pub trace: RegretTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub problem: String,
    pub variant: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub replications: Vec<Replication>,
    pub failures: Vec<Failure>,
    pub files: Vec<PathBuf>,
}

/// Run every (problem, variant, seed) replication and write:
/// `regret_long.csv` (one row per seed, interaction and menu size, then
/// `mean` and `stderr` aggregate rows), `summary_<problem>.csv` with mean
/// regret and standard error per variant, `failures.csv`, and optionally
/// one session log per replication. Failed replications are reported and
/// the batch continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let cache = config.cache_dir();
    std::fs::create_dir_all(&cache)?;
    let mut truths = GroundTruthCache::open(cache.join("ground_truth.json"))?;
    let mut calibrations = CalibrationCache::open(cache.join("calibration.json"))?;
    let mut summary = ExperimentSummary::default();

    for entry in &config.problems {
        let problem = &entry.problem;
        let utility = entry.utility();
        let truth = truths.get_or_estimate(problem, &utility, config.ground_truth_budget, 0)?;
        let noise = match config.noise {
            NoiseSetting::None => NoiseMode::None,
            NoiseSetting::Lambda { lambda } => NoiseMode::Logistic { lambda },
            NoiseSetting::ErrorRate { target } => NoiseMode::Logistic {
                lambda: calibrations
                    .get_or_calibrate(problem, &utility, target, &config.calibration, 0)?
                    .lambda,
            },
        };
        let needs_pareto = config.variants.iter().any(|v| v.interaction == Interaction::APosteriori);
        let pareto = if needs_pareto {
            Some(pareto_for(config, problem, &cache)?)
        } else {
            None
        };
        for variant in &config.variants {
            for &seed in &variant.seeds {
                let label = variant.label();
                let dm = DmConfig {
                    utility: utility.clone(),
                    noise,
                    seed: seed::derive(seed, "dm", 0),
                };
                let result = (|| -> Result<RegretTrace> {
                    let mut session = Session::create(problem.clone(), variant.clone(), seed, Some(dm), pareto.clone())?;
                    let trace = run_with_regret(&mut session, &truth, &utility, config.record_walltime)?;
                    if config.write_session_logs {
                        let dir = config.out_dir.join("sessions").join(problem.name()).join(&label);
                        std::fs::create_dir_all(&dir)?;
                        session.save_log(&dir.join(format!("seed{seed}.ndjson")))?;
                    }
                    Ok(trace)
                })();
                match result {
                    Ok(trace) => summary.replications.push(Replication {
                        problem: problem.name(),
                        variant: label,
                        seed,
                        trace,
                    }),
                    Err(e) => {
                        log::error!("{} {label} seed {seed} failed: {e}", problem.name());
                        summary.failures.push(Failure {
                            problem: problem.name(),
                            variant: label,
                            seed,
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    summary.files = write_outputs(config, &summary)?;
    Ok(summary)
}

fn pareto_for(config: &ExperimentConfig, problem: &ProblemSpec, cache: &Path) -> Result<ParetoApproximation> {
    if let Some(path) = config.pareto_files.get(&problem.name()) {
        return ParetoApproximation::load(problem, path);
    }
    let settings = config.pareto.clone().unwrap_or_else(|| ParetoSettings::standard(problem.m));
    let path = cache.join(format!(
        "pareto_{}_{}_{}x{}.csv",
        problem.name(),
        settings.algorithm,
        settings.population,
        settings.generations
    ));
    if path.exists() {
        return ParetoApproximation::load(problem, &path);
    }
    let approx = approximate_pareto(problem, &settings, 0)?;
    approx.save(problem, &path)?;
    Ok(approx)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type GroupKey = (String, String, usize, usize);

fn write_outputs(config: &ExperimentConfig, summary: &ExperimentSummary) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let long_path = config.out_dir.join("regret_long.csv");
    let mut long = csv::Writer::from_path(&long_path)?;
    long.write_record(["problem", "variant", "seed", "n", "k", "regret", "walltime_ms"])?;
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<GroupKey> = Vec::new();
    for rep in &summary.replications {
        for rec in &rep.trace.records {
            for r in &rec.regrets {
                long.write_record([
                    rep.problem.clone(),
                    rep.variant.clone(),
                    rep.seed.to_string(),
                    rec.n.to_string(),
                    r.k.to_string(),
                    format!("{:?}", r.regret),
                    rec.walltime_ms.map(|w| w.to_string()).unwrap_or_default(),
                ])?;
                let key = (rep.problem.clone(), rep.variant.clone(), rec.n, r.k);
                let g = groups.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    (Vec::new(), Vec::new())
                });
                g.0.push(r.regret);
                if let Some(w) = rec.walltime_ms {
                    g.1.push(w as f64);
                }
            }
        }
    }
    for (label, pick) in [("mean", 0), ("stderr", 1)] {
        for key in &order {
            let (regrets, walls) = &groups[key];
            let (m, se) = mean_and_stderr(regrets);
            let wall = if walls.is_empty() {
                String::new()
            } else {
                let (wm, wse) = mean_and_stderr(walls);
                format!("{:?}", if pick == 0 { wm } else { wse })
            };
            long.write_record([
                key.0.clone(),
                key.1.clone(),
                label.to_string(),
                key.2.to_string(),
                key.3.to_string(),
                format!("{:?}", if pick == 0 { m } else { se }),
                wall,
            ])?;
        }
    }
    long.flush()?;
    files.push(long_path);

    let problems: Vec<String> = order.iter().map(|k| k.0.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for problem in problems {
        let path = config.out_dir.join(format!("summary_{problem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["problem", "variant", "n", "k", "mean_regret", "std_error", "replications"])?;
        for key in order.iter().filter(|k| k.0 == problem) {
            let (regrets, _) = &groups[key];
            let (m, se) = mean_and_stderr(regrets);
            w.write_record([
                key.0.clone(),
                key.1.clone(),
                key.2.to_string(),
                key.3.to_string(),
                format!("{m:?}"),
                format!("{se:?}"),
                regrets.len().to_string(),
            ])?;
        }
        w.flush()?;
        files.push(path);
    }

    let fail_path = config.out_dir.join("failures.csv");
    let mut w = csv::Writer::from_path(&fail_path)?;
    w.write_record(["problem", "variant", "seed", "error"])?;
    for f in &summary.failures {
        w.write_record([f.problem.clone(), f.variant.clone(), f.seed.to_string(), f.error.clone()])?;
    }
    w.flush()?;
    files.push(fail_path);
    Ok(files)
}
