//! Simulated decision-makers answering pairwise queries from a known utility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{likelihood, sigmoid, Response};
use crate::problems::{evaluate_objectives, true_utility, ProblemSpec, UtilitySpec};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum NoiseMode {
    None,
    Logistic { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmConfig {
    pub utility: UtilitySpec,
    pub noise: NoiseMode,
    pub seed: u64,
}

impl DmConfig {
    pub fn noise_free(utility: UtilitySpec, seed: u64) -> Self {
        Self {
            utility,
            noise: NoiseMode::None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.utility.validate()?;
        if let NoiseMode::Logistic { lambda } = self.noise {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidParameter(format!("dm noise lambda must be > 0, got {lambda}")));
            }
        }
        Ok(())
    }
}

/// Answer the `call`-th query. Noise-free answers pick the higher utility
/// (ties go to the first option); logistic answers draw from the choice
/// likelihood with a stream keyed by `(seed, call)`.
pub fn respond(dm: &DmConfig, y1: &[f64], y2: &[f64], call: u64) -> Result<Response> {
    let u1 = true_utility(&dm.utility, y1)?;
    let u2 = true_utility(&dm.utility, y2)?;
    if !u1.is_finite() || !u2.is_finite() {
        return Err(Error::NonFinite(format!("utility values {u1}, {u2}")));
    }
    match dm.noise {
        NoiseMode::None => Ok(if u1 >= u2 { Response::First } else { Response::Second }),
        NoiseMode::Logistic { lambda } => {
            let p1 = likelihood(u1, u2, lambda, Response::First)?;
            let draw: f64 = seed::rng(dm.seed, "dm-response", call).gen();
            Ok(if draw < p1 { Response::First } else { Response::Second })
        }
    }
}

/// A decision-maker that numbers its own calls.
#[derive(Debug, Clone)]
pub struct SimulatedDm {
    config: DmConfig,
    calls: u64,
}

impl SimulatedDm {
    pub fn new(config: DmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, calls: 0 })
    }

    pub fn config(&self) -> &DmConfig {
        &self.config
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn respond(&mut self, y1: &[f64], y2: &[f64]) -> Result<Response> {
        let r = respond(&self.config, y1, y2, self.calls)?;
        self.calls += 1;
        Ok(r)
    }
}

/// Expected error rate of a logistic responder: the mean over utility gaps
/// of the probability of picking the worse option.
pub fn expected_error_rate(gaps: &[f64], lambda: f64) -> f64 {
    gaps.iter().map(|g| sigmoid(-g.abs() / lambda)).sum::<f64>() / gaps.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Uniform points drawn from the decision box.
    pub n_probe: usize,
    /// Fraction of probe points kept by utility.
    pub elite_fraction: f64,
    /// Ordered pairs drawn from the elite subset.
    pub n_pairs: usize,
    /// Search interval for λ, relative to the elite utility range.
    pub relative_bounds: (f64, f64),
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_probe: 100_000,
            elite_fraction: 0.01,
            n_pairs: 100_000,
            relative_bounds: (1e-9, 1e6),
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    pub error_rate: f64,
    pub elite_size: usize,
    /// The target was below what any λ in range can reach.
    pub at_lower_bound: bool,
}

/// Utilities of the elite probe points, highest first.
pub fn elite_utilities(
    problem: &ProblemSpec,
    utility: &UtilitySpec,
    n_probe: usize,
    elite_fraction: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = seed::rng(seed, "calibration-probe", 0);
    let mut utils = Vec::with_capacity(n_probe);
    for _ in 0..n_probe {
        let u: Vec<f64> = (0..problem.d).map(|_| rng.gen::<f64>()).collect();
        let y = evaluate_objectives(problem, &problem.from_unit(&u))?;
        utils.push(true_utility(utility, &y)?);
    }
    utils.sort_by(|a, b| b.total_cmp(a));
    let keep = ((n_probe as f64 * elite_fraction).ceil() as usize).clamp(2, n_probe);
    utils.truncate(keep);
    Ok(utils)
}

/// Utility gaps of `n_pairs` random ordered pairs of distinct elite points.
pub fn elite_gaps(elite: &[f64], n_pairs: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, "calibration-pairs", 0);
    let n = elite.len();
    (0..n_pairs)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let j = (i + rng.gen_range(1..n)) % n;
            elite[i] - elite[j]
        })
        .collect()
}

/// Find the logistic noise level at which a simulated decision-maker errs on
/// a `target` fraction of comparisons among near-optimal points.
pub fn calibrate_noise(
    problem: &ProblemSpec,
    utility: &UtilitySpec,
    target: f64,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<Calibration> {
    if !(target < 0.5) || target.is_nan() {
        return Err(Error::InvalidParameter(format!("target error rate must be below 0.5, got {target}")));
    }
    if config.n_probe < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least 10^4 probe points, got {}",
            config.n_probe
        )));
    }
    let elite = elite_utilities(problem, utility, config.n_probe, config.elite_fraction, seed)?;
    let range = elite[0] - elite[elite.len() - 1];
    if !(range > 0.0) {
        return Err(Error::DegenerateUtility(format!(
            "all {} elite utilities equal {}",
            elite.len(),
            elite[0]
        )));
    }
    let gaps = elite_gaps(&elite, config.n_pairs, seed);
    let (mut lo, mut hi) = (range * config.relative_bounds.0, range * config.relative_bounds.1);
    let floor = expected_error_rate(&gaps, lo);
    if target <= floor {
        log::warn!("target error rate {target} is below the reachable floor {floor:.3e}; using the lower λ bound");
        return Ok(Calibration {
            lambda: lo,
            error_rate: floor,
            elite_size: elite.len(),
            at_lower_bound: true,
        });
    }
    if expected_error_rate(&gaps, hi) < target {
        return Err(Error::InvalidParameter(format!("target error rate {target} not reachable")));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if expected_error_rate(&gaps, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
    }
    let lambda = (lo * hi).sqrt();
    let error_rate = expected_error_rate(&gaps, lambda);
    if (error_rate - target).abs() > config.tolerance {
        return Err(Error::InvalidParameter(format!(
            "calibration reached error rate {error_rate}, target {target}"
        )));
    }
    Ok(Calibration {
        lambda,
        error_rate,
        elite_size: elite.len(),
        at_lower_bound: false,
    })
}

/// On-disk table of calibrated noise levels keyed by problem, utility,
/// target, probe settings and seed.
#[derive(Debug)]
pub struct CalibrationCache {
    path: PathBuf,
    entries: BTreeMap<String, Calibration>,
}

impl CalibrationCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { path, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn key(problem: &ProblemSpec, utility: &UtilitySpec, target: f64, config: &CalibrationConfig, seed: u64) -> Result<String> {
        Ok(format!(
            "{}|{}|{target:?}|{}|{}|{}|{seed}",
            problem.name(),
            serde_json::to_string(utility)?,
            config.n_probe,
            config.elite_fraction,
            config.n_pairs
        ))
    }

    pub fn get_or_calibrate(
        &mut self,
        problem: &ProblemSpec,
        utility: &UtilitySpec,
        target: f64,
        config: &CalibrationConfig,
        seed: u64,
    ) -> Result<Calibration> {
        let key = Self::key(problem, utility, target, config, seed)?;
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        let c = calibrate_noise(problem, utility, target, config, seed)?;
        self.entries.insert(key, c.clone());
        self.save()?;
        Ok(c)
    }

    fn save(&self) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.entries)?)?;
        std::fs::rename(tmp, &self.path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logistic(lambda: f64, seed: u64) -> DmConfig {
        DmConfig {
            utility: UtilitySpec::LinearSum,
            noise: NoiseMode::Logistic { lambda },
            seed,
        }
    }

    #[test]
    fn noise_free_picks_the_better_option() {
        let dm = DmConfig::noise_free(UtilitySpec::LinearSum, 0);
        for call in 0..50 {
            assert_eq!(respond(&dm, &[1.0, 0.5], &[0.2, 0.3], call).unwrap(), Response::First);
            assert_eq!(respond(&dm, &[0.0, 0.5], &[0.2, 0.4], call).unwrap(), Response::Second);
            assert_eq!(respond(&dm, &[0.3, 0.3], &[0.5, 0.1], call).unwrap(), Response::First);
        }
        assert!(respond(&dm, &[f64::NAN, 0.0], &[0.0, 0.0], 0).is_err());
    }

    fn first_rate(dm: &DmConfig, y1: &[f64], y2: &[f64]) -> f64 {
        let n = 10_000;
        (0..n).filter(|&c| respond(dm, y1, y2, c).unwrap() == Response::First).count() as f64 / n as f64
    }

    #[test]
    fn logistic_rates_follow_the_likelihood() {
        let dm = logistic(0.2, 7);
        assert!((first_rate(&dm, &[0.4, 0.1], &[0.2, 0.3]) - 0.5).abs() < 0.02);
        let gap = 0.2 * 3f64.ln();
        assert!((first_rate(&dm, &[gap, 0.0], &[0.0, 0.0]) - 0.75).abs() < 0.02);
    }

    #[test]
    fn responses_are_keyed_by_call_index() {
        let mut a = SimulatedDm::new(logistic(1.0, 3)).unwrap();
        let seq: Vec<Response> = (0..100).map(|_| a.respond(&[0.1], &[0.0]).unwrap()).collect();
        let again: Vec<Response> = (0..100).map(|c| respond(a.config(), &[0.1], &[0.0], c).unwrap()).collect();
        assert_eq!(seq, again);
        assert_eq!(a.calls(), 100);
        assert!(SimulatedDm::new(logistic(0.0, 0)).is_err());
    }

    proptest! {
        #[test]
        fn error_rate_increases_with_noise(gap in 1e-3f64..10.0, l1 in 1e-3f64..10.0, f in 1.01f64..10.0) {
            prop_assume!(gap / l1 < 600.0);
            prop_assert!(expected_error_rate(&[gap], l1 * f) > expected_error_rate(&[gap], l1));
        }
    }

    fn small() -> CalibrationConfig {
        CalibrationConfig {
            n_probe: 10_000,
            n_pairs: 20_000,
            ..Default::default()
        }
    }

    #[test]
    fn calibration_hits_targets_and_orders_them() {
        let p = ProblemSpec::dtlz7(5, 3).unwrap();
        let u = UtilitySpec::LinearSum;
        let c15 = calibrate_noise(&p, &u, 0.15, &small(), 1).unwrap();
        let c30 = calibrate_noise(&p, &u, 0.30, &small(), 1).unwrap();
        assert!((c15.error_rate - 0.15).abs() < 1e-3);
        assert!(c30.lambda > c15.lambda);
        assert_eq!(c15.elite_size, 100);

        // Re-simulate on fresh elite pairs.
        let elite = elite_utilities(&p, &u, 10_000, 0.01, 99).unwrap();
        let gaps = elite_gaps(&elite, 10_000, 99);
        let dm = logistic(c30.lambda, 5);
        let errors = gaps
            .iter()
            .enumerate()
            .filter(|(c, g)| {
                let r = respond(&dm, &[**g, 0.0, 0.0], &[0.0, 0.0, 0.0], *c as u64).unwrap();
                (**g > 0.0) != (r == Response::First)
            })
            .count();
        assert!((errors as f64 / gaps.len() as f64 - 0.30).abs() < 0.03);
    }

    #[test]
    fn zero_target_hits_the_lower_bound() {
        let p = ProblemSpec::dtlz7(5, 3).unwrap();
        let c = calibrate_noise(&p, &UtilitySpec::LinearSum, 0.0, &small(), 1).unwrap();
        assert!(c.at_lower_bound);
        assert!(calibrate_noise(&p, &UtilitySpec::LinearSum, 0.5, &small(), 1).is_err());
        let tiny = CalibrationConfig {
            n_probe: 100,
            ..small()
        };
        assert!(calibrate_noise(&p, &UtilitySpec::LinearSum, 0.15, &tiny, 1).is_err());
    }

    #[test]
    fn cache_persists_results() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibration.json");
        let p = ProblemSpec::dtlz7(5, 3).unwrap();
        let mut cache = CalibrationCache::open(&path).unwrap();
        let a = cache.get_or_calibrate(&p, &UtilitySpec::LinearSum, 0.15, &small(), 2).unwrap();
        let reopened = CalibrationCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        let mut reopened = reopened;
        assert_eq!(reopened.get_or_calibrate(&p, &UtilitySpec::LinearSum, 0.15, &small(), 2).unwrap(), a);
    }
}
