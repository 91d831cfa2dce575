//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a substring to run matching criteria only.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use elicit_core::acquisition::{
    generate_monotonicity_pairs, qeubo, AcquisitionConfig, CandidateSet, SearchDomain,
};
use elicit_core::dm::{calibrate_noise, respond, CalibrationConfig, DmConfig, NoiseMode};
use elicit_core::engine::experiment::ProblemEntry;
use elicit_core::engine::regret::{replay_trace, run_with_regret};
use elicit_core::engine::{
    estimate_optimum, run_experiment, Event, ExperimentConfig, Monotonicity, NoiseSetting, Session, VariantConfig,
};
use elicit_core::menu::{menu_objective, select_menu, MenuConfig};
use elicit_core::model::{
    likelihood, ElboProblem, GpHyperparams, InputSpace, Normalization, Origin, QueryPair, Response,
    UtilityPosterior,
};
use elicit_core::pareto::{approximate_pareto, Generator, ParetoSettings};
use elicit_core::problems::{
    evaluate_objectives, pareto_dominates, true_utility, CountingEvaluator, ProblemSpec, Sense, UtilitySpec,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cov(n: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05
}

/// Posterior whose inducing values at `points` are N(mean, cov).
fn posterior_at(points: &[Vec<f64>], mean: &[f64], cov: &DMatrix<f64>) -> UtilityPosterior {
    let dim = points[0].len();
    UtilityPosterior::from_moments(
        InputSpace::Objective,
        Normalization::identity(dim),
        points.to_vec(),
        GpHyperparams {
            lengthscales: vec![0.4; dim],
            signal_variance: 1.0,
            noise_level: 0.1,
        },
        &DVector::from_column_slice(mean),
        cov,
    )
    .expect("valid moments")
}

fn random_points(n: usize, dim: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| r.gen::<f64>()).collect()).collect()
}

fn random_posterior(n: usize, dim: usize, r: &mut ChaCha8Rng) -> (UtilityPosterior, Vec<Vec<f64>>, Vec<f64>, DMatrix<f64>) {
    let pts = random_points(n, dim, r);
    let mean: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let cov = random_cov(n, r);
    (posterior_at(&pts, &mean, &cov), pts, mean, cov)
}

/// E[max(X, Y)] for a bivariate normal.
fn bivariate_expected_max(m1: f64, m2: f64, v1: f64, v2: f64, c: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    let theta = (v1 + v2 - 2.0 * c).max(0.0).sqrt();
    if theta < 1e-12 {
        return m1.max(m2);
    }
    let a = (m1 - m2) / theta;
    m1 * n.cdf(a) + m2 * n.cdf(-a) + theta * n.pdf(a)
}

fn qeubo_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut within = 0;
    for case in 0..50 {
        let (post, pts, mean, cov) = random_posterior(6, 3, &mut r);
        let i = r.gen_range(0..6);
        let j = (i + r.gen_range(1..6)) % 6;
        let exact = bivariate_expected_max(mean[i], mean[j], cov[(i, i)], cov[(j, j)], cov[(i, j)]);
        let config = AcquisitionConfig {
            mc_samples: 4096,
            seed: case,
            ..Default::default()
        };
        let est = qeubo(&post, &QueryPair::new(pts[i].clone(), pts[j].clone(), Origin::Elicited), &config).unwrap();
        if (est.value - exact).abs() <= 3.0 * est.std_error {
            within += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        within >= 48 && secs < 10.0,
        format!("{within}/50 within 3 standard errors, {secs:.2} s"),
    )
}

fn menu_qeubo_consistency() -> Outcome {
    let mut r = rng(2);
    let mut equal = 0;
    for case in 0..100u64 {
        let dim = r.gen_range(1..=4);
        let (post, ..) = random_posterior(5, dim, &mut r);
        let a: Vec<f64> = (0..dim).map(|_| r.gen_range(-0.5..1.5)).collect();
        let b: Vec<f64> = (0..dim).map(|_| r.gen_range(-0.5..1.5)).collect();
        let samples = [256, 1024, 4096][r.gen_range(0..3)];
        let seed = r.gen();
        let acq = AcquisitionConfig {
            mc_samples: samples,
            seed,
            ..Default::default()
        };
        let menu = MenuConfig {
            mc_samples: samples,
            search: acq.clone(),
            ..Default::default()
        };
        let (first, second) = if case % 2 == 0 { (&a, &b) } else { (&b, &a) };
        let q = qeubo(&post, &QueryPair::new(first.clone(), second.clone(), Origin::Elicited), &acq).unwrap();
        let m = menu_objective(&post, &[a.clone(), b.clone()], &menu).unwrap();
        if q.value.to_bits() == m.value.to_bits() && q.std_error.to_bits() == m.std_error.to_bits() {
            equal += 1;
        }
    }
    outcome(equal == 100, format!("{equal}/100 bit-identical"))
}

/// Expected gain of the subset's maximum over the minimum of all candidates,
/// estimated from joint samples (rows). Zero on the empty set, monotone and
/// submodular on every sample path.
fn gain(samples: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let mut total = 0.0;
    for row in samples.row_iter() {
        let floor = row.min();
        let best = subset.iter().map(|&i| row[i]).fold(floor, f64::max);
        total += best - floor;
    }
    total / samples.nrows() as f64
}

fn greedy_guarantee() -> Outcome {
    let bound = 1.0 - (-1.0f64).exp();
    let mut r = rng(3);
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    let problem = ProblemSpec::dtlz2(2, 2).unwrap();
    let eval = CountingEvaluator::new(&problem);
    for case in 0..30u64 {
        let n = r.gen_range(4..=12);
        let (post, pts, ..) = random_posterior(n, 2, &mut r);
        let set = CandidateSet::new(pts.clone(), pts.clone()).unwrap();
        let config = MenuConfig::default().with_seed(case);
        let menu = select_menu(&post, &eval, SearchDomain::Candidates(&set), 3, &config).unwrap();
        let chosen = menu.candidates.unwrap();
        let samples = post.sample_utility(&pts, 20_000, 1000 + case).unwrap();
        let mut opt = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    opt = opt.max(gain(&samples, &[i, j, k]));
                }
            }
        }
        let g = gain(&samples, &chosen);
        worst = worst.min(g / opt);
        if g >= bound * opt {
            ok += 1;
        }
    }
    outcome(
        ok == 30,
        format!("{ok}/30 at or above (1-1/e) of the brute-force optimum, worst ratio {worst:.4}"),
    )
}

fn elbo_gradients() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..20 {
        let dim = r.gen_range(1..=3);
        let n_points = r.gen_range(2..=5);
        let points = random_points(n_points, dim, &mut r);
        let mut inducing = points.clone();
        while inducing.len() < 6 {
            inducing.push((0..dim).map(|_| r.gen::<f64>()).collect());
        }
        let pairs: Vec<(usize, usize)> = (0..r.gen_range(1..=6))
            .map(|_| {
                let w = r.gen_range(0..n_points);
                (w, (w + r.gen_range(1..n_points)) % n_points)
            })
            .collect();
        let problem = ElboProblem::new(inducing, points, pairs, 1e-6, (1e-3, 10.0)).unwrap();
        let hyper = GpHyperparams {
            lengthscales: (0..dim).map(|_| r.gen_range(0.2..1.5)).collect(),
            signal_variance: r.gen_range(0.5..2.0),
            noise_level: r.gen_range(0.05..1.0),
        };
        let mut params = problem.initial_params(&hyper);
        let n = params.mean.len();
        for i in 0..n {
            params.mean[i] = r.gen_range(-1.0..1.0);
            for j in 0..=i {
                params.sqrt_raw[(i, j)] = r.gen_range(-0.5..0.5);
            }
        }
        let (_, grad) = problem.value_and_grad(&params).unwrap();
        let g = grad.to_vec();
        let x0 = params.to_vec();
        let mut p = params.clone();
        let mut f = |x: &[f64]| {
            p.assign(x);
            problem.value(&p).unwrap()
        };
        for k in 0..x0.len() {
            let mut central = |h: f64| {
                let mut x = x0.clone();
                x[k] = x0[k] + h;
                let up = f(&x);
                x[k] = x0[k] - h;
                (up - f(&x)) / (2.0 * h)
            };
            let (d1, d2) = (central(1e-4), central(5e-5));
            let fd = (4.0 * d2 - d1) / 3.0;
            let scale = fd.abs().max(g[k].abs());
            let err = if scale < 1e-8 { 0.0 } else { (fd - g[k]).abs() / scale };
            worst = worst.max(err);
            checked += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!("{checked} partial derivatives on 20 instances, max relative error {worst:.2e}"),
    )
}

fn likelihood_checks() -> Outcome {
    let grid: Vec<f64> = (0..40).map(|i| -2.0 + 4.0 * i as f64 / 39.0).collect();
    let other: Vec<f64> = (0..25).map(|i| -2.0 + 4.0 * i as f64 / 24.0).collect();
    let mut max_dev = 0.0f64;
    let mut argmax_ok = 0;
    let mut total = 0;
    for &u1 in &grid {
        for &u2 in &other {
            total += 1;
            for lambda in [1e-3, 0.1, 1.0, 10.0] {
                let s = likelihood(u1, u2, lambda, Response::First).unwrap()
                    + likelihood(u1, u2, lambda, Response::Second).unwrap();
                max_dev = max_dev.max((s - 1.0).abs());
            }
            let p = likelihood(u1, u2, 1e-12, Response::First).unwrap();
            let expect = if u1 > u2 {
                1.0
            } else if u1 < u2 {
                0.0
            } else {
                0.5
            };
            if p == expect {
                argmax_ok += 1;
            }
        }
    }
    outcome(
        max_dev <= f64::EPSILON && argmax_ok == total,
        format!("{total} utility pairs, max |P1+P2-1| = {max_dev:.1e}, argmax recovered in {argmax_ok}/{total} at lambda=1e-12"),
    )
}

fn monotonicity_pairs() -> Outcome {
    let problem = ProblemSpec::dtlz7(5, 3).unwrap();
    let mut r = rng(6);
    let seen: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let u: Vec<f64> = (0..problem.d).map(|_| r.gen()).collect();
            evaluate_objectives(&problem, &problem.from_unit(&u)).unwrap()
        })
        .collect();
    let lo: Vec<f64> = (0..3).map(|i| seen.iter().map(|y| y[i]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..3).map(|i| seen.iter().map(|y| y[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let delta = 2.0;
    let pairs = generate_monotonicity_pairs(&seen, 10_000, delta, 17).unwrap();
    let orient = [Sense::Maximize; 3];
    let mut dominated = 0;
    let mut in_box = 0;
    for p in &pairs {
        if pareto_dominates(&p.first, &p.second, &orient).unwrap() {
            dominated += 1;
        }
        let inside = [&p.first, &p.second].iter().all(|y| {
            y.iter().enumerate().all(|(i, v)| {
                let z = (v - lo[i]) / (hi[i] - lo[i]);
                (-delta - 1e-12..=1.0 + delta + 1e-12).contains(&z)
            })
        });
        if inside {
            in_box += 1;
        }
    }
    let virtual_ok = pairs.iter().all(|p| p.origin == Origin::VirtualMonotonicity);
    let v = VariantConfig {
        budget: 1,
        monotonicity: Monotonicity::On { count: 64, delta: 2.0 },
        ..cheap_variant("int-obj")
    };
    let dm = DmConfig {
        utility: UtilitySpec::LinearSum,
        noise: NoiseMode::None,
        seed: 0,
    };
    let mut s = Session::create(problem, v, 0, Some(dm), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    let per_refit: Vec<usize> = s
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Refit { virtual_pairs, .. } => Some(*virtual_pairs),
            _ => None,
        })
        .collect();
    let session_ok = per_refit.iter().all(|&n| n == 64) && s.dataset().len() == 12 + 1 + 64;
    outcome(
        dominated == 10_000 && in_box == 10_000 && virtual_ok && session_ok,
        format!(
            "{dominated}/10000 dominating, {in_box}/10000 within [-2, 3], session refits carry {per_refit:?} virtual pairs"
        ),
    )
}

/// Error rate of the simulated decision-maker on near-optimal pairs drawn
/// independently of the calibration sample.
fn empirical_error_rate(problem: &ProblemSpec, utility: &UtilitySpec, lambda: f64) -> f64 {
    let mut r = rng(77);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..100_000)
        .map(|_| {
            let u: Vec<f64> = (0..problem.d).map(|_| r.gen()).collect();
            let y = evaluate_objectives(problem, &problem.from_unit(&u)).unwrap();
            (true_utility(utility, &y).unwrap(), y)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(1000);
    let dm = DmConfig {
        utility: utility.clone(),
        noise: NoiseMode::Logistic { lambda },
        seed: 5,
    };
    let n = 40_000;
    let mut errors = 0;
    for call in 0..n {
        let i = r.gen_range(0..scored.len());
        let j = (i + r.gen_range(1..scored.len())) % scored.len();
        let (a, b) = (&scored[i], &scored[j]);
        let picked_first = respond(&dm, &a.1, &b.1, call).unwrap() == Response::First;
        if picked_first != (a.0 >= b.0) {
            errors += 1;
        }
    }
    errors as f64 / n as f64
}

fn noise_calibration() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for problem in [ProblemSpec::dtlz7(5, 3).unwrap(), ProblemSpec::dtlz2(9, 6).unwrap()] {
        let utility = UtilitySpec::paired_with(&problem);
        for target in [0.15, 0.30] {
            let c = calibrate_noise(&problem, &utility, target, &CalibrationConfig::default(), 0).unwrap();
            let rate = empirical_error_rate(&problem, &utility, c.lambda);
            pass &= (rate - target).abs() <= 0.03;
            lines.push(format!("{} {target:.2}->{rate:.3} (lambda {:.3e})", problem.name(), c.lambda));
        }
    }
    outcome(pass, lines.join(", "))
}

fn nsga_sanity() -> Outcome {
    let start = Instant::now();
    let problem = ProblemSpec::dtlz2(9, 3).unwrap();
    let settings = ParetoSettings {
        algorithm: Generator::Nsga2,
        population: 200,
        generations: 500,
    };
    let approx = approximate_pareto(&problem, &settings, 0).unwrap();
    let err = approx
        .objectives
        .iter()
        .map(|y| (y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs())
        .sum::<f64>()
        / approx.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err <= 0.05 && secs < 300.0,
        format!("{} points, mean |sum f^2 - 1| = {err:.4}, {secs:.1} s", approx.len()),
    )
}

fn cheap_variant(label: &str) -> VariantConfig {
    let search = AcquisitionConfig {
        mc_samples: 64,
        final_mc_samples: 256,
        restarts: 2,
        eval_budget: 200,
        ..Default::default()
    };
    VariantConfig {
        acquisition: search.clone(),
        menu: MenuConfig {
            mc_samples: 1024,
            search,
            ..Default::default()
        },
        ..VariantConfig::from_label(label).unwrap()
    }
}

fn mean_regret(summary: &elicit_core::engine::ExperimentSummary, variant: &str, n: usize) -> f64 {
    let v: Vec<f64> = summary
        .replications
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.trace.records.iter().find(|rec| rec.n == n).unwrap().regret(1).unwrap())
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn desk_scale_trend(out: &Path) -> Outcome {
    let start = Instant::now();
    let variants: Vec<VariantConfig> = ["int-obj", "int-obj-random"]
        .iter()
        .map(|l| VariantConfig {
            budget: 50,
            seeds: (0..20).collect(),
            ..VariantConfig::from_label(l).unwrap()
        })
        .collect();
    let mut config = ExperimentConfig::new(
        vec![ProblemEntry {
            problem: ProblemSpec::dtlz7(5, 3).unwrap(),
            utility: Some(UtilitySpec::LinearSum),
        }],
        variants,
        out.to_path_buf(),
    );
    config.noise = NoiseSetting::None;
    let summary = match run_experiment(&config) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("batch failed: {e}")),
    };
    if !summary.failures.is_empty() || summary.replications.len() != 40 {
        return outcome(false, format!("{} failed replications", summary.failures.len()));
    }
    let (r0, r50) = (mean_regret(&summary, "int-obj", 0), mean_regret(&summary, "int-obj", 50));
    let random50 = mean_regret(&summary, "int-obj-random", 50);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r50 < 0.5 * r0 && r50 < random50 && secs < 7200.0,
        format!(
            "mean regret n=0 {r0:.4}, n=50 {r50:.4} (ratio {:.4}), random baseline n=50 {random50:.4}, {:.0} s",
            r50 / r0,
            secs
        ),
    )
}

fn menu_size_monotonicity(logs: &Path) -> Outcome {
    let problem = ProblemSpec::dtlz2(9, 6).unwrap();
    let utility = UtilitySpec::paired_with(&problem);
    let truth = estimate_optimum(&problem, &utility, 1_000_000, 0).unwrap();
    let mut ok = 0;
    let mut records = 0;
    for seed in 0..10 {
        let v = VariantConfig {
            budget: 10,
            menu_k: vec![1, 4, 16],
            ..VariantConfig::from_label("int-obj").unwrap()
        };
        let dm = DmConfig {
            utility: utility.clone(),
            noise: NoiseMode::None,
            seed,
        };
        let mut s = Session::create(problem.clone(), v, seed, Some(dm), None).unwrap();
        let trace = run_with_regret(&mut s, &truth, &utility, false).unwrap();
        s.save_log(&logs.join(format!("dtlz2-menu-seed{seed}.ndjson"))).unwrap();
        let nested = trace.records.iter().all(|r| {
            let (a, b, c) = (r.regret(1).unwrap(), r.regret(4).unwrap(), r.regret(16).unwrap());
            c <= b && b <= a
        });
        records += trace.records.len();
        if nested {
            ok += 1;
        }
    }
    outcome(
        ok == 10,
        format!("{ok}/10 sessions with regret k=16 <= k=4 <= k=1 at all {records} checkpoints"),
    )
}

/// Sessions exercising every variant family, with menus in the log.
fn special_sessions(dir: &Path) -> Vec<PathBuf> {
    let problem = ProblemSpec::dtlz7(5, 3).unwrap();
    let approx = approximate_pareto(
        &problem,
        &ParetoSettings {
            algorithm: Generator::Nsga2,
            population: 60,
            generations: 40,
        },
        0,
    )
    .unwrap();
    let mut paths = Vec::new();
    let variants = [
        ("int-dec", Monotonicity::Off, NoiseMode::None),
        ("post-obj", Monotonicity::On { count: 64, delta: 2.0 }, NoiseMode::Logistic { lambda: 0.05 }),
        ("post-dec", Monotonicity::Off, NoiseMode::Logistic { lambda: 0.05 }),
        ("int-obj", Monotonicity::On { count: 64, delta: 2.0 }, NoiseMode::Logistic { lambda: 0.05 }),
    ];
    for (i, (label, mono, noise)) in variants.into_iter().enumerate() {
        let v = VariantConfig {
            budget: 4,
            monotonicity: mono,
            ..cheap_variant(label)
        };
        let dm = DmConfig {
            utility: UtilitySpec::LinearSum,
            noise,
            seed: i as u64,
        };
        let pareto = v.interaction == elicit_core::engine::Interaction::APosteriori;
        let mut s = Session::create(problem.clone(), v, 40 + i as u64, Some(dm), pareto.then(|| approx.clone())).unwrap();
        s.run_simulated(|s| {
            let _ = s;
            Ok(())
        })
        .unwrap();
        s.record_menu(1).unwrap();
        s.record_menu(3).unwrap();
        let path = dir.join(format!("special-{label}-{i}.ndjson"));
        s.save_log(&path).unwrap();
        paths.push(path);
    }
    paths
}

fn determinism(logs: &[PathBuf]) -> Outcome {
    let mut ok = 0;
    let mut failures = Vec::new();
    for path in logs {
        let check = || -> Result<(), String> {
            let original = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            let events = elicit_core::engine::session::read_events(original.as_bytes()).map_err(|e| e.to_string())?;
            let replayed = Session::from_events(events.clone(), true).map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            replayed.write_log(&mut buf).map_err(|e| e.to_string())?;
            if buf != original.as_bytes() {
                return Err("log differs after replay".into());
            }
            let twice = Session::from_events(events.clone(), false).map_err(|e| e.to_string())?;
            let (a, b) = (replayed.posterior().unwrap(), twice.posterior().unwrap());
            if a.hyperparams() != b.hyperparams() || a.whitened_mean() != b.whitened_mean() {
                return Err("posterior differs between replays".into());
            }
            if let Some(dm) = replayed.dm() {
                let truth = elicit_core::engine::GroundTruth {
                    problem: replayed.problem().name(),
                    utility: dm.utility.clone(),
                    value: 0.0,
                    argmax: Vec::new(),
                    evaluations: 0,
                    method: "fixed".into(),
                    front_value: None,
                };
                let t1 = replay_trace(events.clone(), &truth, &dm.utility).map_err(|e| e.to_string())?;
                let t2 = replay_trace(events, &truth, &dm.utility).map_err(|e| e.to_string())?;
                let bits = |t: &elicit_core::engine::RegretTrace| -> Vec<u64> {
                    t.records.iter().flat_map(|r| r.regrets.iter().map(|m| m.regret.to_bits())).collect()
                };
                if bits(&t1) != bits(&t2) {
                    return Err("regret trace differs between replays".into());
                }
            }
            Ok(())
        };
        match check() {
            Ok(()) => ok += 1,
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{ok}/{} logs replay with identical queries, refits and menus", logs.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let dir = tempfile::tempdir().expect("temp dir");
    let trend_dir = dir.path().join("trend");
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(name) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        results.push((name, o, elapsed));
    };

    run("qeubo-oracle", &mut qeubo_oracle);
    run("menu-qeubo-consistency", &mut menu_qeubo_consistency);
    run("greedy-guarantee", &mut greedy_guarantee);
    run("elbo-gradients", &mut elbo_gradients);
    run("likelihood", &mut likelihood_checks);
    run("monotonicity-pairs", &mut monotonicity_pairs);
    run("noise-calibration", &mut noise_calibration);
    run("nsga-sanity", &mut nsga_sanity);
    run("desk-scale-trend", &mut || desk_scale_trend(&trend_dir));
    run("menu-size-monotonicity", &mut || menu_size_monotonicity(dir.path()));
    run("determinism", &mut || {
        let mut logs = special_sessions(dir.path());
        for seed in [0, 1] {
            logs.push(dir.path().join(format!("dtlz2-menu-seed{seed}.ndjson")));
        }
        for variant in ["int-obj", "int-obj-random"] {
            logs.push(trend_dir.join(format!("sessions/dtlz7-5-3/{variant}/seed0.ndjson")));
        }
        logs.retain(|p| p.exists());
        logs.shuffle(&mut rng(9));
        determinism(&logs)
    });

    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("{} criteria, {} passed, {failed} failed", results.len(), results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
