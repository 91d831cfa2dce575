use elicit_core::acquisition::{AcquisitionConfig, CandidateSet};
use elicit_core::dm::{DmConfig, NoiseMode};
use elicit_core::engine::session::{read_events, write_events};
use elicit_core::engine::{
    estimate_optimum, run_experiment, Event, ExperimentConfig, Monotonicity, NoiseSetting, QueryKind,
    QueryPolicy, Session, SessionStatus, VariantConfig,
};
use elicit_core::engine::experiment::ProblemEntry;
use elicit_core::engine::regret::{replay_trace, run_with_regret};
use elicit_core::menu::MenuConfig;
use elicit_core::model::Response;
use elicit_core::pareto::{approximate_pareto, Generator, ParetoSettings};
use elicit_core::problems::{ProblemSpec, UtilitySpec};

fn cheap(label: &str, budget: usize) -> VariantConfig {
    let search = AcquisitionConfig {
        mc_samples: 64,
        final_mc_samples: 256,
        restarts: 2,
        eval_budget: 150,
        ..Default::default()
    };
    VariantConfig {
        budget,
        acquisition: search.clone(),
        menu: MenuConfig {
            mc_samples: 512,
            search,
            ..Default::default()
        },
        ..VariantConfig::from_label(label).unwrap()
    }
}

fn dm(problem: &ProblemSpec, seed: u64) -> DmConfig {
    DmConfig {
        utility: UtilitySpec::paired_with(problem),
        noise: NoiseMode::None,
        seed,
    }
}

fn dtlz7() -> ProblemSpec {
    ProblemSpec::dtlz7(5, 3).unwrap()
}

fn event_json(events: &[Event]) -> Vec<String> {
    events.iter().map(|e| serde_json::to_string(e).unwrap()).collect()
}

#[test]
fn initial_design_has_two_d_plus_two_pairs() {
    let p = dtlz7();
    let s = Session::create(p.clone(), cheap("int-obj", 3), 1, Some(dm(&p, 1)), None).unwrap();
    assert_eq!(s.queries().len(), 12);
    assert!(s.queries().iter().all(|q| q.kind == QueryKind::Initial));
    assert_eq!(s.status(), SessionStatus::AwaitingResponse);
    assert!(s.posterior().is_none());
}

#[test]
fn zero_budget_finishes_after_initial_fit() {
    let p = dtlz7();
    let mut s = Session::create(p.clone(), cheap("int-obj", 0), 2, Some(dm(&p, 2)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    assert_eq!(s.status(), SessionStatus::Finished);
    assert_eq!(s.posterior_version(), 1);
    assert_eq!(s.interaction_index(), 0);
    assert!(s.next_query().is_err());
}

#[test]
fn sessions_are_deterministic_and_replay_exactly() {
    let p = dtlz7();
    let run = || {
        let mut s = Session::create(p.clone(), cheap("int-obj", 3), 7, Some(dm(&p, 7)), None).unwrap();
        s.run_simulated(|_| Ok(())).unwrap();
        s.record_menu(2).unwrap();
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(event_json(a.events()), event_json(b.events()));
    assert_eq!(a.interaction_index(), 3);
    assert_eq!(a.queries().len(), 15);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ndjson");
    a.save_log(&path).unwrap();
    let r = Session::load_log(&path, true).unwrap();
    assert_eq!(event_json(r.events()), event_json(a.events()));
    assert_eq!(r.status(), SessionStatus::Finished);
}

#[test]
fn replay_detects_tampering() {
    let p = dtlz7();
    let mut s = Session::create(p.clone(), cheap("int-obj", 1), 3, Some(dm(&p, 3)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    let mut events = s.events().to_vec();
    for e in &mut events {
        if let Event::Query { query } = e {
            query.decisions[0][0] = (query.decisions[0][0] + 0.5) % 1.0;
        }
    }
    assert!(Session::from_events(events.clone(), true).is_err());
    assert!(Session::from_events(events, false).is_ok());
}

#[test]
fn crash_after_response_recovers_by_refitting() {
    let p = dtlz7();
    let mut s = Session::create(p.clone(), cheap("int-obj", 2), 4, Some(dm(&p, 4)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    let events = s.events().to_vec();
    let last_response = events.iter().rposition(|e| matches!(e, Event::Response { .. })).unwrap();
    let mut buf = Vec::new();
    write_events(&mut buf, &events[..=last_response]).unwrap();
    buf.extend_from_slice(b"{\"type\":\"refit\",\"compar");
    let recovered = Session::from_events(read_events(&buf[..]).unwrap(), true).unwrap();
    assert_eq!(event_json(recovered.events()), event_json(&events));
    assert_eq!(recovered.status(), SessionStatus::Finished);
}

#[test]
fn responses_must_match_the_pending_query() {
    let p = dtlz7();
    let mut s = Session::create(p.clone(), cheap("int-obj", 2), 5, Some(dm(&p, 5)), None).unwrap();
    assert!(s.record_response(3, Response::First).is_err());
    assert!(s.next_query().is_err());
    s.record_response(0, Response::Second).unwrap();
    assert!(s.record_response(0, Response::Second).is_err());
    assert_eq!(s.pending_query().unwrap().seq, 1);
}

#[test]
fn a_posteriori_queries_come_from_the_pareto_set() {
    let p = dtlz7();
    let settings = ParetoSettings {
        algorithm: Generator::Nsga2,
        population: 40,
        generations: 30,
    };
    let approx = approximate_pareto(&p, &settings, 0).unwrap();
    let set: CandidateSet = approx.candidate_set();
    for label in ["post-obj", "post-dec"] {
        let mut s = Session::create(p.clone(), cheap(label, 3), 6, Some(dm(&p, 6)), Some(approx.clone())).unwrap();
        s.run_simulated(|_| Ok(())).unwrap();
        for q in s.queries().iter().filter(|q| q.kind == QueryKind::Elicited) {
            let idx = q.candidates.expect("finite-set query carries indices");
            for i in 0..2 {
                assert_eq!(q.decisions[i], set.decisions[idx[i]]);
                assert_eq!(q.objectives[i], set.objectives[idx[i]]);
            }
            assert_eq!(q.search_evaluations, 0);
        }
    }
}

#[test]
fn decision_space_search_does_not_evaluate_objectives() {
    let p = dtlz7();
    let mut s = Session::create(p.clone(), cheap("int-dec", 2), 8, Some(dm(&p, 8)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    for q in s.queries().iter().filter(|q| q.kind == QueryKind::Elicited) {
        assert_eq!(q.search_evaluations, 0);
    }
    let mut obj = Session::create(p.clone(), cheap("int-obj", 1), 8, Some(dm(&p, 8)), None).unwrap();
    obj.run_simulated(|_| Ok(())).unwrap();
    assert!(obj.queries().last().unwrap().search_evaluations > 0);
}

#[test]
fn monotonicity_pairs_are_added_before_every_refit() {
    let p = dtlz7();
    let variant = VariantConfig {
        monotonicity: Monotonicity::On { count: 64, delta: 2.0 },
        ..cheap("int-obj", 2)
    };
    let mut s = Session::create(p.clone(), variant, 9, Some(dm(&p, 9)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    let refits: Vec<usize> = s
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Refit { virtual_pairs, .. } => Some(*virtual_pairs),
            _ => None,
        })
        .collect();
    assert_eq!(refits, vec![64; 3]);
    assert!(VariantConfig {
        monotonicity: Monotonicity::On { count: 64, delta: 2.0 },
        ..cheap("int-dec", 2)
    }
    .validate()
    .is_err());
}

#[test]
fn larger_menus_never_have_more_regret() {
    let p = ProblemSpec::dtlz2(9, 6).unwrap();
    let u = UtilitySpec::paired_with(&p);
    let truth = estimate_optimum(&p, &u, 20_000, 0).unwrap();
    let variant = VariantConfig {
        menu_k: vec![1, 4, 16],
        ..cheap("int-obj", 2)
    };
    let mut s = Session::create(p.clone(), variant, 10, Some(dm(&p, 10)), None).unwrap();
    let trace = run_with_regret(&mut s, &truth, &u, false).unwrap();
    assert_eq!(trace.records.len(), 3);
    for r in &trace.records {
        let (r1, r4, r16) = (r.regret(1).unwrap(), r.regret(4).unwrap(), r.regret(16).unwrap());
        assert!(r16 <= r4 && r4 <= r1, "{r:?}");
        assert!(r16 >= -1e-6 * truth.value.abs().max(1.0), "{r:?}");
        assert!(r.walltime_ms.is_none());
    }
    let replayed = replay_trace(s.events().to_vec(), &truth, &u).unwrap();
    assert_eq!(replayed, trace);
}

#[test]
fn random_policy_spends_the_budget() {
    let p = dtlz7();
    let v = cheap("int-obj-random", 4);
    assert_eq!(v.query_policy, QueryPolicy::Random);
    let mut s = Session::create(p.clone(), v, 11, Some(dm(&p, 11)), None).unwrap();
    s.run_simulated(|_| Ok(())).unwrap();
    assert_eq!(s.interaction_index(), 4);
    assert!(s.queries().iter().all(|q| q.acquisition_value.is_none()));
}

#[test]
fn experiment_writes_long_and_summary_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = dtlz7();
    let mut variants = vec![cheap("int-obj", 1), cheap("int-obj-random", 1)];
    for v in &mut variants {
        v.seeds = vec![0, 1];
        v.menu_k = vec![1, 2];
    }
    let mut config = ExperimentConfig::new(
        vec![ProblemEntry {
            problem: p.clone(),
            utility: None,
        }],
        variants,
        dir.path().to_path_buf(),
    );
    config.ground_truth_budget = 5_000;
    config.record_walltime = false;
    config.noise = NoiseSetting::Lambda { lambda: 0.01 };
    let summary = run_experiment(&config).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    assert_eq!(summary.replications.len(), 4);

    let mut rd = csv::Reader::from_path(dir.path().join("regret_long.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    // 2 variants × 2 seeds × 2 refits × 2 menu sizes, then mean and stderr rows.
    assert_eq!(rows.len(), 16 + 8 + 8);
    assert!(rows.iter().all(|r| r[6].is_empty()));
    let means: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[2] == "mean").collect();
    assert_eq!(means.len(), 8);
    for m in means {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] == m[1] && r[3] == m[3] && r[4] == m[4] && (&r[2] == "0" || &r[2] == "1"))
            .map(|r| r[5].parse().unwrap())
            .collect();
        let expect = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((m[5].parse::<f64>().unwrap() - expect).abs() < 1e-12);
    }
    assert!(dir.path().join(format!("summary_{}.csv", p.name())).exists());
    assert!(dir.path().join("sessions").join(p.name()).join("int-obj").join("seed1.ndjson").exists());

    let again = run_experiment(&config).unwrap();
    assert_eq!(again.replications, summary.replications);
}
