//! Event-sourced elicitation sessions.
//!
//! Every mutation is an appended [`Event`]; a session is rebuilt by folding
//! its events in order. Refits and queries are deterministic functions of
//! the preceding state, so replay can recompute and check them.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Interaction, Monotonicity, QueryPolicy, RegretCandidates, VariantConfig};
use crate::acquisition::{generate_monotonicity_pairs, maximize_qeubo, CandidateSet, SearchDomain};
use crate::dm::{respond, DmConfig};
use crate::error::{Error, Result};
use crate::menu::{select_menu, MenuResult};
use crate::model::{
    fit, FitReport, InputSpace, Normalization, Origin, PreferenceDataset, QueryPair, Response, UtilityPosterior,
};
use crate::pareto::ParetoApproximation;
use crate::problems::{CountingEvaluator, DecisionVector, ObjectiveVector, ProblemSpec};
use crate::seed;

pub const LOG_SCHEMA_VERSION: u32 = 1;
const LOG_KIND: &str = "elicit-session-log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryKind {
    Initial,
    Elicited,
}

/// A query as shown to the decision-maker: both options in decision and
/// objective form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub seq: usize,
    pub kind: QueryKind,
    pub decisions: [DecisionVector; 2],
    pub objectives: [ObjectiveVector; 2],
    /// Indices into the Pareto approximation (a posteriori sessions).
    pub candidates: Option<[usize; 2]>,
    pub acquisition_value: Option<f64>,
    /// Objective-function calls made by the acquisition search.
    pub search_evaluations: u64,
}

impl QueryRecord {
    pub fn model_point(&self, space: InputSpace, i: usize) -> &[f64] {
        match space {
            InputSpace::Objective => &self.objectives[i],
            InputSpace::Decision => &self.decisions[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    AwaitingResponse,
    ReadyForQuery,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    Created {
        problem: ProblemSpec,
        variant: VariantConfig,
        seed: u64,
        dm: Option<DmConfig>,
        pareto: Option<ParetoApproximation>,
    },
    InitialQueries {
        queries: Vec<QueryRecord>,
    },
    Query {
        query: QueryRecord,
    },
    Response {
        seq: usize,
        response: Response,
    },
    Refit {
        comparisons: usize,
        virtual_pairs: usize,
        report: FitReport,
    },
    Menu {
        k: usize,
        posterior_version: usize,
        menu: MenuResult,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogHeader {
    kind: String,
    schema_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Awaiting,
    NeedsRefit,
    Ready,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Session {
    problem: ProblemSpec,
    variant: VariantConfig,
    seed: u64,
    dm: Option<DmConfig>,
    pareto: Option<ParetoApproximation>,
    candidates: Option<CandidateSet>,
    dataset: PreferenceDataset,
    posterior: Option<UtilityPosterior>,
    fit_report: Option<FitReport>,
    queries: Vec<QueryRecord>,
    responses: Vec<Response>,
    interaction_index: usize,
    refits: usize,
    phase: Phase,
    events: Vec<Event>,
}

impl Session {
    /// Start a session: validate, draw the initial pairs and wait for their
    /// answers. `dm` is the simulated decision-maker, if any.
    pub fn create(
        problem: ProblemSpec,
        variant: VariantConfig,
        seed: u64,
        dm: Option<DmConfig>,
        pareto: Option<ParetoApproximation>,
    ) -> Result<Self> {
        let created = Event::Created {
            problem,
            variant,
            seed,
            dm,
            pareto,
        };
        let mut s = Self::from_created(&created)?;
        s.events.push(created);
        let initial = s.draw_initial()?;
        s.apply_initial(initial.clone())?;
        s.events.push(Event::InitialQueries { queries: initial });
        Ok(s)
    }

    fn from_created(event: &Event) -> Result<Self> {
        let Event::Created {
            problem,
            variant,
            seed,
            dm,
            pareto,
        } = event
        else {
            return Err(Error::InvalidState("a session log must start with a created event".into()));
        };
        variant.validate()?;
        if let Some(dm) = dm {
            dm.validate()?;
            if let Some(m) = dm.utility.dimension() {
                crate::error::check_dim(problem.m, m)?;
            }
        }
        let candidates = match (variant.interaction, pareto) {
            (Interaction::APosteriori, None) => {
                return Err(Error::InvalidParameter(
                    "a posteriori sessions need a Pareto approximation".into(),
                ))
            }
            (Interaction::APosteriori, Some(p)) => {
                if p.len() < 2 {
                    return Err(Error::InvalidParameter("the Pareto approximation needs at least two points".into()));
                }
                if p.problem != problem.name() {
                    return Err(Error::InvalidParameter(format!(
                        "Pareto approximation is for {}, session is for {}",
                        p.problem,
                        problem.name()
                    )));
                }
                Some(p.candidate_set())
            }
            (Interaction::Interactive, _) => None,
        };
        let dim = match variant.model_space {
            InputSpace::Objective => problem.m,
            InputSpace::Decision => problem.d,
        };
        Ok(Self {
            dataset: PreferenceDataset::new(variant.model_space, dim),
            problem: problem.clone(),
            variant: variant.clone(),
            seed: *seed,
            dm: dm.clone(),
            pareto: if variant.interaction == Interaction::APosteriori { pareto.clone() } else { None },
            candidates,
            posterior: None,
            fit_report: None,
            queries: Vec::new(),
            responses: Vec::new(),
            interaction_index: 0,
            refits: 0,
            phase: Phase::Awaiting,
            events: Vec::new(),
        })
    }

    /// Rebuild a session from its events. With `verify`, every logged query
    /// and menu is recomputed and must match exactly; refit summaries are
    /// always checked. A log ending between a response and its refit is
    /// completed by refitting.
    pub fn from_events(events: Vec<Event>, verify: bool) -> Result<Self> {
        Self::replay(events, verify, |_| Ok(()))
    }

    /// Like [`Session::from_events`], calling `after_refit` with each
    /// replayed posterior.
    pub fn replay<F>(events: Vec<Event>, verify: bool, mut after_refit: F) -> Result<Self>
    where
        F: FnMut(&Session) -> Result<()>,
    {
        let mut iter = events.into_iter().enumerate();
        let (_, first) = iter
            .next()
            .ok_or_else(|| Error::InvalidState("empty session log".into()))?;
        let mut s = Self::from_created(&first)?;
        s.events.push(first);
        for (index, event) in iter {
            let diverged = |detail: String| Error::ReplayDiverged { index, detail };
            match &event {
                Event::Created { .. } => return Err(diverged("duplicate created event".into())),
                Event::InitialQueries { queries } => {
                    if verify && *queries != s.draw_initial()? {
                        return Err(diverged("initial queries differ".into()));
                    }
                    s.apply_initial(queries.clone())?;
                }
                Event::Query { query } => {
                    if s.phase != Phase::Ready {
                        return Err(diverged("query logged while not ready for one".into()));
                    }
                    if verify && *query != s.compute_query()? {
                        return Err(diverged(format!("query {} differs on recomputation", query.seq)));
                    }
                    s.apply_query(query.clone());
                }
                Event::Response { seq, response } => s.apply_response(*seq, *response)?,
                Event::Refit { report, .. } => {
                    if s.phase != Phase::NeedsRefit {
                        return Err(diverged("refit logged out of order".into()));
                    }
                    let got = s.refit()?;
                    check_report(report, &got).map_err(diverged)?;
                    s.events.push(event);
                    after_refit(&s)?;
                    continue;
                }
                Event::Menu {
                    k,
                    posterior_version,
                    menu,
                } => {
                    if verify {
                        if *posterior_version != s.refits {
                            return Err(diverged("menu for a different posterior version".into()));
                        }
                        if *menu != s.compute_menu(*k)? {
                            return Err(diverged(format!("menu of size {k} differs on recomputation")));
                        }
                    }
                }
            }
            s.events.push(event);
        }
        if s.phase == Phase::NeedsRefit {
            s.refit_and_log()?;
            after_refit(&s)?;
        }
        Ok(s)
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn variant(&self) -> &VariantConfig {
        &self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dm(&self) -> Option<&DmConfig> {
        self.dm.as_ref()
    }

    pub fn pareto(&self) -> Option<&ParetoApproximation> {
        self.pareto.as_ref()
    }

    pub fn dataset(&self) -> &PreferenceDataset {
        &self.dataset
    }

    pub fn posterior(&self) -> Option<&UtilityPosterior> {
        self.posterior.as_ref()
    }

    pub fn fit_report(&self) -> Option<&FitReport> {
        self.fit_report.as_ref()
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn interaction_index(&self) -> usize {
        self.interaction_index
    }

    /// Number of refits so far; identifies the current posterior.
    pub fn posterior_version(&self) -> usize {
        self.refits
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn status(&self) -> SessionStatus {
        match self.phase {
            Phase::Awaiting => SessionStatus::AwaitingResponse,
            Phase::NeedsRefit | Phase::Ready => SessionStatus::ReadyForQuery,
            Phase::Finished => SessionStatus::Finished,
        }
    }

    pub fn pending_query(&self) -> Option<&QueryRecord> {
        match self.phase {
            Phase::Awaiting => self.queries.get(self.responses.len()),
            _ => None,
        }
    }

    /// Issue the next query.
    pub fn next_query(&mut self) -> Result<&QueryRecord> {
        match self.phase {
            Phase::Ready => {}
            Phase::Finished => return Err(Error::BudgetExhausted(self.variant.budget)),
            Phase::Awaiting => return Err(Error::InvalidState("a query is awaiting its response".into())),
            Phase::NeedsRefit => return Err(Error::InvalidState("posterior refit pending".into())),
        }
        let q = self.compute_query()?;
        self.apply_query(q.clone());
        self.events.push(Event::Query { query: q });
        Ok(self.queries.last().expect("just pushed"))
    }

    /// Record the answer to query `seq`, refitting once the answer completes
    /// a batch.
    pub fn record_response(&mut self, seq: usize, response: Response) -> Result<()> {
        self.submit_response(seq, response)?;
        if self.refit_pending() {
            self.complete_refit()?;
        }
        Ok(())
    }

    /// Record the answer to query `seq` without refitting. When it completes
    /// a batch, [`Session::refit_pending`] turns true until
    /// [`Session::complete_refit`] runs.
    pub fn submit_response(&mut self, seq: usize, response: Response) -> Result<()> {
        self.apply_response(seq, response)?;
        self.events.push(Event::Response { seq, response });
        Ok(())
    }

    pub fn refit_pending(&self) -> bool {
        self.phase == Phase::NeedsRefit
    }

    pub fn complete_refit(&mut self) -> Result<()> {
        if !self.refit_pending() {
            return Err(Error::InvalidState("no refit pending".into()));
        }
        self.refit_and_log()
    }

    /// Let the simulated decision-maker answer the pending query.
    pub fn respond_simulated(&mut self) -> Result<Response> {
        let dm = self
            .dm
            .as_ref()
            .ok_or_else(|| Error::InvalidState("session has no simulated decision-maker".into()))?;
        let q = self
            .pending_query()
            .ok_or_else(|| Error::InvalidState("no pending query".into()))?;
        let (seq, r) = (q.seq, respond(dm, &q.objectives[0], &q.objectives[1], q.seq as u64)?);
        self.record_response(seq, r)?;
        Ok(r)
    }

    /// Drive a simulated session to the end, calling `after_refit` with each
    /// new posterior.
    pub fn run_simulated<F>(&mut self, mut after_refit: F) -> Result<()>
    where
        F: FnMut(&Session) -> Result<()>,
    {
        loop {
            match self.phase {
                Phase::Awaiting => {
                    let before = self.refits;
                    self.respond_simulated()?;
                    if self.refits > before {
                        after_refit(self)?;
                    }
                }
                Phase::Ready => {
                    self.next_query()?;
                }
                Phase::NeedsRefit => {
                    self.refit_and_log()?;
                    after_refit(self)?;
                }
                Phase::Finished => return Ok(()),
            }
        }
    }

    /// Menu of size `k` under the current posterior over the variant's menu
    /// candidates (see [`RegretCandidates`]).
    pub fn compute_menu(&self, k: usize) -> Result<MenuResult> {
        let posterior = self
            .posterior
            .as_ref()
            .ok_or_else(|| Error::InvalidState("no posterior yet".into()))?;
        let config = self
            .variant
            .menu
            .with_seed(seed::derive(self.seed, "menu", self.refits as u64));
        let eval = CountingEvaluator::new(&self.problem);
        match (self.variant.regret_candidates, &self.candidates) {
            (RegretCandidates::FullSpace, None) => select_menu(posterior, &eval, SearchDomain::FullSpace, k, &config),
            (RegretCandidates::FullSpace, Some(set)) => {
                select_menu(posterior, &eval, SearchDomain::Candidates(set), k.min(set.len()), &config)
            }
            (RegretCandidates::QueriedPoints, _) => {
                let set = self.queried_points();
                select_menu(posterior, &eval, SearchDomain::Candidates(&set), k.min(set.len()), &config)
            }
        }
    }

    /// Compute a menu and append it to the log.
    pub fn record_menu(&mut self, k: usize) -> Result<MenuResult> {
        let menu = self.compute_menu(k)?;
        self.log_menu(k, menu.clone());
        Ok(menu)
    }

    /// Append a menu computed elsewhere from this session's current
    /// posterior (for example by [`Session::compute_menu`] on a clone).
    pub fn log_menu(&mut self, k: usize, menu: MenuResult) {
        self.events.push(Event::Menu {
            k,
            posterior_version: self.refits,
            menu,
        });
    }

    /// Distinct answered query points, in order of first appearance.
    pub fn queried_points(&self) -> CandidateSet {
        let mut seen = std::collections::HashSet::new();
        let mut set = CandidateSet {
            decisions: Vec::new(),
            objectives: Vec::new(),
        };
        for q in &self.queries[..self.responses.len()] {
            for i in 0..2 {
                let key: Vec<u64> = q.decisions[i].iter().map(|v| v.to_bits()).collect();
                if seen.insert(key) {
                    set.decisions.push(q.decisions[i].clone());
                    set.objectives.push(q.objectives[i].clone());
                }
            }
        }
        set
    }

    fn draw_initial(&self) -> Result<Vec<QueryRecord>> {
        let n = self.variant.initial_pairs_for(&self.problem);
        let mut rng = seed::rng(self.seed, "initial-pairs", 0);
        (0..n)
            .map(|seq| self.random_query(&mut rng, seq, QueryKind::Initial))
            .collect()
    }

    fn random_query(&self, rng: &mut rand_chacha::ChaCha8Rng, seq: usize, kind: QueryKind) -> Result<QueryRecord> {
        match &self.candidates {
            Some(set) => {
                let i = rng.gen_range(0..set.len());
                let j = (i + rng.gen_range(1..set.len())) % set.len();
                Ok(QueryRecord {
                    seq,
                    kind,
                    decisions: [set.decisions[i].clone(), set.decisions[j].clone()],
                    objectives: [set.objectives[i].clone(), set.objectives[j].clone()],
                    candidates: Some([i, j]),
                    acquisition_value: None,
                    search_evaluations: 0,
                })
            }
            None => {
                let mut draw = || -> Result<(Vec<f64>, Vec<f64>)> {
                    let u: Vec<f64> = (0..self.problem.d).map(|_| rng.gen::<f64>()).collect();
                    let x = self.problem.from_unit(&u);
                    let y = crate::problems::evaluate_objectives(&self.problem, &x)?;
                    Ok((x, y))
                };
                let (x1, y1) = draw()?;
                let (x2, y2) = draw()?;
                Ok(QueryRecord {
                    seq,
                    kind,
                    decisions: [x1, x2],
                    objectives: [y1, y2],
                    candidates: None,
                    acquisition_value: None,
                    search_evaluations: 0,
                })
            }
        }
    }

    fn compute_query(&self) -> Result<QueryRecord> {
        let seq = self.queries.len();
        if self.variant.query_policy == QueryPolicy::Random {
            let mut rng = seed::rng(self.seed, "random-query", self.interaction_index as u64);
            return self.random_query(&mut rng, seq, QueryKind::Elicited);
        }
        let posterior = self
            .posterior
            .as_ref()
            .ok_or_else(|| Error::InvalidState("no posterior yet".into()))?;
        let config = self
            .variant
            .acquisition
            .with_seed(seed::derive(self.seed, "query", self.interaction_index as u64));
        let eval = CountingEvaluator::new(&self.problem);
        let domain = match &self.candidates {
            Some(set) => SearchDomain::Candidates(set),
            None => SearchDomain::FullSpace,
        };
        let sel = maximize_qeubo(posterior, &eval, domain, &config)?;
        let search_evaluations = eval.calls();
        let objectives = match sel.objectives {
            Some(y) => y,
            None => [eval.evaluate(&sel.decisions[0])?, eval.evaluate(&sel.decisions[1])?],
        };
        Ok(QueryRecord {
            seq,
            kind: QueryKind::Elicited,
            decisions: sel.decisions,
            objectives,
            candidates: sel.candidates,
            acquisition_value: Some(sel.value.value),
            search_evaluations,
        })
    }

    fn apply_initial(&mut self, queries: Vec<QueryRecord>) -> Result<()> {
        if !self.queries.is_empty() {
            return Err(Error::InvalidState("initial queries already drawn".into()));
        }
        if queries.is_empty() {
            return Err(Error::InvalidParameter("need at least one initial pair".into()));
        }
        self.queries = queries;
        self.phase = Phase::Awaiting;
        Ok(())
    }

    fn apply_query(&mut self, q: QueryRecord) {
        self.queries.push(q);
        self.phase = Phase::Awaiting;
    }

    fn apply_response(&mut self, seq: usize, response: Response) -> Result<()> {
        let q = self
            .pending_query()
            .ok_or_else(|| Error::InvalidState("no query is awaiting a response".into()))?;
        if q.seq != seq {
            return Err(Error::InvalidState(format!(
                "response is for query {seq}, but query {} is pending",
                q.seq
            )));
        }
        let space = self.variant.model_space;
        let origin = match q.kind {
            QueryKind::Initial => Origin::Initial,
            QueryKind::Elicited => Origin::Elicited,
        };
        let pair = QueryPair::new(q.model_point(space, 0).to_vec(), q.model_point(space, 1).to_vec(), origin);
        let elicited = q.kind == QueryKind::Elicited;
        self.dataset.push(pair, response)?;
        self.responses.push(response);
        if elicited {
            self.interaction_index += 1;
        }
        self.phase = if self.responses.len() < self.queries.len() {
            Phase::Awaiting
        } else {
            Phase::NeedsRefit
        };
        Ok(())
    }

    fn refit(&mut self) -> Result<FitReport> {
        if let Monotonicity::On { count, delta } = self.variant.monotonicity {
            let seen: Vec<Vec<f64>> = self.dataset.observed_points().map(<[f64]>::to_vec).collect();
            let pairs = generate_monotonicity_pairs(
                &seen,
                count,
                delta,
                seed::derive(self.seed, "monotonicity", self.refits as u64),
            )?;
            self.dataset.set_virtual(pairs)?;
        }
        let normalization = match self.variant.model_space {
            InputSpace::Objective => Normalization::from_points(self.dataset.dim(), self.dataset.observed_points())?,
            InputSpace::Decision => Normalization::from_bounds(&self.problem.bounds),
        };
        let (posterior, report) = fit(&self.dataset, normalization, &self.variant.fit)?;
        self.posterior = Some(posterior);
        self.fit_report = Some(report.clone());
        self.refits += 1;
        self.phase = if self.interaction_index >= self.variant.budget {
            Phase::Finished
        } else {
            Phase::Ready
        };
        Ok(report)
    }

    fn refit_and_log(&mut self) -> Result<()> {
        let report = self.refit()?;
        self.events.push(Event::Refit {
            comparisons: self.dataset.len(),
            virtual_pairs: self.dataset.count(Origin::VirtualMonotonicity),
            report,
        });
        Ok(())
    }

    /// Newline-delimited log: a header line, then one event per line.
    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        write_events(out, &self.events)
    }

    pub fn save_log(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(file);
            self.write_log(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load_log(path: &Path, verify: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_events(read_events(std::io::BufReader::new(file))?, verify)
    }
}

fn check_report(logged: &FitReport, got: &FitReport) -> std::result::Result<(), String> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let (h1, h2) = (&logged.hyperparams, &got.hyperparams);
    let same = logged.iterations == got.iterations
        && close(logged.elbo, got.elbo)
        && close(h1.signal_variance, h2.signal_variance)
        && close(h1.noise_level, h2.noise_level)
        && h1.lengthscales.len() == h2.lengthscales.len()
        && h1.lengthscales.iter().zip(&h2.lengthscales).all(|(a, b)| close(*a, *b));
    if same {
        Ok(())
    } else {
        Err(format!("refit differs: logged {logged:?}, recomputed {got:?}"))
    }
}

/// Write a header line followed by one JSON event per line.
pub fn write_events<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    let header = LogHeader {
        kind: LOG_KIND.into(),
        schema_version: LOG_SCHEMA_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for e in events {
        append_event(&mut out, e)?;
    }
    Ok(())
}

pub fn append_event<W: Write>(mut out: W, event: &Event) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(event)?)?;
    Ok(())
}

/// Read a session log. A truncated final line (an interrupted append) is
/// ignored; any other malformed line is an error.
pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().filter(|l| !l.trim().is_empty()).peekable();
    let header: LogHeader = serde_json::from_str(it.next().ok_or_else(|| Error::Parse("empty log".into()))?)
        .map_err(|e| Error::Parse(format!("bad log header: {e}")))?;
    if header.kind != LOG_KIND {
        return Err(Error::Parse(format!("not a session log: {:?}", header.kind)));
    }
    if header.schema_version != LOG_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported log schema version {} (expected {LOG_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let mut events = Vec::new();
    while let Some(line) = it.next() {
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(e) if it.peek().is_none() => log::warn!("ignoring truncated final log line: {e}"),
            Err(e) => return Err(Error::Parse(format!("bad log line {}: {e}", events.len() + 2))),
        }
    }
    Ok(events)
}
