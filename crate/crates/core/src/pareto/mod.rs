//! Evolutionary approximation of the Pareto set, used as the candidate set
//! of the a posteriori variant.

mod nsga;
pub mod refdirs;

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::CandidateSet;
use crate::error::{check_finite, Error, Result};
use crate::problems::dominance::dominates_max;
use crate::problems::{evaluate_objectives, non_dominated_filter, DecisionVector, ObjectiveVector, ProblemSpec, Sense};
use crate::seed;

use nsga::Individual;
pub use refdirs::{das_dennis, reference_directions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Nsga2,
    Nsga3,
    /// Ingested from a file produced elsewhere.
    External,
}

impl Generator {
    /// NSGA-II up to three objectives, NSGA-III beyond.
    pub fn for_objectives(m: usize) -> Self {
        if m <= 3 {
            Generator::Nsga2
        } else {
            Generator::Nsga3
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Nsga2 => "nsga2",
            Generator::Nsga3 => "nsga3",
            Generator::External => "external",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nsga2" => Ok(Generator::Nsga2),
            "nsga3" => Ok(Generator::Nsga3),
            "external" => Ok(Generator::External),
            _ => Err(Error::Parse(format!("unknown generator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSettings {
    pub algorithm: Generator,
    pub population: usize,
    pub generations: usize,
}

impl ParetoSettings {
    /// Population 200 for 500 generations with NSGA-II up to three
    /// objectives; population 1500 for 2500 generations with NSGA-III beyond.
    pub fn standard(m: usize) -> Self {
        match Generator::for_objectives(m) {
            Generator::Nsga2 => Self {
                algorithm: Generator::Nsga2,
                population: 200,
                generations: 500,
            },
            _ => Self {
                algorithm: Generator::Nsga3,
                population: 1500,
                generations: 2500,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoApproximation {
    pub problem: String,
    pub decisions: Vec<DecisionVector>,
    /// Objectives in maximization form.
    pub objectives: Vec<ObjectiveVector>,
    pub generator: Generator,
    pub generations: usize,
    pub population: usize,
    pub seed: Option<u64>,
}

impl ParetoApproximation {
    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn candidate_set(&self) -> CandidateSet {
        CandidateSet {
            decisions: self.decisions.clone(),
            objectives: self.objectives.clone(),
        }
    }

    /// CSV with one comment line of metadata, a header, and one row per
    /// point: decision columns `x1..xd` then the objective columns.
    pub fn write_csv<W: Write>(&self, problem: &ProblemSpec, mut out: W) -> Result<()> {
        let mut meta = format!(
            "# problem={} generator={} population={} generations={}",
            self.problem, self.generator, self.population, self.generations
        );
        if let Some(s) = self.seed {
            meta.push_str(&format!(" seed={s}"));
        }
        writeln!(out, "{meta} orientation=maximize")?;
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=problem.d)
            .map(|i| format!("x{i}"))
            .chain(problem.objective_names())
            .collect();
        w.write_record(&header)?;
        for (x, y) in self.decisions.iter().zip(&self.objectives) {
            w.write_record(x.iter().chain(y).map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, problem: &ProblemSpec, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(problem, std::io::BufWriter::new(file))
    }

    /// Read a point set produced by this crate or by another solver.
    ///
    /// Rows hold `d` decision values, optionally followed by `m` objective
    /// values. Missing objectives are computed; objectives are read in
    /// maximization form unless the metadata line says
    /// `orientation=native`. The result is reduced to its non-dominated
    /// points.
    pub fn read_csv<R: Read>(problem: &ProblemSpec, mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut meta = std::collections::HashMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            for kv in line.trim_start_matches('#').split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        if let Some(name) = meta.get("problem") {
            if *name != problem.name() {
                return Err(Error::InvalidParameter(format!(
                    "file is for problem {name}, expected {}",
                    problem.name()
                )));
            }
        }
        let native = match meta.get("orientation").map(String::as_str) {
            None | Some("maximize") => false,
            Some("native") => true,
            Some(o) => return Err(Error::Parse(format!("unknown orientation {o:?}"))),
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let (d, m) = (problem.d, problem.m);
        let mut decisions = Vec::new();
        let mut objectives = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            check_finite(&vals, "pareto row")?;
            let x = vals[..d.min(vals.len())].to_vec();
            problem.check_decision(&x)?;
            let y = match vals.len() {
                n if n == d => evaluate_objectives(problem, &x)?,
                n if n == d + m => {
                    let y = vals[d..].to_vec();
                    if native {
                        y.iter()
                            .zip(&problem.native_sense)
                            .map(|(v, s)| if *s == Sense::Minimize { -v } else { *v })
                            .collect()
                    } else {
                        y
                    }
                }
                n => {
                    return Err(Error::Parse(format!(
                        "row {} has {n} columns, expected {d} or {}",
                        row + 1,
                        d + m
                    )))
                }
            };
            decisions.push(x);
            objectives.push(y);
        }
        if decisions.is_empty() {
            return Err(Error::Empty("pareto file has no rows"));
        }
        let parse = |k: &str| meta.get(k).and_then(|v| v.parse().ok());
        let generator = meta.get("generator").map(|g| g.parse()).transpose()?.unwrap_or(Generator::External);
        let mut out = Self {
            problem: problem.name(),
            population: parse("population").unwrap_or(decisions.len()),
            generations: parse("generations").unwrap_or(0),
            seed: meta.get("seed").and_then(|v| v.parse().ok()),
            decisions,
            objectives,
            generator,
        };
        out.reduce(problem)?;
        Ok(out)
    }

    pub fn load(problem: &ProblemSpec, path: &Path) -> Result<Self> {
        Self::read_csv(problem, std::fs::File::open(path)?)
    }

    /// Keep only mutually non-dominated points, dropping repeated decisions.
    fn reduce(&mut self, problem: &ProblemSpec) -> Result<()> {
        let keep = non_dominated_filter(&self.objectives, &problem.orientation())?;
        let mut seen = std::collections::HashSet::new();
        let keep: Vec<usize> = keep
            .into_iter()
            .filter(|&i| seen.insert(self.decisions[i].iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect();
        self.decisions = keep.iter().map(|&i| self.decisions[i].clone()).collect();
        self.objectives = keep.iter().map(|&i| self.objectives[i].clone()).collect();
        Ok(())
    }
}

/// Fronts of points under minimization, each listed in index order.
pub(crate) fn fronts_min(objs: &[&[f64]]) -> Vec<Vec<usize>> {
    let n = objs.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates_max(objs[j], objs[i]) {
                dominates[i].push(j as u32);
                dominated_by[j] += 1;
            } else if dominates_max(objs[i], objs[j]) {
                dominates[j].push(i as u32);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates[i] {
                let j = j as usize;
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Partition into non-domination fronts; front 0 is the non-dominated set.
pub fn nondominated_sort(objectives: &[Vec<f64>], orientation: &[Sense]) -> Result<Vec<Vec<usize>>> {
    if objectives.is_empty() {
        return Err(Error::Empty("nondominated_sort needs at least one point"));
    }
    for y in objectives {
        crate::error::check_dim(orientation.len(), y.len())?;
    }
    let flipped: Vec<Vec<f64>> = objectives
        .iter()
        .map(|y| {
            y.iter()
                .zip(orientation)
                .map(|(&v, s)| if *s == Sense::Maximize { -v } else { v })
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = flipped.iter().map(Vec::as_slice).collect();
    Ok(fronts_min(&refs))
}

/// Crowding distance of each member of `front` (boundary points get +inf).
pub fn crowding_distance(objs: &[&[f64]], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    let mut dist = vec![0.0; k];
    if k == 0 {
        return dist;
    }
    let m = objs[front[0]].len();
    let mut order: Vec<usize> = (0..k).collect();
    for j in 0..m {
        order.sort_by(|&a, &b| objs[front[a]][j].total_cmp(&objs[front[b]][j]).then(a.cmp(&b)));
        let lo = objs[front[order[0]]][j];
        let hi = objs[front[order[k - 1]]][j];
        dist[order[0]] = f64::INFINITY;
        dist[order[k - 1]] = f64::INFINITY;
        if hi - lo <= 0.0 {
            continue;
        }
        for w in 1..k.saturating_sub(1) {
            let gap = objs[front[order[w + 1]]][j] - objs[front[order[w - 1]]][j];
            dist[order[w]] += gap / (hi - lo);
        }
    }
    dist
}

/// Run NSGA-II or NSGA-III and return the non-dominated part of the final
/// population.
pub fn approximate_pareto(problem: &ProblemSpec, settings: &ParetoSettings, seed: u64) -> Result<ParetoApproximation> {
    approximate_pareto_observed(problem, settings, seed, |_, _| {})
}

/// As [`approximate_pareto`], calling `observer(generation, objectives)`
/// with the maximization-form objectives of each generation's population.
pub fn approximate_pareto_observed<F>(
    problem: &ProblemSpec,
    settings: &ParetoSettings,
    seed: u64,
    mut observer: F,
) -> Result<ParetoApproximation>
where
    F: FnMut(usize, &[Vec<f64>]),
{
    let n = settings.population;
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("population must be even and >= 4, got {n}")));
    }
    let m = problem.m;
    let (dirs, n) = match settings.algorithm {
        Generator::Nsga2 if m > 3 => {
            return Err(Error::Unsupported(format!("nsga2 is limited to m <= 3, got m={m}")));
        }
        Generator::Nsga2 => (Vec::new(), n),
        Generator::Nsga3 => reference_directions(m, n)?,
        Generator::External => return Err(Error::Unsupported("external generator cannot be run".into())),
    };
    let bounds = &problem.bounds;
    let mut rng = seed::rng(seed, "pareto", 0);
    let eval = |x: Vec<f64>| -> Result<Individual> {
        let f = evaluate_objectives(problem, &x)?.into_iter().map(|v| -v).collect();
        Ok(Individual { x, f })
    };
    let mut pop = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rand::Rng::gen_range(&mut rng, lo..=hi)).collect();
        pop.push(eval(x)?);
    }
    let report = |pop: &[Individual]| -> Vec<Vec<f64>> { pop.iter().map(|p| p.f.iter().map(|v| -v).collect()).collect() };
    observer(0, &report(&pop));
    for gen in 1..=settings.generations {
        let parents: Vec<usize> = match settings.algorithm {
            Generator::Nsga2 => {
                let (rank, crowd) = nsga::rank_and_crowding(&pop);
                nsga::tournament(n, &rank, &crowd, &mut rng)
            }
            _ => nsga::shuffled_pairs(n, &mut rng),
        };
        let refs: Vec<&[f64]> = parents.iter().map(|&i| pop[i].x.as_slice()).collect();
        let children = nsga::offspring(&refs, bounds, &mut rng);
        let mut merged = pop;
        for c in children {
            merged.push(eval(c)?);
        }
        pop = match settings.algorithm {
            Generator::Nsga2 => nsga::survive_nsga2(merged, n),
            _ => nsga::survive_nsga3(merged, n, &dirs, &mut rng),
        };
        observer(gen, &report(&pop));
    }
    let mut out = ParetoApproximation {
        problem: problem.name(),
        decisions: pop.iter().map(|p| p.x.clone()).collect(),
        objectives: report(&pop),
        generator: settings.algorithm,
        generations: settings.generations,
        population: n,
        seed: Some(seed),
    };
    out.reduce(problem)?;
    Ok(out)
}
