//! Model generation: subspace assignment, initialization, gradient descent
//! and ensemble assembly.

use crate::compiler::{compile_kb, CompileError, ConstraintSystem, LossKind, ParameterLayout};
use crate::config::{ConfigError, KPolicy, SolveConfig};
use crate::geometry::{model_from_json, model_to_json, satisfies_kb, to_json_sig17, GeometryError, VectorModel};
use crate::logic::{KnowledgeBase, Predicate};
use crate::similarity::{disparity_score_eps, SimilarityError, SimilarityMatrix};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const ENSEMBLE_INDEX: &str = "ensemble.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("subspace size K = {k} must lie in 1..={n}")]
    BadSubspace { k: usize, n: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("ensemble index: {0}")]
    Index(String),
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Axis subset for a predicate, a pure function of its name, `N` and the
/// policy. Returned sorted.
pub fn choose_subspace(p: &Predicate, n: usize, policy: KPolicy) -> Result<Vec<usize>, SolveError> {
    let k = policy.k(n);
    if k == 0 || k > n {
        return Err(SolveError::BadSubspace { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(p.as_str().as_bytes()));
    let mut dims = rand::seq::index::sample(&mut rng, n, k).into_vec();
    dims.sort_unstable();
    Ok(dims)
}

pub fn subspaces(kb: &KnowledgeBase, n: usize, policy: KPolicy) -> Result<IndexMap<Predicate, Vec<usize>>, SolveError> {
    kb.predicates().iter().map(|p| Ok((p.clone(), choose_subspace(p, n, policy)?))).collect()
}

/// Points uniform in `[-1, 1]^N`, directions uniform on the unit sphere of
/// their subspace.
pub fn init_params(layout: &ParameterLayout, rng: &mut impl Rng) -> Vec<f64> {
    let mut params = vec![0.0; layout.len()];
    let n_points = layout.terms().len() * layout.dimension();
    for x in &mut params[..n_points] {
        *x = rng.random_range(-1.0..=1.0);
    }
    for p in 0..layout.predicates().len() {
        let dir = layout.direction_mut(&mut params, p);
        loop {
            for x in dir.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let n = norm(dir);
            if n > 1e-8 {
                dir.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }
    params
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn renormalize(layout: &ParameterLayout, params: &mut [f64]) {
    for p in 0..layout.predicates().len() {
        let dir = layout.direction_mut(params, p);
        let n = norm(dir);
        if n > 0.0 && n.is_finite() {
            dir.iter_mut().for_each(|x| *x /= n);
        } else {
            dir.iter_mut().enumerate().for_each(|(i, x)| *x = if i == 0 { 1.0 } else { 0.0 });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Descent,
    Polish,
}

/// One diagnostics sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub phase: Phase,
    pub iter: usize,
    pub loss: f64,
    pub hard_loss: f64,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub params: Vec<f64>,
    /// Approximate-mode model at the evaluation tolerance.
    pub model: VectorModel,
    pub initial_loss: f64,
    /// Total training loss of the returned iterate.
    pub final_loss: f64,
    /// Step-semantics constraint loss at the evaluation tolerance.
    pub hard_loss: f64,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
}

struct Best {
    params: Vec<f64>,
    total: f64,
    hard: f64,
}

/// Keeps the best iterate among those whose total loss does not exceed the
/// initial loss: satisfying iterates (zero hard loss) by lower total loss,
/// then the rest by lower hard loss.
struct Tracker {
    initial: f64,
    best: Best,
}

impl Tracker {
    fn rank(&self, total: f64, hard: f64) -> (bool, f64) {
        if hard == 0.0 {
            (false, total)
        } else {
            (true, hard)
        }
    }

    fn offer(&mut self, params: &[f64], total: f64, hard: f64) {
        if !(total <= self.initial) || !hard.is_finite() {
            return;
        }
        let (a, b) = (self.rank(total, hard), self.rank(self.best.total, self.best.hard));
        if a.0 < b.0 || (a.0 == b.0 && a.1 < b.1) {
            self.best = Best { params: params.to_vec(), total, hard };
        }
    }
}

/// Gradient descent with step decay, gradient clipping and direction
/// retraction, followed by a constraint-only polish when the descent ends
/// unsatisfied. The initial parameters are drawn from `rng`.
pub fn minimize(system: &ConstraintSystem, config: &SolveConfig, rng: &mut impl Rng) -> MinimizeResult {
    let params = init_params(system.layout(), rng);
    minimize_from(system, config, params)
}

pub fn minimize_from(system: &ConstraintSystem, config: &SolveConfig, mut params: Vec<f64>) -> MinimizeResult {
    let layout = system.layout();
    let delta = config.delta;
    renormalize(layout, &mut params);
    let initial = system.total_loss(&params);
    let initial_hard = system.hard_loss(&params, delta);
    let mut tracker = Tracker {
        initial: if initial.is_finite() { initial } else { f64::INFINITY },
        best: Best { params: params.clone(), total: initial, hard: initial_hard },
    };
    let mut trace = Vec::new();
    let mut diverged = false;
    let mut iterations = 0;

    let phases: [(Phase, usize); 2] = [(Phase::Descent, config.max_iters), (Phase::Polish, config.polish_iters)];
    for (phase, iters) in phases {
        if phase == Phase::Polish {
            if diverged || tracker.best.hard == 0.0 {
                break;
            }
            params = tracker.best.params.clone();
        }
        let keep = |k: LossKind| phase == Phase::Descent || k.is_constraint();
        let s_final = system.config().sharpness;
        let s_start = config.sharpness_start.min(s_final);
        let ramp = (iters / 2).max(1);
        let sharpness = |it: usize| match phase {
            Phase::Descent if it < ramp => s_start * (s_final / s_start).powf(it as f64 / ramp as f64),
            _ => s_final,
        };
        let mut step = config.step;
        let mut grad = vec![0.0; params.len()];
        for it in 0..=iters {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let objective = system.loss_at_sharpness(&params, sharpness(it), keep, Some(&mut grad));
            let total = if phase == Phase::Descent && sharpness(it) == s_final {
                objective
            } else {
                system.total_loss(&params)
            };
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                trace.push(TracePoint { phase, iter: it, loss: total, hard_loss: f64::NAN });
                break;
            }
            let hard = system.hard_loss(&params, delta);
            tracker.offer(&params, total, hard);
            if it % config.log_every == 0 || it == iters {
                trace.push(TracePoint { phase, iter: it, loss: total, hard_loss: hard });
            }
            let gn = norm(&grad);
            if it == iters || gn < 1e-12 {
                break;
            }
            let scale = step * if gn > config.grad_clip { config.grad_clip / gn } else { 1.0 };
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= scale * g);
            renormalize(layout, &mut params);
            step *= config.decay;
            iterations += 1;
        }
    }

    let Best { params, total, hard } = tracker.best;
    let model = layout.model_from_params(&params, delta).expect("directions are unit after retraction");
    MinimizeResult {
        params,
        model,
        initial_loss: initial,
        final_loss: total,
        hard_loss: hard,
        converged: !diverged && hard < config.loss_tol,
        diverged,
        iterations,
        trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Accepted,
    Diverged,
    NotConverged,
    Unsatisfied,
    NotPreferred,
    Duplicate,
}

/// Record of one candidate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub seed: u64,
    pub outcome: Outcome,
    pub final_loss: f64,
    pub hard_loss: f64,
    pub disparity: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

/// How an accepted member was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub final_loss: f64,
    pub hard_loss: f64,
    pub disparity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub model: VectorModel,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub requested: usize,
    pub attempts: Vec<Attempt>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleIndex {
    status: EnsembleStatus,
    requested: usize,
    members: Vec<IndexEntry>,
    #[serde(default)]
    attempts: Vec<Attempt>,
}

impl Ensemble {
    /// An ensemble of externally supplied models.
    pub fn from_models(models: Vec<VectorModel>) -> Ensemble {
        let requested = models.len();
        Ensemble {
            members: models.into_iter().map(|model| Member { model, provenance: None }).collect(),
            requested,
            attempts: Vec::new(),
        }
    }

    pub fn push(&mut self, model: VectorModel) {
        self.members.push(Member { model, provenance: None });
        self.requested = self.requested.max(self.members.len());
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn models(&self) -> impl ExactSizeIterator<Item = &VectorModel> {
        self.members.iter().map(|m| &m.model)
    }

    pub fn status(&self) -> EnsembleStatus {
        if self.members.len() >= self.requested {
            EnsembleStatus::Complete
        } else {
            EnsembleStatus::Partial
        }
    }

    pub fn member_file_name(i: usize) -> String {
        format!("member_{i:03}.json")
    }

    /// File name and contents of the index, every member document and the
    /// diagnostics table.
    pub fn to_files(&self) -> Result<Vec<(String, String)>, SolveError> {
        let mut files = Vec::with_capacity(self.members.len() + 2);
        let index = EnsembleIndex {
            status: self.status(),
            requested: self.requested,
            members: self
                .members
                .iter()
                .enumerate()
                .map(|(i, m)| IndexEntry { file: Self::member_file_name(i), provenance: m.provenance.clone() })
                .collect(),
            attempts: self.attempts.clone(),
        };
        files.push((ENSEMBLE_INDEX.to_string(), to_json_sig17(&index).map_err(|e| SolveError::Index(e.to_string()))?));
        for (i, m) in self.members.iter().enumerate() {
            files.push((Self::member_file_name(i), model_to_json(&m.model)?));
        }
        files.push((DIAGNOSTICS_FILE.to_string(), self.diagnostics_tsv()));
        Ok(files)
    }

    /// Tab-separated `seed phase iter loss hard_loss` records, one per
    /// sampled iteration of every attempt.
    pub fn diagnostics_tsv(&self) -> String {
        let mut s = String::from("seed\tphase\titer\tloss\thard_loss\n");
        for a in &self.attempts {
            for t in &a.trace {
                let phase = match t.phase {
                    Phase::Descent => "descent",
                    Phase::Polish => "polish",
                };
                let _ = writeln!(s, "{}\t{}\t{}\t{:e}\t{:e}", a.seed, phase, t.iter, t.loss, t.hard_loss);
            }
        }
        s
    }

    /// Loads an ensemble written by [`Ensemble::to_files`].
    pub fn load(dir: &Path) -> Result<Ensemble, SolveError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| SolveError::Io { path: p.display().to_string(), message: e.to_string() })
        };
        let index: EnsembleIndex = serde_json::from_str(&read(&dir.join(ENSEMBLE_INDEX))?)
            .map_err(|e| SolveError::Index(e.to_string()))?;
        let mut members = Vec::with_capacity(index.members.len());
        for entry in index.members {
            if entry.file.contains(['/', '\\']) {
                return Err(SolveError::Index(format!("member file `{}` must be a plain file name", entry.file)));
            }
            let model = model_from_json(&read(&dir.join(&entry.file))?)?;
            members.push(Member { model, provenance: entry.provenance });
        }
        Ok(Ensemble { members, requested: index.requested, attempts: index.attempts })
    }
}

/// Mean over terms of the distance between corresponding points.
pub fn mean_point_distance(a: &VectorModel, b: &VectorModel) -> f64 {
    let n = a.points().len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .points()
        .iter()
        .map(|(t, p)| match b.points().get(t) {
            Some(q) => p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            None => f64::INFINITY,
        })
        .sum();
    sum / n as f64
}

/// Compiles the system a configuration solves.
pub fn build_system(kb: &KnowledgeBase, s: &SimilarityMatrix, config: &SolveConfig) -> Result<ConstraintSystem, SolveError> {
    config.validate()?;
    let dims = subspaces(kb, config.dimension, config.k_policy)?;
    Ok(compile_kb(kb, s, &config.compile_config(), config.dimension, &dims)?)
}

/// Draws seeds `config.seed, config.seed + 1, ...` (up to
/// `ensemble * retry_factor` of them) until `config.ensemble` members are
/// accepted.
pub fn generate_ensemble(kb: &KnowledgeBase, s: &SimilarityMatrix, config: &SolveConfig) -> Result<Ensemble, SolveError> {
    let budget = config.ensemble.saturating_mul(config.retry_factor);
    let seeds: Vec<u64> = (0..budget as u64).map(|k| config.seed.wrapping_add(k)).collect();
    generate_ensemble_with_seeds(kb, s, config, &seeds)
}

struct Candidate {
    seed: u64,
    result: MinimizeResult,
    satisfied: bool,
    disparity: f64,
}

/// Runs candidates from `seeds` in order, accepting until `config.ensemble`
/// members are found. Candidates are solved in parallel batches, but
/// acceptance is decided in seed order, so the result does not depend on
/// scheduling.
pub fn generate_ensemble_with_seeds(
    kb: &KnowledgeBase,
    s: &SimilarityMatrix,
    config: &SolveConfig,
    seeds: &[u64],
) -> Result<Ensemble, SolveError> {
    let s = s.aligned_to(kb)?;
    let system = build_system(kb, &s, config)?;
    let mut ensemble = Ensemble { members: Vec::new(), requested: config.ensemble, attempts: Vec::new() };
    let batch = rayon::current_num_threads().max(1);
    let mut next = 0;
    while ensemble.members.len() < config.ensemble && next < seeds.len() {
        let need = config.ensemble - ensemble.members.len();
        let end = (next + need.max(batch)).min(seeds.len());
        let candidates: Vec<Result<Candidate, SolveError>> = seeds[next..end]
            .par_iter()
            .map(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let result = minimize(&system, config, &mut rng);
                let satisfied = satisfies_kb(&result.model, kb)?.satisfied;
                let disparity = disparity_score_eps(&s, &result.model, config.eps_sd)?;
                Ok(Candidate { seed, result, satisfied, disparity })
            })
            .collect();
        next = end;
        for c in candidates {
            if ensemble.members.len() >= config.ensemble {
                break;
            }
            let c = c?;
            let r = &c.result;
            let outcome = if r.diverged {
                Outcome::Diverged
            } else if !r.converged {
                Outcome::NotConverged
            } else if config.require_satisfies_kb && !c.satisfied {
                Outcome::Unsatisfied
            } else if config.preference_threshold.is_some_and(|t| !(c.disparity < t)) {
                Outcome::NotPreferred
            } else if ensemble
                .members
                .iter()
                .any(|m| mean_point_distance(&m.model, &r.model) < config.diversity_floor)
            {
                Outcome::Duplicate
            } else {
                Outcome::Accepted
            };
            ensemble.attempts.push(Attempt {
                seed: c.seed,
                outcome,
                final_loss: r.final_loss,
                hard_loss: r.hard_loss,
                disparity: c.disparity,
                iterations: r.iterations,
                trace: r.trace.clone(),
            });
            if outcome == Outcome::Accepted {
                ensemble.members.push(Member {
                    model: c.result.model,
                    provenance: Some(Provenance {
                        seed: c.seed,
                        final_loss: c.result.final_loss,
                        hard_loss: c.result.hard_loss,
                        disparity: c.disparity,
                        iterations: c.result.iterations,
                    }),
                });
            }
        }
    }
    Ok(ensemble)
}
