//! Seeded random instances for property checks and benchmarks: knowledge
//! bases, closed formulas over a KB's symbols, and vector models with some
//! atoms planted true.

use crate::geometry::{PredicateEmbedding, Semantics, VectorModel};
use crate::logic::{Arg, Axiom, Formula, KnowledgeBase, Predicate, Term, Triple};
use crate::oracle::{atom_statuses, OracleError, OracleStatus};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

const TERM_NAMES: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
const PRED_NAMES: [&str; 4] = ["P", "Q", "R", "S"];

/// Size limits for [`random_kb`].
#[derive(Debug, Clone, Copy)]
pub struct KbShape {
    pub max_terms: usize,
    pub max_preds: usize,
    pub max_triples: usize,
    pub max_axioms: usize,
    /// Ground constraints of the form `not P(s,t)`.
    pub max_negations: usize,
}

/// A KB with 2..=max_terms terms and 1..=max_preds predicates, all declared
/// even if unused.
pub fn random_kb(rng: &mut impl Rng, shape: KbShape) -> KnowledgeBase {
    let n_terms = rng.random_range(2..=shape.max_terms.clamp(2, TERM_NAMES.len()));
    let n_preds = rng.random_range(1..=shape.max_preds.clamp(1, PRED_NAMES.len()));
    let terms = &TERM_NAMES[..n_terms];
    let preds = &PRED_NAMES[..n_preds];
    let mut kb = KnowledgeBase::new();
    for t in terms {
        kb.add_term(t).expect("valid name");
    }
    for p in preds {
        kb.add_predicate(p).expect("valid name");
    }
    for _ in 0..rng.random_range(0..=shape.max_triples) {
        let tr = Triple::new(pick(rng, preds), pick(rng, terms), pick(rng, terms));
        kb.add_triple(tr).expect("declared symbols");
    }
    for _ in 0..rng.random_range(0..=shape.max_axioms) {
        let ax = Axiom::new(pick(rng, preds), pick(rng, terms), pick(rng, preds), pick(rng, terms));
        kb.add_axiom(ax).expect("declared symbols");
    }
    for _ in 0..rng.random_range(0..=shape.max_negations) {
        let atom = Formula::ground(pick(rng, preds), pick(rng, terms), pick(rng, terms));
        kb.add_constraint(Formula::not(atom)).expect("declared symbols");
    }
    kb
}

fn pick<'a>(rng: &mut impl Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("nonempty")
}

/// A closed formula of at most `depth` connective/quantifier levels.
pub fn random_closed_formula(rng: &mut impl Rng, kb: &KnowledgeBase, depth: usize) -> Formula {
    let terms: Vec<&str> = kb.terms().iter().map(Term::as_str).collect();
    let preds: Vec<&str> = kb.predicates().iter().map(Predicate::as_str).collect();
    let mut vars = Vec::new();
    formula(rng, &terms, &preds, &mut vars, depth)
}

const VAR_NAMES: [&str; 4] = ["x", "y", "z", "w"];

fn formula<R: Rng>(rng: &mut R, terms: &[&str], preds: &[&str], vars: &mut Vec<&'static str>, depth: usize) -> Formula {
    let choice = if depth == 0 { 0 } else { rng.random_range(0..8) };
    let sub = |rng: &mut R, vars: &mut Vec<&'static str>| formula(rng, terms, preds, vars, depth - 1);
    match choice {
        0 | 1 => {
            let arg = |rng: &mut R| {
                if !vars.is_empty() && rng.random_bool(0.6) {
                    Arg::var(pick(rng, vars))
                } else {
                    Arg::term(pick(rng, terms))
                }
            };
            let (h, t) = (arg(rng), arg(rng));
            Formula::atom(pick(rng, preds), h, t)
        }
        2 => Formula::not(sub(rng, vars)),
        3 => Formula::and(sub(rng, vars), sub(rng, vars)),
        4 => Formula::or(sub(rng, vars), sub(rng, vars)),
        5 => Formula::implies(sub(rng, vars), sub(rng, vars)),
        _ if vars.len() < VAR_NAMES.len() => {
            let v = VAR_NAMES[vars.len()];
            vars.push(v);
            let body = sub(rng, vars);
            vars.pop();
            if choice == 6 {
                Formula::forall(v, body)
            } else {
                Formula::exists(v, body)
            }
        }
        _ => Formula::not(sub(rng, vars)),
    }
}

/// Whether the atoms the KB entails can be placed by translation along unit
/// predicate vectors: for every predicate there must be integer levels with
/// `level(tail) = level(head) + 1` for each entailed atom. A self-loop, a
/// 2-cycle or two paths of different lengths between the same terms make
/// every approximate-mode model with `delta < 1 / (path length)` fail the KB,
/// however the points are placed.
pub fn realizable_by_translation(kb: &KnowledgeBase) -> Result<bool, OracleError> {
    let atoms = atom_statuses(kb)?;
    if atoms.satisfying == 0 {
        return Ok(false);
    }
    let n = kb.terms().len();
    for p in 0..kb.predicates().len() {
        let mut edges = Vec::new();
        for h in 0..n {
            for t in 0..n {
                if atoms.status(p, h, t) == OracleStatus::Entailed {
                    edges.push((h, t));
                }
            }
        }
        let mut level: Vec<Option<i64>> = vec![None; n];
        for start in 0..n {
            if level[start].is_some() {
                continue;
            }
            level[start] = Some(0);
            let mut stack = vec![start];
            while let Some(x) = stack.pop() {
                let lx = level[x].expect("visited");
                for &(h, t) in &edges {
                    let (y, ly) = if h == x {
                        (t, lx + 1)
                    } else if t == x {
                        (h, lx - 1)
                    } else {
                        continue;
                    };
                    match level[y] {
                        Some(l) if l != ly => return Ok(false),
                        Some(_) => {}
                        None => {
                            level[y] = Some(ly);
                            stack.push(y);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

/// A random unit vector of length `k`.
pub fn random_unit(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A model of dimension `n` covering `kb`: random points in `[-2, 2]^n`,
/// random subspaces and directions. Then, for a random subset of candidate
/// atoms, the tail is moved onto `head + c * direction` (with `c = 1` plus
/// noise below `delta` in approximate mode, a random positive `c` in strict
/// mode) so that true atoms are common.
pub fn random_model(rng: &mut impl Rng, kb: &KnowledgeBase, n: usize, delta: f64, mode: Semantics) -> VectorModel {
    let mut m = VectorModel::new(n, delta, mode).expect("positive dimension");
    for t in kb.terms() {
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        m.set_point(t.clone(), p).expect("dimension matches");
    }
    for p in kb.predicates() {
        let k = rng.random_range(1..=n);
        let mut dims = rand::seq::index::sample(rng, n, k).into_vec();
        dims.sort_unstable();
        let emb = PredicateEmbedding::new(dims, random_unit(rng, k)).expect("unit direction");
        m.set_predicate(p.clone(), emb).expect("axes in range");
    }
    let terms: Vec<&Term> = kb.terms().iter().collect();
    let preds: Vec<&Predicate> = kb.predicates().iter().collect();
    let plants = rng.random_range(0..=terms.len() * preds.len());
    for _ in 0..plants {
        let p = preds[rng.random_range(0..preds.len())];
        let (h, t) = (terms[rng.random_range(0..terms.len())], terms[rng.random_range(0..terms.len())]);
        if h == t {
            continue;
        }
        let dir = m.embedding(p.as_str()).expect("declared").embedded(n);
        let head = m.point(h.as_str()).expect("declared").to_vec();
        let scale = match mode {
            Semantics::Strict => rng.random_range(0.2..3.0),
            Semantics::Approximate => 1.0,
        };
        let noise_radius = match mode {
            Semantics::Strict => 0.0,
            Semantics::Approximate => delta * rng.random_range(0.0..1.5),
        };
        let noise = random_unit(rng, n);
        let tail: Vec<f64> =
            head.iter().zip(&dir).zip(&noise).map(|((x, d), e)| x + scale * d + noise_radius * e).collect();
        m.set_point(t.clone(), tail).expect("dimension matches");
    }
    m
}
