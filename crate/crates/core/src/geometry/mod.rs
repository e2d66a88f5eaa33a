//! Vector-space models and the embedding-based satisfaction relation.
//!
//! A [`VectorModel`] places every term at a point of `R^N` and gives every
//! predicate a unit direction in an axis-aligned `K`-dimensional subspace.
//! `P(t1, t2)` holds when the head-to-tail difference `M(t2) - M(t1)`,
//! projected onto the predicate's axes, points along the predicate direction:
//! exactly by direction in [`Semantics::Strict`], or within residual norm
//! `delta` in [`Semantics::Approximate`].
//!
//! Connectives and quantifiers are evaluated classically, with quantifiers
//! ranging over the KB's terms, so every vector model is also a finite
//! Tarskian structure (see [`induced_relations`]).

mod document;

pub use document::{model_from_json, model_to_json, to_json_sig17};

use crate::logic::{Arg, Formula, KnowledgeBase, Predicate, Term, Triple, Variable};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Default angular tolerance for strict-mode truth, in radians.
pub const DEFAULT_ANGLE_TOL: f64 = 1e-6;
/// Projected differences shorter than this never satisfy a strict atom.
pub const STRICT_MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("free variable `{0}` during evaluation")]
    FreeVariable(String),
    #[error("empty quantifier domain")]
    EmptyDomain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid predicate embedding for `{pred}`: {reason}")]
    InvalidEmbedding { pred: String, reason: String },
    #[error("model document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    /// Same direction: projected difference is a positive multiple of the
    /// predicate vector.
    Strict,
    /// Residual `|proj(M(t2) - M(t1)) - M(P)|` below `delta`.
    Approximate,
}

/// A unit vector living on an ordered subset of the model's axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateEmbedding {
    dims: Vec<usize>,
    direction: Vec<f64>,
}

impl PredicateEmbedding {
    /// Validates `dims` (strictly increasing, nonempty) and normalizes nothing:
    /// `direction` must already have unit norm within 1e-9.
    pub fn new(dims: Vec<usize>, direction: Vec<f64>) -> Result<Self, String> {
        if dims.is_empty() {
            return Err("empty axis subset".into());
        }
        if dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err("axes must be strictly increasing".into());
        }
        if dims.len() != direction.len() {
            return Err(format!("{} axes but {} direction components", dims.len(), direction.len()));
        }
        let n = norm(&direction);
        if (n - 1.0).abs() > 1e-9 {
            return Err(format!("direction norm {n} is not 1"));
        }
        Ok(PredicateEmbedding { dims, direction })
    }

    /// Like [`PredicateEmbedding::new`] but rescales `direction` to unit norm.
    pub fn normalized(dims: Vec<usize>, mut direction: Vec<f64>) -> Result<Self, String> {
        let n = norm(&direction);
        if !(n > 0.0) || !n.is_finite() {
            return Err("direction must be finite and nonzero".into());
        }
        direction.iter_mut().for_each(|x| *x /= n);
        PredicateEmbedding::new(dims, direction)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    /// The direction as a full `N`-vector, zero off the subspace.
    pub fn embedded(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (&d, &x) in self.dims.iter().zip(&self.direction) {
            v[d] = x;
        }
        v
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorModel {
    dimension: usize,
    delta: f64,
    mode: Semantics,
    angle_tol: f64,
    points: IndexMap<Term, Vec<f64>>,
    rels: IndexMap<Predicate, PredicateEmbedding>,
}

impl VectorModel {
    pub fn new(dimension: usize, delta: f64, mode: Semantics) -> Result<Self, GeometryError> {
        if dimension == 0 {
            return Err(GeometryError::Document("dimension must be positive".into()));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(GeometryError::Document(format!("delta must be finite and >= 0, got {delta}")));
        }
        Ok(VectorModel {
            dimension,
            delta,
            mode,
            angle_tol: DEFAULT_ANGLE_TOL,
            points: IndexMap::new(),
            rels: IndexMap::new(),
        })
    }

    pub fn with_point(mut self, term: &str, point: Vec<f64>) -> Result<Self, GeometryError> {
        self.set_point(Term::new(term), point)?;
        Ok(self)
    }

    pub fn with_predicate(
        mut self,
        pred: &str,
        emb: PredicateEmbedding,
    ) -> Result<Self, GeometryError> {
        self.set_predicate(Predicate::new(pred), emb)?;
        Ok(self)
    }

    pub fn set_point(&mut self, term: Term, point: Vec<f64>) -> Result<(), GeometryError> {
        if point.len() != self.dimension {
            return Err(GeometryError::DimensionMismatch { expected: self.dimension, got: point.len() });
        }
        self.points.insert(term, point);
        Ok(())
    }

    pub fn set_predicate(&mut self, pred: Predicate, emb: PredicateEmbedding) -> Result<(), GeometryError> {
        if emb.dims.last().is_some_and(|&d| d >= self.dimension) {
            return Err(GeometryError::InvalidEmbedding {
                pred: pred.to_string(),
                reason: format!("axis out of range for dimension {}", self.dimension),
            });
        }
        self.rels.insert(pred, emb);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mode(&self) -> Semantics {
        self.mode
    }

    pub fn angle_tol(&self) -> f64 {
        self.angle_tol
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_mode(mut self, mode: Semantics) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_angle_tol(mut self, tol: f64) -> Self {
        self.angle_tol = tol;
        self
    }

    pub fn points(&self) -> &IndexMap<Term, Vec<f64>> {
        &self.points
    }

    pub fn predicates(&self) -> &IndexMap<Predicate, PredicateEmbedding> {
        &self.rels
    }

    pub fn point(&self, t: &str) -> Result<&[f64], GeometryError> {
        self.points.get(t).map(Vec::as_slice).ok_or_else(|| GeometryError::UnknownTerm(t.to_string()))
    }

    pub fn embedding(&self, p: &str) -> Result<&PredicateEmbedding, GeometryError> {
        self.rels.get(p).ok_or_else(|| GeometryError::UnknownPredicate(p.to_string()))
    }

    /// Checks the model covers every KB symbol.
    pub fn covers(&self, kb: &KnowledgeBase) -> Result<(), GeometryError> {
        for t in kb.terms() {
            self.point(t.as_str())?;
        }
        for p in kb.predicates() {
            self.embedding(p.as_str())?;
        }
        Ok(())
    }

    /// Euclidean distance between two term points.
    pub fn distance(&self, a: &str, b: &str) -> Result<f64, GeometryError> {
        let (pa, pb) = (self.point(a)?, self.point(b)?);
        Ok(pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
    }
}

/// `proj_P(M(t2) - M(t1)) - M(P)`, a vector in the predicate's subspace.
pub fn relation_residual(m: &VectorModel, p: &str, t1: &str, t2: &str) -> Result<Vec<f64>, GeometryError> {
    let emb = m.embedding(p)?;
    let (a, b) = (m.point(t1)?, m.point(t2)?);
    Ok(emb.dims.iter().zip(&emb.direction).map(|(&d, &u)| (b[d] - a[d]) - u).collect())
}

fn projected_difference(emb: &PredicateEmbedding, a: &[f64], b: &[f64]) -> Vec<f64> {
    emb.dims.iter().map(|&d| b[d] - a[d]).collect()
}

/// Angle in radians between `v` and the unit vector `u`.
fn angle_to(v: &[f64], u: &[f64]) -> f64 {
    let dot: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
    let rejection: f64 = v.iter().zip(u).map(|(x, y)| (x - dot * y).powi(2)).sum::<f64>().sqrt();
    rejection.atan2(dot)
}

/// Truth of `P(t1, t2)` under the model's semantics.
pub fn atom_truth(m: &VectorModel, p: &str, t1: &str, t2: &str) -> Result<bool, GeometryError> {
    match m.mode {
        Semantics::Approximate => Ok(norm(&relation_residual(m, p, t1, t2)?) < m.delta),
        Semantics::Strict => {
            let emb = m.embedding(p)?;
            let proj = projected_difference(emb, m.point(t1)?, m.point(t2)?);
            let len = norm(&proj);
            Ok(len > STRICT_MIN_NORM && angle_to(&proj, &emb.direction) <= m.angle_tol)
        }
    }
}

/// Evaluates a closed formula with quantifiers ranging over `domain`.
pub fn eval_formula(m: &VectorModel, f: &Formula, domain: &[Term]) -> Result<bool, GeometryError> {
    if domain.is_empty() && f.quantifier_depth() > 0 {
        return Err(GeometryError::EmptyDomain);
    }
    let mut env: Vec<(&Variable, &Term)> = Vec::new();
    eval_in(m, f, domain, &mut env)
}

fn resolve<'a>(a: &'a Arg, env: &[(&'a Variable, &'a Term)]) -> Result<&'a Term, GeometryError> {
    match a {
        Arg::Term(t) => Ok(t),
        Arg::Var(v) => env
            .iter()
            .rev()
            .find(|(x, _)| *x == v)
            .map(|(_, t)| *t)
            .ok_or_else(|| GeometryError::FreeVariable(v.to_string())),
    }
}

fn eval_in<'a>(
    m: &VectorModel,
    f: &'a Formula,
    domain: &'a [Term],
    env: &mut Vec<(&'a Variable, &'a Term)>,
) -> Result<bool, GeometryError> {
    Ok(match f {
        Formula::Atom { pred, args } => {
            let h = resolve(&args[0], env)?;
            let t = resolve(&args[1], env)?;
            atom_truth(m, pred.as_str(), h.as_str(), t.as_str())?
        }
        Formula::Not(g) => !eval_in(m, g, domain, env)?,
        Formula::And(a, b) => eval_in(m, a, domain, env)? && eval_in(m, b, domain, env)?,
        Formula::Or(a, b) => eval_in(m, a, domain, env)? || eval_in(m, b, domain, env)?,
        Formula::Implies(a, b) => !eval_in(m, a, domain, env)? || eval_in(m, b, domain, env)?,
        Formula::Forall(v, g) | Formula::Exists(v, g) => {
            let universal = matches!(f, Formula::Forall(..));
            let mut result = universal;
            for t in domain {
                env.push((v, t));
                let r = eval_in(m, g, domain, env);
                env.pop();
                if r? != universal {
                    result = !universal;
                    break;
                }
            }
            result
        }
    })
}

/// Something in a KB that a model fails to satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Triple(Triple),
    /// Instantiation of axiom `axiom` (index into the KB's axioms) at `term`.
    AxiomInstance { axiom: usize, term: Term },
    /// Ground constraint, by index into the KB's constraints.
    Constraint(usize),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Triple(t) => write!(f, "triple {t}"),
            Violation::AxiomInstance { axiom, term } => write!(f, "axiom #{axiom} at {term}"),
            Violation::Constraint(i) => write!(f, "constraint #{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionReport {
    pub satisfied: bool,
    pub violations: Vec<Violation>,
}

/// `m |= kb`: every triple, every axiom instantiation over the KB's terms and
/// every ground constraint holds.
pub fn satisfies_kb(m: &VectorModel, kb: &KnowledgeBase) -> Result<SatisfactionReport, GeometryError> {
    m.covers(kb)?;
    let domain: Vec<Term> = kb.terms().iter().cloned().collect();
    let mut violations = Vec::new();
    for tr in kb.triples() {
        if !atom_truth(m, tr.pred.as_str(), tr.head.as_str(), tr.tail.as_str())? {
            violations.push(Violation::Triple(tr.clone()));
        }
    }
    for (i, ax) in kb.axioms().enumerate() {
        for t in &domain {
            if !eval_formula(m, &ax.instantiate(t), &domain)? {
                violations.push(Violation::AxiomInstance { axiom: i, term: t.clone() });
            }
        }
    }
    for (i, c) in kb.constraints().iter().enumerate() {
        if !eval_formula(m, c, &domain)? {
            violations.push(Violation::Constraint(i));
        }
    }
    Ok(SatisfactionReport { satisfied: violations.is_empty(), violations })
}

/// Extension of every predicate in a model, over the KB's terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedRelations {
    pub terms: Vec<Term>,
    /// Per predicate (KB order), the true `(head, tail)` pairs as term indices.
    pub relations: IndexMap<Predicate, BTreeSet<(usize, usize)>>,
}

impl InducedRelations {
    pub fn holds(&self, pred: &str, head: usize, tail: usize) -> bool {
        self.relations.get(pred).is_some_and(|r| r.contains(&(head, tail)))
    }

    pub fn len(&self) -> usize {
        self.relations.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn induced_relations(m: &VectorModel, kb: &KnowledgeBase) -> Result<InducedRelations, GeometryError> {
    let terms: Vec<Term> = kb.terms().iter().cloned().collect();
    let mut relations = IndexMap::new();
    for p in kb.predicates() {
        let mut set = BTreeSet::new();
        for (i, a) in terms.iter().enumerate() {
            for (j, b) in terms.iter().enumerate() {
                if atom_truth(m, p.as_str(), a.as_str(), b.as_str())? {
                    set.insert((i, j));
                }
            }
        }
        relations.insert(p.clone(), set);
    }
    Ok(InducedRelations { terms, relations })
}

/// Shifts every point by `offset`; predicate vectors are unchanged.
pub fn transform_translate(m: &VectorModel, offset: &[f64]) -> Result<VectorModel, GeometryError> {
    if offset.len() != m.dimension {
        return Err(GeometryError::DimensionMismatch { expected: m.dimension, got: offset.len() });
    }
    let mut out = m.clone();
    for p in out.points.values_mut() {
        p.iter_mut().zip(offset).for_each(|(x, o)| *x += o);
    }
    Ok(out)
}

/// Scales every point by `lambda` about the origin.
pub fn transform_scale(m: &VectorModel, lambda: f64) -> VectorModel {
    let mut out = m.clone();
    for p in out.points.values_mut() {
        p.iter_mut().for_each(|x| *x *= lambda);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse_formula, parse_kb};

    fn unit_x() -> PredicateEmbedding {
        PredicateEmbedding::new(vec![0], vec![1.0]).unwrap()
    }

    fn two_points(b: Vec<f64>) -> VectorModel {
        VectorModel::new(2, 0.1, Semantics::Approximate)
            .unwrap()
            .with_point("a", vec![0.0, 0.0])
            .unwrap()
            .with_point("b", b)
            .unwrap()
            .with_predicate("P", unit_x())
            .unwrap()
    }

    #[test]
    fn residual_examples() {
        assert_eq!(relation_residual(&two_points(vec![1.0, 5.0]), "P", "a", "b").unwrap(), vec![0.0]);
        assert_eq!(relation_residual(&two_points(vec![-1.0, 0.0]), "P", "a", "b").unwrap(), vec![-2.0]);
        let r = relation_residual(&two_points(vec![1.05, 3.0]), "P", "a", "b").unwrap();
        assert!((r[0] - 0.05).abs() < 1e-12);
        assert_eq!(
            relation_residual(&two_points(vec![1.0, 0.0]), "P", "a", "zz"),
            Err(GeometryError::UnknownTerm("zz".into()))
        );
        assert_eq!(
            relation_residual(&two_points(vec![1.0, 0.0]), "R", "a", "b"),
            Err(GeometryError::UnknownPredicate("R".into()))
        );
    }

    #[test]
    fn approximate_truth() {
        assert!(atom_truth(&two_points(vec![1.05, 3.0]), "P", "a", "b").unwrap());
        assert!(!atom_truth(&two_points(vec![1.2, 3.0]), "P", "a", "b").unwrap());
    }

    #[test]
    fn strict_truth_is_magnitude_free() {
        let m = two_points(vec![0.5, 9.0]).with_mode(Semantics::Strict);
        assert!(atom_truth(&m, "P", "a", "b").unwrap());
        assert!(!atom_truth(&m, "P", "b", "a").unwrap());
        let m = two_points(vec![0.0, 1.0]).with_mode(Semantics::Strict);
        assert!(!atom_truth(&m, "P", "a", "b").unwrap(), "zero projection never same-direction");
    }

    #[test]
    fn strict_angle_tolerance() {
        let emb = PredicateEmbedding::new(vec![0, 1], vec![1.0, 0.0]).unwrap();
        let base = VectorModel::new(2, 0.0, Semantics::Strict)
            .unwrap()
            .with_point("a", vec![0.0, 0.0])
            .unwrap()
            .with_predicate("P", emb)
            .unwrap();
        let near = base.clone().with_point("b", vec![1.0, 1e-7]).unwrap();
        let far = base.with_point("b", vec![1.0, 1e-5]).unwrap();
        assert!(atom_truth(&near, "P", "a", "b").unwrap());
        assert!(!atom_truth(&far, "P", "a", "b").unwrap());
    }

    #[test]
    fn footnote_equal_points() {
        // K = N = 1, delta = 0: P(A,B) and P(A,C) pin B and C to the same point.
        let m = VectorModel::new(1, 0.0, Semantics::Strict)
            .unwrap()
            .with_point("A", vec![0.0])
            .unwrap()
            .with_point("B", vec![1.0])
            .unwrap()
            .with_point("C", vec![1.0])
            .unwrap()
            .with_predicate("P", unit_x())
            .unwrap();
        let approx = m.clone().with_mode(Semantics::Approximate).with_delta(1e-12);
        assert!(atom_truth(&approx, "P", "A", "B").unwrap());
        assert!(atom_truth(&approx, "P", "A", "C").unwrap());
        let moved = approx.clone().with_point("C", vec![1.0 + 1e-9]).unwrap();
        assert!(!atom_truth(&moved, "P", "A", "C").unwrap());
        assert_eq!(m.distance("B", "C").unwrap(), 0.0);
    }

    fn ab_domain() -> Vec<Term> {
        vec![Term::new("a"), Term::new("b")]
    }

    #[test]
    fn formula_examples() {
        let m = two_points(vec![1.0, 0.0]);
        let kb = parse_kb("P(a,b).").unwrap();
        let ex = parse_formula("exists x: P(a, x)", Some(&kb), None).unwrap();
        assert!(eval_formula(&m, &ex, &ab_domain()).unwrap());
        let all = parse_formula("forall x: P(a, x)", Some(&kb), None).unwrap();
        assert!(!eval_formula(&m, &all, &ab_domain()).unwrap());
        let neg = parse_formula("not P(a, b)", Some(&kb), None).unwrap();
        assert!(!eval_formula(&m, &neg, &ab_domain()).unwrap());
        let open = Formula::atom("P", Arg::var("y"), Arg::term("b"));
        assert_eq!(eval_formula(&m, &open, &ab_domain()), Err(GeometryError::FreeVariable("y".into())));
    }

    #[test]
    fn satisfaction_and_violations() {
        let kb = parse_kb("P(a,b).").unwrap();
        let exact = two_points(vec![1.0, 0.0]);
        assert_eq!(
            satisfies_kb(&exact, &kb).unwrap(),
            SatisfactionReport { satisfied: true, violations: vec![] }
        );
        // Perturb by 0.2 along the relation and shrink delta below it.
        let perturbed = two_points(vec![1.2, 0.0]).with_delta(0.15);
        let rep = satisfies_kb(&perturbed, &kb).unwrap();
        assert!(!rep.satisfied);
        assert_eq!(rep.violations, vec![Violation::Triple(Triple::new("P", "a", "b"))]);
    }

    #[test]
    fn modus_ponens_violation() {
        let kb = parse_kb("P(a,A).\nforall x: P(x,A) => Q(x,B).").unwrap();
        let e = PredicateEmbedding::new(vec![0], vec![1.0]).unwrap();
        let m = VectorModel::new(2, 0.1, Semantics::Approximate)
            .unwrap()
            .with_point("a", vec![0.0, 0.0])
            .unwrap()
            .with_point("A", vec![1.0, 0.0])
            .unwrap()
            .with_point("B", vec![5.0, 3.0])
            .unwrap()
            .with_predicate("P", e.clone())
            .unwrap()
            .with_predicate("Q", PredicateEmbedding::new(vec![1], vec![1.0]).unwrap())
            .unwrap();
        let rep = satisfies_kb(&m, &kb).unwrap();
        assert_eq!(rep.violations, vec![Violation::AxiomInstance { axiom: 0, term: Term::new("a") }]);
        let fixed = m.with_point("B", vec![5.0, 1.0]).unwrap();
        assert!(satisfies_kb(&fixed, &kb).unwrap().satisfied);
    }

    #[test]
    fn induced_relations_limits() {
        let kb = parse_kb("P(a,b).").unwrap();
        let exact = two_points(vec![1.0, 0.0]);
        let rel = induced_relations(&exact, &kb).unwrap();
        assert_eq!(rel.relations["P"], BTreeSet::from([(0, 1)]));
        let wide = exact.clone().with_delta(100.0);
        assert_eq!(induced_relations(&wide, &kb).unwrap().len(), 4);
    }

    #[test]
    fn translation() {
        let kb = parse_kb("P(a,b).").unwrap();
        let m = two_points(vec![1.0, 0.0]);
        assert_eq!(transform_translate(&m, &[0.0, 0.0]).unwrap(), m);
        let shifted = transform_translate(&m, &[5.0, -3.0]).unwrap();
        assert!(satisfies_kb(&shifted, &kb).unwrap().satisfied);
        assert_eq!(induced_relations(&shifted, &kb).unwrap(), induced_relations(&m, &kb).unwrap());
        assert!(matches!(
            transform_translate(&m, &[1.0]),
            Err(GeometryError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn embedding_validation() {
        assert!(PredicateEmbedding::new(vec![1, 0], vec![1.0, 0.0]).is_err());
        assert!(PredicateEmbedding::new(vec![0], vec![0.5]).is_err());
        assert!(PredicateEmbedding::new(vec![], vec![]).is_err());
        let e = PredicateEmbedding::normalized(vec![0, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(e.direction(), &[0.6, 0.8]);
        assert_eq!(e.embedded(3), vec![0.6, 0.0, 0.8]);
        let m = VectorModel::new(2, 0.1, Semantics::Approximate).unwrap();
        assert!(m.with_predicate("P", e).is_err());
    }
}
