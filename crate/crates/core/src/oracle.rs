//! Brute-force classical semantics over the KB's term domain.
//!
//! A structure assigns each predicate a subset of `terms x terms`. With `n`
//! terms and `p` predicates a structure is a `p * n^2` bit mask, bit
//! `pred * n^2 + head * n + tail` recording whether the atom holds. Masks are
//! enumerated in increasing numeric order with the triple bits pinned, so at
//! most `2^24` candidates are examined.
//!
//! Entailment here is finite-domain entailment over exactly the KB's terms,
//! which is the domain the axioms are unrolled over and queries range over.

use crate::geometry::InducedRelations;
use crate::inference::{query_closed, InferenceError, Verdict};
use crate::logic::{Arg, Formula, KnowledgeBase, Predicate, Query, Term, Variable};
use crate::solver::Ensemble;
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Maximum number of structure bits (`|terms|^2 * |predicates|`) the
/// enumerator accepts.
pub const ENUMERATION_CAP_BITS: usize = 24;

/// Bit set over all ground atoms of a KB.
pub type Mask = u128;

/// Largest structure a [`Mask`] can hold.
pub const MASK_BITS: usize = Mask::BITS as usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("finite-domain enumeration needs {required_bits} structure bits, above the cap of {cap}")]
    CapExceeded { required_bits: usize, cap: usize },
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("free variable `{0}`")]
    FreeVariable(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Number of bits a structure over `kb`'s symbols occupies.
pub fn structure_bits(kb: &KnowledgeBase) -> usize {
    kb.terms().len().pow(2) * kb.predicates().len()
}

fn check_cap(kb: &KnowledgeBase) -> Result<(), OracleError> {
    let required_bits = structure_bits(kb);
    if required_bits > ENUMERATION_CAP_BITS {
        return Err(OracleError::CapExceeded { required_bits, cap: ENUMERATION_CAP_BITS });
    }
    Ok(())
}

/// A Tarskian structure over the KB's terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteStructure {
    terms: Vec<Term>,
    preds: Vec<Predicate>,
    mask: Mask,
}

impl FiniteStructure {
    pub fn mask(&self) -> Mask {
        self.mask
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn bit(&self, p: usize, h: usize, t: usize) -> u32 {
        let n = self.terms.len();
        (p * n * n + h * n + t) as u32
    }

    pub fn holds(&self, pred: &str, head: &str, tail: &str) -> bool {
        let idx = |name: &str| self.terms.iter().position(|t| t.as_str() == name);
        match (self.preds.iter().position(|p| p.as_str() == pred), idx(head), idx(tail)) {
            (Some(p), Some(h), Some(t)) => self.mask >> self.bit(p, h, t) & 1 == 1,
            _ => false,
        }
    }

    /// Extension of every predicate.
    pub fn relations(&self) -> IndexMap<Predicate, BTreeSet<(Term, Term)>> {
        let n = self.terms.len();
        self.preds
            .iter()
            .enumerate()
            .map(|(p, pred)| {
                let mut set = BTreeSet::new();
                for h in 0..n {
                    for t in 0..n {
                        if self.mask >> self.bit(p, h, t) & 1 == 1 {
                            set.insert((self.terms[h].clone(), self.terms[t].clone()));
                        }
                    }
                }
                (pred.clone(), set)
            })
            .collect()
    }

    /// The structure a vector model induces. Requires at most 64 bits.
    pub fn from_induced(rel: &InducedRelations, kb: &KnowledgeBase) -> Result<FiniteStructure, OracleError> {
        let bits = structure_bits(kb);
        if bits > MASK_BITS {
            return Err(OracleError::CapExceeded { required_bits: bits, cap: MASK_BITS });
        }
        let terms: Vec<Term> = kb.terms().iter().cloned().collect();
        let preds: Vec<Predicate> = kb.predicates().iter().cloned().collect();
        let n = terms.len();
        let mut mask = 0 as Mask;
        for (p, pred) in preds.iter().enumerate() {
            for h in 0..n {
                for t in 0..n {
                    if rel.holds(pred.as_str(), h, t) {
                        mask |= 1 << (p * n * n + h * n + t);
                    }
                }
            }
        }
        Ok(FiniteStructure { terms, preds, mask })
    }

    /// Classical evaluation of a closed formula, quantifiers over the terms.
    pub fn eval(&self, f: &Formula, kb: &KnowledgeBase) -> Result<bool, OracleError> {
        let g = IndexedFormula::new(f, kb)?;
        Ok(g.eval(self.mask, self.terms.len(), &mut Vec::new()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Const(usize),
    /// Position in the quantifier environment, outermost first.
    Var(usize),
}

/// A formula with symbols resolved to indices.
#[derive(Debug, Clone)]
enum IndexedFormula {
    Atom { p: usize, h: Slot, t: Slot },
    Not(Box<IndexedFormula>),
    And(Box<IndexedFormula>, Box<IndexedFormula>),
    Or(Box<IndexedFormula>, Box<IndexedFormula>),
    Implies(Box<IndexedFormula>, Box<IndexedFormula>),
    Forall(Box<IndexedFormula>),
    Exists(Box<IndexedFormula>),
}

impl IndexedFormula {
    fn new(f: &Formula, kb: &KnowledgeBase) -> Result<IndexedFormula, OracleError> {
        Self::build(f, kb, &mut Vec::new())
    }

    fn build<'a>(f: &'a Formula, kb: &KnowledgeBase, scope: &mut Vec<&'a Variable>) -> Result<Self, OracleError> {
        let b = |g: &'a Formula, scope: &mut Vec<&'a Variable>| Self::build(g, kb, scope).map(Box::new);
        Ok(match f {
            Formula::Atom { pred, args } => {
                let p = kb.predicate_index(pred.as_str()).ok_or_else(|| OracleError::UnknownPredicate(pred.to_string()))?;
                let slot = |a: &Arg| match a {
                    Arg::Term(t) => {
                        kb.term_index(t.as_str()).map(Slot::Const).ok_or_else(|| OracleError::UnknownTerm(t.to_string()))
                    }
                    Arg::Var(v) => scope
                        .iter()
                        .rposition(|x| *x == v)
                        .map(Slot::Var)
                        .ok_or_else(|| OracleError::FreeVariable(v.to_string())),
                };
                IndexedFormula::Atom { p, h: slot(&args[0])?, t: slot(&args[1])? }
            }
            Formula::Not(g) => IndexedFormula::Not(b(g, scope)?),
            Formula::And(x, y) => IndexedFormula::And(b(x, scope)?, b(y, scope)?),
            Formula::Or(x, y) => IndexedFormula::Or(b(x, scope)?, b(y, scope)?),
            Formula::Implies(x, y) => IndexedFormula::Implies(b(x, scope)?, b(y, scope)?),
            Formula::Forall(v, g) | Formula::Exists(v, g) => {
                scope.push(v);
                let body = b(g, scope);
                scope.pop();
                if matches!(f, Formula::Forall(..)) {
                    IndexedFormula::Forall(body?)
                } else {
                    IndexedFormula::Exists(body?)
                }
            }
        })
    }

    fn eval(&self, mask: Mask, n: usize, env: &mut Vec<usize>) -> bool {
        match self {
            IndexedFormula::Atom { p, h, t } => {
                let r = |s: &Slot| match *s {
                    Slot::Const(i) => i,
                    Slot::Var(d) => env[d],
                };
                mask >> (p * n * n + r(h) * n + r(t)) & 1 == 1
            }
            IndexedFormula::Not(g) => !g.eval(mask, n, env),
            IndexedFormula::And(a, b) => a.eval(mask, n, env) && b.eval(mask, n, env),
            IndexedFormula::Or(a, b) => a.eval(mask, n, env) || b.eval(mask, n, env),
            IndexedFormula::Implies(a, b) => !a.eval(mask, n, env) || b.eval(mask, n, env),
            IndexedFormula::Forall(g) | IndexedFormula::Exists(g) => {
                let universal = matches!(self, IndexedFormula::Forall(_));
                for i in 0..n {
                    env.push(i);
                    let v = g.eval(mask, n, env);
                    env.pop();
                    if v != universal {
                        return !universal;
                    }
                }
                universal
            }
        }
    }
}

/// The KB reduced to bit operations. Bits are partitioned into the connected
/// components of the constraints (axiom instances link two bits, a ground
/// constraint links every bit it mentions). Satisfying structures are exactly
/// the products of per-component solutions, so each component is enumerated
/// on its own.
struct CompiledKb {
    n: usize,
    required: Mask,
    implications: Vec<(u32, u32)>,
    constraints: Vec<(IndexedFormula, Mask)>,
    components: Vec<Mask>,
}

impl IndexedFormula {
    /// Bits the formula may read under any assignment of its variables.
    fn support(&self, n: usize) -> Mask {
        match self {
            IndexedFormula::Atom { p, h, t } => {
                let range = |s: &Slot| match *s {
                    Slot::Const(i) => i..i + 1,
                    Slot::Var(_) => 0..n,
                };
                let mut m = 0 as Mask;
                for a in range(h) {
                    for b in range(t) {
                        m |= 1 << (p * n * n + a * n + b);
                    }
                }
                m
            }
            IndexedFormula::Not(g) | IndexedFormula::Forall(g) | IndexedFormula::Exists(g) => g.support(n),
            IndexedFormula::And(a, b) | IndexedFormula::Or(a, b) | IndexedFormula::Implies(a, b) => {
                a.support(n) | b.support(n)
            }
        }
    }
}

fn bits_of(mask: Mask) -> impl Iterator<Item = u32> {
    (0..MASK_BITS as u32).filter(move |b| mask >> b & 1 == 1)
}

impl CompiledKb {
    fn new(kb: &KnowledgeBase) -> Result<CompiledKb, OracleError> {
        let bits = structure_bits(kb);
        if bits > MASK_BITS {
            return Err(OracleError::CapExceeded { required_bits: bits, cap: MASK_BITS });
        }
        let n = kb.terms().len();
        let bit = |p: &str, h: &str, t: &str| -> Result<u32, OracleError> {
            let p = kb.predicate_index(p).ok_or_else(|| OracleError::UnknownPredicate(p.into()))?;
            let h = kb.term_index(h).ok_or_else(|| OracleError::UnknownTerm(h.into()))?;
            let t = kb.term_index(t).ok_or_else(|| OracleError::UnknownTerm(t.into()))?;
            Ok((p * n * n + h * n + t) as u32)
        };
        let mut required = 0 as Mask;
        for tr in kb.triples() {
            required |= 1 << bit(tr.pred.as_str(), tr.head.as_str(), tr.tail.as_str())?;
        }
        let mut implications = Vec::new();
        for ax in kb.axioms() {
            for t in kb.terms() {
                implications.push((
                    bit(ax.pred_p.as_str(), t.as_str(), ax.const_a.as_str())?,
                    bit(ax.pred_q.as_str(), t.as_str(), ax.const_b.as_str())?,
                ));
            }
        }
        let constraints: Vec<(IndexedFormula, Mask)> = kb
            .constraints()
            .iter()
            .map(|c| IndexedFormula::new(c, kb).map(|f| {
                let s = f.support(n);
                (f, s)
            }))
            .collect::<Result<_, _>>()?;

        let mut parent: Vec<usize> = (0..bits).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut union = |a: usize, b: usize| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        };
        for &(a, c) in &implications {
            union(a as usize, c as usize);
        }
        for (_, s) in &constraints {
            let first = s.trailing_zeros() as usize;
            for b in bits_of(*s) {
                union(first, b as usize);
            }
        }
        let mut by_root: IndexMap<usize, Mask> = IndexMap::new();
        for b in 0..bits {
            *by_root.entry(find(&mut parent, b)).or_default() |= 1 << b;
        }
        let components = by_root.into_values().collect();
        Ok(CompiledKb { n, required, implications, constraints, components })
    }

    /// Union of the components that intersect `bits`.
    fn closure(&self, bits: Mask) -> Mask {
        self.components.iter().filter(|c| *c & bits != 0).fold(0, |acc, c| acc | c)
    }

    fn all_bits(&self) -> Mask {
        self.components.iter().fold(0, |acc, c| acc | c)
    }

    /// The sub-problem on `bits`, which must be a union of components.
    fn scope(&self, bits: Mask) -> Result<Scope<'_>, OracleError> {
        let required_bits = bits.count_ones() as usize;
        if required_bits > ENUMERATION_CAP_BITS {
            return Err(OracleError::CapExceeded { required_bits, cap: ENUMERATION_CAP_BITS });
        }
        Ok(Scope {
            n: self.n,
            required: self.required & bits,
            free: bits_of(bits & !self.required).collect(),
            implications: self.implications.iter().copied().filter(|&(a, _)| bits >> a & 1 == 1).collect(),
            constraints: self.constraints.iter().filter(|(_, s)| s & bits != 0).map(|(f, _)| f).collect(),
        })
    }

    /// Per-component solution counts.
    fn component_counts(&self) -> Result<Vec<u64>, OracleError> {
        self.components.iter().map(|&c| Ok(self.scope(c)?.count())).collect()
    }
}

struct Scope<'a> {
    n: usize,
    required: Mask,
    free: Vec<u32>,
    implications: Vec<(u32, u32)>,
    constraints: Vec<&'a IndexedFormula>,
}

impl Scope<'_> {
    fn candidates(&self) -> u64 {
        1u64 << self.free.len()
    }

    /// The `k`-th candidate: the bits of `k` spread over the free positions,
    /// so candidates come in increasing mask order.
    fn mask_for(&self, k: u64) -> Mask {
        let mut m = self.required;
        let mut rest = k;
        let mut i = 0;
        while rest != 0 {
            if rest & 1 == 1 {
                m |= 1 << self.free[i];
            }
            rest >>= 1;
            i += 1;
        }
        m
    }

    fn satisfies(&self, m: Mask) -> bool {
        self.implications.iter().all(|&(a, c)| m >> a & 1 == 0 || m >> c & 1 == 1)
            && self.constraints.iter().all(|f| f.eval(m, self.n, &mut Vec::new()))
    }

    /// Folds over satisfying masks in parallel chunks. `reduce` must be
    /// commutative for the result to be deterministic.
    fn fold<T: Send>(
        &self,
        identity: impl Fn() -> T + Sync + Send,
        fold: impl Fn(&mut T, Mask) + Sync + Send,
        reduce: impl Fn(T, T) -> T + Sync + Send,
    ) -> T {
        let total = self.candidates();
        let chunks = total.min(256);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let (lo, hi) = (total * c / chunks, total * (c + 1) / chunks);
                let mut acc = identity();
                for k in lo..hi {
                    let m = self.mask_for(k);
                    if self.satisfies(m) {
                        fold(&mut acc, m);
                    }
                }
                acc
            })
            .reduce(&identity, &reduce)
    }

    fn count(&self) -> u64 {
        if self.candidates() <= 64 {
            return (0..self.candidates()).filter(|&k| self.satisfies(self.mask_for(k))).count() as u64;
        }
        self.fold(|| 0u64, |acc, _| *acc += 1, |a, b| a + b)
    }
}

/// Satisfying structures in increasing mask order. The whole structure must
/// fit the enumeration cap.
pub fn enumerate_satisfying(kb: &KnowledgeBase) -> Result<impl Iterator<Item = FiniteStructure>, OracleError> {
    check_cap(kb)?;
    let c = CompiledKb::new(kb)?;
    let all = c.all_bits();
    let terms: Vec<Term> = kb.terms().iter().cloned().collect();
    let preds: Vec<Predicate> = kb.predicates().iter().cloned().collect();
    let scope = c.scope(all)?;
    let (free, required, implications) = (scope.free.clone(), scope.required, scope.implications.clone());
    let n = c.n;
    let constraints: Vec<IndexedFormula> = c.constraints.into_iter().map(|(f, _)| f).collect();
    let scope = move |k: u64| {
        let mut m = required;
        for (i, b) in free.iter().enumerate() {
            if k >> i & 1 == 1 {
                m |= 1 << b;
            }
        }
        let ok = implications.iter().all(|&(a, c)| m >> a & 1 == 0 || m >> c & 1 == 1)
            && constraints.iter().all(|f| f.eval(m, n, &mut Vec::new()));
        ok.then_some(m)
    };
    let candidates = 1u64 << (all.count_ones() - required.count_ones());
    Ok((0..candidates).filter_map(move |k| {
        scope(k).map(|m| FiniteStructure { terms: terms.clone(), preds: preds.clone(), mask: m })
    }))
}

/// Number of satisfying structures, a product of per-component counts.
pub fn count_satisfying(kb: &KnowledgeBase) -> Result<u128, OracleError> {
    let c = CompiledKb::new(kb)?;
    Ok(c.component_counts()?.into_iter().map(u128::from).product())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleStatus {
    /// True in every satisfying structure (vacuously so if there are none).
    Entailed,
    /// False in every satisfying structure, and at least one exists.
    Refuted,
    Contingent,
}

impl fmt::Display for OracleStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            OracleStatus::Entailed => "entailed",
            OracleStatus::Refuted => "refuted",
            OracleStatus::Contingent => "contingent",
        })
    }
}

/// Status of each closed formula plus the number of satisfying structures.
/// A formula is decided by enumerating only the components it reads; the
/// others are independent and merely need to be satisfiable.
pub fn statuses(kb: &KnowledgeBase, formulas: &[Formula]) -> Result<(Vec<OracleStatus>, u128), OracleError> {
    let c = CompiledKb::new(kb)?;
    let indexed: Vec<IndexedFormula> = formulas.iter().map(|f| IndexedFormula::new(f, kb)).collect::<Result<_, _>>()?;
    let count: u128 = c.component_counts()?.into_iter().map(u128::from).product();
    let mut out = Vec::with_capacity(indexed.len());
    for f in &indexed {
        if count == 0 {
            out.push(OracleStatus::Entailed);
            continue;
        }
        let scope = c.scope(c.closure(f.support(c.n)))?;
        let (seen_true, seen_false) = scope.fold(
            || (false, false),
            |acc, m| {
                if f.eval(m, c.n, &mut Vec::new()) {
                    acc.0 = true;
                } else {
                    acc.1 = true;
                }
            },
            |a, b| (a.0 || b.0, a.1 || b.1),
        );
        out.push(match (seen_true, seen_false) {
            (_, false) => OracleStatus::Entailed,
            (false, true) => OracleStatus::Refuted,
            (true, true) => OracleStatus::Contingent,
        });
    }
    Ok((out, count))
}

pub fn oracle_status(kb: &KnowledgeBase, f: &Formula) -> Result<OracleStatus, OracleError> {
    Ok(statuses(kb, std::slice::from_ref(f))?.0[0])
}

/// True iff `f` holds in every structure over the KB's terms that satisfies
/// the KB.
pub fn classical_entails(kb: &KnowledgeBase, f: &Formula) -> Result<bool, OracleError> {
    Ok(oracle_status(kb, f)? == OracleStatus::Entailed)
}

/// Entailment status of every ground atom, from the AND and OR of all
/// satisfying masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomStatuses {
    n: usize,
    preds: Vec<Predicate>,
    terms: Vec<Term>,
    and_mask: Mask,
    or_mask: Mask,
    pub satisfying: u128,
}

impl AtomStatuses {
    pub fn status(&self, pred: usize, head: usize, tail: usize) -> OracleStatus {
        let b = pred * self.n * self.n + head * self.n + tail;
        if self.satisfying == 0 || self.and_mask >> b & 1 == 1 {
            OracleStatus::Entailed
        } else if self.or_mask >> b & 1 == 0 {
            OracleStatus::Refuted
        } else {
            OracleStatus::Contingent
        }
    }

    /// Every ground atom with its status, in bit order.
    pub fn atoms(&self) -> Vec<(Formula, OracleStatus)> {
        let mut out = Vec::with_capacity(self.preds.len() * self.n * self.n);
        for (p, pred) in self.preds.iter().enumerate() {
            for h in 0..self.n {
                for t in 0..self.n {
                    let f = Formula::ground(pred.as_str(), self.terms[h].as_str(), self.terms[t].as_str());
                    out.push((f, self.status(p, h, t)));
                }
            }
        }
        out
    }
}

pub fn atom_statuses(kb: &KnowledgeBase) -> Result<AtomStatuses, OracleError> {
    let c = CompiledKb::new(kb)?;
    let (mut and_mask, mut or_mask, mut satisfying) = (0 as Mask, 0 as Mask, 1u128);
    for &comp in &c.components {
        let (a, o, k) = c.scope(comp)?.fold(
            || (Mask::MAX, 0 as Mask, 0u64),
            |(a, o, k), m| {
                *a &= m;
                *o |= m;
                *k += 1;
            },
            |(a1, o1, k1), (a2, o2, k2)| (a1 & a2, o1 | o2, k1 + k2),
        );
        and_mask |= a & comp;
        or_mask |= o & comp;
        satisfying *= u128::from(k);
    }
    Ok(AtomStatuses {
        n: c.n,
        preds: kb.predicates().iter().cloned().collect(),
        terms: kb.terms().iter().cloned().collect(),
        and_mask,
        or_mask,
        satisfying,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    /// TRUE on entailed, or FALSE on refuted.
    Exact,
    /// TRUE on contingent.
    Generalization,
    /// FALSE on contingent.
    NegativeGeneralization,
    /// UNKNOWN on contingent or refuted.
    Undecided,
    /// TRUE on refuted.
    Unsound,
    /// FALSE or UNKNOWN on entailed.
    MissedEntailment,
}

pub fn classify(verdict: Verdict, status: OracleStatus) -> Classification {
    use Classification::*;
    match (verdict, status) {
        (Verdict::True, OracleStatus::Entailed) | (Verdict::False, OracleStatus::Refuted) => Exact,
        (Verdict::True, OracleStatus::Contingent) => Generalization,
        (Verdict::False, OracleStatus::Contingent) => NegativeGeneralization,
        (Verdict::Unknown, OracleStatus::Contingent | OracleStatus::Refuted) => Undecided,
        (Verdict::True, OracleStatus::Refuted) => Unsound,
        (Verdict::False | Verdict::Unknown, OracleStatus::Entailed) => MissedEntailment,
    }
}

impl Classification {
    /// Outcomes impossible for an ensemble whose members all satisfy the KB.
    pub fn is_violation(self) -> bool {
        matches!(self, Classification::Unsound | Classification::MissedEntailment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryComparison {
    pub name: String,
    pub formula: String,
    pub verdict: Verdict,
    pub models_true: usize,
    pub models: usize,
    pub status: OracleStatus,
    pub class: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountCell {
    pub verdict: Verdict,
    pub status: OracleStatus,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub satisfying_structures: u128,
    pub rows: Vec<QueryComparison>,
    /// All nine verdict x status cells, verdict-major.
    pub counts: Vec<CountCell>,
    pub generalization_hits: Vec<String>,
    pub soundness_violations: Vec<String>,
}

impl ComparisonReport {
    pub fn has_violations(&self) -> bool {
        !self.soundness_violations.is_empty()
    }

    pub fn count(&self, verdict: Verdict, status: OracleStatus) -> usize {
        self.counts.iter().find(|c| c.verdict == verdict && c.status == status).map_or(0, |c| c.count)
    }

    /// Generalization hits over queries the oracle leaves contingent.
    pub fn generalization_rate(&self) -> Option<f64> {
        let contingent = self.rows.iter().filter(|r| r.status == OracleStatus::Contingent).count();
        (contingent > 0).then(|| self.generalization_hits.len() as f64 / contingent as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const VERDICTS: [Verdict; 3] = [Verdict::True, Verdict::False, Verdict::Unknown];
const STATUSES: [OracleStatus; 3] = [OracleStatus::Entailed, OracleStatus::Refuted, OracleStatus::Contingent];

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "satisfying structures: {}", self.satisfying_structures)?;
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<w$}  {:<8}  {:<7}  {:<10}  class", "query", "verdict", "models", "oracle")?;
        for r in &self.rows {
            let class = serde_json::to_value(r.class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let models = format!("{}/{}", r.models_true, r.models);
            writeln!(f, "{:<w$}  {:<8}  {:<7}  {:<10}  {class}", r.name, r.verdict, models, r.status)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<8}  {:>8}  {:>8}  {:>10}", "", "entailed", "refuted", "contingent")?;
        for v in VERDICTS {
            let c: Vec<usize> = STATUSES.iter().map(|s| self.count(v, *s)).collect();
            writeln!(f, "{:<8}  {:>8}  {:>8}  {:>10}", v, c[0], c[1], c[2])?;
        }
        writeln!(f)?;
        match self.generalization_rate() {
            Some(r) => writeln!(f, "generalization hits: {} ({:.3} of contingent queries)", self.generalization_hits.len(), r)?,
            None => writeln!(f, "generalization hits: {}", self.generalization_hits.len())?,
        }
        writeln!(f, "soundness violations: {}", self.soundness_violations.len())?;
        for v in &self.soundness_violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Expands binding queries into one closed query per term, named `name[t]`.
pub fn expand_queries(queries: &[Query], kb: &KnowledgeBase) -> Vec<(String, Formula)> {
    let mut out = Vec::new();
    for q in queries {
        match &q.var {
            None => out.push((q.name.clone(), q.formula.clone())),
            Some(v) => {
                for t in kb.terms() {
                    out.push((format!("{}[{t}]", q.name), q.formula.substitute(v, t)));
                }
            }
        }
    }
    out
}

/// Compares ensemble verdicts with oracle statuses for each named closed
/// formula.
pub fn compare_formulas(
    e: &Ensemble,
    kb: &KnowledgeBase,
    queries: &[(String, Formula)],
) -> Result<ComparisonReport, OracleError> {
    let formulas: Vec<Formula> = queries.iter().map(|(_, f)| f.clone()).collect();
    let (st, satisfying) = statuses(kb, &formulas)?;
    let mut rows = Vec::with_capacity(queries.len());
    for ((name, f), status) in queries.iter().zip(st) {
        let v = query_closed(e, f, kb)?;
        let class = classify(v.value, status);
        rows.push(QueryComparison {
            name: name.clone(),
            formula: f.to_string(),
            verdict: v.value,
            models_true: v.true_count(),
            models: v.per_model.len(),
            status,
            class,
        });
    }
    let mut counts = Vec::with_capacity(9);
    for verdict in VERDICTS {
        for status in STATUSES {
            let count = rows.iter().filter(|r| r.verdict == verdict && r.status == status).count();
            counts.push(CountCell { verdict, status, count });
        }
    }
    let generalization_hits =
        rows.iter().filter(|r| r.class == Classification::Generalization).map(|r| r.name.clone()).collect();
    let soundness_violations = rows
        .iter()
        .filter(|r| r.class.is_violation())
        .map(|r| format!("{}: {} is {} but the ensemble says {}", r.name, r.formula, r.status, r.verdict))
        .collect();
    Ok(ComparisonReport { satisfying_structures: satisfying, rows, counts, generalization_hits, soundness_violations })
}

/// [`compare_formulas`] over named queries, binding queries expanded per term.
pub fn compare(e: &Ensemble, kb: &KnowledgeBase, queries: &[Query]) -> Result<ComparisonReport, OracleError> {
    compare_formulas(e, kb, &expand_queries(queries, kb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{parse_formula, parse_kb, Triple};
    use proptest::prelude::*;

    fn f(kb: &KnowledgeBase, s: &str) -> Formula {
        parse_formula(s, Some(kb), None).unwrap()
    }

    #[test]
    fn counts_for_small_kbs() {
        let kb = parse_kb("P(a,b).").unwrap();
        assert_eq!(count_satisfying(&kb).unwrap(), 8);
        let all: Vec<_> = enumerate_satisfying(&kb).unwrap().collect();
        assert_eq!(all.len(), 8);
        assert!(all.iter().all(|s| s.holds("P", "a", "b")));
        assert!(all.windows(2).all(|w| w[0].mask() < w[1].mask()));

        let kb = parse_kb("term a. term b. pred P.").unwrap();
        assert_eq!(count_satisfying(&kb).unwrap(), 16);
    }

    #[test]
    fn modus_ponens_entailment() {
        let kb = parse_kb("P(a,A).\nforall x: P(x,A) => Q(x,B).").unwrap();
        assert_eq!(structure_bits(&kb), 18);
        assert!(enumerate_satisfying(&kb).unwrap().all(|s| s.holds("Q", "a", "B")));
        assert!(classical_entails(&kb, &f(&kb, "Q(a,B)")).unwrap());
        assert!(!classical_entails(&kb, &f(&kb, "Q(B,B)")).unwrap());
        assert!(classical_entails(&kb, &f(&kb, "P(a,B) or not P(a,B)")).unwrap());
        assert_eq!(oracle_status(&kb, &f(&kb, "not Q(a,B)")).unwrap(), OracleStatus::Refuted);
        assert_eq!(oracle_status(&kb, &f(&kb, "Q(B,B)")).unwrap(), OracleStatus::Contingent);
        let atoms = atom_statuses(&kb).unwrap();
        let q = kb.predicate_index("Q").unwrap();
        let (a, b) = (kb.term_index("a").unwrap(), kb.term_index("B").unwrap());
        assert_eq!(atoms.status(q, a, b), OracleStatus::Entailed);
        assert_eq!(atoms.status(q, b, b), OracleStatus::Contingent);
    }

    #[test]
    fn cap_is_enforced() {
        let kb = parse_kb("P(a,b). P(c,d). term e.").unwrap();
        assert_eq!(count_satisfying(&kb).unwrap(), 1 << 23);
        assert!(matches!(enumerate_satisfying(&kb), Err(OracleError::CapExceeded { required_bits: 25, cap: 24 })));
        let all_pairs = f(&kb, "forall x: forall y: P(x,y)");
        assert_eq!(oracle_status(&kb, &all_pairs), Err(OracleError::CapExceeded { required_bits: 25, cap: 24 }));
        assert_eq!(oracle_status(&kb, &f(&kb, "exists y: P(a,y)")).unwrap(), OracleStatus::Entailed);
    }

    #[test]
    fn fifty_bit_kb_is_decided_by_components() {
        let kb = parse_kb("P(a,A). P(b,c).\nforall x: P(x,A) => Q(x,B).\nforall x: Q(x,B) => P(x,c).").unwrap();
        assert_eq!(structure_bits(&kb), 50);
        let atoms = atom_statuses(&kb).unwrap();
        let (p, q) = (kb.predicate_index("P").unwrap(), kb.predicate_index("Q").unwrap());
        let t = |s: &str| kb.term_index(s).unwrap();
        assert_eq!(atoms.status(q, t("a"), t("B")), OracleStatus::Entailed);
        assert_eq!(atoms.status(p, t("a"), t("c")), OracleStatus::Entailed);
        assert_eq!(atoms.status(q, t("b"), t("B")), OracleStatus::Contingent);
        // Each term x contributes a chain P(x,A) -> Q(x,B) -> P(x,c) with 4
        // solutions: 1 for a, 3 for b (chain end pinned); 35 other bits are free.
        assert_eq!(count_satisfying(&kb).unwrap(), atoms.satisfying);
        assert_eq!(atoms.satisfying, 4u128.pow(3) * 3 * (1u128 << 35));
        assert!(classical_entails(&kb, &f(&kb, "exists x: Q(x,B) and P(x,c)")).unwrap());
    }

    #[test]
    fn unsatisfiable_kb_entails_everything() {
        let kb = parse_kb("P(a,b).\nnot P(a,b).").unwrap();
        assert_eq!(count_satisfying(&kb).unwrap(), 0);
        assert!(classical_entails(&kb, &f(&kb, "P(b,a)")).unwrap());
        assert_eq!(atom_statuses(&kb).unwrap().status(0, 1, 0), OracleStatus::Entailed);
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify(Verdict::True, OracleStatus::Contingent), Classification::Generalization);
        assert!(classify(Verdict::True, OracleStatus::Refuted).is_violation());
        assert!(classify(Verdict::Unknown, OracleStatus::Entailed).is_violation());
        assert!(!classify(Verdict::False, OracleStatus::Contingent).is_violation());
    }

    #[test]
    fn binding_queries_expand_per_term() {
        let kb = parse_kb("P(a,b).\nquery q(x): P(x,b).").unwrap();
        let ex = expand_queries(kb.queries(), &kb);
        assert_eq!(ex.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), vec!["q[a]", "q[b]"]);
    }

    /// Direct filter over every mask, independent of the pinned-bit
    /// enumeration.
    fn direct_count(kb: &KnowledgeBase) -> u64 {
        let bits = structure_bits(kb);
        let terms: Vec<Term> = kb.terms().iter().cloned().collect();
        let preds: Vec<Predicate> = kb.predicates().iter().cloned().collect();
        let mut count = 0;
        for m in 0..(1u64 << bits) as Mask {
            let s = FiniteStructure { terms: terms.clone(), preds: preds.clone(), mask: m };
            let ok = kb.triples().all(|t| s.holds(t.pred.as_str(), t.head.as_str(), t.tail.as_str()))
                && kb.axioms().all(|ax| s.eval(&ax.to_formula(), kb).unwrap())
                && kb.constraints().iter().all(|c| s.eval(c, kb).unwrap());
            count += ok as u64;
        }
        count
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn enumeration_matches_direct_filter(
            triples in proptest::collection::vec((0usize..2, 0usize..3, 0usize..3), 0..4),
            axiom in proptest::option::of((0usize..2, 0usize..3, 0usize..2, 0usize..3)),
        ) {
            let names = ["a", "b", "c"];
            let preds = ["P", "Q"];
            let mut kb = KnowledgeBase::new();
            for t in names { kb.add_term(t).unwrap(); }
            for p in preds { kb.add_predicate(p).unwrap(); }
            for (p, h, t) in triples {
                kb.add_triple(Triple::new(preds[p], names[h], names[t])).unwrap();
            }
            if let Some((p, a, q, b)) = axiom {
                kb.add_axiom(crate::logic::Axiom::new(preds[p], names[a], preds[q], names[b])).unwrap();
            }
            prop_assert_eq!(count_satisfying(&kb).unwrap(), u128::from(direct_count(&kb)));
        }

        #[test]
        fn adding_a_triple_preserves_entailment(
            extra in (0usize..2, 0usize..2, 0usize..2),
            probe in (0usize..2, 0usize..2, 0usize..2),
        ) {
            let kb = parse_kb("term a. term b. pred P. pred Q. P(a,b).\nforall x: P(x,b) => Q(x,a).").unwrap();
            let (names, preds) = (["a", "b"], ["P", "Q"]);
            let g = Formula::ground(preds[probe.0], names[probe.1], names[probe.2]);
            let mut stronger = kb.clone();
            stronger.add_triple(Triple::new(preds[extra.0], names[extra.1], names[extra.2])).unwrap();
            if classical_entails(&kb, &g).unwrap() {
                prop_assert!(classical_entails(&stronger, &g).unwrap());
            }
        }
    }
}
