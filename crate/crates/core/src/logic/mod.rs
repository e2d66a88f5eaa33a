//! The logical language: terms, binary predicates, closed formulas and the
//! knowledge base container.
//!
//! The language has no function symbols and only binary predicates. Ground
//! atoms asserted in a KB are *triples*; universally quantified statements are
//! restricted to the implication template `forall x: P(x, A) => Q(x, B)`.
//! Queries may be arbitrary closed formulas (or formulas with one declared
//! binding variable).

mod display;
mod parser;

pub use display::print_kb;
pub use parser::{parse_formula, parse_kb, parse_queries, ParseError, ParseErrorKind};

use indexmap::IndexSet;
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

macro_rules! symbol_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(String);

        impl $name {
            pub fn new(name: impl Into<String>) -> Self {
                $name(name.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

symbol_type!(
    /// A constant symbol. Terms denote points in a vector model and objects
    /// in a finite structure.
    Term
);
symbol_type!(
    /// A binary predicate symbol.
    Predicate
);
symbol_type!(
    /// A quantified (or query-bound) variable.
    Variable
);

/// Keywords that can never be used as identifiers.
pub const KEYWORDS: &[&str] = &["term", "pred", "query", "forall", "exists", "not", "and", "or"];

/// Whether `s` matches `[A-Za-z_][A-Za-z0-9_]*` and is not a keyword.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !KEYWORDS.contains(&s)
}

/// Argument position of an atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arg {
    Term(Term),
    Var(Variable),
}

impl Arg {
    pub fn term(name: &str) -> Arg {
        Arg::Term(Term::new(name))
    }

    pub fn var(name: &str) -> Arg {
        Arg::Var(Variable::new(name))
    }

    pub fn name(&self) -> &str {
        match self {
            Arg::Term(t) => t.as_str(),
            Arg::Var(v) => v.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Atom { pred: Predicate, args: [Arg; 2] },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Forall(Variable, Box<Formula>),
    Exists(Variable, Box<Formula>),
}

impl Formula {
    pub fn atom(pred: &str, head: Arg, tail: Arg) -> Formula {
        Formula::Atom { pred: Predicate::new(pred), args: [head, tail] }
    }

    /// A ground atom over two terms.
    pub fn ground(pred: &str, head: &str, tail: &str) -> Formula {
        Formula::atom(pred, Arg::term(head), Arg::term(tail))
    }

    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall(var: &str, body: Formula) -> Formula {
        Formula::Forall(Variable::new(var), Box::new(body))
    }

    pub fn exists(var: &str, body: Formula) -> Formula {
        Formula::Exists(Variable::new(var), Box::new(body))
    }

    /// Variables occurring in atoms that are not bound by an enclosing
    /// quantifier.
    pub fn free_vars(&self) -> BTreeSet<Variable> {
        let mut out = BTreeSet::new();
        let mut bound = Vec::new();
        collect_free(self, &mut bound, &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// No quantifiers and no variables anywhere.
    pub fn is_ground(&self) -> bool {
        match self {
            Formula::Atom { args, .. } => args.iter().all(|a| matches!(a, Arg::Term(_))),
            Formula::Not(g) => g.is_ground(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.is_ground() && b.is_ground()
            }
            Formula::Forall(..) | Formula::Exists(..) => false,
        }
    }

    /// Number of nodes in the syntax tree.
    pub fn size(&self) -> usize {
        match self {
            Formula::Atom { .. } => 1,
            Formula::Not(g) | Formula::Forall(_, g) | Formula::Exists(_, g) => 1 + g.size(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Maximum nesting depth of quantifiers.
    pub fn quantifier_depth(&self) -> usize {
        match self {
            Formula::Atom { .. } => 0,
            Formula::Not(g) => g.quantifier_depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.quantifier_depth().max(b.quantifier_depth())
            }
            Formula::Forall(_, g) | Formula::Exists(_, g) => 1 + g.quantifier_depth(),
        }
    }

    /// Replaces free occurrences of `var` with `term`.
    pub fn substitute(&self, var: &Variable, term: &Term) -> Formula {
        match self {
            Formula::Atom { pred, args } => {
                let sub = |a: &Arg| match a {
                    Arg::Var(v) if v == var => Arg::Term(term.clone()),
                    other => other.clone(),
                };
                Formula::Atom { pred: pred.clone(), args: [sub(&args[0]), sub(&args[1])] }
            }
            Formula::Not(g) => Formula::not(g.substitute(var, term)),
            Formula::And(a, b) => Formula::and(a.substitute(var, term), b.substitute(var, term)),
            Formula::Or(a, b) => Formula::or(a.substitute(var, term), b.substitute(var, term)),
            Formula::Implies(a, b) => {
                Formula::implies(a.substitute(var, term), b.substitute(var, term))
            }
            Formula::Forall(v, _) | Formula::Exists(v, _) if v == var => self.clone(),
            Formula::Forall(v, g) => Formula::Forall(v.clone(), Box::new(g.substitute(var, term))),
            Formula::Exists(v, g) => Formula::Exists(v.clone(), Box::new(g.substitute(var, term))),
        }
    }

    /// Visits every atom in the formula, in left-to-right order.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a Predicate, &'a [Arg; 2])) {
        match self {
            Formula::Atom { pred, args } => f(pred, args),
            Formula::Not(g) | Formula::Forall(_, g) | Formula::Exists(_, g) => g.for_each_atom(f),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
        }
    }
}

fn collect_free(f: &Formula, bound: &mut Vec<Variable>, out: &mut BTreeSet<Variable>) {
    match f {
        Formula::Atom { args, .. } => {
            for a in args {
                if let Arg::Var(v) = a {
                    if !bound.contains(v) {
                        out.insert(v.clone());
                    }
                }
            }
        }
        Formula::Not(g) => collect_free(g, bound, out),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
            collect_free(a, bound, out);
            collect_free(b, bound, out);
        }
        Formula::Forall(v, g) | Formula::Exists(v, g) => {
            bound.push(v.clone());
            collect_free(g, bound, out);
            bound.pop();
        }
    }
}

/// A ground atomic fact `pred(head, tail)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub pred: Predicate,
    pub head: Term,
    pub tail: Term,
}

impl Triple {
    pub fn new(pred: &str, head: &str, tail: &str) -> Triple {
        Triple { pred: Predicate::new(pred), head: Term::new(head), tail: Term::new(tail) }
    }

    pub fn to_formula(&self) -> Formula {
        Formula::Atom {
            pred: self.pred.clone(),
            args: [Arg::Term(self.head.clone()), Arg::Term(self.tail.clone())],
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.pred, self.head, self.tail)
    }
}

/// `forall x: P(x, A) => Q(x, B)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Axiom {
    pub pred_p: Predicate,
    pub const_a: Term,
    pub pred_q: Predicate,
    pub const_b: Term,
}

impl Axiom {
    pub fn new(pred_p: &str, const_a: &str, pred_q: &str, const_b: &str) -> Axiom {
        Axiom {
            pred_p: Predicate::new(pred_p),
            const_a: Term::new(const_a),
            pred_q: Predicate::new(pred_q),
            const_b: Term::new(const_b),
        }
    }

    /// Name for the bound variable that cannot be confused with A or B.
    fn var_name(&self) -> Variable {
        let mut name = String::from("x");
        while name == self.const_a.as_str() || name == self.const_b.as_str() {
            name.push('_');
        }
        Variable(name)
    }

    pub fn to_formula(&self) -> Formula {
        let x = self.var_name();
        Formula::Forall(
            x.clone(),
            Box::new(Formula::implies(
                Formula::Atom {
                    pred: self.pred_p.clone(),
                    args: [Arg::Var(x.clone()), Arg::Term(self.const_a.clone())],
                },
                Formula::Atom {
                    pred: self.pred_q.clone(),
                    args: [Arg::Var(x), Arg::Term(self.const_b.clone())],
                },
            )),
        )
    }

    /// `P(t, A) => Q(t, B)`.
    pub fn instantiate(&self, t: &Term) -> Formula {
        Formula::implies(
            Formula::Atom {
                pred: self.pred_p.clone(),
                args: [Arg::Term(t.clone()), Arg::Term(self.const_a.clone())],
            },
            Formula::Atom {
                pred: self.pred_q.clone(),
                args: [Arg::Term(t.clone()), Arg::Term(self.const_b.clone())],
            },
        )
    }

    /// Recognizes the supported template, returning `None` for anything else.
    pub fn from_formula(f: &Formula) -> Option<Axiom> {
        let Formula::Forall(x, body) = f else { return None };
        let Formula::Implies(lhs, rhs) = body.as_ref() else { return None };
        let (Formula::Atom { pred: p, args: pa }, Formula::Atom { pred: q, args: qa }) =
            (lhs.as_ref(), rhs.as_ref())
        else {
            return None;
        };
        match (pa, qa) {
            ([Arg::Var(v1), Arg::Term(a)], [Arg::Var(v2), Arg::Term(b)]) if v1 == x && v2 == x => {
                Some(Axiom {
                    pred_p: p.clone(),
                    const_a: a.clone(),
                    pred_q: q.clone(),
                    const_b: b.clone(),
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_formula())
    }
}

/// A named query. `var` is set for single-variable binding queries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub name: String,
    pub var: Option<Variable>,
    pub formula: Formula,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbError {
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("query `{name}` must be closed or bind exactly its declared variable (free: {free:?})")]
    FreeVariables { name: String, free: Vec<String> },
    #[error("constraint `{0}` must be ground")]
    NotGround(String),
    #[error("duplicate query name `{0}`")]
    DuplicateQuery(String),
}

/// Terms, predicates, triples, template axioms, ground constraints and
/// queries. Symbol order is declaration (or first-use) order.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    terms: IndexSet<Term>,
    predicates: IndexSet<Predicate>,
    triples: IndexSet<Triple>,
    axioms: IndexSet<Axiom>,
    constraints: Vec<Formula>,
    queries: Vec<Query>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.terms.iter().eq(other.terms.iter())
            && self.predicates.iter().eq(other.predicates.iter())
            && self.triples.iter().eq(other.triples.iter())
            && self.axioms.iter().eq(other.axioms.iter())
            && self.constraints == other.constraints
            && self.queries == other.queries
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn terms(&self) -> &IndexSet<Term> {
        &self.terms
    }

    pub fn predicates(&self) -> &IndexSet<Predicate> {
        &self.predicates
    }

    pub fn triples(&self) -> impl ExactSizeIterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn axioms(&self) -> impl ExactSizeIterator<Item = &Axiom> {
        self.axioms.iter()
    }

    pub fn axiom_count(&self) -> usize {
        self.axioms.len()
    }

    /// Ground non-atomic statements (e.g. `not P(a, b).`).
    pub fn constraints(&self) -> &[Formula] {
        &self.constraints
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn query(&self, name: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.name == name)
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.get_index_of(name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.get_index_of(name)
    }

    pub fn add_term(&mut self, name: &str) -> Result<usize, KbError> {
        if !is_identifier(name) {
            return Err(KbError::InvalidIdentifier(name.to_string()));
        }
        Ok(self.terms.insert_full(Term::new(name)).0)
    }

    pub fn add_predicate(&mut self, name: &str) -> Result<usize, KbError> {
        if !is_identifier(name) {
            return Err(KbError::InvalidIdentifier(name.to_string()));
        }
        Ok(self.predicates.insert_full(Predicate::new(name)).0)
    }

    /// Adds a triple, implicitly declaring its symbols. Returns `false` if it
    /// was already present.
    pub fn add_triple(&mut self, triple: Triple) -> Result<bool, KbError> {
        self.add_predicate(triple.pred.as_str())?;
        self.add_term(triple.head.as_str())?;
        self.add_term(triple.tail.as_str())?;
        Ok(self.triples.insert(triple))
    }

    pub fn add_axiom(&mut self, axiom: Axiom) -> Result<bool, KbError> {
        self.add_predicate(axiom.pred_p.as_str())?;
        self.add_term(axiom.const_a.as_str())?;
        self.add_predicate(axiom.pred_q.as_str())?;
        self.add_term(axiom.const_b.as_str())?;
        Ok(self.axioms.insert(axiom))
    }

    /// Adds a ground formula constraint, declaring its symbols. A bare atom is
    /// stored as a triple and a top-level conjunction is split.
    pub fn add_constraint(&mut self, f: Formula) -> Result<(), KbError> {
        if !f.is_ground() {
            return Err(KbError::NotGround(f.to_string()));
        }
        match f {
            Formula::Atom { pred, args: [Arg::Term(h), Arg::Term(t)] } => {
                self.add_triple(Triple { pred, head: h, tail: t })?;
            }
            Formula::And(a, b) => {
                self.add_constraint(*a)?;
                self.add_constraint(*b)?;
            }
            other => {
                let mut symbols = Vec::new();
                other.for_each_atom(&mut |p, args| symbols.push((p.clone(), args.clone())));
                for (p, args) in symbols {
                    self.add_predicate(p.as_str())?;
                    for a in &args {
                        self.add_term(a.name())?;
                    }
                }
                if !self.constraints.contains(&other) {
                    self.constraints.push(other);
                }
            }
        }
        Ok(())
    }

    /// Checks that a query formula only mentions declared symbols and has no
    /// free variables other than the binding variable.
    pub fn check_query(&self, name: &str, var: Option<&Variable>, f: &Formula) -> Result<(), KbError> {
        let mut err = None;
        f.for_each_atom(&mut |p, args| {
            if err.is_some() {
                return;
            }
            if !self.predicates.contains(p.as_str()) {
                err = Some(KbError::UnknownPredicate(p.to_string()));
                return;
            }
            for a in args {
                if let Arg::Term(t) = a {
                    if !self.terms.contains(t.as_str()) {
                        err = Some(KbError::UnboundVariable(t.to_string()));
                        return;
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let free = f.free_vars();
        let ok = match var {
            None => free.is_empty(),
            Some(v) => free.iter().all(|x| x == v) && !free.is_empty(),
        };
        if !ok {
            return Err(KbError::FreeVariables {
                name: name.to_string(),
                free: free.iter().map(|v| v.to_string()).collect(),
            });
        }
        Ok(())
    }

    pub fn add_query(&mut self, query: Query) -> Result<(), KbError> {
        if self.query(&query.name).is_some() {
            return Err(KbError::DuplicateQuery(query.name));
        }
        self.check_query(&query.name, query.var.as_ref(), &query.formula)?;
        self.queries.push(query);
        Ok(())
    }

    /// Ground instantiations of `ax` over every KB term, in term order.
    pub fn ground_instantiations(&self, ax: &Axiom) -> Vec<Formula> {
        ground_instantiations(ax, self)
    }

    /// Same KB without the given triple (used for hold-out experiments).
    pub fn without_triple(&self, t: &Triple) -> KnowledgeBase {
        let mut kb = self.clone();
        kb.triples.shift_remove(t);
        kb
    }
}

/// Unrolls the quantifier of `ax` over the KB's terms (constants included):
/// one `P(t, A) => Q(t, B)` per term, in term order.
pub fn ground_instantiations(ax: &Axiom, kb: &KnowledgeBase) -> Vec<Formula> {
    kb.terms.iter().map(|t| ax.instantiate(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_vars_examples() {
        let f = Formula::atom("P", Arg::var("x"), Arg::term("b"));
        assert_eq!(f.free_vars(), BTreeSet::from([Variable::new("x")]));

        let g = Formula::forall("x", f.clone());
        assert!(g.free_vars().is_empty());

        let h = Formula::forall("x", Formula::atom("P", Arg::var("x"), Arg::var("y")));
        assert_eq!(h.free_vars(), BTreeSet::from([Variable::new("y")]));
    }

    #[test]
    fn inner_binder_shadows() {
        let f = Formula::and(
            Formula::exists("x", Formula::atom("P", Arg::var("x"), Arg::term("a"))),
            Formula::atom("P", Arg::var("x"), Arg::term("a")),
        );
        assert_eq!(f.free_vars(), BTreeSet::from([Variable::new("x")]));
    }

    #[test]
    fn instantiations_cover_every_term() {
        let mut kb = KnowledgeBase::new();
        kb.add_term("a").unwrap();
        let ax = Axiom::new("P", "A", "Q", "B");
        kb.add_axiom(ax.clone()).unwrap();
        let inst = ground_instantiations(&ax, &kb);
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0], Formula::implies(Formula::ground("P", "a", "A"), Formula::ground("Q", "a", "B")));
        assert_eq!(inst[1], Formula::implies(Formula::ground("P", "A", "A"), Formula::ground("Q", "A", "B")));
        assert_eq!(inst[2], Formula::implies(Formula::ground("P", "B", "A"), Formula::ground("Q", "B", "B")));
    }

    #[test]
    fn template_only_kb_has_two_instantiations() {
        let mut kb = KnowledgeBase::new();
        let ax = Axiom::new("P", "A", "Q", "B");
        kb.add_axiom(ax.clone()).unwrap();
        assert_eq!(kb.ground_instantiations(&ax).len(), 2);
    }

    #[test]
    fn template_roundtrip() {
        let ax = Axiom::new("P", "x", "Q", "B");
        let f = ax.to_formula();
        assert_eq!(Axiom::from_formula(&f), Some(ax));
        let not_template = Formula::forall(
            "x",
            Formula::implies(
                Formula::atom("P", Arg::term("A"), Arg::var("x")),
                Formula::atom("Q", Arg::var("x"), Arg::term("B")),
            ),
        );
        assert_eq!(Axiom::from_formula(&not_template), None);
    }

    #[test]
    fn duplicate_triples_are_ignored() {
        let mut kb = KnowledgeBase::new();
        assert!(kb.add_triple(Triple::new("P", "a", "b")).unwrap());
        assert!(!kb.add_triple(Triple::new("P", "a", "b")).unwrap());
        assert_eq!(kb.triple_count(), 1);
    }

    #[test]
    fn query_checks() {
        let mut kb = KnowledgeBase::new();
        kb.add_triple(Triple::new("P", "a", "b")).unwrap();
        let open = Formula::atom("P", Arg::var("x"), Arg::term("b"));
        let err = kb
            .add_query(Query { name: "q".into(), var: None, formula: open.clone() })
            .unwrap_err();
        assert!(matches!(err, KbError::FreeVariables { .. }));
        kb.add_query(Query { name: "q".into(), var: Some(Variable::new("x")), formula: open })
            .unwrap();
        let unknown = Formula::ground("P", "a", "zz");
        assert_eq!(
            kb.check_query("r", None, &unknown),
            Err(KbError::UnboundVariable("zz".into()))
        );
    }

    #[test]
    fn sizes() {
        let f = Formula::forall(
            "x",
            Formula::exists("y", Formula::not(Formula::atom("P", Arg::var("x"), Arg::var("y")))),
        );
        assert_eq!(f.size(), 4);
        assert_eq!(f.quantifier_depth(), 2);
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("_a9"));
        assert!(!is_identifier("9a"));
        assert!(!is_identifier("forall"));
        assert!(!is_identifier(""));
    }
}
