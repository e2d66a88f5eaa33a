//! Ensemble query answering.
//!
//! A closed query is `True` when it holds in every member, `False` when it
//! fails in every member and `Unknown` otherwise. Quantifiers range over the
//! KB's terms. A query with one free variable returns the terms that satisfy
//! it in every member.

use crate::geometry::{atom_truth, eval_formula, relation_residual, GeometryError, VectorModel};
use crate::logic::{Arg, Formula, KnowledgeBase, Term, Variable};
use crate::solver::Ensemble;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("the ensemble has no members")]
    EmptyEnsemble,
    #[error("query must be closed, found free variables {0:?}")]
    NotClosed(Vec<String>),
    #[error("binding query must have exactly one free variable, found {0:?}")]
    NotUnary(Vec<String>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Verdict::True => "TRUE",
            Verdict::False => "FALSE",
            Verdict::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryVerdict {
    pub value: Verdict,
    /// `(member index, truth)` for every member in ensemble order.
    pub per_model: Vec<(usize, bool)>,
}

impl QueryVerdict {
    pub fn from_truths(truths: impl IntoIterator<Item = bool>) -> QueryVerdict {
        let per_model: Vec<(usize, bool)> = truths.into_iter().enumerate().collect();
        let t = per_model.iter().filter(|(_, b)| *b).count();
        let value = if t == per_model.len() {
            Verdict::True
        } else if t == 0 {
            Verdict::False
        } else {
            Verdict::Unknown
        };
        QueryVerdict { value, per_model }
    }

    pub fn true_count(&self) -> usize {
        self.per_model.iter().filter(|(_, b)| *b).count()
    }

    /// Members agreeing with the verdict; for `Unknown`, members where the
    /// query holds.
    pub fn agreeing(&self) -> usize {
        match self.value {
            Verdict::False => self.per_model.len() - self.true_count(),
            _ => self.true_count(),
        }
    }
}

/// `TRUE (5/5 models agree)`.
impl fmt::Display for QueryVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}/{} models agree)", self.value, self.agreeing(), self.per_model.len())
    }
}

fn domain(kb: &KnowledgeBase) -> Vec<Term> {
    kb.terms().iter().cloned().collect()
}

fn names(vars: impl IntoIterator<Item = Variable>) -> Vec<String> {
    vars.into_iter().map(|v| v.to_string()).collect()
}

pub fn query_closed(e: &Ensemble, f: &Formula, kb: &KnowledgeBase) -> Result<QueryVerdict, InferenceError> {
    if !f.is_closed() {
        return Err(InferenceError::NotClosed(names(f.free_vars())));
    }
    if e.is_empty() {
        return Err(InferenceError::EmptyEnsemble);
    }
    let dom = domain(kb);
    let truths = e.models().map(|m| eval_formula(m, f, &dom)).collect::<Result<Vec<_>, _>>()?;
    Ok(QueryVerdict::from_truths(truths))
}

fn unary_var(f: &Formula) -> Result<Variable, InferenceError> {
    let free = f.free_vars();
    if free.len() != 1 {
        return Err(InferenceError::NotUnary(names(free)));
    }
    Ok(free.into_iter().next().expect("one free variable"))
}

/// Verdict of `f[x := t]` for every KB term `t`, in term order.
pub fn binding_verdicts(
    e: &Ensemble,
    f: &Formula,
    kb: &KnowledgeBase,
) -> Result<Vec<(Term, QueryVerdict)>, InferenceError> {
    let x = unary_var(f)?;
    kb.terms().iter().map(|t| Ok((t.clone(), query_closed(e, &f.substitute(&x, t), kb)?))).collect()
}

/// Terms `t` such that `f[x := t]` holds in every member.
pub fn query_bindings(e: &Ensemble, f: &Formula, kb: &KnowledgeBase) -> Result<Vec<Term>, InferenceError> {
    Ok(binding_verdicts(e, f, kb)?
        .into_iter()
        .filter(|(_, v)| v.value == Verdict::True)
        .map(|(t, _)| t)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomReport {
    pub atom: String,
    pub residual_norm: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberReport {
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub truth: bool,
    pub delta: f64,
    pub atoms: Vec<AtomReport>,
    /// Terms witnessing a top-level `exists`, or counterexamples to a
    /// top-level `forall`.
    pub witnesses: Vec<String>,
    /// Axiom instantiations whose antecedent holds, so the consequent is
    /// forced.
    pub binding_axioms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub query: String,
    pub verdict: QueryVerdict,
    pub witness_kind: Option<&'static str>,
    pub members: Vec<MemberReport>,
}

fn ground_atoms(f: &Formula) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    f.for_each_atom(&mut |p, args| {
        if let [Arg::Term(h), Arg::Term(t)] = args {
            let key = (p.to_string(), h.to_string(), t.to_string());
            if !out.contains(&key) {
                out.push(key);
            }
        }
    });
    out
}

fn explain_member(
    m: &VectorModel,
    f: &Formula,
    kb: &KnowledgeBase,
    dom: &[Term],
) -> Result<(Vec<AtomReport>, Vec<String>, Vec<String>), InferenceError> {
    let mut atoms = Vec::new();
    for (p, h, t) in ground_atoms(f) {
        let r = relation_residual(m, &p, &h, &t)?;
        atoms.push(AtomReport {
            atom: format!("{p}({h}, {t})"),
            residual_norm: r.iter().map(|x| x * x).sum::<f64>().sqrt(),
            holds: atom_truth(m, &p, &h, &t)?,
        });
    }
    let mut witnesses = Vec::new();
    if let Formula::Exists(v, body) | Formula::Forall(v, body) = f {
        let want = matches!(f, Formula::Exists(..));
        for t in dom {
            if eval_formula(m, &body.substitute(v, t), dom)? == want {
                witnesses.push(t.to_string());
            }
        }
    }
    let mut binding = Vec::new();
    for ax in kb.axioms() {
        for t in dom {
            if atom_truth(m, ax.pred_p.as_str(), t.as_str(), ax.const_a.as_str())? {
                binding.push(ax.instantiate(t).to_string());
            }
        }
    }
    Ok((atoms, witnesses, binding))
}

/// Per-member truth, residuals of the query's ground atoms, witnesses for a
/// top-level quantifier and the axiom instantiations in force.
pub fn explain(e: &Ensemble, f: &Formula, kb: &KnowledgeBase) -> Result<Explanation, InferenceError> {
    let verdict = query_closed(e, f, kb)?;
    let dom = domain(kb);
    let mut members = Vec::with_capacity(e.len());
    for (i, member) in e.members.iter().enumerate() {
        let (atoms, witnesses, binding_axioms) = explain_member(&member.model, f, kb, &dom)?;
        members.push(MemberReport {
            index: i,
            seed: member.provenance.as_ref().map(|p| p.seed),
            truth: verdict.per_model[i].1,
            delta: member.model.delta(),
            atoms,
            witnesses,
            binding_axioms,
        });
    }
    let witness_kind = match f {
        Formula::Exists(..) => Some("witnesses"),
        Formula::Forall(..) => Some("counterexamples"),
        _ => None,
    };
    Ok(Explanation { query: f.to_string(), verdict, witness_kind, members })
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "query: {}", self.query)?;
        writeln!(f, "verdict: {}", self.verdict)?;
        for m in &self.members {
            let seed = m.seed.map(|s| format!(" (seed {s})")).unwrap_or_default();
            let truth = if m.truth { "satisfies" } else { "dissents" };
            writeln!(f, "member {}{seed}: {truth}", m.index)?;
            for a in &m.atoms {
                let mark = if a.holds { "holds" } else { "fails" };
                writeln!(f, "  {}: residual {:.6} vs delta {} ({mark})", a.atom, a.residual_norm, m.delta)?;
            }
            if let Some(kind) = self.witness_kind {
                let list = if m.witnesses.is_empty() { "none".to_string() } else { m.witnesses.join(", ") };
                writeln!(f, "  {kind}: {list}")?;
            }
            for b in &m.binding_axioms {
                writeln!(f, "  binding axiom: {b}")?;
            }
        }
        Ok(())
    }
}
