//! Compiles a KB and a similarity matrix into a differentiable loss over a
//! flat parameter vector.
//!
//! * A triple becomes a squared hinge on its residual norm:
//!   `max(0, |r| - delta)^2`.
//! * A ground implication `P(t, A) => Q(t, B)` becomes the soft disjunction
//!   `v = (1 - sigma(r_P)) + sigma(r_Q)` with loss `max(0, 1 - v)^2`, where
//!   `sigma(r) = logistic(s * (delta - |r|))` is a smooth stand-in for the
//!   step "residual inside delta".
//! * Other ground formulas compile by structural recursion (negation is
//!   complement, disjunction is addition, top-level conjunction splits).
//! * Similarity pairs contribute `(ln SD)^2`, matching the disparity score.
//! * Two gauge terms pin the centroid to the origin and the mean distance to
//!   the centroid to 1.
//!
//! The parameter layout is `|terms| * N` point coordinates followed by the
//! `K_p` direction components of each predicate.

use crate::geometry::{GeometryError, PredicateEmbedding, Semantics, VectorModel};
use crate::logic::{Arg, Axiom, Formula, KnowledgeBase, Predicate, Term, Triple};
use crate::similarity::{SimilarityError, SimilarityMatrix, DEFAULT_EPS_SD};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("predicate `{0}` has no axis assignment")]
    MissingDims(String),
    #[error("axis {axis} of predicate `{pred}` is out of range for dimension {dimension}")]
    AxisOutOfRange { pred: String, axis: usize, dimension: usize },
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("formula is not ground: `{0}`")]
    NotGround(String),
    #[error("expected a ground implication between two atoms, got `{0}`")]
    NotImplication(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub triple: f64,
    pub axiom: f64,
    pub sim: f64,
    pub gauge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { triple: 1.0, axiom: 1.0, sim: 0.1, gauge: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileConfig {
    /// Tolerance the constraints are compiled against.
    pub delta: f64,
    /// Soft-truth midpoint for atoms under an odd number of negations
    /// (implication antecedents included). Setting it above `delta` makes an
    /// antecedent count as true whenever its residual is anywhere near the
    /// tolerance, so the consequent is enforced.
    pub delta_neg: f64,
    /// Logistic sharpness `s`.
    pub sharpness: f64,
    pub weights: LossWeights,
    pub eps_sd: f64,
}

impl CompileConfig {
    /// Defaults with `s = 10 / delta`.
    pub fn new(delta: f64) -> Self {
        CompileConfig {
            delta,
            delta_neg: delta,
            sharpness: 10.0 / delta,
            weights: LossWeights::default(),
            eps_sd: DEFAULT_EPS_SD,
        }
    }
}

/// Where each term point and predicate direction lives in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    dimension: usize,
    terms: Vec<Term>,
    preds: Vec<Predicate>,
    pred_offsets: Vec<usize>,
    pred_dims: Vec<Vec<usize>>,
    len: usize,
}

impl ParameterLayout {
    pub fn new(
        kb: &KnowledgeBase,
        dimension: usize,
        dims: &IndexMap<Predicate, Vec<usize>>,
    ) -> Result<Self, CompileError> {
        let terms: Vec<Term> = kb.terms().iter().cloned().collect();
        let preds: Vec<Predicate> = kb.predicates().iter().cloned().collect();
        let mut offset = terms.len() * dimension;
        let mut pred_offsets = Vec::with_capacity(preds.len());
        let mut pred_dims = Vec::with_capacity(preds.len());
        for p in &preds {
            let d = dims.get(p).ok_or_else(|| CompileError::MissingDims(p.to_string()))?;
            if d.is_empty() {
                return Err(CompileError::MissingDims(p.to_string()));
            }
            if let Some(&axis) = d.iter().find(|&&a| a >= dimension) {
                return Err(CompileError::AxisOutOfRange { pred: p.to_string(), axis, dimension });
            }
            pred_offsets.push(offset);
            offset += d.len();
            pred_dims.push(d.clone());
        }
        Ok(ParameterLayout { dimension, terms, preds, pred_offsets, pred_dims, len: offset })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.preds
    }

    pub fn term_offset(&self, i: usize) -> usize {
        i * self.dimension
    }

    pub fn pred_offset(&self, p: usize) -> usize {
        self.pred_offsets[p]
    }

    pub fn pred_dims(&self, p: usize) -> &[usize] {
        &self.pred_dims[p]
    }

    pub fn point<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        &params[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn direction<'a>(&self, params: &'a [f64], p: usize) -> &'a [f64] {
        let o = self.pred_offsets[p];
        &params[o..o + self.pred_dims[p].len()]
    }

    pub fn direction_mut<'a>(&self, params: &'a mut [f64], p: usize) -> &'a mut [f64] {
        let o = self.pred_offsets[p];
        &mut params[o..o + self.pred_dims[p].len()]
    }

    fn term_idx(&self, t: &str) -> Result<usize, CompileError> {
        self.terms.iter().position(|x| x.as_str() == t).ok_or_else(|| CompileError::UnknownTerm(t.into()))
    }

    fn pred_idx(&self, p: &str) -> Result<usize, CompileError> {
        self.preds
            .iter()
            .position(|x| x.as_str() == p)
            .ok_or_else(|| CompileError::UnknownPredicate(p.into()))
    }

    pub fn atom_ref(&self, pred: &str, head: &str, tail: &str) -> Result<AtomRef, CompileError> {
        Ok(AtomRef { pred: self.pred_idx(pred)?, head: self.term_idx(head)?, tail: self.term_idx(tail)? })
    }

    /// Flattens a model that covers the layout's symbols.
    pub fn params_from_model(&self, m: &VectorModel) -> Result<Vec<f64>, CompileError> {
        let mut params = vec![0.0; self.len];
        for (i, t) in self.terms.iter().enumerate() {
            let p = m.point(t.as_str())?;
            params[i * self.dimension..(i + 1) * self.dimension].copy_from_slice(p);
        }
        for (k, p) in self.preds.iter().enumerate() {
            let e = m.embedding(p.as_str())?;
            if e.dims() != self.pred_dims[k].as_slice() {
                return Err(CompileError::MissingDims(p.to_string()));
            }
            self.direction_mut(&mut params, k).copy_from_slice(e.direction());
        }
        Ok(params)
    }

    /// Builds an approximate-mode model; directions are renormalized.
    pub fn model_from_params(&self, params: &[f64], delta: f64) -> Result<VectorModel, GeometryError> {
        let mut m = VectorModel::new(self.dimension, delta, Semantics::Approximate)?;
        for (i, t) in self.terms.iter().enumerate() {
            m.set_point(t.clone(), self.point(params, i).to_vec())?;
        }
        for (k, p) in self.preds.iter().enumerate() {
            let emb = PredicateEmbedding::normalized(self.pred_dims[k].clone(), self.direction(params, k).to_vec())
                .map_err(|reason| GeometryError::InvalidEmbedding { pred: p.to_string(), reason })?;
            m.set_predicate(p.clone(), emb)?;
        }
        Ok(m)
    }
}

/// A ground atom by layout indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomRef {
    pub pred: usize,
    pub head: usize,
    pub tail: usize,
}

/// Soft truth value of a ground formula.
#[derive(Debug, Clone, PartialEq)]
pub enum SoftExpr {
    Atom(AtomRef),
    /// `1 - min(1, v)`.
    Not(Box<SoftExpr>),
    /// `v + w` (unbounded above).
    Or(Box<SoftExpr>, Box<SoftExpr>),
    /// `min(1, v) * min(1, w)`; only used below a negation or disjunction.
    And(Box<SoftExpr>, Box<SoftExpr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Triple,
    AxiomInstance,
    GroundFormula,
    SimilarityPair,
    Gauge,
}

impl LossKind {
    /// Logical constraints, as opposed to preference and gauge terms.
    pub fn is_constraint(self) -> bool {
        matches!(self, LossKind::Triple | LossKind::AxiomInstance | LossKind::GroundFormula)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossPayload {
    /// `max(0, |r| - delta)^2`.
    Hinge(AtomRef),
    /// `max(0, 1 - v)^2`.
    Soft(SoftExpr),
    /// `(ln clamp((1 - S) / D))^2`.
    SimilarityPair { i: usize, j: usize, numerator: f64 },
    /// `|mean point|^2`.
    Centroid,
    /// `(mean |point - centroid| - 1)^2`.
    Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub kind: LossKind,
    pub weight: f64,
    pub payload: LossPayload,
}

/// Logistic soft truth: 0.5 at `residual_norm = delta`, tending to the step
/// "inside delta" as `s` grows.
pub fn soft_truth(residual_norm: f64, delta: f64, s: f64) -> f64 {
    logistic(s * (delta - residual_norm))
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How a loss term is evaluated.
#[derive(Debug, Clone, Copy)]
struct Ctx<'a> {
    layout: &'a ParameterLayout,
    delta: f64,
    delta_neg: f64,
    s: f64,
    eps: f64,
    /// Step semantics instead of the logistic surrogate.
    hard: bool,
}

fn residual(ctx: &Ctx, params: &[f64], a: AtomRef) -> Vec<f64> {
    let l = ctx.layout;
    let (h, t, dir) = (l.point(params, a.head), l.point(params, a.tail), l.direction(params, a.pred));
    l.pred_dims(a.pred).iter().zip(dir).map(|(&d, &u)| (t[d] - h[d]) - u).collect()
}

/// Adds `g_r` (gradient with respect to the residual vector) into `grad`.
fn push_residual_grad(ctx: &Ctx, a: AtomRef, g_r: &[f64], grad: &mut [f64]) {
    let l = ctx.layout;
    let (ho, to, po) = (l.term_offset(a.head), l.term_offset(a.tail), l.pred_offset(a.pred));
    for (k, (&d, &g)) in l.pred_dims(a.pred).iter().zip(g_r).enumerate() {
        grad[to + d] += g;
        grad[ho + d] -= g;
        grad[po + k] -= g;
    }
}

impl Ctx<'_> {
    fn midpoint(&self, positive: bool) -> f64 {
        if positive {
            self.delta
        } else {
            self.delta_neg
        }
    }
}

fn atom_truth_value(ctx: &Ctx, r_norm: f64, positive: bool) -> f64 {
    if ctx.hard {
        if r_norm < ctx.delta {
            1.0
        } else {
            0.0
        }
    } else {
        soft_truth(r_norm, ctx.midpoint(positive), ctx.s)
    }
}

fn soft_value(e: &SoftExpr, ctx: &Ctx, params: &[f64], positive: bool) -> f64 {
    match e {
        SoftExpr::Atom(a) => atom_truth_value(ctx, norm(&residual(ctx, params, *a)), positive),
        SoftExpr::Not(g) => 1.0 - soft_value(g, ctx, params, !positive).min(1.0),
        SoftExpr::Or(a, b) => soft_value(a, ctx, params, positive) + soft_value(b, ctx, params, positive),
        SoftExpr::And(a, b) => {
            soft_value(a, ctx, params, positive).min(1.0) * soft_value(b, ctx, params, positive).min(1.0)
        }
    }
}

/// Accumulates `upstream * dv/dparams` into `grad` (soft semantics only).
fn soft_backprop(e: &SoftExpr, ctx: &Ctx, params: &[f64], positive: bool, upstream: f64, grad: &mut [f64]) {
    if upstream == 0.0 {
        return;
    }
    match e {
        SoftExpr::Atom(a) => {
            let r = residual(ctx, params, *a);
            let n = norm(&r);
            if n == 0.0 {
                return;
            }
            let sig = soft_truth(n, ctx.midpoint(positive), ctx.s);
            // d sigma / d|r| = -s * sigma * (1 - sigma); d|r| / dr = r / |r|.
            let scale = upstream * (-ctx.s * sig * (1.0 - sig)) / n;
            let g: Vec<f64> = r.iter().map(|x| x * scale).collect();
            push_residual_grad(ctx, *a, &g, grad);
        }
        SoftExpr::Not(g) => {
            if soft_value(g, ctx, params, !positive) < 1.0 {
                soft_backprop(g, ctx, params, !positive, -upstream, grad);
            }
        }
        SoftExpr::Or(a, b) => {
            soft_backprop(a, ctx, params, positive, upstream, grad);
            soft_backprop(b, ctx, params, positive, upstream, grad);
        }
        SoftExpr::And(a, b) => {
            let (va, vb) = (soft_value(a, ctx, params, positive), soft_value(b, ctx, params, positive));
            if va < 1.0 {
                soft_backprop(a, ctx, params, positive, upstream * vb.min(1.0), grad);
            }
            if vb < 1.0 {
                soft_backprop(b, ctx, params, positive, upstream * va.min(1.0), grad);
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl LossTerm {
    /// Unweighted value; adds `scale * d(value)/d(params)` to `grad` if given.
    fn eval(&self, ctx: &Ctx, params: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        match &self.payload {
            LossPayload::Hinge(a) => {
                let r = residual(ctx, params, *a);
                let n = norm(&r);
                if ctx.hard {
                    return if n < ctx.delta { 0.0 } else { (n - ctx.delta).powi(2).max(f64::MIN_POSITIVE) };
                }
                let excess = n - ctx.delta;
                if excess <= 0.0 {
                    return 0.0;
                }
                if let Some((grad, scale)) = grad {
                    let c = scale * 2.0 * excess / n;
                    let g: Vec<f64> = r.iter().map(|x| x * c).collect();
                    push_residual_grad(ctx, *a, &g, grad);
                }
                excess * excess
            }
            LossPayload::Soft(e) => {
                let v = soft_value(e, ctx, params, true);
                if v >= 1.0 {
                    return 0.0;
                }
                if let Some((grad, scale)) = grad {
                    soft_backprop(e, ctx, params, true, scale * -2.0 * (1.0 - v), grad);
                }
                (1.0 - v).powi(2)
            }
            LossPayload::SimilarityPair { i, j, numerator } => {
                let (pi, pj) = (ctx.layout.point(params, *i), ctx.layout.point(params, *j));
                let diff: Vec<f64> = pi.iter().zip(pj).map(|(a, b)| a - b).collect();
                let d = norm(&diff);
                if d == 0.0 {
                    return if *numerator == 0.0 { 0.0 } else { (1.0 / ctx.eps).ln().powi(2) };
                }
                let sd = numerator / d;
                let lo = ctx.eps;
                let hi = 1.0 / ctx.eps;
                let clamped = sd.clamp(lo, hi);
                let l = clamped.ln();
                if sd > lo && sd < hi {
                    if let Some((grad, scale)) = grad {
                        // d/dD (ln(num) - ln D)^2 = -2 ln(SD) / D; dD/dp_i = diff / D.
                        let c = scale * (-2.0 * l / d) / d;
                        let (oi, oj) = (ctx.layout.term_offset(*i), ctx.layout.term_offset(*j));
                        for (k, x) in diff.iter().enumerate() {
                            grad[oi + k] += c * x;
                            grad[oj + k] -= c * x;
                        }
                    }
                }
                l * l
            }
            LossPayload::Centroid => {
                let l = ctx.layout;
                let n = l.terms.len();
                if n == 0 {
                    return 0.0;
                }
                let c = centroid(l, params);
                if let Some((grad, scale)) = grad {
                    for i in 0..n {
                        let o = l.term_offset(i);
                        for (k, ck) in c.iter().enumerate() {
                            grad[o + k] += scale * 2.0 * ck / n as f64;
                        }
                    }
                }
                c.iter().map(|x| x * x).sum()
            }
            LossPayload::Scale => {
                let l = ctx.layout;
                let n = l.terms.len();
                if n == 0 {
                    return 0.0;
                }
                let c = centroid(l, params);
                let units: Vec<(f64, Vec<f64>)> = (0..n)
                    .map(|i| {
                        let v: Vec<f64> = l.point(params, i).iter().zip(&c).map(|(a, b)| a - b).collect();
                        (norm(&v), v)
                    })
                    .collect();
                let spread = units.iter().map(|(r, _)| r).sum::<f64>() / n as f64;
                if let Some((grad, scale)) = grad {
                    // d spread / d p_k = (u_k - mean_i u_i) / n, u_i the unit offsets.
                    let dim = l.dimension;
                    let mut mean_u = vec![0.0; dim];
                    let unit = |(r, v): &(f64, Vec<f64>)| -> Vec<f64> {
                        if *r == 0.0 {
                            vec![0.0; v.len()]
                        } else {
                            v.iter().map(|x| x / r).collect()
                        }
                    };
                    let us: Vec<Vec<f64>> = units.iter().map(unit).collect();
                    for u in &us {
                        mean_u.iter_mut().zip(u).for_each(|(m, x)| *m += x / n as f64);
                    }
                    let c0 = scale * 2.0 * (spread - 1.0) / n as f64;
                    for (i, u) in us.iter().enumerate() {
                        let o = l.term_offset(i);
                        for k in 0..dim {
                            grad[o + k] += c0 * (u[k] - mean_u[k]);
                        }
                    }
                }
                (spread - 1.0).powi(2)
            }
        }
    }

    /// Unweighted value under soft semantics.
    pub fn value(&self, params: &[f64], layout: &ParameterLayout, config: &CompileConfig) -> f64 {
        let ctx = Ctx {
            layout,
            delta: config.delta,
            delta_neg: config.delta_neg,
            s: config.sharpness,
            eps: config.eps_sd,
            hard: false,
        };
        self.eval(&ctx, params, None)
    }

    /// Unweighted value with the logistic replaced by the step function.
    pub fn hard_value(&self, params: &[f64], layout: &ParameterLayout, delta: f64) -> f64 {
        let ctx = Ctx { layout, delta, delta_neg: delta, s: f64::INFINITY, eps: DEFAULT_EPS_SD, hard: true };
        self.eval(&ctx, params, None)
    }
}

fn centroid(l: &ParameterLayout, params: &[f64]) -> Vec<f64> {
    let n = l.terms.len();
    let mut c = vec![0.0; l.dimension];
    for i in 0..n {
        c.iter_mut().zip(l.point(params, i)).for_each(|(a, b)| *a += b / n as f64);
    }
    c
}

pub fn compile_triple(tr: &Triple, layout: &ParameterLayout) -> Result<LossTerm, CompileError> {
    let a = layout.atom_ref(tr.pred.as_str(), tr.head.as_str(), tr.tail.as_str())?;
    Ok(LossTerm { kind: LossKind::Triple, weight: 1.0, payload: LossPayload::Hinge(a) })
}

fn ground_atom(f: &Formula, layout: &ParameterLayout) -> Result<AtomRef, CompileError> {
    match f {
        Formula::Atom { pred, args: [Arg::Term(h), Arg::Term(t)] } => {
            layout.atom_ref(pred.as_str(), h.as_str(), t.as_str())
        }
        other => Err(CompileError::NotGround(other.to_string())),
    }
}

pub fn compile_ground_implication(f: &Formula, layout: &ParameterLayout) -> Result<LossTerm, CompileError> {
    let Formula::Implies(lhs, rhs) = f else {
        return Err(CompileError::NotImplication(f.to_string()));
    };
    if !matches!(lhs.as_ref(), Formula::Atom { .. }) || !matches!(rhs.as_ref(), Formula::Atom { .. }) {
        return Err(CompileError::NotImplication(f.to_string()));
    }
    let (p, q) = (ground_atom(lhs, layout)?, ground_atom(rhs, layout)?);
    Ok(LossTerm {
        kind: LossKind::AxiomInstance,
        weight: 1.0,
        payload: LossPayload::Soft(SoftExpr::Or(
            Box::new(SoftExpr::Not(Box::new(SoftExpr::Atom(p)))),
            Box::new(SoftExpr::Atom(q)),
        )),
    })
}

fn soft_expr(f: &Formula, layout: &ParameterLayout) -> Result<SoftExpr, CompileError> {
    Ok(match f {
        Formula::Atom { .. } => SoftExpr::Atom(ground_atom(f, layout)?),
        Formula::Not(g) => SoftExpr::Not(Box::new(soft_expr(g, layout)?)),
        Formula::Or(a, b) => SoftExpr::Or(Box::new(soft_expr(a, layout)?), Box::new(soft_expr(b, layout)?)),
        Formula::Implies(a, b) => SoftExpr::Or(
            Box::new(SoftExpr::Not(Box::new(soft_expr(a, layout)?))),
            Box::new(soft_expr(b, layout)?),
        ),
        Formula::And(a, b) => SoftExpr::And(Box::new(soft_expr(a, layout)?), Box::new(soft_expr(b, layout)?)),
        Formula::Forall(..) | Formula::Exists(..) => return Err(CompileError::NotGround(f.to_string())),
    })
}

/// Compiles a ground formula. A top-level conjunction yields one term per
/// conjunct; an atom yields a triple-style hinge.
pub fn compile_ground_formula(f: &Formula, layout: &ParameterLayout) -> Result<Vec<LossTerm>, CompileError> {
    if !f.is_ground() {
        return Err(CompileError::NotGround(f.to_string()));
    }
    match f {
        Formula::And(a, b) => {
            let mut out = compile_ground_formula(a, layout)?;
            out.extend(compile_ground_formula(b, layout)?);
            Ok(out)
        }
        Formula::Atom { .. } => Ok(vec![LossTerm {
            kind: LossKind::GroundFormula,
            weight: 1.0,
            payload: LossPayload::Hinge(ground_atom(f, layout)?),
        }]),
        _ => Ok(vec![LossTerm {
            kind: LossKind::GroundFormula,
            weight: 1.0,
            payload: LossPayload::Soft(soft_expr(f, layout)?),
        }]),
    }
}

/// One implication loss per ground instantiation over the KB's terms.
pub fn compile_axiom(ax: &Axiom, kb: &KnowledgeBase, layout: &ParameterLayout) -> Result<Vec<LossTerm>, CompileError> {
    kb.ground_instantiations(ax).iter().map(|f| compile_ground_implication(f, layout)).collect()
}

/// One term per unordered distinct pair of layout terms.
pub fn compile_similarity(s: &SimilarityMatrix, layout: &ParameterLayout) -> Result<Vec<LossTerm>, CompileError> {
    let idx: Vec<usize> = layout
        .terms
        .iter()
        .map(|t| s.index_of(t.as_str()).ok_or_else(|| SimilarityError::MissingTerm(t.to_string())))
        .collect::<Result<_, _>>()?;
    let n = idx.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(LossTerm {
                kind: LossKind::SimilarityPair,
                weight: 1.0,
                payload: LossPayload::SimilarityPair { i, j, numerator: 1.0 - s.at(idx[i], idx[j]) },
            });
        }
    }
    Ok(out)
}

/// Centroid and scale terms.
pub fn compile_gauge(_layout: &ParameterLayout) -> Vec<LossTerm> {
    vec![
        LossTerm { kind: LossKind::Gauge, weight: 1.0, payload: LossPayload::Centroid },
        LossTerm { kind: LossKind::Gauge, weight: 1.0, payload: LossPayload::Scale },
    ]
}

/// Per-kind unweighted loss totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub triple: f64,
    pub axiom: f64,
    pub ground: f64,
    pub similarity: f64,
    pub gauge: f64,
}

#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    layout: ParameterLayout,
    losses: Vec<LossTerm>,
    config: CompileConfig,
}

/// Compiles every triple, axiom instantiation, ground constraint, similarity
/// pair (skipped when `w_sim = 0`) and the two gauge terms.
///
/// Similarity terms are weighted `w_sim / pairs`, so their total is
/// `w_sim * disparity_score`.
pub fn compile_kb(
    kb: &KnowledgeBase,
    s: &SimilarityMatrix,
    config: &CompileConfig,
    dimension: usize,
    dims: &IndexMap<Predicate, Vec<usize>>,
) -> Result<ConstraintSystem, CompileError> {
    let layout = ParameterLayout::new(kb, dimension, dims)?;
    let w = config.weights;
    let mut losses = Vec::new();
    let weighted = |mut t: LossTerm, w: f64| {
        t.weight = w;
        t
    };
    for tr in kb.triples() {
        losses.push(weighted(compile_triple(tr, &layout)?, w.triple));
    }
    for ax in kb.axioms() {
        losses.extend(compile_axiom(ax, kb, &layout)?.into_iter().map(|t| weighted(t, w.axiom)));
    }
    for c in kb.constraints() {
        losses.extend(compile_ground_formula(c, &layout)?.into_iter().map(|t| weighted(t, w.axiom)));
    }
    if w.sim > 0.0 {
        let pairs = compile_similarity(s, &layout)?;
        let per = w.sim / pairs.len().max(1) as f64;
        losses.extend(pairs.into_iter().map(|t| weighted(t, per)));
    }
    losses.extend(compile_gauge(&layout).into_iter().map(|t| weighted(t, w.gauge)));
    Ok(ConstraintSystem { layout, losses, config: *config })
}

impl ConstraintSystem {
    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn losses(&self) -> &[LossTerm] {
        &self.losses
    }

    pub fn config(&self) -> &CompileConfig {
        &self.config
    }

    pub fn count(&self, kind: LossKind) -> usize {
        self.losses.iter().filter(|l| l.kind == kind).count()
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            layout: &self.layout,
            delta: self.config.delta,
            delta_neg: self.config.delta_neg,
            s: self.config.sharpness,
            eps: self.config.eps_sd,
            hard: false,
        }
    }

    pub fn total_loss(&self, params: &[f64]) -> f64 {
        self.loss_filtered(params, |_| true, None)
    }

    /// Total loss and its gradient.
    pub fn gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; params.len()];
        let l = self.loss_filtered(params, |_| true, Some(&mut g));
        (l, g)
    }

    /// Weighted loss over the kinds accepted by `keep`, accumulating the
    /// gradient into `grad` when given.
    pub fn loss_filtered(
        &self,
        params: &[f64],
        keep: impl Fn(LossKind) -> bool,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        self.loss_at_sharpness(params, self.config.sharpness, keep, grad)
    }

    /// As [`ConstraintSystem::loss_filtered`] with the logistic sharpness
    /// overridden, for annealing schedules.
    pub fn loss_at_sharpness(
        &self,
        params: &[f64],
        sharpness: f64,
        keep: impl Fn(LossKind) -> bool,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let ctx = Ctx { s: sharpness, ..self.ctx() };
        let mut total = 0.0;
        for t in self.losses.iter().filter(|t| keep(t.kind) && t.weight != 0.0) {
            let g = grad.as_deref_mut().map(|g| (g, t.weight));
            total += t.weight * t.eval(&ctx, params, g);
        }
        total
    }

    /// Unweighted sum of triple, axiom-instance and ground-formula losses
    /// under step semantics at tolerance `delta`. Zero exactly when the
    /// corresponding vector model (approximate mode, same `delta`) satisfies
    /// the KB.
    pub fn hard_loss(&self, params: &[f64], delta: f64) -> f64 {
        let ctx = Ctx { hard: true, delta, delta_neg: delta, ..self.ctx() };
        self.losses.iter().filter(|t| t.kind.is_constraint()).map(|t| t.eval(&ctx, params, None)).sum()
    }

    pub fn breakdown(&self, params: &[f64]) -> LossBreakdown {
        let ctx = self.ctx();
        let mut b = LossBreakdown::default();
        for t in &self.losses {
            let v = t.eval(&ctx, params, None);
            match t.kind {
                LossKind::Triple => b.triple += v,
                LossKind::AxiomInstance => b.axiom += v,
                LossKind::GroundFormula => b.ground += v,
                LossKind::SimilarityPair => b.similarity += v,
                LossKind::Gauge => b.gauge += v,
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::satisfies_kb;
    use crate::logic::parse_kb;
    use crate::similarity::{disparity_score, jaccard_similarity};

    fn dims_all(kb: &KnowledgeBase, axes: &[usize]) -> IndexMap<Predicate, Vec<usize>> {
        kb.predicates().iter().map(|p| (p.clone(), axes.to_vec())).collect()
    }

    /// Layout for terms a, b on a line, predicate P on axis 0.
    fn line_layout() -> (KnowledgeBase, ParameterLayout) {
        let kb = parse_kb("P(a,b).").unwrap();
        let layout = ParameterLayout::new(&kb, 1, &dims_all(&kb, &[0])).unwrap();
        (kb, layout)
    }

    #[test]
    fn soft_truth_examples() {
        assert_eq!(soft_truth(0.1, 0.1, 100.0), 0.5);
        let v = soft_truth(0.0, 0.1, 100.0);
        assert!((v - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
        assert!((v - 0.99995).abs() < 1e-5);
        for r in [0.0, 0.05, 0.3, 7.0] {
            let t = soft_truth(r, 0.1, 50.0);
            assert!((t + (1.0 - t) - 1.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&t));
        }
        assert_eq!(soft_truth(1e6, 0.1, 1e3), 0.0);
    }

    #[test]
    fn triple_hinge_examples() {
        let (_, layout) = line_layout();
        let cfg = CompileConfig::new(0.1);
        let t = compile_triple(&Triple::new("P", "a", "b"), &layout).unwrap();
        // params: a, b, direction
        assert_eq!(t.value(&[0.0, 1.0, 1.0], &layout, &cfg), 0.0);
        assert!((t.value(&[0.0, 1.3, 1.0], &layout, &cfg) - 0.04).abs() < 1e-12);
        assert_eq!(t.value(&[0.0, 1.1 - 1e-9, 1.0], &layout, &cfg), 0.0);
    }

    #[test]
    fn implication_corners() {
        let kb = parse_kb("term a. term A. term B. pred P. pred Q.").unwrap();
        // N = 2: P on axis 0, Q on axis 1.
        let dims: IndexMap<Predicate, Vec<usize>> =
            [(Predicate::new("P"), vec![0]), (Predicate::new("Q"), vec![1])].into_iter().collect();
        let layout = ParameterLayout::new(&kb, 2, &dims).unwrap();
        let cfg = CompileConfig::new(0.1);
        let f = Formula::implies(Formula::ground("P", "a", "A"), Formula::ground("Q", "a", "B"));
        let t = compile_ground_implication(&f, &layout).unwrap();
        let params = |a_true: bool, b_true: bool| {
            // a at origin; A at (1,0) when P(a,A) should hold, far otherwise.
            let ax = if a_true { 1.0 } else { 5.0 };
            let by = if b_true { 1.0 } else { 5.0 };
            vec![0.0, 0.0, ax, 0.0, 0.0, by, 1.0, 1.0]
        };
        assert!(t.value(&params(false, false), &layout, &cfg) < 1e-12);
        assert!(t.value(&params(true, true), &layout, &cfg) < 1e-6);
        assert!((t.value(&params(true, false), &layout, &cfg) - 1.0).abs() < 1e-3);
        assert_eq!(t.hard_value(&params(true, false), &layout, 0.1), 1.0);
        assert_eq!(t.hard_value(&params(true, true), &layout, 0.1), 0.0);
        assert_eq!(t.hard_value(&params(false, false), &layout, 0.1), 0.0);
        assert!(matches!(
            compile_ground_implication(&Formula::ground("P", "a", "A"), &layout),
            Err(CompileError::NotImplication(_))
        ));
    }

    #[test]
    fn ground_formula_examples() {
        let kb = parse_kb("term a. term b. pred P. pred Q.").unwrap();
        let dims: IndexMap<Predicate, Vec<usize>> =
            [(Predicate::new("P"), vec![0]), (Predicate::new("Q"), vec![1])].into_iter().collect();
        let layout = ParameterLayout::new(&kb, 2, &dims).unwrap();
        let cfg = CompileConfig::new(0.1);
        let on = vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let off = vec![0.0, 0.0, 4.0, 4.0, 1.0, 1.0];

        let neg = compile_ground_formula(&Formula::not(Formula::ground("P", "a", "b")), &layout).unwrap();
        assert_eq!(neg.len(), 1);
        assert!((neg[0].value(&on, &layout, &cfg) - 1.0).abs() < 1e-3);

        let disj = Formula::or(Formula::ground("P", "a", "b"), Formula::ground("Q", "a", "b"));
        let d = compile_ground_formula(&disj, &layout).unwrap();
        assert!((d[0].value(&off, &layout, &cfg) - 1.0).abs() < 1e-6);
        assert_eq!(d[0].value(&on, &layout, &cfg), 0.0);

        let conj = Formula::and(Formula::ground("P", "a", "b"), Formula::ground("Q", "a", "b"));
        let c = compile_ground_formula(&conj, &layout).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|t| matches!(t.payload, LossPayload::Hinge(_))));
        assert!(c.iter().all(|t| t.value(&on, &layout, &cfg) == 0.0));
        assert!(c.iter().all(|t| t.value(&off, &layout, &cfg) > 0.0));

        let q = Formula::exists("x", Formula::atom("P", Arg::var("x"), Arg::term("a")));
        assert!(matches!(compile_ground_formula(&q, &layout), Err(CompileError::NotGround(_))));
    }

    #[test]
    fn axiom_instances() {
        let kb = parse_kb("P(a,A).\nforall x: P(x,A) => Q(x,B).").unwrap();
        let dims: IndexMap<Predicate, Vec<usize>> =
            [(Predicate::new("P"), vec![0]), (Predicate::new("Q"), vec![1])].into_iter().collect();
        let layout = ParameterLayout::new(&kb, 2, &dims).unwrap();
        let ax = kb.axioms().next().unwrap();
        let terms = compile_axiom(ax, &kb, &layout).unwrap();
        assert_eq!(terms.len(), 3);
        let cfg = CompileConfig::new(0.1);
        // Terms a, A, B. P(a,A) holds; B off to the side so Q(a,B) fails.
        let bad = vec![0.0, 0.0, 1.0, 0.0, 5.0, 3.0, 1.0, 1.0];
        let losses: Vec<f64> = terms.iter().map(|t| t.value(&bad, &layout, &cfg)).collect();
        assert!(losses[0] > 0.9, "{losses:?}");
        assert!(losses[1] < 1e-6 && losses[2] < 1e-6, "{losses:?}");
        let good = vec![0.0, 0.0, 1.0, 0.0, 5.0, 1.0, 1.0, 1.0];
        let total: f64 = terms.iter().map(|t| t.value(&good, &layout, &cfg)).sum();
        assert!(total < 1e-6);
    }

    #[test]
    fn similarity_and_gauge_terms() {
        let (kb, layout) = line_layout();
        let cfg = CompileConfig::new(0.1);
        let s = SimilarityMatrix::new(
            vec![Term::new("a"), Term::new("b")],
            vec![vec![1.0, 0.4], vec![0.4, 1.0]],
        )
        .unwrap();
        let t = &compile_similarity(&s, &layout).unwrap()[0];
        assert!(t.value(&[0.0, 0.6, 1.0], &layout, &cfg) < 1e-24);
        let e = std::f64::consts::E;
        assert!((t.value(&[0.0, 0.6 / e, 1.0], &layout, &cfg) - 1.0).abs() < 1e-12);

        let g = compile_gauge(&layout);
        // Centered, unit spread: points at -1 and 1.
        assert_eq!(g[0].value(&[-1.0, 1.0, 1.0], &layout, &cfg), 0.0);
        assert_eq!(g[1].value(&[-1.0, 1.0, 1.0], &layout, &cfg), 0.0);
        assert!((g[0].value(&[2.0, 4.0, 1.0], &layout, &cfg) - 9.0).abs() < 1e-12);
        assert!((g[1].value(&[-2.0, 2.0, 1.0], &layout, &cfg) - 1.0).abs() < 1e-12);
        let _ = kb;
    }

    #[test]
    fn kb_counts() {
        let kb = parse_kb("P(a,b).").unwrap();
        let s = jaccard_similarity(&kb);
        let mut cfg = CompileConfig::new(0.1);
        cfg.weights.sim = 0.0;
        let sys = compile_kb(&kb, &s, &cfg, 2, &dims_all(&kb, &[0])).unwrap();
        assert_eq!(sys.count(LossKind::Triple), 1);
        assert_eq!(sys.count(LossKind::Gauge), 2);
        assert_eq!(sys.losses().len(), 3);

        let kb = parse_kb("term c.\nforall x: P(x,A) => Q(x,B).\nR(c, A).").unwrap();
        let sys = compile_kb(&kb, &jaccard_similarity(&kb), &CompileConfig::new(0.1), 2, &dims_all(&kb, &[1]))
            .unwrap();
        assert_eq!(sys.count(LossKind::AxiomInstance), 3);
        assert_eq!(sys.count(LossKind::SimilarityPair), 3);

        let missing: IndexMap<Predicate, Vec<usize>> = IndexMap::new();
        assert!(matches!(
            compile_kb(&kb, &jaccard_similarity(&kb), &cfg, 2, &missing),
            Err(CompileError::MissingDims(_))
        ));
    }

    #[test]
    fn similarity_total_matches_disparity() {
        let kb = parse_kb("P(a,c). P(b,c). Q(a,d). Q(c,d).").unwrap();
        let s = jaccard_similarity(&kb);
        let mut cfg = CompileConfig::new(0.1);
        cfg.weights = LossWeights { triple: 0.0, axiom: 0.0, sim: 1.0, gauge: 0.0 };
        let dims = dims_all(&kb, &[0, 2]);
        let sys = compile_kb(&kb, &s, &cfg, 3, &dims).unwrap();
        let params: Vec<f64> = (0..sys.layout().len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let m = sys.layout().model_from_params(&params, 0.1).unwrap();
        let avg = sys.total_loss(&params);
        assert!((avg - disparity_score(&s, &m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hard_loss_agrees_with_satisfaction() {
        let kb = parse_kb("P(a,A).\nforall x: P(x,A) => Q(x,B).\nnot Q(A, a).").unwrap();
        let s = jaccard_similarity(&kb);
        let dims: IndexMap<Predicate, Vec<usize>> =
            [(Predicate::new("P"), vec![0]), (Predicate::new("Q"), vec![1])].into_iter().collect();
        let sys = compile_kb(&kb, &s, &CompileConfig::new(0.1), 2, &dims).unwrap();
        for params in [
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.05, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.3, 0.0, 0.0, 1.0, 1.0, 1.0],
        ] {
            let m = sys.layout().model_from_params(&params, 0.1).unwrap();
            let sat = satisfies_kb(&m, &kb).unwrap().satisfied;
            assert_eq!(sys.hard_loss(&params, 0.1) == 0.0, sat, "{params:?}");
        }
    }
}
