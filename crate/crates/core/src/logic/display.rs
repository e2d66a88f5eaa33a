use super::{Arg, Formula, KnowledgeBase};
use std::fmt::{self, Write};

// Binding strength used to decide where parentheses are needed.
const PREC_QUANT: u8 = 0;
const PREC_IMPLIES: u8 = 1;
const PREC_OR: u8 = 2;
const PREC_AND: u8 = 3;
const PREC_NOT: u8 = 4;

fn write_formula(f: &Formula, ctx: u8, out: &mut fmt::Formatter<'_>) -> fmt::Result {
    let open = match f {
        Formula::Atom { .. } | Formula::Not(_) => false,
        Formula::And(..) => ctx > PREC_AND,
        Formula::Or(..) => ctx > PREC_OR,
        Formula::Implies(..) => ctx > PREC_IMPLIES,
        Formula::Forall(..) | Formula::Exists(..) => ctx > PREC_QUANT,
    };
    if open {
        out.write_char('(')?;
    }
    match f {
        Formula::Atom { pred, args } => write!(out, "{}({}, {})", pred, args[0], args[1])?,
        Formula::Not(g) => {
            out.write_str("not ")?;
            write_formula(g, PREC_NOT, out)?;
        }
        Formula::And(a, b) => {
            write_formula(a, PREC_AND, out)?;
            out.write_str(" and ")?;
            write_formula(b, PREC_NOT, out)?;
        }
        Formula::Or(a, b) => {
            write_formula(a, PREC_OR, out)?;
            out.write_str(" or ")?;
            write_formula(b, PREC_AND, out)?;
        }
        Formula::Implies(a, b) => {
            write_formula(a, PREC_OR, out)?;
            out.write_str(" => ")?;
            write_formula(b, PREC_IMPLIES, out)?;
        }
        Formula::Forall(v, g) | Formula::Exists(v, g) => {
            let q = if matches!(f, Formula::Forall(..)) { "forall" } else { "exists" };
            write!(out, "{q} {v}: ")?;
            write_formula(g, PREC_QUANT, out)?;
        }
    }
    if open {
        out.write_char(')')?;
    }
    Ok(())
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_formula(self, PREC_QUANT, f)
    }
}

/// Renders a KB in the text format. Every symbol is declared explicitly, so
/// `parse_kb(print_kb(kb))` reproduces symbol order exactly.
pub fn print_kb(kb: &KnowledgeBase) -> String {
    let mut s = String::new();
    for t in kb.terms() {
        let _ = writeln!(s, "term {t}.");
    }
    for p in kb.predicates() {
        let _ = writeln!(s, "pred {p}.");
    }
    for tr in kb.triples() {
        let _ = writeln!(s, "{tr}.");
    }
    for ax in kb.axioms() {
        let _ = writeln!(s, "{ax}.");
    }
    for c in kb.constraints() {
        let _ = writeln!(s, "{c}.");
    }
    for q in kb.queries() {
        match &q.var {
            Some(v) => {
                let _ = writeln!(s, "query {}({}): {}.", q.name, v, q.formula);
            }
            None => {
                let _ = writeln!(s, "query {}: {}.", q.name, q.formula);
            }
        }
    }
    s
}
