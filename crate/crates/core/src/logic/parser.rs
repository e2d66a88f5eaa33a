//! Recursive-descent parser for the KB text format.
//!
//! ```text
//! # comment
//! term a.                               # optional declarations
//! pred P.
//! P(a, b).                              # triple
//! forall x: P(x, A) => Q(x, B).         # axiom (template only)
//! not P(a, c).                          # ground constraint
//! query q1: exists y: P(a, y).          # closed query
//! query q2(x): Q(x, B).                 # binding query over x
//! ```
//!
//! Precedence, tightest first: `not`, `and`, `or`, `=>`. `and`/`or` are left
//! associative, `=>` is right associative and a quantifier body extends as far
//! right as possible. An identifier in argument position is a variable iff an
//! enclosing quantifier (or the query header) binds it.

use super::{Arg, Axiom, Formula, KbError, KnowledgeBase, Predicate, Query, Term, Variable};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    Arity,
    UnboundVariable,
    UnknownPredicate,
    Template,
    Semantic,
}

impl ParseErrorKind {
    /// Syntax and arity errors are malformed input; everything else is a
    /// well-formed statement the KB rejects.
    pub fn is_syntactic(self) -> bool {
        matches!(self, ParseErrorKind::Syntax | ParseErrorKind::Arity)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Dot,
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Arrow => f.write_str("`=>`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        let (l, cl) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        let single = |tok| Spanned { tok, line: l, col: cl };
        match c {
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump(&mut chars);
                }
            }
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '(' => {
                bump(&mut chars);
                out.push(single(Tok::LParen));
            }
            ')' => {
                bump(&mut chars);
                out.push(single(Tok::RParen));
            }
            ',' => {
                bump(&mut chars);
                out.push(single(Tok::Comma));
            }
            ':' => {
                bump(&mut chars);
                out.push(single(Tok::Colon));
            }
            '.' => {
                bump(&mut chars);
                out.push(single(Tok::Dot));
            }
            '=' => {
                bump(&mut chars);
                if chars.peek() == Some(&'>') {
                    bump(&mut chars);
                    out.push(single(Tok::Arrow));
                } else {
                    return Err(syntax(l, cl, "expected `=>`"));
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        bump(&mut chars);
                    } else {
                        break;
                    }
                }
                out.push(single(Tok::Ident(s)));
            }
            other => return Err(syntax(l, cl, &format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

fn syntax(line: usize, col: usize, msg: &str) -> ParseError {
    ParseError { kind: ParseErrorKind::Syntax, line, col, message: msg.to_string() }
}

const KEYWORD_NOT: &str = "not";
const KEYWORD_AND: &str = "and";
const KEYWORD_OR: &str = "or";

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    scope: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect(&mut self, tok: Tok) -> Result<Spanned, ParseError> {
        let t = self.next();
        if t.tok == tok {
            Ok(t)
        } else {
            Err(syntax(t.line, t.col, &format!("expected {tok}, found {}", t.tok)))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) if !super::KEYWORDS.contains(&s.as_str()) => Ok((s, t.line, t.col)),
            Tok::Ident(s) => Err(syntax(t.line, t.col, &format!("keyword `{s}` used as identifier"))),
            other => Err(syntax(t.line, t.col, &format!("expected identifier, found {other}"))),
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disjunction()?;
        if self.peek().tok == Tok::Arrow {
            self.next();
            let rhs = self.formula()?;
            Ok(Formula::implies(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.conjunction()?;
        while self.at_keyword(KEYWORD_OR) {
            self.next();
            let rhs = self.conjunction()?;
            f = Formula::or(f, rhs);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.unary()?;
        while self.at_keyword(KEYWORD_AND) {
            self.next();
            let rhs = self.unary()?;
            f = Formula::and(f, rhs);
        }
        Ok(f)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.at_keyword(KEYWORD_NOT) {
            self.next();
            return Ok(Formula::not(self.unary()?));
        }
        if self.at_keyword("forall") || self.at_keyword("exists") {
            let Tok::Ident(q) = self.next().tok else { unreachable!() };
            let (var, _, _) = self.ident()?;
            self.expect(Tok::Colon)?;
            self.scope.push(var.clone());
            let body = self.formula();
            self.scope.pop();
            let body = Box::new(body?);
            let var = Variable::new(var);
            return Ok(if q == "forall" { Formula::Forall(var, body) } else { Formula::Exists(var, body) });
        }
        if self.peek().tok == Tok::LParen {
            self.next();
            let f = self.formula()?;
            self.expect(Tok::RParen)?;
            return Ok(f);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let (pred, line, col) = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let (name, _, _) = self.ident()?;
            args.push(if self.scope.contains(&name) {
                Arg::Var(Variable::new(name))
            } else {
                Arg::Term(Term::new(name))
            });
            let t = self.next();
            match t.tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                other => {
                    return Err(syntax(t.line, t.col, &format!("expected `,` or `)`, found {other}")))
                }
            }
        }
        if args.len() != 2 {
            return Err(ParseError {
                kind: ParseErrorKind::Arity,
                line,
                col,
                message: format!(
                    "predicate `{pred}` applied to {} arguments; only binary predicates are supported",
                    args.len()
                ),
            });
        }
        let tail = args.pop().unwrap();
        let head = args.pop().unwrap();
        Ok(Formula::Atom { pred: Predicate::new(pred), args: [head, tail] })
    }
}

enum Statement {
    DeclTerm(String),
    DeclPred(String),
    Fact(Formula),
    Query { name: String, var: Option<String>, formula: Formula },
}

fn kb_error(e: KbError, line: usize, col: usize) -> ParseError {
    let kind = match e {
        KbError::UnboundVariable(_) | KbError::FreeVariables { .. } => ParseErrorKind::UnboundVariable,
        KbError::UnknownPredicate(_) => ParseErrorKind::UnknownPredicate,
        KbError::NotGround(_) => ParseErrorKind::Template,
        KbError::InvalidIdentifier(_) | KbError::DuplicateQuery(_) => ParseErrorKind::Semantic,
    };
    ParseError { kind, line, col, message: e.to_string() }
}

/// Parses and validates a KB document.
///
/// Terms and predicates used without a declaration are declared in first-use
/// order. Queries are checked after all other statements, so they may refer to
/// symbols introduced later in the file, but they never introduce symbols.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, ParseError> {
    let statements = parse_statements(text)?;
    let mut kb = KnowledgeBase::new();
    let mut queries = Vec::new();
    for (st, line, col) in statements {
        match st {
            Statement::DeclTerm(name) => {
                kb.add_term(&name).map_err(|e| kb_error(e, line, col))?;
            }
            Statement::DeclPred(name) => {
                kb.add_predicate(&name).map_err(|e| kb_error(e, line, col))?;
            }
            Statement::Fact(f) => add_fact(&mut kb, f, line, col)?,
            Statement::Query { name, var, formula } => queries.push((name, var, formula, line, col)),
        }
    }
    for (name, var, formula, line, col) in queries {
        kb.add_query(Query { name, var: var.map(Variable::new), formula })
            .map_err(|e| kb_error(e, line, col))?;
    }
    Ok(kb)
}

/// Parses a file of `query` statements and validates each against `kb`
/// (names must be unique within the file; the KB's own queries are ignored).
pub fn parse_queries(text: &str, kb: &KnowledgeBase) -> Result<Vec<Query>, ParseError> {
    let mut out: Vec<Query> = Vec::new();
    for (st, line, col) in parse_statements(text)? {
        let Statement::Query { name, var, formula } = st else {
            return Err(ParseError {
                kind: ParseErrorKind::Semantic,
                line,
                col,
                message: "a queries file may only contain `query` statements".into(),
            });
        };
        if out.iter().any(|q| q.name == name) {
            return Err(kb_error(KbError::DuplicateQuery(name), line, col));
        }
        let var = var.map(Variable::new);
        kb.check_query(&name, var.as_ref(), &formula).map_err(|e| kb_error(e, line, col))?;
        out.push(Query { name, var, formula });
    }
    Ok(out)
}

fn parse_statements(text: &str) -> Result<Vec<(Statement, usize, usize)>, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, scope: Vec::new() };
    let mut statements = Vec::new();
    while p.peek().tok != Tok::Eof {
        let start = p.peek().clone();
        let st = if p.at_keyword("term") || p.at_keyword("pred") {
            let is_term = p.at_keyword("term");
            p.next();
            let (name, _, _) = p.ident()?;
            if is_term {
                Statement::DeclTerm(name)
            } else {
                Statement::DeclPred(name)
            }
        } else if p.at_keyword("query") {
            p.next();
            let (name, _, _) = p.ident()?;
            let mut var = None;
            if p.peek().tok == Tok::LParen {
                p.next();
                var = Some(p.ident()?.0);
                p.expect(Tok::RParen)?;
            }
            p.expect(Tok::Colon)?;
            p.scope = var.iter().cloned().collect();
            let formula = p.formula();
            p.scope.clear();
            Statement::Query { name, var, formula: formula? }
        } else {
            Statement::Fact(p.formula()?)
        };
        p.expect(Tok::Dot)?;
        statements.push((st, start.line, start.col));
    }
    Ok(statements)
}

fn add_fact(kb: &mut KnowledgeBase, f: Formula, line: usize, col: usize) -> Result<(), ParseError> {
    if let Formula::Forall(..) | Formula::Exists(..) = f {
        return match Axiom::from_formula(&f) {
            Some(ax) => kb.add_axiom(ax).map(|_| ()).map_err(|e| kb_error(e, line, col)),
            None => Err(ParseError {
                kind: ParseErrorKind::Template,
                line,
                col,
                message: format!(
                    "quantified statement `{f}` does not match the supported template `forall x: P(x, A) => Q(x, B)`"
                ),
            }),
        };
    }
    if !f.is_ground() {
        return Err(ParseError {
            kind: ParseErrorKind::Template,
            line,
            col,
            message: format!("nested quantifiers are only supported in queries: `{f}`"),
        });
    }
    kb.add_constraint(f).map_err(|e| kb_error(e, line, col))
}

/// Parses a standalone formula. `var`, when given, is bound at the top level
/// (a binding query). With a KB, the result is validated as a query against it.
pub fn parse_formula(
    text: &str,
    kb: Option<&KnowledgeBase>,
    var: Option<&str>,
) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, scope: var.iter().map(|v| v.to_string()).collect() };
    let f = p.formula()?;
    if p.peek().tok == Tok::Dot {
        p.next();
    }
    let end = p.peek().clone();
    if end.tok != Tok::Eof {
        return Err(syntax(end.line, end.col, &format!("unexpected {} after formula", end.tok)));
    }
    if let Some(kb) = kb {
        let v = var.map(Variable::new);
        kb.check_query("<query>", v.as_ref(), &f).map_err(|e| kb_error(e, 1, 1))?;
    }
    Ok(f)
}
