//! Term similarity and preferred-model scoring.
//!
//! A model is *preferred* when distances between term points track term
//! dissimilarity: `SD(ti, tj) = (1 - S(ti, tj)) / D(ti, tj)` should be close
//! to 1 for every pair. The disparity score is the mean of `(ln SD)^2` over
//! unordered distinct pairs, with `SD` clamped into `[eps, 1/eps]`.

use crate::geometry::{GeometryError, VectorModel};
use crate::logic::{KnowledgeBase, Predicate, Term};
use std::collections::BTreeSet;
use std::fmt::Write;
use thiserror::Error;

pub const DEFAULT_EPS_SD: f64 = 1e-6;
pub const DEFAULT_PREFERENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("similarity matrix must be square over {n} terms, found row {row} with {len} values")]
    Shape { n: usize, row: usize, len: usize },
    #[error("similarity value {value} at ({i}, {j}) is outside [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("similarity matrix is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("diagonal entry ({i}, {i}) must be 1")]
    Diagonal { i: usize },
    #[error("duplicate term `{0}` in header")]
    DuplicateTerm(String),
    #[error("term `{0}` missing from similarity matrix")]
    MissingTerm(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Symmetric `[0, 1]` matrix with unit diagonal, indexed by term order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    terms: Vec<Term>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a validated matrix from row-major values.
    pub fn new(terms: Vec<Term>, rows: Vec<Vec<f64>>) -> Result<Self, SimilarityError> {
        let n = terms.len();
        let mut seen = BTreeSet::new();
        for t in &terms {
            if !seen.insert(t) {
                return Err(SimilarityError::DuplicateTerm(t.to_string()));
            }
        }
        if rows.len() != n {
            return Err(SimilarityError::Shape { n, row: rows.len(), len: 0 });
        }
        let mut values = Vec::with_capacity(n * n);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(SimilarityError::Shape { n, row, len: r.len() });
            }
            values.extend_from_slice(r);
        }
        let m = SimilarityMatrix { terms, values };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), SimilarityError> {
        let n = self.terms.len();
        for i in 0..n {
            if self.at(i, i) != 1.0 {
                return Err(SimilarityError::Diagonal { i });
            }
            for j in 0..n {
                let v = self.at(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(SimilarityError::OutOfRange { i, j, value: v });
                }
                if v != self.at(j, i) {
                    return Err(SimilarityError::Asymmetric { i, j });
                }
            }
        }
        Ok(())
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.terms.len() + j]
    }

    pub fn index_of(&self, t: &str) -> Option<usize> {
        self.terms.iter().position(|x| x.as_str() == t)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.at(self.index_of(a)?, self.index_of(b)?))
    }

    /// Reorders (and restricts) the matrix to the KB's term order.
    pub fn aligned_to(&self, kb: &KnowledgeBase) -> Result<SimilarityMatrix, SimilarityError> {
        let idx: Vec<usize> = kb
            .terms()
            .iter()
            .map(|t| self.index_of(t.as_str()).ok_or_else(|| SimilarityError::MissingTerm(t.to_string())))
            .collect::<Result<_, _>>()?;
        let rows = idx.iter().map(|&i| idx.iter().map(|&j| self.at(i, j)).collect()).collect();
        SimilarityMatrix::new(kb.terms().iter().cloned().collect(), rows)
    }

    /// Parses the matrix file format: a header row of term names followed by
    /// one row of values per term. Fields are separated by commas and/or
    /// whitespace; `#` starts a comment.
    pub fn parse(text: &str) -> Result<SimilarityMatrix, SimilarityError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("")))
            .filter(|(_, l)| !l.trim().is_empty());
        let split = |l: &str| -> Vec<String> {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        let Some((_, header)) = lines.next() else {
            return Err(SimilarityError::Parse { line: 1, message: "missing header row".into() });
        };
        let terms: Vec<Term> = split(header).into_iter().map(Term::new).collect();
        let mut rows = Vec::new();
        for (line, l) in lines {
            let row = split(l)
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| SimilarityError::Parse { line, message: format!("`{s}`: {e}") })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        SimilarityMatrix::new(terms, rows)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.terms.iter().map(Term::as_str).collect();
        let _ = writeln!(s, "{}", names.join(","));
        let n = self.terms.len();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.at(i, j))).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Head,
    Tail,
}

/// Jaccard similarity of relational feature sets: `t` has feature
/// `(P, head, u)` for each triple `P(t, u)` and `(P, tail, u)` for each
/// `P(u, t)`. Two distinct terms with no features have similarity 0.
pub fn jaccard_similarity(kb: &KnowledgeBase) -> SimilarityMatrix {
    let terms: Vec<Term> = kb.terms().iter().cloned().collect();
    let n = terms.len();
    let mut features: Vec<BTreeSet<(&Predicate, Role, &Term)>> = vec![BTreeSet::new(); n];
    for tr in kb.triples() {
        let h = kb.term_index(tr.head.as_str()).expect("triple head is a KB term");
        let t = kb.term_index(tr.tail.as_str()).expect("triple tail is a KB term");
        features[h].insert((&tr.pred, Role::Head, &tr.tail));
        features[t].insert((&tr.pred, Role::Tail, &tr.head));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let inter = features[i].intersection(&features[j]).count();
            let union = features[i].len() + features[j].len() - inter;
            let s = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix { terms, values }
}

/// Raw `(1 - S) / D` for two distinct terms.
///
/// `S = 1` with `D > 0` gives 0, `D = 0` with `S < 1` gives `+inf`, and a
/// co-located identical pair (`S = 1`, `D = 0`) gives `None`. Clamping is
/// applied by [`disparity_score`].
pub fn sd_ratio(
    s: &SimilarityMatrix,
    m: &VectorModel,
    ti: &str,
    tj: &str,
) -> Result<Option<f64>, SimilarityError> {
    let sim = s.get(ti, tj).ok_or_else(|| SimilarityError::MissingTerm(format!("{ti}/{tj}")))?;
    let d = m.distance(ti, tj)?;
    Ok(raw_sd(1.0 - sim, d))
}

fn raw_sd(numerator: f64, d: f64) -> Option<f64> {
    if d == 0.0 {
        if numerator == 0.0 {
            None
        } else {
            Some(f64::INFINITY)
        }
    } else {
        Some(numerator / d)
    }
}

/// Squared log of the clamped ratio; 0 at the ideal `SD = 1`.
pub fn pair_disparity(sd: f64, eps: f64) -> f64 {
    sd.clamp(eps, 1.0 / eps).ln().powi(2)
}

/// How [`is_preferred_with`] applies its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreferenceMode {
    /// Mean pair disparity below the threshold.
    Average,
    /// Every pair's disparity below the threshold.
    PerPair,
}

/// Per-pair disparities over unordered distinct pairs, in term order.
/// Skipped (co-located identical) pairs are omitted.
pub fn pair_disparities(
    s: &SimilarityMatrix,
    m: &VectorModel,
    eps: f64,
) -> Result<Vec<((usize, usize), f64)>, SimilarityError> {
    let n = s.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = m.distance(s.terms[i].as_str(), s.terms[j].as_str())?;
            if let Some(sd) = raw_sd(1.0 - s.at(i, j), d) {
                out.push(((i, j), pair_disparity(sd, eps)));
            }
        }
    }
    Ok(out)
}

/// Mean squared log disparity with the default clamp. 0 is perfect.
pub fn disparity_score(s: &SimilarityMatrix, m: &VectorModel) -> Result<f64, SimilarityError> {
    disparity_score_eps(s, m, DEFAULT_EPS_SD)
}

pub fn disparity_score_eps(s: &SimilarityMatrix, m: &VectorModel, eps: f64) -> Result<f64, SimilarityError> {
    let pairs = pair_disparities(s, m, eps)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(pairs.iter().map(|(_, v)| v).sum::<f64>() / pairs.len() as f64)
}

pub fn is_preferred(s: &SimilarityMatrix, m: &VectorModel, threshold: f64) -> Result<bool, SimilarityError> {
    is_preferred_with(s, m, threshold, PreferenceMode::Average)
}

pub fn is_preferred_with(
    s: &SimilarityMatrix,
    m: &VectorModel,
    threshold: f64,
    mode: PreferenceMode,
) -> Result<bool, SimilarityError> {
    Ok(match mode {
        PreferenceMode::Average => disparity_score(s, m)? < threshold,
        PreferenceMode::PerPair => {
            pair_disparities(s, m, DEFAULT_EPS_SD)?.iter().all(|(_, v)| *v < threshold)
        }
    })
}
