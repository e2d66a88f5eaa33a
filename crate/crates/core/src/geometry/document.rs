//! JSON model documents.
//!
//! ```json
//! {
//!   "dimension": 2,
//!   "delta": 1.0000000000000001e-1,
//!   "mode": "approximate",
//!   "points": { "a": [0.0e0, 0.0e0], "b": [1.0e0, 0.0e0] },
//!   "predicates": { "P": { "dims": [0], "direction": [1.0e0] } }
//! }
//! ```
//!
//! Floats are written with 17 significant digits so documents round-trip
//! bit-exactly.

use super::{GeometryError, PredicateEmbedding, Semantics, VectorModel, DEFAULT_ANGLE_TOL};
use crate::logic::{Predicate, Term};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use std::io;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    dimension: usize,
    delta: f64,
    mode: Semantics,
    #[serde(default = "default_angle_tol")]
    angle_tolerance: f64,
    points: IndexMap<String, Vec<f64>>,
    predicates: IndexMap<String, PredicateEmbedding>,
}

fn default_angle_tol() -> f64 {
    DEFAULT_ANGLE_TOL
}

/// Pretty JSON with floats in `%.16e` form.
pub(crate) struct Sig17(PrettyFormatter<'static>);

impl Sig17 {
    pub(crate) fn new() -> Self {
        Sig17(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value as pretty JSON with 17-significant-digit floats.
/// Non-finite floats come out as `null`, as with plain serde_json.
pub fn to_json_sig17<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17::new());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn model_to_json(m: &VectorModel) -> Result<String, GeometryError> {
    let finite = m.points.values().flatten().chain(m.rels.values().flat_map(|e| &e.direction));
    if !m.delta.is_finite() || finite.into_iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::Document("non-finite value in model".into()));
    }
    let doc = ModelDocument {
        dimension: m.dimension,
        delta: m.delta,
        mode: m.mode,
        angle_tolerance: m.angle_tol,
        points: m.points.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        predicates: m.rels.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    to_json_sig17(&doc).map_err(|e| GeometryError::Document(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<VectorModel, GeometryError> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| GeometryError::Document(e.to_string()))?;
    let mut m = VectorModel::new(doc.dimension, doc.delta, doc.mode)?.with_angle_tol(doc.angle_tolerance);
    for (name, p) in doc.points {
        m.set_point(Term::new(name), p)?;
    }
    for (name, e) in doc.predicates {
        let emb = PredicateEmbedding::new(e.dims, e.direction)
            .map_err(|reason| GeometryError::InvalidEmbedding { pred: name.clone(), reason })?;
        m.set_predicate(Predicate::new(name), emb)?;
    }
    Ok(m)
}
