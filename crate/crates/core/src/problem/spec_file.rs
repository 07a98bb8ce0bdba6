//! JSON problem files.
//!
//! Matrices are either a constant 2-D array or an array of per-node 2-D arrays;
//! vectors are a 1-D array or an array of per-node 1-D arrays. A bare number is
//! accepted as a 1x1 matrix or a length-1 vector. Absent coefficients are zero.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use super::{Entry, ProblemSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MATRIX_FIELDS: [&str; 10] = [
    "A", "B", "C", "D", "Q", "S", "R", "Q_tilde", "S_tilde", "R_tilde",
];
const VECTOR_FIELDS: [&str; 2] = ["b", "sigma"];
const OTHER_FIELDS: [&str; 9] = ["n", "m", "T", "N", "x0", "G", "G_tilde", "g", "name"];

/// Top-level keys that belong to the run configuration rather than the problem.
pub const CONFIG_FIELDS: [&str; 3] = ["tolerances", "verify", "description"];

fn number(field: &str, v: &Value) -> Result<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| Error::parse(field, format!("expected a number, found {}", kind(v))))?;
    if !x.is_finite() {
        return Err(Error::parse(field, "non-finite number"));
    }
    Ok(x)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn count(field: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::parse(field, format!("expected a non-negative integer, found {v}")))
}

fn array<'a>(field: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::parse(field, format!("expected an array, found {}", kind(v))))
}

fn depth(v: &Value) -> usize {
    match v {
        Value::Array(items) => 1 + items.first().map_or(0, depth),
        _ => 0,
    }
}

fn vector<T: Real>(field: &str, v: &Value) -> Result<DVector<T>> {
    if v.is_number() {
        return Ok(DVector::from_element(1, T::lit(number(field, v)?)));
    }
    let items = array(field, v)?;
    let vals = items
        .iter()
        .enumerate()
        .map(|(i, x)| number(&format!("{field}[{i}]"), x).map(T::lit))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(vals))
}

fn matrix<T: Real>(field: &str, v: &Value) -> Result<DMatrix<T>> {
    if v.is_number() {
        return Ok(DMatrix::from_element(1, 1, T::lit(number(field, v)?)));
    }
    let rows = array(field, v)?;
    let mut data = Vec::new();
    let mut ncols = None;
    for (i, row) in rows.iter().enumerate() {
        let row = vector::<T>(&format!("{field}[{i}]"), row)?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    format!("{field}[{i}]"),
                    format!("ragged matrix: row has {} entries, expected {c}", row.len()),
                ))
            }
            _ => {}
        }
        data.extend(row.iter().copied());
    }
    let nrows = rows.len();
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &data))
}

fn matrix_entry<T: Real>(field: &str, v: &Value) -> Result<Entry<DMatrix<T>>> {
    match depth(v) {
        0 | 2 => Ok(Entry::Constant(matrix(field, v)?)),
        3 => Ok(Entry::PerNode(
            array(field, v)?
                .iter()
                .enumerate()
                .map(|(k, x)| matrix(&format!("{field}[{k}]"), x))
                .collect::<Result<_>>()?,
        )),
        d => Err(Error::parse(field, format!("expected a 2-D or 3-D array, found depth {d}"))),
    }
}

fn vector_entry<T: Real>(field: &str, v: &Value) -> Result<Entry<DVector<T>>> {
    match depth(v) {
        0 | 1 => Ok(Entry::Constant(vector(field, v)?)),
        2 => Ok(Entry::PerNode(
            array(field, v)?
                .iter()
                .enumerate()
                .map(|(k, x)| vector(&format!("{field}[{k}]"), x))
                .collect::<Result<_>>()?,
        )),
        d => Err(Error::parse(field, format!("expected a 1-D or 2-D array, found depth {d}"))),
    }
}

fn required<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
    obj.get(field)
        .ok_or_else(|| Error::parse(field, "missing required field"))
}

/// Parses a problem document. Keys listed in [`CONFIG_FIELDS`] are ignored.
pub fn parse_problem<T: Real>(doc: &Value) -> Result<ProblemSpec<T>> {
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::parse("<root>", format!("expected an object, found {}", kind(doc))))?;
    for key in obj.keys() {
        let known = MATRIX_FIELDS.contains(&key.as_str())
            || VECTOR_FIELDS.contains(&key.as_str())
            || OTHER_FIELDS.contains(&key.as_str())
            || CONFIG_FIELDS.contains(&key.as_str());
        if !known {
            return Err(Error::parse(key.as_str(), "unknown field"));
        }
    }
    let n = count("n", required(obj, "n")?)?;
    let m = count("m", required(obj, "m")?)?;
    let horizon = T::lit(number("T", required(obj, "T")?)?);
    let steps = count("N", required(obj, "N")?)?;
    let mut spec = ProblemSpec::new(n, m, horizon, steps);

    if let Some(v) = obj.get("x0") {
        spec.x0 = vector("x0", v)?;
    }
    for field in MATRIX_FIELDS {
        let Some(v) = obj.get(field) else { continue };
        let entry = matrix_entry(field, v)?;
        let slot = match field {
            "A" => &mut spec.a,
            "B" => &mut spec.b,
            "C" => &mut spec.c,
            "D" => &mut spec.d,
            "Q" => &mut spec.q,
            "S" => &mut spec.s,
            "R" => &mut spec.r,
            "Q_tilde" => &mut spec.q_tilde,
            "S_tilde" => &mut spec.s_tilde,
            _ => &mut spec.r_tilde,
        };
        *slot = entry;
    }
    if let Some(v) = obj.get("b") {
        spec.b_vec = vector_entry("b", v)?;
    }
    if let Some(v) = obj.get("sigma") {
        spec.sigma = vector_entry("sigma", v)?;
    }
    if let Some(v) = obj.get("G") {
        spec.g = matrix("G", v)?;
    }
    if let Some(v) = obj.get("G_tilde") {
        spec.g_tilde = matrix("G_tilde", v)?;
    }
    if let Some(v) = obj.get("g") {
        spec.g_vec = vector("g", v)?;
    }
    Ok(spec)
}

fn mat_json<T: Real>(m: &DMatrix<T>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|r| Value::Array(r.iter().map(|x| json!(x.as_f64())).collect()))
            .collect(),
    )
}

fn vec_json<T: Real>(v: &DVector<T>) -> Value {
    Value::Array(v.iter().map(|x| json!(x.as_f64())).collect())
}

fn entry_json<S>(e: &Entry<S>, f: impl Fn(&S) -> Value) -> Option<Value> {
    match e {
        Entry::Zero => None,
        Entry::Constant(v) => Some(f(v)),
        Entry::PerNode(vs) => Some(Value::Array(vs.iter().map(f).collect())),
    }
}

/// Serializes a problem to the document format read by [`parse_problem`].
pub fn problem_to_json<T: Real>(spec: &ProblemSpec<T>) -> Value {
    let mut obj = Map::new();
    obj.insert("n".into(), json!(spec.n));
    obj.insert("m".into(), json!(spec.m));
    obj.insert("T".into(), json!(spec.horizon.as_f64()));
    obj.insert("N".into(), json!(spec.steps));
    obj.insert("x0".into(), vec_json(&spec.x0));
    let mats = [
        ("A", &spec.a),
        ("B", &spec.b),
        ("C", &spec.c),
        ("D", &spec.d),
        ("Q", &spec.q),
        ("S", &spec.s),
        ("R", &spec.r),
        ("Q_tilde", &spec.q_tilde),
        ("S_tilde", &spec.s_tilde),
        ("R_tilde", &spec.r_tilde),
    ];
    for (k, e) in mats {
        if let Some(v) = entry_json(e, mat_json) {
            obj.insert(k.into(), v);
        }
    }
    for (k, e) in [("b", &spec.b_vec), ("sigma", &spec.sigma)] {
        if let Some(v) = entry_json(e, vec_json) {
            obj.insert(k.into(), v);
        }
    }
    obj.insert("G".into(), mat_json(&spec.g));
    obj.insert("G_tilde".into(), mat_json(&spec.g_tilde));
    obj.insert("g".into(), vec_json(&spec.g_vec));
    Value::Object(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn parse(text: &str) -> Result<ProblemSpec<f64>> {
        parse_problem(&serde_json::from_str::<Value>(text).unwrap())
    }

    #[test]
    fn minimal_document() {
        let spec = parse(r#"{"n":1,"m":1,"T":1.0,"N":10,"A":[[0.5]],"R":1,"G":[[1]]}"#).unwrap();
        let c = spec.validate().unwrap();
        assert_eq!(c.a().sample(0.3).unwrap(), dmatrix![0.5]);
        assert_eq!(c.r().sample(0.3).unwrap(), dmatrix![1.0]);
        assert_eq!(c.q().sample(0.3).unwrap(), dmatrix![0.0]);
    }

    #[test]
    fn per_node_paths() {
        let spec = parse(r#"{"n":1,"m":1,"T":1.0,"N":2,"A":[[[0]],[[1]],[[2]]],"b":[[0],[1],[4]]}"#).unwrap();
        let c = spec.validate().unwrap();
        assert_eq!(c.a().sample(0.25).unwrap()[(0, 0)], 0.5);
        assert_eq!(c.b_vec().sample(1.0).unwrap()[0], 4.0);
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse(r#"{"n":2,"m":1,"T":1.0,"N":10,"B":[[1],["x"]]}"#).unwrap_err();
        assert!(err.to_string().contains("B[1][0]"), "{err}");
        let err = parse(r#"{"n":2,"m":1,"T":1.0}"#).unwrap_err();
        assert!(err.to_string().contains("`N`"), "{err}");
        let err = parse(r#"{"n":2,"m":1,"T":1.0,"N":4,"Qtilde":1}"#).unwrap_err();
        assert!(err.to_string().contains("Qtilde"), "{err}");
        let err = parse(r#"{"n":2,"m":1,"T":1.0,"N":4,"A":[[1,2],[3]]}"#).unwrap_err();
        assert!(err.to_string().contains("A[1]"), "{err}");
    }

    #[test]
    fn round_trip() {
        let text = r#"{"n":2,"m":1,"T":2.0,"N":4,"x0":[1,2],"A":[[0,1],[-1,0]],"B":[[0],[1]],
            "sigma":[0.1,0.2],"Q":[[1,0],[0,1]],"R":[[1]],"G_tilde":[[1,0],[0,0]],"g":[0.5,0]}"#;
        let spec = parse(text).unwrap();
        let again: ProblemSpec<f64> = parse_problem(&problem_to_json(&spec)).unwrap();
        assert_eq!(spec, again);
    }
}
