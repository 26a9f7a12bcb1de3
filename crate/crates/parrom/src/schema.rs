//! JSON schemas for models and reports, plus the fixed-width number
//! formatting used by table output.
//!
//! Serialization goes through `serde_json::Value` with insertion-ordered
//! maps and shortest-round-trip float printing, so parse -> re-emit is
//! byte-identical and every f64 survives exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use crate::conditions::ConditionReport;
use crate::error::{Error, Result};
use crate::model::{
    state_space_to_pole_residue, ModeResidue, ParametricStateSpace, PoleResidueMode,
    PoleResidueModel, ScalarParamFunction,
};
use crate::norms::ErrorBreakdown;

pub const SCHEMA_VERSION: u64 = 1;

fn cplx_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

fn cplx_from(v: &Value, what: &str) -> Result<Complex64> {
    let pair = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::Structure(format!("{what}: expected [re, im] pair")))?;
    let re = pair[0]
        .as_f64()
        .ok_or_else(|| Error::Structure(format!("{what}: non-numeric real part")))?;
    let im = pair[1]
        .as_f64()
        .ok_or_else(|| Error::Structure(format!("{what}: non-numeric imaginary part")))?;
    Ok(Complex64::new(re, im))
}

fn coeff_json(f: &ScalarParamFunction) -> Value {
    Value::Array(
        f.terms()
            .iter()
            .map(|(c, exps)| json!([c, exps]))
            .collect(),
    )
}

fn coeff_from(v: &Value, np: usize, what: &str) -> Result<ScalarParamFunction> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Structure(format!("{what}: coeff_exponents must be a list")))?;
    let mut terms = Vec::with_capacity(arr.len());
    for t in arr {
        let pair = t
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::Structure(format!("{what}: term must be [coeff, exponents]")))?;
        let c = pair[0]
            .as_f64()
            .ok_or_else(|| Error::Structure(format!("{what}: non-numeric coefficient")))?;
        let exps = pair[1]
            .as_array()
            .ok_or_else(|| Error::Structure(format!("{what}: exponents must be a list")))?
            .iter()
            .map(|e| {
                e.as_u64()
                    .map(|x| x as u32)
                    .ok_or_else(|| Error::Structure(format!("{what}: non-integer exponent")))
            })
            .collect::<Result<Vec<u32>>>()?;
        terms.push((c, exps));
    }
    ScalarParamFunction::new(np, terms)
}

fn real_matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

fn real_matrix_from(v: &Value, what: &str) -> Result<DMatrix<f64>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Structure(format!("{what}: matrix must be a list of rows")))?;
    let nrows = rows.len();
    let ncols = rows
        .first()
        .and_then(|r| r.as_array())
        .map(|r| r.len())
        .ok_or_else(|| Error::Structure(format!("{what}: empty or malformed matrix")))?;
    let mut data = Vec::with_capacity(nrows * ncols);
    for row in rows {
        let row = row
            .as_array()
            .filter(|r| r.len() == ncols)
            .ok_or_else(|| Error::Structure(format!("{what}: ragged matrix")))?;
        for x in row {
            data.push(
                x.as_f64()
                    .ok_or_else(|| Error::Structure(format!("{what}: non-numeric entry")))?,
            );
        }
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

fn cplx_matrix_json(m: &DMatrix<Complex64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| cplx_json(m[(i, j)])).collect()))
            .collect(),
    )
}

fn cplx_vector_json(v: &DVector<Complex64>) -> Value {
    Value::Array(v.iter().map(|z| cplx_json(*z)).collect())
}

fn cplx_vector_from(v: &Value, what: &str) -> Result<DVector<Complex64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Structure(format!("{what}: vector must be a list")))?;
    let data = arr
        .iter()
        .map(|z| cplx_from(z, what))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(data))
}

fn matrix_terms_json(terms: &[(ScalarParamFunction, DMatrix<f64>)]) -> Value {
    Value::Array(
        terms
            .iter()
            .map(|(f, m)| {
                json!({
                    "coeff_exponents": coeff_json(f),
                    "matrix": real_matrix_json(m),
                })
            })
            .collect(),
    )
}

fn matrix_terms_from(
    v: &Value,
    np: usize,
    what: &str,
) -> Result<Vec<(ScalarParamFunction, DMatrix<f64>)>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Structure(format!("{what}: expected a list of terms")))?;
    arr.iter()
        .map(|t| {
            let f = coeff_from(
                t.get("coeff_exponents")
                    .ok_or_else(|| Error::Structure(format!("{what}: missing coeff_exponents")))?,
                np,
                what,
            )?;
            let m = real_matrix_from(
                t.get("matrix")
                    .ok_or_else(|| Error::Structure(format!("{what}: missing matrix")))?,
                what,
            )?;
            Ok((f, m))
        })
        .collect()
}

/// Separable state-space model as JSON.
pub fn state_space_to_json(sys: &ParametricStateSpace) -> Value {
    json!({
        "schema": SCHEMA_VERSION,
        "np": sys.np,
        "E": matrix_terms_json(&sys.e_terms),
        "A": matrix_terms_json(&sys.a_terms),
        "B": matrix_terms_json(&sys.b_terms),
        "C": matrix_terms_json(&sys.c_terms),
    })
}

pub fn state_space_from_json(v: &Value) -> Result<ParametricStateSpace> {
    check_schema(v)?;
    let np = v
        .get("np")
        .and_then(|x| x.as_u64())
        .ok_or_else(|| Error::Structure("missing np".into()))? as usize;
    let get = |key: &str| {
        v.get(key)
            .ok_or_else(|| Error::Structure(format!("missing {key}")))
    };
    ParametricStateSpace::new(
        np,
        matrix_terms_from(get("E")?, np, "E")?,
        matrix_terms_from(get("A")?, np, "A")?,
        matrix_terms_from(get("B")?, np, "B")?,
        matrix_terms_from(get("C")?, np, "C")?,
    )
}

fn vec_terms_json(terms: &[(ScalarParamFunction, DVector<Complex64>)]) -> Value {
    Value::Array(
        terms
            .iter()
            .map(|(f, v)| {
                json!({
                    "coeff_exponents": coeff_json(f),
                    "vector": cplx_vector_json(v),
                })
            })
            .collect(),
    )
}

fn vec_terms_from(
    v: &Value,
    np: usize,
    what: &str,
) -> Result<Vec<(ScalarParamFunction, DVector<Complex64>)>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Structure(format!("{what}: expected a list of terms")))?;
    arr.iter()
        .map(|t| {
            let f = coeff_from(
                t.get("coeff_exponents")
                    .ok_or_else(|| Error::Structure(format!("{what}: missing coeff_exponents")))?,
                np,
                what,
            )?;
            let vec = cplx_vector_from(
                t.get("vector")
                    .ok_or_else(|| Error::Structure(format!("{what}: missing vector")))?,
                what,
            )?;
            Ok((f, vec))
        })
        .collect()
}

/// Pole-residue model as JSON; rank-one modes carry `b`/`c` term lists, full
/// residues a `phi` term list.
pub fn model_to_json(model: &PoleResidueModel) -> Value {
    let modes: Vec<Value> = model
        .modes
        .iter()
        .map(|mode| {
            let mut obj = Map::new();
            obj.insert("lambda0".into(), cplx_json(mode.lambda0));
            obj.insert(
                "lambda_lin".into(),
                Value::Array(mode.lambda_lin.iter().map(|z| cplx_json(*z)).collect()),
            );
            match &mode.residue {
                ModeResidue::RankOne { b_terms, c_terms } => {
                    obj.insert("b".into(), vec_terms_json(b_terms));
                    obj.insert("c".into(), vec_terms_json(c_terms));
                }
                ModeResidue::Full { phi_terms } => {
                    obj.insert(
                        "phi".into(),
                        Value::Array(
                            phi_terms
                                .iter()
                                .map(|(f, m)| {
                                    json!({
                                        "coeff_exponents": coeff_json(f),
                                        "matrix": cplx_matrix_json(m),
                                    })
                                })
                                .collect(),
                        ),
                    );
                }
            }
            Value::Object(obj)
        })
        .collect();
    json!({
        "schema": SCHEMA_VERSION,
        "np": model.np,
        "ni": model.ni,
        "no": model.no,
        "real_realizable": model.real_realizable,
        "modes": modes,
    })
}

pub fn model_from_json(v: &Value) -> Result<PoleResidueModel> {
    check_schema(v)?;
    let geti = |key: &str| -> Result<usize> {
        v.get(key)
            .and_then(|x| x.as_u64())
            .map(|x| x as usize)
            .ok_or_else(|| Error::Structure(format!("missing integer field {key}")))
    };
    let np = geti("np")?;
    let ni = geti("ni")?;
    let no = geti("no")?;
    let modes_json = v
        .get("modes")
        .and_then(|x| x.as_array())
        .ok_or_else(|| Error::Structure("missing modes list".into()))?;
    let mut modes = Vec::with_capacity(modes_json.len());
    for m in modes_json {
        let lambda0 = cplx_from(
            m.get("lambda0")
                .ok_or_else(|| Error::Structure("mode missing lambda0".into()))?,
            "lambda0",
        )?;
        let lambda_lin = m
            .get("lambda_lin")
            .and_then(|x| x.as_array())
            .ok_or_else(|| Error::Structure("mode missing lambda_lin".into()))?
            .iter()
            .map(|z| cplx_from(z, "lambda_lin"))
            .collect::<Result<Vec<_>>>()?;
        if lambda_lin.len() != np {
            return Err(Error::Structure("lambda_lin length != np".into()));
        }
        let residue = if let Some(phi) = m.get("phi") {
            let arr = phi
                .as_array()
                .ok_or_else(|| Error::Structure("phi must be a list".into()))?;
            let phi_terms = arr
                .iter()
                .map(|t| {
                    let f = coeff_from(
                        t.get("coeff_exponents")
                            .ok_or_else(|| Error::Structure("phi missing coeff_exponents".into()))?,
                        np,
                        "phi",
                    )?;
                    let rows = t
                        .get("matrix")
                        .and_then(|x| x.as_array())
                        .ok_or_else(|| Error::Structure("phi missing matrix".into()))?;
                    let mut data = Vec::new();
                    for row in rows {
                        let row = row
                            .as_array()
                            .ok_or_else(|| Error::Structure("phi matrix ragged".into()))?;
                        for z in row {
                            data.push(cplx_from(z, "phi")?);
                        }
                    }
                    if data.len() != no * ni {
                        return Err(Error::Structure("phi matrix shape mismatch".into()));
                    }
                    Ok((f, DMatrix::from_row_slice(no, ni, &data)))
                })
                .collect::<Result<Vec<_>>>()?;
            ModeResidue::Full { phi_terms }
        } else {
            let b_terms = vec_terms_from(
                m.get("b").ok_or_else(|| Error::Structure("mode missing b".into()))?,
                np,
                "b",
            )?;
            let c_terms = vec_terms_from(
                m.get("c").ok_or_else(|| Error::Structure("mode missing c".into()))?,
                np,
                "c",
            )?;
            if b_terms.iter().any(|(_, v)| v.len() != ni)
                || c_terms.iter().any(|(_, v)| v.len() != no)
            {
                return Err(Error::Structure("b/c vector length mismatch".into()));
            }
            ModeResidue::RankOne { b_terms, c_terms }
        };
        modes.push(PoleResidueMode {
            lambda0,
            lambda_lin,
            residue,
        });
    }
    let mut model = PoleResidueModel::new(np, ni, no, modes);
    model.real_realizable = v
        .get("real_realizable")
        .and_then(|x| x.as_bool())
        .unwrap_or(false);
    Ok(model)
}

fn check_schema(v: &Value) -> Result<()> {
    match v.get("schema").and_then(|x| x.as_u64()) {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(other) => Err(Error::Structure(format!("unsupported schema version {other}"))),
        None => Err(Error::Structure("missing schema field".into())),
    }
}

/// Loads either schema from a file: pole-residue (a `modes` key) or
/// state-space (an `A` key, converted to pole-residue form).
pub fn load_model(path: &std::path::Path) -> Result<PoleResidueModel> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("modes").is_some() {
        model_from_json(&v)
    } else if v.get("A").is_some() {
        state_space_to_pole_residue(&state_space_from_json(&v)?)
    } else {
        Err(Error::Structure(
            "unrecognized model JSON: expected a modes or A field".into(),
        ))
    }
}

/// Condition reports as a JSON report body.
pub fn reports_to_json(reports: &[ConditionReport]) -> Value {
    let conditions: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "condition": r.condition_id.as_str(),
                "mode": r.mode,
                "func_index": r.func_index,
                "lhs": cplx_matrix_json(&r.lhs),
                "rhs": cplx_matrix_json(&r.rhs),
                "abs_err": r.abs_err,
                "rel_err": r.rel_err,
                "degenerate": r.degenerate,
                "note": r.note,
            })
        })
        .collect();
    json!({
        "schema": SCHEMA_VERSION,
        "conditions": conditions,
    })
}

/// Error breakdown as a JSON report body.
pub fn breakdown_to_json(bd: &ErrorBreakdown) -> Value {
    json!({
        "schema": SCHEMA_VERSION,
        "total_sq": bd.total_sq,
        "total": bd.total_sq.max(0.0).sqrt(),
        "per_node": bd
            .per_node
            .iter()
            .map(|n| json!({"q": n.q, "weight": n.weight, "h2_err_sq": n.h2_err_sq}))
            .collect::<Vec<_>>(),
    })
}

/// Writes a JSON value with a trailing newline.
pub fn write_json(path: &std::path::Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Scientific notation with five significant digits and a two-digit
/// exponent: `8.496e-9` renders as `"8.4960e-09"`.
pub fn fmt_sci5(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.4e}");
    let (mant, exp) = s.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("numeric exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// Condition id rendering shared by tables and CSV.
pub fn report_table(reports: &[ConditionReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>4} {:>5} {:>12} {:>12}  {}\n",
        "condition", "mode", "func", "abs_err", "rel_err", "note"
    ));
    for r in reports {
        let func = r.func_index.map_or("-".to_string(), |i| i.to_string());
        out.push_str(&format!(
            "{:<14} {:>4} {:>5} {:>12} {:>12}  {}\n",
            r.condition_id.as_str(),
            r.mode,
            func,
            fmt_sci5(r.abs_err),
            fmt_sci5(r.rel_err),
            r.note.as_deref().unwrap_or(""),
        ));
    }
    out
}

/// One CSV row per condition.
pub fn report_csv(reports: &[ConditionReport]) -> String {
    let mut out = String::from("condition,mode,func_index,abs_err,rel_err,degenerate\n");
    for r in reports {
        let func = r.func_index.map_or(String::new(), |i| i.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.condition_id.as_str(),
            r.mode,
            func,
            r.abs_err,
            r.rel_err,
            r.degenerate
        ));
    }
    out
}
