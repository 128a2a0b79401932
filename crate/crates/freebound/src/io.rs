//! File formats: densities (JSON, or two-column CSV in 1D), potential
//! configurations, cover/state exports and bound reports. Report floats are
//! serialized with 12 significant digits and infinities as the strings
//! "inf"/"-inf" so identical inputs produce identical bytes.

use crate::bounds::BoundReport;
use crate::covering::{BallCover, CubeCover};
use crate::density::GridDensity;
use crate::geometry::Grid;
use crate::oracle::{SandwichLink, SandwichReport};
use crate::potential::{CoreExponent, PotentialKind, PotentialSpec};
use crate::states::{CanonicalState, GrandCanonicalState};
use crate::{Error, Result};
use serde_json::{json, Map, Value};

/// A float rounded to 12 significant digits, as a JSON value.
pub fn json_number(x: f64) -> Value {
    if x.is_infinite() {
        return Value::String(if x > 0.0 { "inf".into() } else { "-inf".into() });
    }
    if x.is_nan() {
        return Value::String("nan".into());
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    serde_json::Number::from_f64(rounded).map(Value::Number).unwrap_or(Value::Null)
}

fn number_of(value: &Value, what: &str) -> Result<f64> {
    value
        .as_f64()
        .ok_or_else(|| Error::InvalidInput(format!("expected a number for {what}")))
}

/// Parse a density from JSON:
/// {"dim": d, "shape": [...], "spacing": [...], "origin": [...],
///  "values": [row-major flat array]}.
pub fn density_from_json(text: &str) -> Result<GridDensity<f64>> {
    let v: Value = serde_json::from_str(text)?;
    let dim = v
        .get("dim")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidInput("missing integer field dim".into()))? as usize;
    let vec_field = |name: &str| -> Result<Vec<f64>> {
        v.get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput(format!("missing array field {name}")))?
            .iter()
            .map(|x| number_of(x, name))
            .collect()
    };
    let shape: Vec<usize> = vec_field("shape")?.into_iter().map(|x| x as usize).collect();
    let spacing = vec_field("spacing")?;
    let origin = vec_field("origin")?;
    let values = vec_field("values")?;
    if shape.len() != dim {
        return Err(Error::InvalidInput("shape length must equal dim".into()));
    }
    let grid = Grid::new(shape, spacing, origin)?;
    GridDensity::new(grid, values)
}

pub fn density_to_json(rho: &GridDensity<f64>) -> Value {
    json!({
        "dim": rho.dim(),
        "shape": rho.grid.shape,
        "spacing": rho.grid.spacing.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
        "origin": rho.grid.origin.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
        "values": rho.values.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
    })
}

/// Two-column CSV (x, rho) for d = 1: x are uniformly spaced cell centers.
pub fn density_from_csv(text: &str) -> Result<GridDensity<f64>> {
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let x: f64 = parts
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("line {}: missing x", lineno + 1)))?
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad x", lineno + 1)))?;
        let v: f64 = parts
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("line {}: missing value", lineno + 1)))?
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad value", lineno + 1)))?;
        // Skip a non-numeric header row silently.
        xs.push(x);
        vs.push(v);
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("CSV density needs at least two rows".into()));
    }
    let h = xs[1] - xs[0];
    if h <= 0.0 {
        return Err(Error::InvalidInput("CSV x column must increase".into()));
    }
    for w in xs.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs() {
            return Err(Error::InvalidInput("CSV x column must be uniformly spaced".into()));
        }
    }
    let grid = Grid::new(vec![xs.len()], vec![h], vec![xs[0] - h / 2.0])?;
    GridDensity::new(grid, vs)
}

/// Parse a potential from JSON:
/// {"kind": "powerLaw" | "hardCore" | "envelope" | "tabulated",
///  "kappa": k, "r0": r, "alpha": a | "inf", "s": s, "table": [[r, w], ...]}.
pub fn potential_from_json(text: &str) -> Result<PotentialSpec<f64>> {
    let v: Value = serde_json::from_str(text)?;
    let kind_name = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidInput("missing string field kind".into()))?;
    let kappa = number_of(v.get("kappa").unwrap_or(&Value::Null), "kappa")?;
    let r0 = number_of(v.get("r0").unwrap_or(&Value::Null), "r0")?;
    let s = number_of(v.get("s").unwrap_or(&Value::Null), "s")?;
    let alpha = match v.get("alpha") {
        Some(Value::String(t)) if t == "inf" => CoreExponent::Infinite,
        Some(x) => CoreExponent::Finite(number_of(x, "alpha")?),
        None => return Err(Error::InvalidInput("missing field alpha".into())),
    };
    let kind = match kind_name {
        "powerLaw" => PotentialKind::PowerLaw,
        "envelope" => PotentialKind::Envelope,
        "hardCore" => PotentialKind::HardCore,
        "tabulated" => {
            let rows = v
                .get("table")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::InvalidInput("tabulated potential needs a table".into()))?;
            let mut table = Vec::with_capacity(rows.len());
            for row in rows {
                let pair = row
                    .as_array()
                    .filter(|p| p.len() == 2)
                    .ok_or_else(|| Error::InvalidInput("table rows must be [r, w] pairs".into()))?;
                table.push((number_of(&pair[0], "table r")?, number_of(&pair[1], "table w")?));
            }
            PotentialKind::Tabulated { table }
        }
        other => return Err(Error::InvalidInput(format!("unknown potential kind {other}"))),
    };
    PotentialSpec::new(kind, kappa, r0, alpha, s)
}

pub fn potential_to_json(w: &PotentialSpec<f64>) -> Value {
    let kind = match &w.kind {
        PotentialKind::PowerLaw => "powerLaw",
        PotentialKind::Envelope => "envelope",
        PotentialKind::HardCore => "hardCore",
        PotentialKind::Tabulated { .. } => "tabulated",
    };
    let alpha = match w.alpha {
        CoreExponent::Infinite => Value::String("inf".into()),
        CoreExponent::Finite(a) => json_number(a),
    };
    let mut obj = Map::new();
    obj.insert("kind".into(), Value::String(kind.into()));
    obj.insert("kappa".into(), json_number(w.kappa));
    obj.insert("r0".into(), json_number(w.r0));
    obj.insert("alpha".into(), alpha);
    obj.insert("s".into(), json_number(w.s));
    if let PotentialKind::Tabulated { table } = &w.kind {
        obj.insert(
            "table".into(),
            Value::Array(
                table
                    .iter()
                    .map(|(r, v)| Value::Array(vec![json_number(*r), json_number(*v)]))
                    .collect(),
            ),
        );
    }
    Value::Object(obj)
}

pub fn bound_report_to_json(report: &BoundReport<f64>) -> Value {
    json!({
        "name": report.name,
        "value": json_number(report.value),
        "exact": report.is_exact,
        "terms": report.terms.iter()
            .map(|(n, v)| json!({"name": n, "value": json_number(*v)}))
            .collect::<Vec<_>>(),
        "constants": report.constants.iter()
            .map(|(n, v)| json!({"name": n, "value": json_number(*v)}))
            .collect::<Vec<_>>(),
        "applicability": report.applicability.iter()
            .map(|(n, ok)| json!({"condition": n, "holds": ok}))
            .collect::<Vec<_>>(),
    })
}

/// One CSV row per bound: name, value, exact flag.
pub fn bound_reports_to_csv(reports: &[BoundReport<f64>]) -> String {
    let mut out = String::from("name,value,exact\n");
    for r in reports {
        let value = if r.value.is_infinite() {
            if r.value > 0.0 { "inf".to_string() } else { "-inf".to_string() }
        } else {
            format!("{:.11e}", r.value)
        };
        out.push_str(&format!("{},{},{}\n", r.name, value, r.is_exact));
    }
    out
}

pub fn cube_cover_to_json(cover: &CubeCover<f64>) -> Value {
    json!({
        "kind": "cubes",
        "family_count": cover.family_count,
        "cubes": cover.cubes.iter().map(|c| json!({
            "center": c.center.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
            "side": json_number(c.side),
            "family": c.family,
        })).collect::<Vec<_>>(),
    })
}

pub fn ball_cover_to_json(cover: &BallCover<f64>) -> Value {
    json!({
        "kind": "balls",
        "epsilon": json_number(cover.epsilon),
        "max_multiplicity": cover.max_multiplicity,
        "balls": cover.balls.iter().map(|b| json!({
            "center": b.center.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
            "radius": json_number(b.radius),
            "local_radius": json_number(b.local_radius),
        })).collect::<Vec<_>>(),
    })
}

pub fn canonical_state_to_json(state: &CanonicalState<f64>) -> Value {
    match state {
        CanonicalState::SparseJoint(j) => json!({
            "representation": "sparse_joint",
            "n": j.n,
            "symmetric": j.symmetric,
            "entries": j.entries.iter().map(|(t, p)| json!({
                "cells": t,
                "mass": json_number(*p),
            })).collect::<Vec<_>>(),
        }),
        CanonicalState::Mixture(m) => json!({
            "representation": "mixture",
            "n": m.n,
            "terms": m.terms.iter().map(|t| json!({
                "weight": json_number(t.weight),
                "factors": t.factors.iter().map(|f| json!({
                    "entries": f.entries.iter().map(|e| json!({
                        "cell": e.cell,
                        "mass": json_number(e.mass),
                        "volume": json_number(e.volume),
                    })).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        }),
    }
}

pub fn gc_state_to_json(state: &GrandCanonicalState<f64>) -> Value {
    json!({
        "representation": "grand_canonical",
        "p0": json_number(state.p0),
        "sectors": state.sectors.iter().map(|(w, st)| json!({
            "n": st.n(),
            "weight": json_number(*w),
            "state": canonical_state_to_json(st),
        })).collect::<Vec<_>>(),
    })
}

pub fn sandwich_link_to_json(link: &SandwichLink<f64>) -> Value {
    json!({
        "lower": link.lower_name,
        "upper": link.upper_name,
        "lower_value": json_number(link.lower),
        "upper_value": json_number(link.upper),
        "slack": json_number(link.slack),
    })
}

pub fn sandwich_report_to_json(report: &SandwichReport<f64>) -> Value {
    json!({
        "passed": report.passed(),
        "tolerance": json_number(report.tolerance),
        "links": report.links.iter().map(sandwich_link_to_json).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_json_round_trip() {
        let text = r#"{"dim": 1, "shape": [4], "spacing": [0.5], "origin": [0.0],
                       "values": [0.1, 0.2, 0.3, 0.4]}"#;
        let rho = density_from_json(text).unwrap();
        assert_eq!(rho.values.len(), 4);
        let back = density_to_json(&rho).to_string();
        let rho2 = density_from_json(&back).unwrap();
        assert_eq!(rho.values, rho2.values);
    }

    #[test]
    fn density_csv_parses_uniform_grid() {
        let text = "0.25, 1.0\n0.75, 2.0\n1.25, 3.0\n";
        let rho = density_from_csv(text).unwrap();
        assert_eq!(rho.values, vec![1.0, 2.0, 3.0]);
        assert!((rho.grid.origin[0] - 0.0).abs() < 1e-12);
        assert!((rho.grid.spacing[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn potential_json_round_trip_including_inf() {
        let text = r#"{"kind": "hardCore", "kappa": 0.0, "r0": 1.0, "alpha": "inf", "s": 3.0}"#;
        let w = potential_from_json(text).unwrap();
        assert!(w.alpha.is_infinite());
        let back = potential_to_json(&w).to_string();
        let w2 = potential_from_json(&back).unwrap();
        assert_eq!(w, w2);
    }

    #[test]
    fn number_formatting_is_stable() {
        assert_eq!(json_number(f64::INFINITY), Value::String("inf".into()));
        assert_eq!(json_number(f64::NEG_INFINITY), Value::String("-inf".into()));
        let a = json_number(1.0 / 3.0).to_string();
        let b = json_number(1.0 / 3.0).to_string();
        assert_eq!(a, b);
        assert!(a.starts_with("0.3333333333"), "{a}");
    }
}
