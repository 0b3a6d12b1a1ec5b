//! JSON documents for measures, velocity plans, hierarchical transport plans
//! and functional specifications.
//!
//! Measure documents look like
//! `{"manifold":{"kind":"sphere","ambient_dim":3},"level":1,"measure":NODE}`
//! where `NODE` is `{"weights":[..],"atoms":[NODE, ..]}` or `{"point":[..]}`.
//! Plan documents add `"plan":PNODE` next to the base measure, where `PNODE` is
//! `{"fibers":[{"atom":i,"weights":[..],"entries":[PNODE, ..]}, ..]}` or
//! `{"tangent":[..]}` (optionally with the redundant `"point"`).

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::functional::{FunctionalSpec, Potential, Term};
use crate::manifold::{Manifold, ManifoldKind, Point, Tangent};
use crate::measure::{HierMeasure, INGEST_MASS_TOL};
use crate::numeric::{kahan_sum, max_abs_diff};
use crate::plan::{Fiber, PlanNode, VelocityPlan, FIBER_TOL};
use crate::tree::Tree;
use crate::wasserstein::HierPlan;

/// A parsed document plus non-fatal notes (e.g. renormalized sphere points).
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(format!("{path}: missing \"{key}\"")))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(format!("{path}: expected an object")))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(format!("{path}: expected a number")))
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| schema(format!("{path}: expected a nonnegative integer")))
}

fn as_vec(v: &Value, path: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| schema(format!("{path}: expected an array of numbers")))?
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{path}[{i}]")))
        .collect()
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(format!("{path}: expected an array")))
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| schema(format!("not valid JSON: {e}")))
}

pub fn manifold_to_json(m: &Manifold) -> Value {
    let kind = match m.kind {
        ManifoldKind::Euclidean => "euclidean",
        ManifoldKind::Sphere => "sphere",
    };
    json!({"kind": kind, "ambient_dim": m.ambient_dim})
}

fn parse_manifold(v: &Value) -> Result<Manifold> {
    let obj = as_object(v, "manifold")?;
    let kind = match field(obj, "kind", "manifold")?.as_str() {
        Some("euclidean") => ManifoldKind::Euclidean,
        Some("sphere") => ManifoldKind::Sphere,
        other => return Err(schema(format!("manifold.kind: unknown kind {other:?}"))),
    };
    let d = as_usize(field(obj, "ambient_dim", "manifold")?, "manifold.ambient_dim")?;
    Manifold::new(kind, d).map_err(|e| schema(format!("manifold: {e}")))
}

fn tree_to_json(t: &Tree<Point>) -> Value {
    match t {
        Tree::Leaf(p) => json!({"point": p.0}),
        Tree::Mix(atoms) => json!({
            "weights": atoms.iter().map(|(w, _)| *w).collect::<Vec<_>>(),
            "atoms": atoms.iter().map(|(_, a)| tree_to_json(a)).collect::<Vec<_>>(),
        }),
    }
}

fn parse_tree(m: &Manifold, v: &Value, path: &str, warnings: &mut Vec<String>) -> Result<Tree<Point>> {
    let obj = as_object(v, path)?;
    if let Some(p) = obj.get("point") {
        let coords = as_vec(p, &format!("{path}.point"))?;
        let before = crate::numeric::norm(&coords);
        let (x, moved) = m.project_point(coords).map_err(|e| Error::InvalidPoint {
            path: path.to_string(),
            detail: e.to_string(),
        })?;
        if moved {
            warnings.push(format!("{path}: sphere point of norm {before} renormalized"));
        }
        return Ok(Tree::Leaf(x));
    }
    let weights = as_vec(field(obj, "weights", path)?, &format!("{path}.weights"))?;
    let atoms = as_array(field(obj, "atoms", path)?, &format!("{path}.atoms"))?;
    if weights.len() != atoms.len() {
        return Err(schema(format!(
            "{path}: {} weights for {} atoms",
            weights.len(),
            atoms.len()
        )));
    }
    let children = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| parse_tree(m, a, &format!("{path}.atoms[{i}]"), warnings))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tree::Mix(weights.into_iter().zip(children).collect()))
}

fn tree_level(t: &Tree<Point>, path: &str) -> Result<usize> {
    match t {
        Tree::Leaf(_) => Ok(0),
        Tree::Mix(atoms) => {
            let mut level = None;
            for (i, (_, a)) in atoms.iter().enumerate() {
                let l = tree_level(a, &format!("{path}.atoms[{i}]"))?;
                match level {
                    None => level = Some(l),
                    Some(prev) if prev != l => {
                        return Err(Error::LevelMismatch {
                            path: format!("{path}.atoms[{i}]"),
                            detail: format!("atom has level {l}, its siblings {prev}"),
                        })
                    }
                    _ => {}
                }
            }
            Ok(level.map_or(1, |l| l + 1))
        }
    }
}

pub fn measure_to_json(mu: &HierMeasure) -> Value {
    json!({
        "manifold": manifold_to_json(&mu.manifold()),
        "level": mu.level(),
        "measure": tree_to_json(mu.tree()),
    })
}

pub fn measure_to_string(mu: &HierMeasure) -> String {
    pretty(&measure_to_json(mu))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn parse_measure_value(v: &Value, warnings: &mut Vec<String>) -> Result<HierMeasure> {
    let obj = as_object(v, "document")?;
    let m = parse_manifold(field(obj, "manifold", "document")?)?;
    let level = as_usize(field(obj, "level", "document")?, "level")?;
    let tree = parse_tree(&m, field(obj, "measure", "document")?, "measure", warnings)?;
    let depth = tree_level(&tree, "measure")?;
    if depth != level {
        return Err(Error::LevelMismatch {
            path: "measure".into(),
            detail: format!("declared level {level} but the tree has depth {depth}"),
        });
    }
    HierMeasure::with_tolerance(m, tree, INGEST_MASS_TOL)
}

pub fn parse_measure(text: &str) -> Result<Ingested<HierMeasure>> {
    let mut warnings = Vec::new();
    let value = parse_measure_value(&parse_json(text)?, &mut warnings)?;
    Ok(Ingested { value, warnings })
}

fn plan_node_to_json(node: &PlanNode) -> Value {
    match node {
        PlanNode::Leaf(t) => json!({"point": t.base.0, "tangent": t.vec}),
        PlanNode::Fibers(fibers) => json!({
            "fibers": fibers
                .iter()
                .enumerate()
                .map(|(i, f)| json!({
                    "atom": i,
                    "weights": f.entries.iter().map(|(w, _)| *w).collect::<Vec<_>>(),
                    "entries": f.entries.iter().map(|(_, c)| plan_node_to_json(c)).collect::<Vec<_>>(),
                }))
                .collect::<Vec<_>>(),
        }),
    }
}

pub fn plan_to_json(g: &VelocityPlan) -> Value {
    let base = g.base();
    json!({
        "manifold": manifold_to_json(&g.manifold()),
        "level": g.level(),
        "measure": tree_to_json(base.tree()),
        "plan": plan_node_to_json(g.node()),
    })
}

fn parse_plan_node(m: &Manifold, v: &Value, base: &Tree<Point>, path: &str) -> Result<PlanNode> {
    let obj = as_object(v, path)?;
    match base {
        Tree::Leaf(x) => {
            let vec = as_vec(field(obj, "tangent", path)?, &format!("{path}.tangent"))?;
            if let Some(p) = obj.get("point") {
                let p = as_vec(p, &format!("{path}.point"))?;
                if p.len() != x.0.len() || max_abs_diff(&p, &x.0) > FIBER_TOL {
                    return Err(Error::BaseMismatch(format!("{path}: leaf point does not match the base")));
                }
            }
            let t = Tangent::new(x.clone(), vec);
            m.check_tangent(&t)
                .map_err(|e| Error::InvalidPoint { path: path.to_string(), detail: e.to_string() })?;
            Ok(PlanNode::Leaf(t))
        }
        Tree::Mix(atoms) => {
            let fibers = as_array(field(obj, "fibers", path)?, &format!("{path}.fibers"))?;
            let mut out: Vec<Option<Fiber>> = vec![None; atoms.len()];
            for (k, f) in fibers.iter().enumerate() {
                let fpath = format!("{path}.fibers[{k}]");
                let fobj = as_object(f, &fpath)?;
                let i = as_usize(field(fobj, "atom", &fpath)?, &format!("{fpath}.atom"))?;
                if i >= atoms.len() || out[i].is_some() {
                    return Err(Error::BaseMismatch(format!("{fpath}: atom index {i} is out of range or repeated")));
                }
                let weights = as_vec(field(fobj, "weights", &fpath)?, &format!("{fpath}.weights"))?;
                let entries = as_array(field(fobj, "entries", &fpath)?, &format!("{fpath}.entries"))?;
                if weights.len() != entries.len() || entries.is_empty() {
                    return Err(schema(format!("{fpath}: weights and entries must be non-empty and of equal length")));
                }
                let (w, atom) = &atoms[i];
                let sum = kahan_sum(weights.iter().copied());
                if (sum - w).abs() > INGEST_MASS_TOL {
                    return Err(Error::NonUnitMass { path: fpath, sum: sum / w });
                }
                if let Some(bad) = weights.iter().find(|x| !(**x > 0.0)) {
                    return Err(schema(format!("{fpath}: non-positive weight {bad}")));
                }
                let children = entries
                    .iter()
                    .enumerate()
                    .map(|(e, c)| parse_plan_node(m, c, atom, &format!("{fpath}.entries[{e}]")))
                    .collect::<Result<Vec<_>>>()?;
                out[i] = Some(Fiber { weight: *w, entries: weights.into_iter().zip(children).collect() });
            }
            let fibers = out
                .into_iter()
                .enumerate()
                .map(|(i, f)| f.ok_or_else(|| Error::BaseMismatch(format!("{path}: no fiber for atom {i}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(PlanNode::Fibers(fibers))
        }
    }
}

/// Parses a plan document, aligning the fibers against the declared base.
pub fn parse_plan(text: &str) -> Result<Ingested<VelocityPlan>> {
    let v = parse_json(text)?;
    let mut warnings = Vec::new();
    let base = parse_measure_value(&v, &mut warnings)?;
    let obj = as_object(&v, "document")?;
    let node = parse_plan_node(&base.manifold(), field(obj, "plan", "document")?, base.tree(), "plan")?;
    Ok(Ingested { value: VelocityPlan::from_parts(base.manifold(), node), warnings })
}

pub fn hier_plan_to_json(p: &HierPlan) -> Value {
    let s = &p.solution;
    json!({
        "level": p.level,
        "value": p.value(),
        "rows": s.plan.rows,
        "cols": s.plan.cols,
        "matrix": s.plan.matrix,
        "cost": p.cost.data(),
        "phi": s.duals.phi,
        "psi": s.duals.psi,
        "children": p.children.iter().map(|c| json!({"i": c.i, "j": c.j, "plan": hier_plan_to_json(&c.plan)})).collect::<Vec<_>>(),
    })
}

fn parse_potential(obj: &Map<String, Value>, path: &str) -> Result<Potential> {
    let name = field(obj, "potential", path)?
        .as_str()
        .ok_or_else(|| schema(format!("{path}.potential: expected a name")))?;
    match name {
        "quadratic" => Ok(Potential::quadratic(as_vec(field(obj, "center", path)?, &format!("{path}.center"))?)),
        "linear_ambient" => Ok(Potential::linear_ambient(as_vec(
            field(obj, "direction", path)?,
            &format!("{path}.direction"),
        )?)),
        "constant" => Ok(Potential::Constant(as_f64(field(obj, "value", path)?, &format!("{path}.value"))?)),
        other => Err(schema(format!("{path}.potential: unknown potential {other:?}"))),
    }
}

/// Parses a functional specification. Reference measures are given inline or
/// as paths resolved against `base_dir`.
pub fn parse_functional_spec(text: &str, base_dir: Option<&Path>) -> Result<Ingested<FunctionalSpec>> {
    let v = parse_json(text)?;
    let obj = as_object(&v, "spec")?;
    let terms = as_array(field(obj, "terms", "spec")?, "spec.terms")?;
    let mut out = Vec::with_capacity(terms.len());
    let mut warnings = Vec::new();
    for (i, t) in terms.iter().enumerate() {
        let path = format!("spec.terms[{i}]");
        let tobj = as_object(t, &path)?;
        let weight = match tobj.get("weight") {
            Some(w) => as_f64(w, &format!("{path}.weight"))?,
            None => 1.0,
        };
        if let Some(r) = tobj.get("half_w2_sq_to") {
            let reference = match r {
                Value::String(file) => {
                    let p = base_dir.map_or_else(|| Path::new(file).to_path_buf(), |d| d.join(file));
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| schema(format!("{path}: cannot read {}: {e}", p.display())))?;
                    parse_measure_value(&parse_json(&text)?, &mut warnings)?
                }
                other => parse_measure_value(other, &mut warnings)?,
            };
            out.push(Term::HalfW2Sq { reference, weight });
        } else {
            out.push(Term::Potential { potential: parse_potential(tobj, &path)?, weight });
        }
    }
    Ok(Ingested { value: FunctionalSpec::new(out)?, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEVEL2: &str = r#"{
        "manifold": {"kind": "euclidean", "ambient_dim": 1},
        "level": 2,
        "measure": {"weights": [0.5, 0.5], "atoms": [
            {"weights": [1.0], "atoms": [{"point": [0.0]}]},
            {"weights": [1.0], "atoms": [{"point": [2.0]}]}
        ]}
    }"#;

    #[test]
    fn measure_round_trip() {
        let mu = parse_measure(LEVEL2).unwrap().value;
        assert_eq!(mu.level(), 2);
        let again = parse_measure(&measure_to_string(&mu)).unwrap().value;
        assert_eq!(mu, again);
    }

    #[test]
    fn schema_and_level_errors() {
        assert!(matches!(parse_measure("{"), Err(Error::Schema(_))));
        let wrong_level = LEVEL2.replace("\"level\": 2", "\"level\": 1");
        assert!(matches!(parse_measure(&wrong_level), Err(Error::LevelMismatch { .. })));
        let heavy = LEVEL2.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(matches!(parse_measure(&heavy), Err(Error::NonUnitMass { .. })));
    }

    #[test]
    fn sphere_points_are_renormalized_with_a_warning() {
        let doc = r#"{"manifold":{"kind":"sphere","ambient_dim":3},"level":0,"measure":{"point":[0,0,1.0000001]}}"#;
        let got = parse_measure(doc).unwrap();
        assert_eq!(got.warnings.len(), 1);
        assert_eq!(got.value.as_point().unwrap().0, vec![0.0, 0.0, 1.0]);
        let far = doc.replace("1.0000001", "2");
        assert!(matches!(parse_measure(&far), Err(Error::InvalidPoint { .. })));
    }

    #[test]
    fn plan_round_trip() {
        let mu = parse_measure(LEVEL2).unwrap().value;
        let g = VelocityPlan::fd_from_field(&mu, |x| vec![1.0 - x.0[0]]).unwrap();
        let text = pretty(&plan_to_json(&g));
        let back = parse_plan(&text).unwrap().value;
        assert_eq!(back, g);
    }
}
