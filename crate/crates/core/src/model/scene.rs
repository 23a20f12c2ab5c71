//! Declarative scene files (`schema_version` 1).
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "dimension": 3,
//!   "bodies": [
//!     {"name": "cube", "kind": "spatial", "actuated": false, "origin": [0, 0, 0.5]},
//!     {"name": "table", "kind": "environment"},
//!     {"name": "finger", "kind": "point", "actuated": true}
//!   ],
//!   "contacts": [
//!     {"position": [0, 0, 0], "normal": [0, 0, 1], "mode": "sticking",
//!      "mu": 0.6, "pair": ["cube", "table"]},
//!     {"position": [0, 0, 1], "normal": [0, 0, -1], "mode": "sliding",
//!      "slide_direction": [1, 0, 0], "mu": 0.3, "pair": ["cube", "finger"]}
//!   ],
//!   "goal": {"rows": [[0, 0, 1, 0, 0, 0, 0, 0, 0]], "rhs": [0.1]},
//!   "external_force": [0, 0, -9.8, 0, 0, 0, 0, 0, 0],
//!   "guard": {"n_min": 0.5, "ridge_count": 8}
//! }
//! ```
//!
//! Goal rows and `external_force` are indexed by generalized coordinates in
//! `[unactuated | actuated]` order. `origin`, `tangent`, `goal`,
//! `external_force` and `guard` are optional. Normals and sliding directions
//! within 1e-6 of unit length are renormalized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    assemble_jacobians, build_goal, build_guards, layout_bodies, Body, BodyKind, BodySlot, ContactMode,
    ContactPoint, ModelError, SystemModel,
};
use crate::linalg::{Mat, RankTol, Vector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SceneError {
    /// JSON pointer of the offending value, when known.
    pub fn pointer(&self) -> Option<&str> {
        match self {
            SceneError::Syntax { .. } => None,
            SceneError::Schema { pointer, .. } => Some(pointer),
            SceneError::Model(ModelError::Invalid { path, .. }) => Some(path),
            SceneError::Model(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub schema_version: u32,
    pub dimension: usize,
    pub bodies: Vec<BodyDecl>,
    #[serde(default)]
    pub contacts: Vec<ContactDecl>,
    #[serde(default)]
    pub goal: GoalDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_force: Option<Vec<f64>>,
    #[serde(default)]
    pub guard: GuardDecl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDecl {
    pub name: String,
    pub kind: BodyKind,
    #[serde(default)]
    pub actuated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeDecl {
    Sticking,
    Sliding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactDecl {
    pub position: Vec<f64>,
    pub normal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tangent: Option<Vec<f64>>,
    pub mode: ModeDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slide_direction: Option<Vec<f64>>,
    pub mu: f64,
    pub pair: [String; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalDecl {
    #[serde(default)]
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardDecl {
    #[serde(default = "default_n_min")]
    pub n_min: f64,
    #[serde(default = "default_ridge_count")]
    pub ridge_count: usize,
}

fn default_n_min() -> f64 {
    0.5
}

fn default_ridge_count() -> usize {
    8
}

impl Default for GuardDecl {
    fn default() -> Self {
        Self {
            n_min: default_n_min(),
            ridge_count: default_ridge_count(),
        }
    }
}

/// Assembled scene: the solver model plus the layout used to build it.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub model: SystemModel,
    pub dim: usize,
    pub slots: Vec<BodySlot>,
    pub contacts: Vec<ContactPoint>,
    pub lambda_offsets: Vec<usize>,
}

fn nest(prefix: &str, err: ModelError) -> ModelError {
    match err {
        ModelError::Invalid { path, message } => ModelError::Invalid {
            path: format!("{prefix}{path}"),
            message,
        },
        other => other,
    }
}

fn vector(path: &str, dim: usize, data: &[f64]) -> Result<Vector, ModelError> {
    if data.len() != dim {
        return Err(ModelError::invalid(path, format!("expected {dim} entries, got {}", data.len())));
    }
    if !data.iter().all(|x| x.is_finite()) {
        return Err(ModelError::invalid(path, "entries must be finite"));
    }
    Ok(Vector::from_row_slice(data))
}

fn unit(path: &str, dim: usize, data: &[f64]) -> Result<Vector, ModelError> {
    let v = vector(path, dim, data)?;
    let norm = v.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(ModelError::invalid(path, format!("expected a unit vector, norm is {norm}")));
    }
    Ok(v / norm)
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            if inner.is_syntax() || inner.is_eof() {
                SceneError::Syntax {
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                }
            } else {
                SceneError::Schema {
                    pointer: pointer_of(e.path()),
                    message: inner.to_string(),
                }
            }
        })?;
        if scene.schema_version != SCHEMA_VERSION {
            return Err(SceneError::Schema {
                pointer: "/schema_version".into(),
                message: format!("unsupported schema version {}, expected {SCHEMA_VERSION}", scene.schema_version),
            });
        }
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization is infallible")
    }

    pub fn build(&self, tol: RankTol) -> Result<SceneModel, ModelError> {
        let dim = self.dimension;
        if !(dim == 2 || dim == 3) {
            return Err(ModelError::invalid("/dimension", "dimension must be 2 or 3"));
        }
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for (i, b) in self.bodies.iter().enumerate() {
            let path = format!("/bodies/{i}");
            let ok = match b.kind {
                BodyKind::Planar => dim == 2,
                BodyKind::Spatial => dim == 3,
                BodyKind::Point | BodyKind::Environment => true,
            };
            if !ok {
                return Err(ModelError::invalid(format!("{path}/kind"), format!("{:?} body in a {dim}D scene", b.kind)));
            }
            if b.kind == BodyKind::Environment && b.actuated {
                return Err(ModelError::invalid(format!("{path}/actuated"), "environment bodies cannot be actuated"));
            }
            if self.bodies[..i].iter().any(|o| o.name == b.name) {
                return Err(ModelError::invalid(format!("{path}/name"), format!("duplicate body name {:?}", b.name)));
            }
            let origin = match &b.origin {
                Some(o) => vector(&format!("{path}/origin"), dim, o)?,
                None => Vector::zeros(dim),
            };
            bodies.push(Body {
                name: b.name.clone(),
                kind: b.kind,
                actuated: b.actuated,
                origin,
            });
        }
        let (dof, slots) = layout_bodies(dim, &bodies)?;
        let n = dof.n();

        let find = |path: String, name: &str| {
            bodies
                .iter()
                .position(|b| b.name == name)
                .ok_or_else(|| ModelError::invalid(path, format!("unknown body {name:?}")))
        };
        let mut contacts = Vec::with_capacity(self.contacts.len());
        for (k, c) in self.contacts.iter().enumerate() {
            let path = format!("/contacts/{k}");
            let position = vector(&format!("{path}/position"), dim, &c.position)?;
            let normal = unit(&format!("{path}/normal"), dim, &c.normal)?;
            let tangent = c
                .tangent
                .as_ref()
                .map(|t| vector(&format!("{path}/tangent"), dim, t))
                .transpose()?;
            let mode = match (c.mode, &c.slide_direction) {
                (ModeDecl::Sticking, None) => ContactMode::Sticking,
                (ModeDecl::Sticking, Some(_)) => {
                    return Err(ModelError::invalid(
                        format!("{path}/slide_direction"),
                        "only sliding contacts take a slide direction",
                    ))
                }
                (ModeDecl::Sliding, Some(d)) => ContactMode::Sliding {
                    direction: unit(&format!("{path}/slide_direction"), dim, d)?,
                },
                (ModeDecl::Sliding, None) => {
                    return Err(ModelError::invalid(
                        format!("{path}/slide_direction"),
                        "sliding contacts need a slide direction",
                    ))
                }
            };
            let a = find(format!("{path}/pair/0"), &c.pair[0])?;
            let b = find(format!("{path}/pair/1"), &c.pair[1])?;
            let cp = ContactPoint::new(position, normal, tangent, mode, c.mu, (a, b)).map_err(|e| nest(&path, e))?;
            contacts.push(cp);
        }

        let jac = assemble_jacobians(dim, n, &slots, &contacts)?;
        let specs: Vec<_> = contacts
            .iter()
            .zip(&jac.lambda_offsets)
            .map(|(c, &o)| c.guard_spec(o))
            .collect();
        let guard = build_guards(&specs, jac.lambda_dim + n, self.guard.n_min, self.guard.ridge_count)?;

        let mut g = Mat::zeros(self.goal.rows.len(), n);
        for (i, row) in self.goal.rows.iter().enumerate() {
            let r = vector(&format!("/goal/rows/{i}"), n, row)?;
            g.set_row(i, &r.transpose());
        }
        let rhs = Vector::from_row_slice(&self.goal.rhs);
        let goal = build_goal(&jac.j, g, rhs, tol)?;
        let external = match &self.external_force {
            Some(f) => vector("/external_force", n, f)?,
            None => Vector::zeros(n),
        };
        let model = SystemModel::new(dof, jac.j, jac.jf, goal, external, guard)?;
        Ok(SceneModel {
            model,
            dim,
            slots,
            contacts,
            lambda_offsets: jac.lambda_offsets,
        })
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCK: &str = r#"{
        "schema_version": 1,
        "dimension": 2,
        "bodies": [
            {"name": "block", "kind": "planar"},
            {"name": "ground", "kind": "environment"},
            {"name": "finger", "kind": "planar", "actuated": true}
        ],
        "contacts": [
            {"position": [0.5, 0.0], "normal": [0, 1], "mode": "sticking", "mu": 0.5, "pair": ["block", "ground"]},
            {"position": [0.0, 1.0], "normal": [0, -1], "mode": "sticking", "mu": 0.8, "pair": ["block", "finger"]}
        ],
        "goal": {"rows": [[0, 0, 0, 1, 0, 0]], "rhs": [0.1]},
        "external_force": [0, -1, 0, 0, 0, 0]
    }"#;

    #[test]
    fn parses_and_builds() {
        let scene = Scene::from_json(BLOCK).unwrap();
        let sm = scene.build(RankTol::default()).unwrap();
        assert_eq!(sm.model.j().shape(), (4, 6));
        assert_eq!(sm.model.lambda_dim(), 4);
        assert_eq!(sm.model.guard().lambda.nrows(), 6);
        assert_eq!(scene.guard, GuardDecl::default());
    }

    #[test]
    fn round_trips_through_json() {
        let scene = Scene::from_json(BLOCK).unwrap();
        assert_eq!(Scene::from_json(&scene.to_json()).unwrap(), scene);
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let bad = BLOCK.replace(r#""mu": 0.8"#, r#""mu": "high""#);
        let err = Scene::from_json(&bad).unwrap_err();
        assert_eq!(err.pointer(), Some("/contacts/1/mu"));

        let bad = BLOCK.replace(r#""kind": "planar"}"#, r#""kind": "blob"}"#);
        assert_eq!(Scene::from_json(&bad).unwrap_err().pointer(), Some("/bodies/0/kind"));

        let bad = BLOCK.replace(r#""schema_version": 1"#, r#""schema_version": 2"#);
        assert_eq!(Scene::from_json(&bad).unwrap_err().pointer(), Some("/schema_version"));
    }

    #[test]
    fn truncated_input_is_a_syntax_error() {
        let err = Scene::from_json(&BLOCK[..BLOCK.len() / 2]).unwrap_err();
        assert!(matches!(err, SceneError::Syntax { .. }));
    }

    #[test]
    fn semantic_errors_carry_pointers() {
        let bad = BLOCK.replace(r#""pair": ["block", "finger"]"#, r#""pair": ["block", "thumb"]"#);
        let err = Scene::from_json(&bad).unwrap().build(RankTol::default()).unwrap_err();
        assert!(matches!(&err, ModelError::Invalid { path, .. } if path == "/contacts/1/pair/1"));

        let bad = BLOCK.replace(r#""normal": [0, 1]"#, r#""normal": [0, 2]"#);
        let err = Scene::from_json(&bad).unwrap().build(RankTol::default()).unwrap_err();
        assert!(matches!(&err, ModelError::Invalid { path, .. } if path == "/contacts/0/normal"));

        let bad = BLOCK.replace(r#""mu": 0.5"#, r#""mu": -0.5"#);
        let err = Scene::from_json(&bad).unwrap().build(RankTol::default()).unwrap_err();
        assert!(matches!(&err, ModelError::Invalid { path, .. } if path == "/contacts/0/mu"));
    }
}
