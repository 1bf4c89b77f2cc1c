//! Declarative render pipelines: passes connected by named attachments,
//! scheduled topologically and executed against a scene snapshot.
//!
//! Pass kinds are a closed set. Adding one means a new [`PassKind`] variant,
//! its arity in [`PassKind::arity`], parameter checks in `check_params`, and a
//! branch in the executor.

mod execute;
mod renderer;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::render::{RenderError, RenderSettings};

pub use execute::execute_pipeline;
pub use renderer::{NullRenderer, PipelineSlot, RenderedFrame, Renderer, SoftwareRenderer};

/// The attachment every pipeline must produce exactly once.
pub const DISPLAY: &str = "display";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("dependency cycle through pass '{pass}'")]
    CycleError { pass: String },
    #[error("pass '{pass}' reads '{input}', which no pass produces")]
    UnknownInput { pass: String, input: String },
    #[error("attachment '{attachment}' is produced by more than one pass")]
    DuplicateOutput { attachment: String },
    #[error("no pass produces the \"display\" attachment")]
    MissingDisplay,
    #[error("duplicate pass name '{0}'")]
    DuplicatePassName(String),
    #[error("pass '{pass}' ({kind}) takes {expected} inputs, got {found}")]
    Arity { pass: String, kind: PassKind, expected: &'static str, found: usize },
    #[error("pass '{pass}': {message}")]
    InvalidParam { pass: String, message: String },
    #[error("pass '{pass}' failed: {source}")]
    Pass { pass: String, source: RenderError },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("renderer not initialized")]
    NotInitialized,
    #[error("invalid pipeline json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassKind {
    Clear,
    MeshRaster,
    VolumeRaycast,
    MipRaycast,
    Tonemap,
    Compose,
}

impl PassKind {
    pub const ALL: [PassKind; 6] = [
        PassKind::Clear,
        PassKind::MeshRaster,
        PassKind::VolumeRaycast,
        PassKind::MipRaycast,
        PassKind::Tonemap,
        PassKind::Compose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PassKind::Clear => "clear",
            PassKind::MeshRaster => "mesh_raster",
            PassKind::VolumeRaycast => "volume_raycast",
            PassKind::MipRaycast => "mip_raycast",
            PassKind::Tonemap => "tonemap",
            PassKind::Compose => "compose",
        }
    }

    /// Allowed input count as an inclusive range. Raster and raycast passes
    /// draw over their input, or over a cleared background when they have none.
    pub fn arity(self) -> (usize, usize) {
        match self {
            PassKind::Clear => (0, 0),
            PassKind::MeshRaster | PassKind::VolumeRaycast | PassKind::MipRaycast => (0, 1),
            PassKind::Tonemap => (1, 1),
            PassKind::Compose => (2, 2),
        }
    }
}

impl std::fmt::Display for PassKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassDesc {
    pub name: String,
    pub kind: PassKind,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl PassDesc {
    pub fn new(name: &str, kind: PassKind, inputs: &[&str], output: &str) -> Self {
        Self {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
            params: Map::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineDesc {
    pub name: String,
    pub passes: Vec<PassDesc>,
}

impl PipelineDesc {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }

    /// Background clear, meshes, emission-absorption raycast over the meshes, tonemap.
    pub fn ea_default() -> Self {
        Self {
            name: "ea-default".into(),
            passes: vec![
                PassDesc::new("clear", PassKind::Clear, &[], "bg"),
                PassDesc::new("meshes", PassKind::MeshRaster, &["bg"], "meshes"),
                PassDesc::new("raycast", PassKind::VolumeRaycast, &["meshes"], "volume"),
                PassDesc::new("tonemap", PassKind::Tonemap, &["volume"], DISPLAY).with_param("gamma", 1.0.into()),
            ],
        }
    }

    /// Background clear, maximum intensity projection, tonemap.
    pub fn mip() -> Self {
        Self {
            name: "mip".into(),
            passes: vec![
                PassDesc::new("clear", PassKind::Clear, &[], "bg"),
                PassDesc::new("mip", PassKind::MipRaycast, &["bg"], "mip"),
                PassDesc::new("tonemap", PassKind::Tonemap, &["mip"], DISPLAY).with_param("gamma", 1.0.into()),
            ],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ea-default" => Some(Self::ea_default()),
            "mip" => Some(Self::mip()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 2] = ["ea-default", "mip"];
}

/// A validated pipeline with its execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    desc: PipelineDesc,
    order: Vec<usize>,
}

impl Schedule {
    pub fn desc(&self) -> &PipelineDesc {
        &self.desc
    }

    pub fn name(&self) -> &str {
        &self.desc.name
    }

    /// Passes in execution order.
    pub fn passes(&self) -> impl Iterator<Item = &PassDesc> {
        self.order.iter().map(|&i| &self.desc.passes[i])
    }

    pub fn pass_names(&self) -> Vec<&str> {
        self.passes().map(|p| p.name.as_str()).collect()
    }
}

/// Validate a pipeline and order its passes so every attachment is produced
/// before it is read. Among passes that are ready at the same time,
/// declaration order wins.
pub fn validate_pipeline(desc: &PipelineDesc) -> Result<Schedule, GraphError> {
    let mut names = BTreeSet::new();
    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (i, p) in desc.passes.iter().enumerate() {
        if !names.insert(p.name.as_str()) {
            return Err(GraphError::DuplicatePassName(p.name.clone()));
        }
        if producer.insert(p.output.as_str(), i).is_some() {
            return Err(GraphError::DuplicateOutput { attachment: p.output.clone() });
        }
        let (lo, hi) = p.kind.arity();
        if p.inputs.len() < lo || p.inputs.len() > hi {
            let expected = match (lo, hi) {
                (0, 0) => "no",
                (0, 1) => "at most 1",
                (1, 1) => "exactly 1",
                _ => "exactly 2",
            };
            return Err(GraphError::Arity { pass: p.name.clone(), kind: p.kind, expected, found: p.inputs.len() });
        }
        check_params(p)?;
    }
    if !producer.contains_key(DISPLAY) {
        return Err(GraphError::MissingDisplay);
    }

    let n = desc.passes.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in desc.passes.iter().enumerate() {
        for input in &p.inputs {
            let &src = producer
                .get(input.as_str())
                .ok_or_else(|| GraphError::UnknownInput { pass: p.name.clone(), input: input.clone() })?;
            indegree[i] += 1;
            consumers[src].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).expect("some pass is blocked");
        return Err(GraphError::CycleError { pass: desc.passes[stuck].name.clone() });
    }
    Ok(Schedule { desc: desc.clone(), order })
}

fn check_params(p: &PassDesc) -> Result<(), GraphError> {
    let bad = |message: String| GraphError::InvalidParam { pass: p.name.clone(), message };
    match p.kind {
        PassKind::Clear => {
            for (k, v) in &p.params {
                match k.as_str() {
                    "color" => {
                        color_param(v).ok_or_else(|| bad("color must be four numbers in [0, 1]".into()))?;
                    }
                    _ => return Err(bad(format!("unknown parameter '{k}'"))),
                }
            }
        }
        PassKind::Tonemap => {
            for (k, v) in &p.params {
                match k.as_str() {
                    "gamma" => {
                        gamma_param(v).ok_or_else(|| bad("gamma must be a positive number".into()))?;
                    }
                    _ => return Err(bad(format!("unknown parameter '{k}'"))),
                }
            }
        }
        PassKind::VolumeRaycast | PassKind::MipRaycast => {
            settings_with_overrides(&RenderSettings::default(), &p.params).map_err(|e| bad(e.to_string()))?;
        }
        PassKind::MeshRaster | PassKind::Compose => {
            if let Some(k) = p.params.keys().next() {
                return Err(bad(format!("unknown parameter '{k}'")));
            }
        }
    }
    Ok(())
}

pub(crate) fn color_param(v: &Value) -> Option<[f64; 4]> {
    let c: [f64; 4] = serde_json::from_value(v.clone()).ok()?;
    c.iter().all(|x| (0.0..=1.0).contains(x)).then_some(c)
}

pub(crate) fn gamma_param(v: &Value) -> Option<f64> {
    v.as_f64().filter(|g| *g > 0.0 && g.is_finite())
}

/// Overlay raycast pass parameters (any [`RenderSettings`] field) on the frame settings.
pub(crate) fn settings_with_overrides(
    base: &RenderSettings,
    params: &Map<String, Value>,
) -> Result<RenderSettings, RenderError> {
    if params.is_empty() {
        return Ok(*base);
    }
    let Value::Object(mut merged) = serde_json::to_value(base).expect("settings serialize") else {
        unreachable!("settings serialize to an object")
    };
    for (k, v) in params {
        merged.insert(k.clone(), v.clone());
    }
    let s: RenderSettings =
        serde_json::from_value(Value::Object(merged)).map_err(|e| RenderError::InvalidSettings(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn p(name: &str, kind: PassKind, inputs: &[&str], output: &str) -> PassDesc {
        PassDesc::new(name, kind, inputs, output)
    }

    fn pipeline(passes: Vec<PassDesc>) -> PipelineDesc {
        PipelineDesc { name: "t".into(), passes }
    }

    #[test]
    fn clear_then_raycast() {
        let s = validate_pipeline(&pipeline(vec![
            p("raycast", PassKind::VolumeRaycast, &["bg"], DISPLAY),
            p("clear", PassKind::Clear, &[], "bg"),
        ]))
        .unwrap();
        assert_eq!(s.pass_names(), ["clear", "raycast"]);
    }

    #[test]
    fn presets_validate() {
        for name in PipelineDesc::PRESETS {
            let desc = PipelineDesc::preset(name).unwrap();
            assert_eq!(desc.name, name);
            validate_pipeline(&desc).unwrap();
            assert_eq!(PipelineDesc::from_json(&desc.to_json()).unwrap(), desc);
        }
    }

    #[test]
    fn self_loop_is_cycle() {
        let err = validate_pipeline(&pipeline(vec![p("loop", PassKind::Tonemap, &[DISPLAY], DISPLAY)])).unwrap_err();
        assert!(matches!(err, GraphError::CycleError { pass } if pass == "loop"));
    }

    #[test]
    fn structural_errors() {
        let err = validate_pipeline(&pipeline(vec![p("t", PassKind::Tonemap, &["nope"], DISPLAY)])).unwrap_err();
        assert!(matches!(err, GraphError::UnknownInput { input, .. } if input == "nope"));
        let err = validate_pipeline(&pipeline(vec![
            p("a", PassKind::Clear, &[], DISPLAY),
            p("b", PassKind::Clear, &[], DISPLAY),
        ]))
        .unwrap_err();
        assert!(matches!(err, GraphError::DuplicateOutput { .. }));
        let err = validate_pipeline(&pipeline(vec![p("a", PassKind::Clear, &[], "bg")])).unwrap_err();
        assert!(matches!(err, GraphError::MissingDisplay));
        let err = validate_pipeline(&pipeline(vec![p("a", PassKind::Compose, &["x"], DISPLAY)])).unwrap_err();
        assert!(matches!(err, GraphError::Arity { found: 1, .. }));
        let err = validate_pipeline(&pipeline(vec![
            p("a", PassKind::Clear, &[], "x"),
            p("a", PassKind::Clear, &[], DISPLAY),
        ]))
        .unwrap_err();
        assert!(matches!(err, GraphError::DuplicatePassName(_)));
    }

    #[test]
    fn params_are_checked() {
        let bad = [
            p("c", PassKind::Clear, &[], DISPLAY).with_param("color", json!([1, 2, 3, 4])),
            p("c", PassKind::Clear, &[], DISPLAY).with_param("colour", json!([0, 0, 0, 1])),
            p("c", PassKind::VolumeRaycast, &[], DISPLAY).with_param("step", json!(-1.0)),
            p("c", PassKind::VolumeRaycast, &[], DISPLAY).with_param("stepsize", json!(1.0)),
            p("c", PassKind::MeshRaster, &[], DISPLAY).with_param("gamma", json!(1.0)),
        ];
        for pass in bad {
            assert!(matches!(validate_pipeline(&pipeline(vec![pass])), Err(GraphError::InvalidParam { .. })));
        }
        let ok = p("c", PassKind::MipRaycast, &[], DISPLAY).with_param("step", json!(0.5)).with_param("lod", json!(1));
        validate_pipeline(&pipeline(vec![ok])).unwrap();
    }

    #[test]
    fn json_rejects_unknown_kind_and_fields() {
        let text = r#"{"name":"x","passes":[{"name":"a","kind":"blur","inputs":[],"output":"display","params":{}}]}"#;
        assert!(PipelineDesc::from_json(text).is_err());
        let text = r#"{"name":"x","passes":[],"extra":1}"#;
        assert!(PipelineDesc::from_json(text).is_err());
    }

    #[test]
    fn settings_overlay() {
        let base = RenderSettings::default();
        let mut params = Map::new();
        params.insert("step".into(), json!(0.25));
        params.insert("lod".into(), json!(2));
        let s = settings_with_overrides(&base, &params).unwrap();
        assert_eq!(s.step, 0.25);
        assert_eq!(s.lod, Some(2));
        assert_eq!(s.background, base.background);
    }
}
