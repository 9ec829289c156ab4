//! The unified tool interface: declarative specs for the six map tools,
//! argument validation, and function-calling schema emission.
//!
//! Validation failures are values, not aborts — the episode loop turns them
//! into error observations so the policy can recover in-band.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::geo::GeoPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    #[error("unknown tool: {name}")]
    UnknownTool { name: String },
    #[error("missing required argument: {field}")]
    MissingArgument { field: String },
    #[error("constraint violation on {field}: {reason}")]
    ConstraintViolation { field: String, reason: String },
}

impl CallError {
    /// The offending field, when the error concerns one.
    pub fn field(&self) -> Option<&str> {
        match self {
            CallError::UnknownTool { .. } => None,
            CallError::MissingArgument { field } => Some(field),
            CallError::ConstraintViolation { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema entry {index} is not a function declaration")]
    NotAFunction { index: usize },
    #[error("schema entry {index} is malformed: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("duplicate tool name: {0}")]
    DuplicateName(String),
}

/// Semantic argument types the tool suite uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Free text.
    Text,
    /// Either `"lat,lon"` or a free-text place name the backend resolves.
    Location,
    /// Normalized `[x_min, y_min, x_max, y_max]` fractions of an image.
    BoundingBox,
    /// Integer within an inclusive range.
    Integer { min: i64, max: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

impl ParamSpec {
    fn new(name: &str, kind: ParamKind, required: bool, description: &str) -> Self {
        Self {
            name: name.into(),
            kind,
            required,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
}

/// Immutable, ordered collection of tool specs with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, SchemaError> {
        let mut seen = std::collections::BTreeSet::new();
        for spec in &specs {
            if !seen.insert(spec.name.clone()) {
                return Err(SchemaError::DuplicateName(spec.name.clone()));
            }
        }
        Ok(Self { specs })
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }
}

/// The six map tools: image zoom, input tips, keyword search, detail query,
/// static map, and satellite map.
pub fn default_registry() -> ToolRegistry {
    let zoom_param = ParamSpec::new(
        "zoom",
        ParamKind::Integer { min: 3, max: 18 },
        false,
        "Map zoom level between 3 (country) and 18 (street); defaults to 16.",
    );
    let center_param = ParamSpec::new(
        "center",
        ParamKind::Location,
        true,
        "Location center as \"lat,lon\" or a place name resolvable by the map backend.",
    );
    ToolRegistry::new(vec![
        ToolSpec {
            name: "image_zoom_tool".into(),
            description: "Zoom into a bounding box of an image and return the zoomed region image."
                .into(),
            params: vec![
                ParamSpec::new(
                    "bbox",
                    ParamKind::BoundingBox,
                    true,
                    "Zoom-in bounding box as normalized [x_min, y_min, x_max, y_max] fractions.",
                ),
                ParamSpec::new(
                    "image_id",
                    ParamKind::Text,
                    false,
                    "Handle of the image to zoom; defaults to the query image.",
                ),
            ],
        },
        ToolSpec {
            name: "poi_input_tips".into(),
            description: "Get search suggestions for partial query text.".into(),
            params: vec![ParamSpec::new(
                "query",
                ParamKind::Text,
                true,
                "Query text to complete.",
            )],
        },
        ToolSpec {
            name: "poi_keyword_search".into(),
            description: "Search the map for POIs matching a keyword and return a POI list."
                .into(),
            params: vec![
                ParamSpec::new("keyword", ParamKind::Text, true, "POI keyword to search for."),
                ParamSpec::new(
                    "center",
                    ParamKind::Location,
                    false,
                    "Optional center to bias ranking, as \"lat,lon\" or a place name.",
                ),
            ],
        },
        ToolSpec {
            name: "poi_detail_query".into(),
            description: "Look up the full details of a POI by its id.".into(),
            params: vec![ParamSpec::new(
                "poi_id",
                ParamKind::Text,
                true,
                "POI id as returned by poi_keyword_search or poi_input_tips.",
            )],
        },
        ToolSpec {
            name: "static_map_query".into(),
            description: "Render a static map image around a location center.".into(),
            params: vec![center_param.clone(), zoom_param.clone()],
        },
        ToolSpec {
            name: "satellite_map_query".into(),
            description: "Render a satellite map image around a location center.".into(),
            params: vec![center_param, zoom_param],
        },
    ])
    .expect("default registry names are unique")
}

/// One tool-call action emitted by the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool_name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            other => {
                let mut map = Map::new();
                if !other.is_null() {
                    map.insert("value".into(), other);
                }
                map
            }
        };
        Self {
            call_id: call_id.into(),
            tool_name: tool_name.into(),
            arguments,
        }
    }
}

/// A location argument after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum LocationArg {
    Point(GeoPoint),
    Place(String),
}

/// A [`ToolCall`] that passed [`validate_call`]. Accessors re-read the typed
/// arguments without further checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCall {
    call: ToolCall,
}

impl ValidatedCall {
    pub fn call(&self) -> &ToolCall {
        &self.call
    }

    pub fn call_id(&self) -> &str {
        &self.call.call_id
    }

    pub fn tool_name(&self) -> &str {
        &self.call.tool_name
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.call.arguments.get(name).and_then(|v| v.as_str())
    }

    pub fn integer(&self, name: &str) -> Option<i64> {
        self.call.arguments.get(name).and_then(|v| v.as_i64())
    }

    pub fn bbox(&self, name: &str) -> Option<[f64; 4]> {
        let arr = self.call.arguments.get(name)?.as_array()?;
        let mut out = [0.0; 4];
        for (i, v) in arr.iter().take(4).enumerate() {
            out[i] = v.as_f64()?;
        }
        Some(out)
    }

    pub fn location(&self, name: &str) -> Option<LocationArg> {
        let text = self.text(name)?;
        match GeoPoint::parse_lat_lon(text) {
            Some(Ok(point)) => Some(LocationArg::Point(point)),
            _ => Some(LocationArg::Place(text.to_string())),
        }
    }
}

/// Checks tool existence, required arguments, and per-kind constraints.
/// Unknown extra arguments are ignored.
pub fn validate_call(registry: &ToolRegistry, call: ToolCall) -> Result<ValidatedCall, CallError> {
    let spec = registry
        .get(&call.tool_name)
        .ok_or_else(|| CallError::UnknownTool {
            name: call.tool_name.clone(),
        })?;
    for param in &spec.params {
        let value = match call.arguments.get(&param.name) {
            Some(Value::Null) | None => {
                if param.required {
                    return Err(CallError::MissingArgument {
                        field: param.name.clone(),
                    });
                }
                continue;
            }
            Some(v) => v,
        };
        validate_value(&param.name, &param.kind, value)?;
    }
    Ok(ValidatedCall { call })
}

fn validate_value(field: &str, kind: &ParamKind, value: &Value) -> Result<(), CallError> {
    let violation = |field: &str, reason: String| CallError::ConstraintViolation {
        field: field.to_string(),
        reason,
    };
    match kind {
        ParamKind::Text => {
            let text = value
                .as_str()
                .ok_or_else(|| violation(field, "expected a string".into()))?;
            if text.trim().is_empty() {
                return Err(CallError::MissingArgument {
                    field: field.to_string(),
                });
            }
        }
        ParamKind::Location => {
            let text = value
                .as_str()
                .ok_or_else(|| violation(field, "expected a string".into()))?;
            if text.trim().is_empty() {
                return Err(CallError::MissingArgument {
                    field: field.to_string(),
                });
            }
            if let Some(parsed) = GeoPoint::parse_lat_lon(text) {
                if let Err(err) = parsed {
                    // Carry the coordinate component so the policy sees what
                    // to fix, not just the enclosing argument name.
                    let component = match err {
                        crate::geo::GeoError::LatOutOfRange(_) => "lat",
                        _ => "lon",
                    };
                    return Err(violation(component, err.to_string()));
                }
            }
        }
        ParamKind::BoundingBox => {
            let arr = value
                .as_array()
                .ok_or_else(|| violation(field, "expected [x_min, y_min, x_max, y_max]".into()))?;
            if arr.len() != 4 {
                return Err(violation(
                    field,
                    format!("expected 4 coordinates, got {}", arr.len()),
                ));
            }
            let mut coords = [0.0f64; 4];
            for (i, v) in arr.iter().enumerate() {
                let num = v
                    .as_f64()
                    .ok_or_else(|| violation(field, format!("coordinate {i} is not a number")))?;
                if !(0.0..=1.0).contains(&num) {
                    return Err(violation(
                        field,
                        format!("coordinate {i} = {num} outside [0, 1]"),
                    ));
                }
                coords[i] = num;
            }
            if coords[0] >= coords[2] || coords[1] >= coords[3] {
                return Err(violation(
                    field,
                    "box must satisfy x_min < x_max and y_min < y_max".into(),
                ));
            }
        }
        ParamKind::Integer { min, max } => {
            let num = value
                .as_i64()
                .ok_or_else(|| violation(field, "expected an integer".into()))?;
            if num < *min || num > *max {
                return Err(violation(field, format!("{num} outside [{min}, {max}]")));
            }
        }
    }
    Ok(())
}

/// Opaque handle into an episode's image store.
pub type ImageHandle = String;

/// The observation produced by executing one tool call. Exactly one of the
/// payload variants is populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolOutput {
    Text { text: String },
    Image { handle: ImageHandle },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub output: ToolOutput,
    pub truncated: bool,
}

impl ToolResult {
    pub fn text(call_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            call_id: call_id.into(),
            output: ToolOutput::Text { text: text.into() },
            truncated: false,
        }
    }

    pub fn image(call_id: impl Into<String>, handle: impl Into<String>) -> Self {
        Self {
            call_id: call_id.into(),
            output: ToolOutput::Image {
                handle: handle.into(),
            },
            truncated: false,
        }
    }

    pub fn error(call_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            call_id: call_id.into(),
            output: ToolOutput::Error {
                message: message.into(),
            },
            truncated: false,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self.output, ToolOutput::Error { .. })
    }
}

/// Emits one OpenAI-style function declaration per tool. Output is canonical:
/// object keys and the required list are sorted, so bytes are stable for a
/// fixed registry.
pub fn emit_tool_schemas(registry: &ToolRegistry) -> Vec<Value> {
    registry
        .specs()
        .iter()
        .map(|spec| {
            let mut properties = Map::new();
            let mut required: Vec<&str> = Vec::new();
            for param in &spec.params {
                properties.insert(param.name.clone(), param_schema(param));
                if param.required {
                    required.push(&param.name);
                }
            }
            required.sort_unstable();
            json!({
                "type": "function",
                "function": {
                    "name": spec.name,
                    "description": spec.description,
                    "parameters": {
                        "type": "object",
                        "properties": Value::Object(properties),
                        "required": required,
                    },
                },
            })
        })
        .collect()
}

fn param_schema(param: &ParamSpec) -> Value {
    match &param.kind {
        ParamKind::Text => json!({
            "type": "string",
            "description": param.description,
        }),
        ParamKind::Location => json!({
            "type": "string",
            "format": "location",
            "description": param.description,
        }),
        ParamKind::BoundingBox => json!({
            "type": "array",
            "items": { "type": "number", "minimum": 0.0, "maximum": 1.0 },
            "minItems": 4,
            "maxItems": 4,
            "description": param.description,
        }),
        ParamKind::Integer { min, max } => json!({
            "type": "integer",
            "minimum": min,
            "maximum": max,
            "description": param.description,
        }),
    }
}

/// Rebuilds a registry from emitted schemas; inverse of [`emit_tool_schemas`]
/// up to canonical ordering.
pub fn parse_tool_schemas(schemas: &[Value]) -> Result<ToolRegistry, SchemaError> {
    let mut specs = Vec::with_capacity(schemas.len());
    for (index, entry) in schemas.iter().enumerate() {
        if entry.get("type").and_then(|v| v.as_str()) != Some("function") {
            return Err(SchemaError::NotAFunction { index });
        }
        let malformed = |reason: &str| SchemaError::Malformed {
            index,
            reason: reason.to_string(),
        };
        let function = entry.get("function").ok_or_else(|| malformed("no function"))?;
        let name = function
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| malformed("no name"))?;
        let description = function
            .get("description")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        let parameters = function
            .get("parameters")
            .ok_or_else(|| malformed("no parameters"))?;
        let required: Vec<&str> = parameters
            .get("required")
            .and_then(|v| v.as_array())
            .map(|arr| arr.iter().filter_map(|v| v.as_str()).collect())
            .unwrap_or_default();
        let properties = parameters
            .get("properties")
            .and_then(|v| v.as_object())
            .ok_or_else(|| malformed("no properties"))?;
        let mut params = Vec::with_capacity(properties.len());
        for (param_name, schema) in properties {
            let kind = parse_param_kind(schema)
                .ok_or_else(|| malformed(&format!("unsupported schema for {param_name}")))?;
            params.push(ParamSpec {
                name: param_name.clone(),
                kind,
                required: required.contains(&param_name.as_str()),
                description: schema
                    .get("description")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string(),
            });
        }
        specs.push(ToolSpec {
            name: name.to_string(),
            description: description.to_string(),
            params,
        });
    }
    ToolRegistry::new(specs)
}

fn parse_param_kind(schema: &Value) -> Option<ParamKind> {
    match schema.get("type").and_then(|v| v.as_str())? {
        "string" => {
            if schema.get("format").and_then(|v| v.as_str()) == Some("location") {
                Some(ParamKind::Location)
            } else {
                Some(ParamKind::Text)
            }
        }
        "array" => Some(ParamKind::BoundingBox),
        "integer" => Some(ParamKind::Integer {
            min: schema.get("minimum").and_then(|v| v.as_i64())?,
            max: schema.get("maximum").and_then(|v| v.as_i64())?,
        }),
        _ => None,
    }
}
