//! Tool categories and their entity schemas.
//!
//! The set of tools is closed: eight routing targets, with `others` as the
//! fallback that carries no entities. Every other tool has an ordered field
//! schema, and [`Registry::validate_entities`] normalizes raw model output
//! into exactly that shape.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// One of the eight routing targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToolCategory {
    Tsb,
    Nhtsa,
    Techdoc,
    SmartInsights,
    PartsCatalog,
    RepairToParts,
    ServiceToParts,
    Others,
}

/// Fixed registry order. Every label list, confusion matrix and tie-break
/// in the crate follows this order.
pub const ALL_TOOLS: [ToolCategory; 8] = [
    ToolCategory::Tsb,
    ToolCategory::Nhtsa,
    ToolCategory::Techdoc,
    ToolCategory::SmartInsights,
    ToolCategory::PartsCatalog,
    ToolCategory::RepairToParts,
    ToolCategory::ServiceToParts,
    ToolCategory::Others,
];

/// All tool categories in registry order.
pub fn all_tools() -> &'static [ToolCategory] {
    &ALL_TOOLS
}

impl ToolCategory {
    pub fn id(self) -> &'static str {
        match self {
            ToolCategory::Tsb => "tsb",
            ToolCategory::Nhtsa => "nhtsa",
            ToolCategory::Techdoc => "techdoc",
            ToolCategory::SmartInsights => "smart_insights",
            ToolCategory::PartsCatalog => "parts_catalog",
            ToolCategory::RepairToParts => "repair_to_parts",
            ToolCategory::ServiceToParts => "service_to_parts",
            ToolCategory::Others => "others",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ToolCategory::Tsb => {
                "Fetches official technical service bulletins (TSB) issued by OEMs for known issues associated with a specific vehicle."
            }
            ToolCategory::Nhtsa => {
                "Returns government-reported safety recalls and customer complaints related to a specific issue for a vehicle."
            }
            ToolCategory::Techdoc => {
                "Provides OEM repair procedures and technical specifications (e.g., torque, capacity) for specific components or systems, based on user queries about \"how to\" perform a task or \"what is\" the specification from the service manual."
            }
            ToolCategory::SmartInsights => {
                "Offers diagnostic insights, causes, and possible repairs based on symptoms described by the user."
            }
            ToolCategory::PartsCatalog => {
                "Retrieves parts information such as part numbers, prices, images, and PNC for a specified vehicle component."
            }
            ToolCategory::RepairToParts => {
                "Determines the parts needed for performing a specific repair on a vehicle."
            }
            ToolCategory::ServiceToParts => {
                "Identifies parts required for routine maintenance services based on time or mileage intervals."
            }
            ToolCategory::Others => {
                "Handles queries that fall outside the scope of all defined tool capabilities, including vague, irrelevant, or unsupported requests."
            }
        }
    }

    /// Position in registry order.
    pub fn index(self) -> usize {
        ALL_TOOLS.iter().position(|t| *t == self).expect("tool in ALL_TOOLS")
    }

    pub fn is_others(self) -> bool {
        self == ToolCategory::Others
    }
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown tool category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for ToolCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_TOOLS
            .iter()
            .copied()
            .find(|t| t.id() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

impl Serialize for ToolCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for ToolCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    String,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFieldSpec {
    pub name: String,
    pub value_kind: ValueKind,
    #[serde(default = "default_nullable")]
    pub nullable: bool,
    #[serde(default)]
    pub description: String,
}

fn default_nullable() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntitySchema {
    pub tool: ToolCategory,
    pub fields: Vec<EntityFieldSpec>,
}

impl EntitySchema {
    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn field(&self, name: &str) -> Option<&EntityFieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// A scalar entity value. Serializes as a bare JSON string, integer or null.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EntityValue {
    Null,
    Int(i64),
    Str(String),
}

impl EntityValue {
    pub fn is_null(&self) -> bool {
        matches!(self, EntityValue::Null)
    }

    pub fn to_json(&self) -> Value {
        match self {
            EntityValue::Null => Value::Null,
            EntityValue::Int(i) => Value::from(*i),
            EntityValue::Str(s) => Value::String(s.clone()),
        }
    }
}

impl From<&str> for EntityValue {
    fn from(s: &str) -> Self {
        EntityValue::Str(s.to_string())
    }
}

impl From<i64> for EntityValue {
    fn from(i: i64) -> Self {
        EntityValue::Int(i)
    }
}

impl fmt::Display for EntityValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityValue::Null => f.write_str("null"),
            EntityValue::Int(i) => write!(f, "{i}"),
            EntityValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

impl Serialize for EntityValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            EntityValue::Null => serializer.serialize_none(),
            EntityValue::Int(i) => serializer.serialize_i64(*i),
            EntityValue::Str(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for EntityValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Value::deserialize(deserializer)? {
            Value::Null => Ok(EntityValue::Null),
            Value::String(s) => Ok(EntityValue::Str(s)),
            Value::Number(n) => n
                .as_i64()
                .map(EntityValue::Int)
                .ok_or_else(|| serde::de::Error::custom("entity numbers must be integers")),
            other => Err(serde::de::Error::custom(format!(
                "entity values must be scalar, got {other}"
            ))),
        }
    }
}

/// Ordered field-name → value map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityMap(pub IndexMap<String, EntityValue>);

impl EntityMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, field: &str) -> Option<&EntityValue> {
        self.0.get(field)
    }

    pub fn insert(&mut self, field: impl Into<String>, value: EntityValue) {
        self.0.insert(field.into(), value);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EntityValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> Map<String, Value> {
        self.0.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()
    }
}

impl<K: Into<String>> FromIterator<(K, EntityValue)> for EntityMap {
    fn from_iter<I: IntoIterator<Item = (K, EntityValue)>>(iter: I) -> Self {
        EntityMap(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationReason {
    UnknownField,
    NonCoercibleYear { value: String },
    NonScalar,
    NotAnObject,
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationReason::UnknownField => f.write_str("field is not part of the schema"),
            ViolationReason::NonCoercibleYear { value } => {
                write!(f, "cannot coerce {value} to an integer")
            }
            ViolationReason::NonScalar => f.write_str("value must be a string, integer or null"),
            ViolationReason::NotAnObject => f.write_str("entities must be a JSON object"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaViolation {
    pub field: String,
    pub reason: ViolationReason,
}

/// Every violation found in one entity map, plus the best-effort normalized
/// map with the offending fields nulled out.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{} schema violation(s) for `{tool}`: {}", .violations.len(), summarize(.violations))]
pub struct SchemaViolations {
    pub tool: ToolCategory,
    pub violations: Vec<SchemaViolation>,
    pub partial: EntityMap,
}

fn summarize(violations: &[SchemaViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("{}: {}", v.field, v.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    UnknownCategory(#[from] UnknownCategory),
    #[error("schema file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate field `{field}` in schema for `{tool}`")]
    DuplicateField { tool: ToolCategory, field: String },
    #[error("schema file has no entry for `{0}`")]
    MissingTool(ToolCategory),
    #[error("`others` must have an empty schema")]
    OthersNotEmpty,
    #[error("failed to read schema file: {0}")]
    Io(#[from] std::io::Error),
}

const TABLE: [(ToolCategory, &[&str]); 8] = [
    (ToolCategory::Tsb, &["make", "model", "year", "issue"]),
    (ToolCategory::Nhtsa, &["make", "model", "year", "mileage", "issue"]),
    (
        ToolCategory::Techdoc,
        &["make", "model", "year", "query_type", "component", "system"],
    ),
    (
        ToolCategory::SmartInsights,
        &["make", "model", "year", "mileage", "issue"],
    ),
    (
        ToolCategory::PartsCatalog,
        &["make", "model", "year", "component", "brand", "warranty", "pnc"],
    ),
    (
        ToolCategory::RepairToParts,
        &["make", "model", "year", "labor_action", "component"],
    ),
    (
        ToolCategory::ServiceToParts,
        &[
            "make",
            "model",
            "year",
            "service_name",
            "service_type",
            "service_unit",
            "driving_pattern",
        ],
    ),
    (ToolCategory::Others, &[]),
];

fn field_description(name: &str) -> &'static str {
    match name {
        "make" => "Vehicle manufacturer, e.g. Toyota",
        "model" => "Vehicle model, e.g. Corolla",
        "year" => "Four-digit model year",
        "issue" => "Problem or symptom the user asks about",
        "mileage" => "Odometer reading mentioned by the user",
        "query_type" => "procedure for \"how to\" questions, specification for \"what is\" questions",
        "component" => "Vehicle component or part",
        "system" => "Vehicle system, e.g. cooling system",
        "brand" => "Aftermarket or OEM part brand",
        "warranty" => "Warranty requirement",
        "pnc" => "Part number code",
        "labor_action" => "Repair action, e.g. replace",
        "service_name" => "Name of the maintenance service",
        "service_type" => "Interval basis of the service: mileage or time",
        "service_unit" => "Unit of the service interval, e.g. miles or months",
        "driving_pattern" => "Driving conditions, e.g. severe or normal",
        _ => "",
    }
}

/// Holds one schema per tool. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    schemas: IndexMap<ToolCategory, EntitySchema>,
}

impl Default for Registry {
    fn default() -> Self {
        let schemas = TABLE
            .iter()
            .map(|(tool, names)| {
                let fields = names
                    .iter()
                    .map(|name| EntityFieldSpec {
                        name: name.to_string(),
                        value_kind: if *name == "year" {
                            ValueKind::Integer
                        } else {
                            ValueKind::String
                        },
                        nullable: true,
                        description: field_description(name).to_string(),
                    })
                    .collect();
                (*tool, EntitySchema { tool: *tool, fields })
            })
            .collect();
        Registry { schemas }
    }
}

#[derive(Deserialize)]
struct FileField {
    name: String,
    value_kind: ValueKind,
    #[serde(default)]
    description: String,
}

impl Registry {
    /// Loads schemas from `{tool: [{name, value_kind, description}]}`.
    ///
    /// Every entity-bearing tool must be present; `others` may be omitted
    /// and must be empty when given.
    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let raw: IndexMap<String, Vec<FileField>> = serde_json::from_str(text)?;
        let mut parsed: IndexMap<ToolCategory, Vec<EntityFieldSpec>> = IndexMap::new();
        for (id, fields) in raw {
            let tool: ToolCategory = id.parse()?;
            let mut specs: Vec<EntityFieldSpec> = Vec::with_capacity(fields.len());
            for f in fields {
                if specs.iter().any(|s| s.name == f.name) {
                    return Err(RegistryError::DuplicateField { tool, field: f.name });
                }
                specs.push(EntityFieldSpec {
                    name: f.name,
                    value_kind: f.value_kind,
                    nullable: true,
                    description: f.description,
                });
            }
            parsed.insert(tool, specs);
        }
        let mut schemas = IndexMap::new();
        for tool in ALL_TOOLS {
            let fields = match parsed.swap_remove(&tool) {
                Some(fields) => fields,
                None if tool.is_others() => Vec::new(),
                None => return Err(RegistryError::MissingTool(tool)),
            };
            if tool.is_others() && !fields.is_empty() {
                return Err(RegistryError::OthersNotEmpty);
            }
            schemas.insert(tool, EntitySchema { tool, fields });
        }
        Ok(Registry { schemas })
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self, RegistryError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes in the same layout `from_json_str` accepts.
    pub fn to_json(&self) -> Value {
        let mut out = Map::new();
        for (tool, schema) in &self.schemas {
            let fields: Vec<Value> = schema
                .fields
                .iter()
                .map(|f| {
                    serde_json::json!({
                        "name": f.name,
                        "value_kind": f.value_kind,
                        "description": f.description,
                    })
                })
                .collect();
            out.insert(tool.id().to_string(), Value::Array(fields));
        }
        Value::Object(out)
    }

    pub fn tools(&self) -> &'static [ToolCategory] {
        all_tools()
    }

    pub fn schema_for(&self, tool: ToolCategory) -> &EntitySchema {
        &self.schemas[&tool]
    }

    /// Looks up a schema by its string id, as read from external data.
    pub fn schema_for_id(&self, id: &str) -> Result<&EntitySchema, UnknownCategory> {
        let tool: ToolCategory = id.parse()?;
        Ok(self.schema_for(tool))
    }

    /// Normalizes a raw entity object against `tool`'s schema.
    ///
    /// The result holds exactly the schema's fields in schema order. Missing
    /// fields become null, strings are trimmed and empty strings become
    /// null. Integer fields accept integers or four-digit strings. Every
    /// violation is collected before returning.
    pub fn validate_entities(
        &self,
        tool: ToolCategory,
        raw: &Map<String, Value>,
    ) -> Result<EntityMap, SchemaViolations> {
        let schema = self.schema_for(tool);
        let mut violations = Vec::new();

        for key in raw.keys() {
            if schema.field(key).is_none() {
                violations.push(SchemaViolation {
                    field: key.clone(),
                    reason: ViolationReason::UnknownField,
                });
            }
        }

        let mut out = EntityMap::new();
        for spec in &schema.fields {
            let value = match raw.get(&spec.name) {
                None => Ok(EntityValue::Null),
                Some(v) => normalize_value(spec, v),
            };
            match value {
                Ok(v) => out.insert(spec.name.clone(), v),
                Err(reason) => {
                    violations.push(SchemaViolation { field: spec.name.clone(), reason });
                    out.insert(spec.name.clone(), EntityValue::Null);
                }
            }
        }

        if violations.is_empty() {
            Ok(out)
        } else {
            Err(SchemaViolations { tool, violations, partial: out })
        }
    }

    /// Like [`Registry::validate_entities`] but accepts any JSON value; a
    /// non-object is a single `NotAnObject` violation.
    pub fn validate_value(
        &self,
        tool: ToolCategory,
        raw: &Value,
    ) -> Result<EntityMap, SchemaViolations> {
        match raw {
            Value::Object(map) => self.validate_entities(tool, map),
            Value::Null => self.validate_entities(tool, &Map::new()),
            _ => {
                let partial = self
                    .validate_entities(tool, &Map::new())
                    .expect("empty map always validates");
                Err(SchemaViolations {
                    tool,
                    violations: vec![SchemaViolation {
                        field: String::new(),
                        reason: ViolationReason::NotAnObject,
                    }],
                    partial,
                })
            }
        }
    }

    /// Re-validates an already-typed map.
    pub fn validate_map(
        &self,
        tool: ToolCategory,
        map: &EntityMap,
    ) -> Result<EntityMap, SchemaViolations> {
        self.validate_entities(tool, &map.to_json())
    }
}

fn normalize_value(spec: &EntityFieldSpec, value: &Value) -> Result<EntityValue, ViolationReason> {
    match (spec.value_kind, value) {
        (_, Value::Null) => Ok(EntityValue::Null),
        (_, Value::Array(_) | Value::Object(_)) => Err(ViolationReason::NonScalar),
        (ValueKind::Integer, Value::Number(n)) => n.as_i64().map(EntityValue::Int).ok_or_else(|| {
            ViolationReason::NonCoercibleYear { value: n.to_string() }
        }),
        (ValueKind::Integer, Value::String(s)) => {
            let t = s.trim();
            if t.is_empty() {
                Ok(EntityValue::Null)
            } else if t.len() == 4 && t.bytes().all(|b| b.is_ascii_digit()) {
                Ok(EntityValue::Int(t.parse().expect("four ascii digits")))
            } else {
                Err(ViolationReason::NonCoercibleYear { value: format!("{s:?}") })
            }
        }
        (ValueKind::Integer, Value::Bool(b)) => {
            Err(ViolationReason::NonCoercibleYear { value: b.to_string() })
        }
        (ValueKind::String, Value::String(s)) => Ok(string_value(s)),
        // Scalars other than strings are kept as their JSON text.
        (ValueKind::String, Value::Number(n)) => Ok(EntityValue::Str(n.to_string())),
        (ValueKind::String, Value::Bool(b)) => Ok(EntityValue::Str(b.to_string())),
    }
}

fn string_value(s: &str) -> EntityValue {
    let t = s.trim();
    if t.is_empty() {
        EntityValue::Null
    } else {
        EntityValue::Str(t.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn eight_tools_in_fixed_order() {
        let tools = all_tools();
        assert_eq!(tools.len(), 8);
        assert_eq!(tools[0], ToolCategory::Tsb);
        assert_eq!(tools[7], ToolCategory::Others);
        assert_eq!(all_tools(), all_tools());
        assert_eq!(tools.iter().filter(|t| t.is_others()).count(), 1);
        let mut ids: Vec<_> = tools.iter().map(|t| t.id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn ids_round_trip() {
        for t in all_tools() {
            assert_eq!(t.id().parse::<ToolCategory>().unwrap(), *t);
            assert_eq!(serde_json::to_string(t).unwrap(), format!("\"{}\"", t.id()));
        }
        assert!("banana".parse::<ToolCategory>().is_err());
        assert!(serde_json::from_str::<ToolCategory>("\"Tsb\"").is_err());
    }

    #[test]
    fn schemas_follow_the_tool_table() {
        let reg = Registry::default();
        let names = |t| reg.schema_for(t).field_names().map(String::from).collect::<Vec<_>>();
        assert_eq!(
            names(ToolCategory::RepairToParts),
            ["make", "model", "year", "labor_action", "component"]
        );
        assert!(reg.schema_for(ToolCategory::Others).is_empty());
        let techdoc = names(ToolCategory::Techdoc);
        assert_eq!(techdoc.len(), 6);
        assert!(techdoc.contains(&"query_type".to_string()));
        assert!(techdoc.contains(&"system".to_string()));
        assert_eq!(names(ToolCategory::ServiceToParts).len(), 7);
        assert!(matches!(reg.schema_for_id("nope"), Err(UnknownCategory(_))));
    }

    #[test]
    fn year_is_the_only_integer_field() {
        let reg = Registry::default();
        for t in all_tools() {
            for f in &reg.schema_for(*t).fields {
                assert_eq!(f.value_kind == ValueKind::Integer, f.name == "year", "{}", f.name);
                assert!(f.nullable);
            }
        }
    }

    #[test]
    fn worked_repair_example_is_unchanged() {
        let reg = Registry::default();
        let raw = obj(json!({
            "make": "Toyota", "model": "Corolla", "year": 2015,
            "component": "brake pads", "labor_action": "replace"
        }));
        let out = reg.validate_entities(ToolCategory::RepairToParts, &raw).unwrap();
        assert_eq!(
            serde_json::to_string(&out).unwrap(),
            r#"{"make":"Toyota","model":"Corolla","year":2015,"labor_action":"replace","component":"brake pads"}"#
        );
    }

    #[test]
    fn missing_field_becomes_null() {
        let reg = Registry::default();
        let raw = obj(json!({
            "make": "Toyota", "model": "Corolla", "year": 2015,
            "query_type": "procedure", "component": "brake pads"
        }));
        let out = reg.validate_entities(ToolCategory::Techdoc, &raw).unwrap();
        assert_eq!(out.get("system"), Some(&EntityValue::Null));
        assert_eq!(out.keys().last(), Some("system"));
    }

    #[test]
    fn unknown_key_reported_with_null_filled_remainder() {
        let reg = Registry::default();
        let raw = obj(json!({"make": "Subaru", "bogus": "x"}));
        let err = reg.validate_entities(ToolCategory::Tsb, &raw).unwrap_err();
        assert_eq!(err.violations.len(), 1);
        assert_eq!(err.violations[0].field, "bogus");
        assert_eq!(err.violations[0].reason, ViolationReason::UnknownField);
        let expected: Vec<&str> = reg.schema_for(ToolCategory::Tsb).field_names().collect();
        assert_eq!(err.partial.keys().collect::<Vec<_>>(), expected);
        assert_eq!(err.partial.get("make"), Some(&EntityValue::from("Subaru")));
        assert_eq!(err.partial.get("issue"), Some(&EntityValue::Null));
    }

    #[test]
    fn year_coercion_rules() {
        let reg = Registry::default();
        let ok = reg
            .validate_entities(ToolCategory::Tsb, &obj(json!({"year": " 2015 "})))
            .unwrap();
        assert_eq!(ok.get("year"), Some(&EntityValue::Int(2015)));
        for bad in [json!("15"), json!("2015a"), json!(2015.5), json!(true), json!("twenty")] {
            let err = reg
                .validate_entities(ToolCategory::Tsb, &obj(json!({ "year": bad })))
                .unwrap_err();
            assert!(matches!(err.violations[0].reason, ViolationReason::NonCoercibleYear { .. }));
        }
    }

    #[test]
    fn strings_trimmed_and_emptied() {
        let reg = Registry::default();
        let out = reg
            .validate_entities(ToolCategory::Tsb, &obj(json!({"make": "  Kia ", "model": "   "})))
            .unwrap();
        assert_eq!(out.get("make"), Some(&EntityValue::from("Kia")));
        assert_eq!(out.get("model"), Some(&EntityValue::Null));
    }

    #[test]
    fn all_violations_reported_together() {
        let reg = Registry::default();
        let raw = obj(json!({"make": ["a"], "year": "x", "foo": 1, "bar": 2}));
        let err = reg.validate_entities(ToolCategory::Nhtsa, &raw).unwrap_err();
        assert_eq!(err.violations.len(), 4);
        assert!(err
            .violations
            .iter()
            .any(|v| v.field == "make" && v.reason == ViolationReason::NonScalar));
    }

    #[test]
    fn non_object_rejected() {
        let reg = Registry::default();
        let err = reg.validate_value(ToolCategory::Tsb, &json!([1, 2])).unwrap_err();
        assert_eq!(err.violations[0].reason, ViolationReason::NotAnObject);
    }

    #[test]
    fn schema_file_round_trip() {
        let reg = Registry::default();
        let text = reg.to_json().to_string();
        assert_eq!(Registry::from_json_str(&text).unwrap(), reg);
    }

    #[test]
    fn schema_file_errors() {
        assert!(matches!(
            Registry::from_json_str(r#"{"banana": []}"#),
            Err(RegistryError::UnknownCategory(_))
        ));
        assert!(matches!(
            Registry::from_json_str(r#"{"tsb": []}"#),
            Err(RegistryError::MissingTool(ToolCategory::Nhtsa))
        ));
        let mut v = Registry::default().to_json();
        v["tsb"]
            .as_array_mut()
            .unwrap()
            .push(json!({"name": "make", "value_kind": "string"}));
        assert!(matches!(
            Registry::from_json_str(&v.to_string()),
            Err(RegistryError::DuplicateField { .. })
        ));
    }

    #[test]
    fn extended_schema_file_is_honored() {
        let mut v = Registry::default().to_json();
        v["tsb"]
            .as_array_mut()
            .unwrap()
            .push(json!({"name": "bulletin_id", "value_kind": "string", "description": "TSB number"}));
        let reg = Registry::from_json_str(&v.to_string()).unwrap();
        let out = reg
            .validate_entities(ToolCategory::Tsb, &obj(json!({"bulletin_id": "19-045"})))
            .unwrap();
        assert_eq!(out.len(), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_value() -> impl Strategy<Value = Value> {
            prop_oneof![
                Just(Value::Null),
                "[ a-zA-Z0-9]{0,10}".prop_map(Value::from),
                (1900i64..2100).prop_map(Value::from),
                (1900i64..2100).prop_map(|y| Value::from(format!(" {y} "))),
                Just(json!(["x"])),
                Just(json!(1.5)),
            ]
        }

        /// A raw map over the tool's fields plus a few foreign keys.
        fn raw_map() -> impl Strategy<Value = (ToolCategory, Map<String, Value>)> {
            (0usize..8).prop_flat_map(|i| {
                let tool = ALL_TOOLS[i];
                let mut keys: Vec<String> = Registry::default().schema_for(tool).field_names().map(str::to_string).collect();
                keys.extend(["bogus".to_string(), "Make".to_string()]);
                proptest::collection::vec((proptest::sample::select(keys), raw_value()), 0..10)
                    .prop_map(move |kv| (tool, kv.into_iter().collect()))
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(500))]
            #[test]
            fn validation_is_idempotent((tool, raw) in raw_map()) {
                let reg = Registry::default();
                let first = match reg.validate_entities(tool, &raw) {
                    Ok(m) => m,
                    Err(v) => v.partial,
                };
                let again = reg.validate_entities(tool, &first.to_json());
                prop_assert_eq!(again.as_ref(), Ok(&first));
            }

            #[test]
            fn output_keys_are_the_schema_keys((tool, raw) in raw_map()) {
                let reg = Registry::default();
                let out = match reg.validate_entities(tool, &raw) {
                    Ok(m) => m,
                    Err(v) => v.partial,
                };
                let want: Vec<&str> = reg.schema_for(tool).field_names().collect();
                prop_assert_eq!(out.keys().collect::<Vec<_>>(), want);
            }

            #[test]
            fn serialized_maps_revalidate_equal((tool, raw) in raw_map()) {
                let reg = Registry::default();
                if let Ok(m) = reg.validate_entities(tool, &raw) {
                    let text = serde_json::to_string(&m.to_json()).unwrap();
                    let back: Map<String, Value> = serde_json::from_str(&text).unwrap();
                    prop_assert_eq!(reg.validate_entities(tool, &back), Ok(m));
                }
            }
        }
    }
}
