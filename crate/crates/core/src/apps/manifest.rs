use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::isc::{is_snake_token, FieldSpec, FieldType, FunctionalityDescriptor};
use crate::llm::{BackendSpec, ToolSchema};
use crate::sandbox::{etld_plus_one, host_of};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest does not parse: {0}")]
    Parse(String),
    #[error("manifest field {0} is invalid")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

/// A tool binds either to a built-in handler or to an HTTP endpoint reached
/// through the hub's egress guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
}

impl ToolSpec {
    pub fn schema(&self) -> ToolSchema {
        let mut props = Map::new();
        for p in &self.params {
            let ty = match p.ty {
                ParamType::String => "string",
                ParamType::Integer => "integer",
            };
            props.insert(p.name.clone(), json!({ "type": ty }));
        }
        let required: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        ToolSchema {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: json!({ "type": "object", "properties": props, "required": required }),
        }
    }
}

/// A functionality this app serves to other spokes, backed by one of its
/// tools. Request fields are passed to the tool as arguments of the same
/// name; response fields are read from the tool result by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferSpec {
    pub name: String,
    pub tool: String,
    pub request: Vec<(String, String)>,
    pub response: Vec<(String, String)>,
}

impl OfferSpec {
    pub fn descriptor(&self) -> Result<FunctionalityDescriptor, ManifestError> {
        let fields = |pairs: &[(String, String)], which: &str| -> Result<Vec<FieldSpec>, ManifestError> {
            pairs
                .iter()
                .map(|(n, t)| {
                    let ty = FieldType::parse(t)
                        .ok_or_else(|| ManifestError::Invalid(format!("functionalities_offered.{which}.{n}")))?;
                    Ok(FieldSpec::new(n.clone(), ty))
                })
                .collect()
        };
        Ok(FunctionalityDescriptor {
            name: self.name.clone(),
            request_fields: fields(&self.request, "request")?,
            response_fields: fields(&self.response, "response")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppManifest {
    pub app_id: String,
    pub display_name: String,
    pub description: String,
    pub root_domain: String,
    #[serde(default)]
    pub irreversible_actions: Vec<String>,
    /// Entities the app declares it may need; `personal_data` covers all.
    #[serde(default)]
    pub data_needs: Vec<String>,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub functionalities_offered: Vec<OfferSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_override: Option<BackendSpec>,
}

fn invalid(field: impl Into<String>) -> ManifestError {
    ManifestError::Invalid(field.into())
}

impl AppManifest {
    pub fn load(document: &str) -> Result<Self, ManifestError> {
        let manifest: AppManifest = toml::from_str(document).map_err(|e| ManifestError::Parse(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if !is_snake_token(&self.app_id) {
            return Err(invalid("app_id"));
        }
        if self.display_name.trim().is_empty() {
            return Err(invalid("display_name"));
        }
        if self.description.trim().is_empty() {
            return Err(invalid("description"));
        }
        if etld_plus_one(&self.root_domain).ok().as_deref() != Some(self.root_domain.as_str()) {
            return Err(invalid("root_domain"));
        }
        let mut seen = Vec::new();
        for tool in &self.tools {
            let field = format!("tools.{}", tool.name);
            if !is_snake_token(&tool.name) || seen.contains(&tool.name.as_str()) {
                return Err(invalid(field));
            }
            seen.push(tool.name.as_str());
            match (&tool.handler, &tool.endpoint) {
                (Some(_), None) => {}
                (None, Some(url)) => {
                    let host = host_of(url).map_err(|_| invalid(format!("{field}.endpoint")))?;
                    if etld_plus_one(&host).ok().as_deref() != Some(self.root_domain.as_str()) {
                        return Err(invalid(format!("{field}.endpoint")));
                    }
                }
                _ => return Err(invalid(format!("{field}.handler"))),
            }
            let mut names: Vec<&str> = tool.params.iter().map(|p| p.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            if names.len() != tool.params.len() {
                return Err(invalid(format!("{field}.params")));
            }
        }
        for action in &self.irreversible_actions {
            if self.tool(action).is_none() {
                return Err(invalid("irreversible_actions"));
            }
        }
        for need in &self.data_needs {
            if !is_snake_token(need) {
                return Err(invalid("data_needs"));
            }
        }
        for offer in &self.functionalities_offered {
            let field = format!("functionalities_offered.{}", offer.name);
            if !is_snake_token(&offer.name) {
                return Err(invalid(field));
            }
            let tool = self.tool(&offer.tool).ok_or_else(|| invalid(format!("{field}.tool")))?;
            offer.descriptor()?;
            if offer.request.iter().any(|(n, _)| !tool.params.iter().any(|p| &p.name == n)) {
                return Err(invalid(format!("{field}.request")));
            }
        }
        Ok(())
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn is_irreversible(&self, tool: &str) -> bool {
        self.irreversible_actions.iter().any(|t| t == tool)
    }

    pub fn offer(&self, functionality: &str) -> Option<&OfferSpec> {
        self.functionalities_offered.iter().find(|o| o.name == functionality)
    }

    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.tools.iter().map(ToolSpec::schema).collect()
    }

    /// Whether a stored entity falls under this app's declared needs.
    pub fn needs_entity(&self, entity: &str) -> bool {
        self.data_needs.iter().any(|n| n == "personal_data" || n == entity)
    }
}

/// Coerces tool-call arguments to the string values tools consume.
pub fn string_args(args: &Value) -> Map<String, Value> {
    let mut out = Map::new();
    if let Some(obj) = args.as_object() {
        for (k, v) in obj {
            let s = match v {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            };
            out.insert(k.clone(), Value::String(s));
        }
    }
    out
}
