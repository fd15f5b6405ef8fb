//! The embedded format descriptor that makes a meta-meta-model document
//! self-describing, and a small validator for it.
//!
//! Supported keywords: `type` (`object`, `array`, `string`, `integer`,
//! `boolean`), `properties`, `required`, `items`, `additionalProperties`
//! (boolean) and `description`.

use alloc::format;
use alloc::string::String;

use serde_json::Value;

use super::validate::{ValidationReport, Violation};

const CANONICAL_SCHEMA: &str = r#"{
  "description": "Policy-cycle meta-meta-model document",
  "type": "object",
  "required": ["version", "phases", "phase_constraints", "schema"],
  "additionalProperties": false,
  "properties": {
    "version": {"type": "string", "description": "MAJOR.MINOR.PATCH"},
    "schema": {"type": "object", "description": "this descriptor"},
    "phase_constraints": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["subject", "requires"],
        "additionalProperties": false,
        "properties": {
          "subject": {"type": "string"},
          "requires": {"type": "string"}
        }
      }
    },
    "phases": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["id", "name", "ordinal", "tasks"],
        "additionalProperties": false,
        "properties": {
          "id": {"type": "string"},
          "name": {"type": "string"},
          "ordinal": {"type": "integer"},
          "entry_decision_required": {"type": "boolean"},
          "tasks": {
            "type": "array",
            "items": {
              "type": "object",
              "required": ["id", "name"],
              "additionalProperties": false,
              "properties": {
                "id": {"type": "string"},
                "name": {"type": "string"},
                "subtasks": {"type": "array", "items": {"type": "string"}},
                "mandatory": {"type": "boolean"},
                "precedence": {"type": "array", "items": {"type": "string"}},
                "external_consult_allowed": {"type": "boolean"},
                "precondition": {"type": "string"}
              }
            }
          }
        }
      }
    }
  }
}"#;

/// The descriptor written into every document this crate serialises.
pub fn canonical_schema() -> Value {
    serde_json::from_str(CANONICAL_SCHEMA).expect("canonical schema is valid JSON")
}

fn mismatch(report: &mut ValidationReport, path: &str, message: String) {
    report.push(Violation::SchemaMismatch { path: path.into(), message });
}

fn type_matches(expected: &str, value: &Value) -> Option<bool> {
    Some(match expected {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        _ => return None,
    })
}

fn check(value: &Value, schema: &Value, path: &str, report: &mut ValidationReport) {
    let Some(schema) = schema.as_object() else {
        mismatch(report, path, "schema node is not an object".into());
        return;
    };
    for key in schema.keys() {
        if !matches!(
            key.as_str(),
            "type" | "properties" | "required" | "items" | "additionalProperties" | "description"
        ) {
            mismatch(report, path, format!("unsupported schema keyword {key:?}"));
        }
    }
    if let Some(ty) = schema.get("type") {
        match ty.as_str().and_then(|t| type_matches(t, value).map(|ok| (t, ok))) {
            Some((_, true)) => {}
            Some((t, false)) => {
                mismatch(report, path, format!("expected {t}"));
                return;
            }
            None => {
                mismatch(report, path, format!("unsupported schema type {ty}"));
                return;
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    mismatch(report, path, format!("missing required key {key:?}"));
                }
            }
        }
        let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
        for (key, child) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(child, sub, &format!("{path}.{key}"), report),
                None if closed => mismatch(report, path, format!("unexpected key {key:?}")),
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            check(child, items, &format!("{path}[{i}]"), report);
        }
    }
}

/// Validates `document` against `schema`, reporting `schema-mismatch`
/// violations with JSON paths rooted at `$`.
pub fn validate_against_schema(document: &Value, schema: &Value) -> ValidationReport {
    let mut report = ValidationReport::default();
    check(document, schema, "$", &mut report);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_schema_describes_itself() {
        let schema = canonical_schema();
        let schema_only = json!({"type": "object"});
        assert!(validate_against_schema(&schema, &schema_only).is_empty());
        let doc = json!({"version": "1.0.0", "phases": [], "phase_constraints": [], "schema": schema.clone()});
        assert!(validate_against_schema(&doc, &schema).is_empty());
    }

    #[test]
    fn reports_paths() {
        let doc = json!({"version": 3, "phases": [{"id": "a", "name": "A", "ordinal": "x", "tasks": [], "colour": 1}], "phase_constraints": []});
        let report = validate_against_schema(&doc, &canonical_schema());
        let text = alloc::string::ToString::to_string(&report);
        assert!(text.contains("$: missing required key \"schema\""), "{text}");
        assert!(text.contains("$.version: expected string"), "{text}");
        assert!(text.contains("$.phases[0].ordinal: expected integer"), "{text}");
        assert!(text.contains("$.phases[0]: unexpected key \"colour\""), "{text}");
    }
}
