//! Canonical JSON document format for meta-meta-models.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{json, Map, Value};

use super::condition::parse_condition;
use super::schema::{canonical_schema, validate_against_schema};
use super::validate::{semantic_checks, ValidationReport, Violation};
use super::{MetaMetaModel, PhaseMetaModel, PhaseOrderConstraint, TaskDef};
use crate::ids::{PhaseId, TaskId, VersionId};

fn str_field(obj: &Map<String, Value>, key: &str) -> String {
    obj.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
}

fn bool_field(obj: &Map<String, Value>, key: &str, default: bool) -> bool {
    obj.get(key).and_then(Value::as_bool).unwrap_or(default)
}

fn str_list<'a>(obj: &'a Map<String, Value>, key: &str) -> impl Iterator<Item = String> + 'a {
    obj.get(key).and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str).map(ToString::to_string)
}

fn objects(v: Option<&Value>) -> impl Iterator<Item = &Map<String, Value>> {
    v.and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_object)
}

/// Lenient decode: shape problems were already reported by the schema pass,
/// so malformed pieces are skipped or defaulted here.
fn decode(doc: &Map<String, Value>, report: &mut ValidationReport) -> MetaMetaModel {
    let mut phases = Vec::new();
    for p in objects(doc.get("phases")) {
        let id = PhaseId::new(str_field(p, "id"));
        let mut tasks = Vec::new();
        for t in objects(p.get("tasks")) {
            let task_id = TaskId::new(str_field(t, "id"));
            let precondition = match t.get("precondition").and_then(Value::as_str) {
                None => None,
                Some(text) => match parse_condition(text) {
                    Ok(expr) => Some(expr),
                    Err(e) => {
                        report.push(Violation::InvalidCondition {
                            phase: id.clone(),
                            task: task_id.clone(),
                            message: e.to_string(),
                        });
                        None
                    }
                },
            };
            tasks.push(TaskDef {
                id: task_id,
                name: str_field(t, "name"),
                subtasks: str_list(t, "subtasks").collect(),
                mandatory: bool_field(t, "mandatory", false),
                precedence: str_list(t, "precedence").map(TaskId::new).collect::<BTreeSet<_>>(),
                external_consult_allowed: bool_field(t, "external_consult_allowed", false),
                precondition,
            });
        }
        phases.push(PhaseMetaModel {
            id,
            name: str_field(p, "name"),
            ordinal: p.get("ordinal").and_then(Value::as_i64).unwrap_or_default(),
            tasks,
            entry_decision_required: bool_field(p, "entry_decision_required", true),
        });
    }
    let phase_constraints = objects(doc.get("phase_constraints"))
        .map(|c| PhaseOrderConstraint {
            subject: PhaseId::new(str_field(c, "subject")),
            requires: PhaseId::new(str_field(c, "requires")),
        })
        .collect();
    MetaMetaModel {
        version: VersionId::new(str_field(doc, "version")),
        phases,
        phase_constraints,
        schema: doc.get("schema").cloned().unwrap_or(Value::Null),
    }
}

/// Parses and fully validates a meta-meta-model document.
///
/// Never stops at the first problem: the returned report lists every
/// structural, self-description and semantic violation found.
pub fn parse_meta_meta_model(document: &str) -> Result<MetaMetaModel, ValidationReport> {
    let mut report = ValidationReport::default();
    let value: Value = match serde_json::from_str(document) {
        Ok(v) => v,
        Err(e) => {
            report.push(Violation::Syntax { line: e.line(), column: e.column(), message: e.to_string() });
            return Err(report);
        }
    };

    for v in validate_against_schema(&value, &canonical_schema()).violations {
        if let Violation::SchemaMismatch { path, message } = v {
            report.push(Violation::Structure { path, message });
        }
    }
    let Some(obj) = value.as_object() else {
        return Err(report);
    };
    if let Some(own) = obj.get("schema").filter(|s| s.is_object()) {
        for v in validate_against_schema(&value, own).violations {
            let duplicate = matches!(&v, Violation::SchemaMismatch { path, message }
                if report.violations.contains(&Violation::Structure { path: path.clone(), message: message.clone() }));
            if !duplicate {
                report.push(v);
            }
        }
    }

    let model = decode(obj, &mut report);
    report.extend(semantic_checks(&model));
    if report.is_empty() {
        Ok(model)
    } else {
        Err(report)
    }
}

/// Serialises `model` to its canonical document.
pub fn to_document(model: &MetaMetaModel) -> Value {
    let phases: Vec<Value> = model
        .phases
        .iter()
        .map(|p| {
            let tasks: Vec<Value> = p
                .tasks
                .iter()
                .map(|t| {
                    let mut task = json!({
                        "id": t.id,
                        "name": t.name,
                        "subtasks": t.subtasks,
                        "mandatory": t.mandatory,
                        "precedence": t.precedence,
                        "external_consult_allowed": t.external_consult_allowed,
                    });
                    if let Some(cond) = &t.precondition {
                        task["precondition"] = Value::String(cond.to_string());
                    }
                    task
                })
                .collect();
            json!({
                "id": p.id,
                "name": p.name,
                "ordinal": p.ordinal,
                "entry_decision_required": p.entry_decision_required,
                "tasks": tasks,
            })
        })
        .collect();
    let constraints: Vec<Value> =
        model.phase_constraints.iter().map(|c| json!({"subject": c.subject, "requires": c.requires})).collect();
    json!({
        "version": model.version,
        "phases": phases,
        "phase_constraints": constraints,
        "schema": model.schema,
    })
}

pub fn to_json(model: &MetaMetaModel) -> String {
    serde_json::to_string(&to_document(model)).expect("documents always serialise")
}

pub fn to_json_pretty(model: &MetaMetaModel) -> String {
    serde_json::to_string_pretty(&to_document(model)).expect("documents always serialise")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metamodel::{default_policy_cycle, ConditionExpr, TaskRef};
    use alloc::vec;

    #[test]
    fn default_round_trips() {
        let model = default_policy_cycle();
        let parsed = parse_meta_meta_model(&to_json_pretty(&model)).unwrap();
        assert_eq!(parsed, model);
    }

    #[test]
    fn zero_phases() {
        let doc = json!({"version": "1.0.0", "phases": [], "phase_constraints": [], "schema": canonical_schema()});
        let report = parse_meta_meta_model(&doc.to_string()).unwrap_err();
        assert_eq!(report.codes(), vec!["empty-phases"]);
    }

    #[test]
    fn syntax_error_is_positioned() {
        let report = parse_meta_meta_model("{\n  \"version\": \"1.0.0\",\n  oops\n}").unwrap_err();
        match &report.violations[..] {
            [Violation::Syntax { line, column, .. }] => assert_eq!((*line, *column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mutual_precedence_is_a_cycle() {
        let doc = json!({
            "version": "1.0.0",
            "phases": [{"id": "p", "name": "P", "ordinal": 1, "tasks": [
                {"id": "A", "name": "A", "precedence": ["B"]},
                {"id": "B", "name": "B", "precedence": ["A"]},
                {"id": "C", "name": "C"}
            ]}],
            "phase_constraints": [],
            "schema": canonical_schema()
        });
        let report = parse_meta_meta_model(&doc.to_string()).unwrap_err();
        assert_eq!(
            report.violations,
            vec![Violation::PrecedenceCycle {
                phase: "p".into(),
                tasks: ["A", "B"].into_iter().map(TaskId::from).collect()
            }]
        );
    }

    #[test]
    fn collects_every_violation() {
        let doc = json!({
            "version": "one",
            "phases": [
                {"id": "p", "name": "P", "ordinal": 1, "tasks": [{"id": "a", "name": "a", "precedence": ["zz"]}]},
                {"id": "p", "name": "P2", "ordinal": 1, "tasks": []}
            ],
            "phase_constraints": [{"subject": "p", "requires": "q"}],
            "schema": canonical_schema()
        });
        let report = parse_meta_meta_model(&doc.to_string()).unwrap_err();
        assert_eq!(
            report.codes(),
            vec![
                "invalid-version",
                "dangling-precedence",
                "no-entry-point",
                "duplicate-phase-id",
                "duplicate-ordinal",
                "empty-phase",
                "dangling-phase-constraint"
            ]
        );
    }

    #[test]
    fn missing_schema_and_foreign_keys() {
        let doc = json!({"version": "1.0.0", "phases": [{"id": "p", "name": "P", "ordinal": 1, "tasks": [{"id": "a", "name": "a", "colour": "red"}]}], "phase_constraints": []});
        let report = parse_meta_meta_model(&doc.to_string()).unwrap_err();
        assert_eq!(report.codes(), vec!["structure", "structure"]);
    }

    #[test]
    fn own_schema_is_enforced() {
        let mut schema = canonical_schema();
        schema["properties"]["phases"]["items"]["required"] =
            json!(["id", "name", "ordinal", "tasks", "entry_decision_required"]);
        let doc = json!({
            "version": "1.0.0",
            "phases": [{"id": "p", "name": "P", "ordinal": 1, "tasks": [{"id": "a", "name": "a"}]}],
            "phase_constraints": [],
            "schema": schema
        });
        let report = parse_meta_meta_model(&doc.to_string()).unwrap_err();
        assert_eq!(report.codes(), vec!["schema-mismatch"]);
    }

    #[test]
    fn preconditions_are_parsed_and_resolved() {
        let mut model = default_policy_cycle();
        model.phases[1].tasks[1].precondition = Some(ConditionExpr::and(
            ConditionExpr::Completed(TaskRef::bare("challenges_opportunities_identification")),
            ConditionExpr::PhaseCompleted("agenda_setting".into()),
        ));
        let text = to_json(&model);
        assert_eq!(parse_meta_meta_model(&text).unwrap(), model);

        let broken = text.replace("phase_completed(agenda_setting)", "phase_completed(nowhere)");
        assert_eq!(parse_meta_meta_model(&broken).unwrap_err().codes(), vec!["invalid-condition"]);
        let garbled = text.replace("phase_completed(agenda_setting)", "phase_completed(");
        assert_eq!(parse_meta_meta_model(&garbled).unwrap_err().codes(), vec!["invalid-condition"]);
    }
}
