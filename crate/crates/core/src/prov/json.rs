//! PROV-JSON layout: `entity`, `activity`, `agent` maps keyed by node id,
//! one map per relation kind, `pcp:*` attribute extensions and a `bundle`
//! header.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{json, Map, Value};

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ProvJsonError {
    pub path: String,
    pub message: String,
}

fn err(path: impl Into<String>, message: impl Into<String>) -> ProvJsonError {
    ProvJsonError { path: path.into(), message: message.into() }
}

const GENERATED_AT: &str = "pcp:generated_at";

fn entity_type(kind: EntityKind) -> &'static str {
    match kind {
        EntityKind::Artifact => "pcp:Artifact",
        EntityKind::PolicyDraft => "pcp:PolicyDraft",
        EntityKind::Dataset => "pcp:Dataset",
        EntityKind::TokenPayload => "pcp:TokenPayload",
        EntityKind::Comment => "pcp:Comment",
        EntityKind::MetaModelDoc => "pcp:MetaModelDoc",
    }
}

fn activity_type(ty: ActivityType) -> &'static str {
    match ty {
        ActivityType::TaskExecution => "pcp:TaskExecution",
        ActivityType::Decision => "pcp:Decision",
        ActivityType::TokenDispatch => "pcp:TokenDispatch",
        ActivityType::TokenReceipt => "pcp:TokenReceipt",
        ActivityType::PhaseTransition => "pcp:PhaseTransition",
        ActivityType::LoopBack => "pcp:LoopBack",
        ActivityType::InstanceCreation => "pcp:InstanceCreation",
    }
}

fn agent_type(ty: AgentType) -> &'static str {
    match ty {
        AgentType::Person => "prov:Person",
        AgentType::Department => "prov:Organization",
        AgentType::SoftwareAgent => "prov:SoftwareAgent",
    }
}

const ENTITY_KINDS: [EntityKind; 6] = [
    EntityKind::Artifact,
    EntityKind::PolicyDraft,
    EntityKind::Dataset,
    EntityKind::TokenPayload,
    EntityKind::Comment,
    EntityKind::MetaModelDoc,
];
const ACTIVITY_TYPES: [ActivityType; 7] = [
    ActivityType::TaskExecution,
    ActivityType::Decision,
    ActivityType::TokenDispatch,
    ActivityType::TokenReceipt,
    ActivityType::PhaseTransition,
    ActivityType::LoopBack,
    ActivityType::InstanceCreation,
];
const AGENT_TYPES: [AgentType; 3] = [AgentType::Person, AgentType::Department, AgentType::SoftwareAgent];

/// Field names of (source, target) for each relation map.
fn endpoint_keys(kind: RelationKind) -> (&'static str, &'static str) {
    match kind {
        RelationKind::Used => ("prov:activity", "prov:entity"),
        RelationKind::WasGeneratedBy => ("prov:entity", "prov:activity"),
        RelationKind::WasAssociatedWith => ("prov:activity", "prov:agent"),
        RelationKind::WasAttributedTo => ("prov:entity", "prov:agent"),
        RelationKind::WasDerivedFrom => ("prov:generatedEntity", "prov:usedEntity"),
        RelationKind::WasInformedBy => ("prov:informed", "prov:informant"),
    }
}

fn with_attrs(mut obj: Map<String, Value>, attrs: &Attrs) -> Value {
    for (k, v) in attrs {
        obj.insert(k.clone(), Value::String(v.clone()));
    }
    Value::Object(obj)
}

pub fn to_prov_json(doc: &ProvDocument) -> Value {
    let mut header = Map::new();
    header.insert("id".into(), json!(doc.header.id));
    if let Some(i) = &doc.header.instance_id {
        header.insert("instance_id".into(), json!(i));
    }
    if let Some(r) = doc.header.source_seq {
        header.insert("source_seq".into(), json!(r.first));
        header.insert("source_seq_end".into(), json!(r.last));
    }
    if let Some(t) = doc.header.emitted_at {
        header.insert("emitted_at".into(), json!(t));
    }
    if let Some(e) = &doc.header.event_type {
        header.insert("event_type".into(), json!(e));
    }

    let mut entity = Map::new();
    for e in &doc.entities {
        let mut obj = Map::new();
        obj.insert("prov:type".into(), json!(entity_type(e.kind)));
        obj.insert(GENERATED_AT.into(), json!(e.generated_at));
        entity.insert(e.id.to_string(), with_attrs(obj, &e.attributes));
    }
    let mut activity = Map::new();
    for a in &doc.activities {
        let mut obj = Map::new();
        obj.insert("prov:type".into(), json!(activity_type(a.activity_type)));
        obj.insert("prov:startTime".into(), json!(a.started_at));
        if let Some(end) = a.ended_at {
            obj.insert("prov:endTime".into(), json!(end));
        }
        activity.insert(a.id.to_string(), with_attrs(obj, &a.attributes));
    }
    let mut agent = Map::new();
    for a in &doc.agents {
        let mut obj = Map::new();
        obj.insert("prov:type".into(), json!(agent_type(a.agent_type)));
        agent.insert(a.id.to_string(), with_attrs(obj, &a.attributes));
    }

    let mut out = Map::new();
    out.insert("prefix".into(), json!({"pcp": "urn:pcp#", "prov": "http://www.w3.org/ns/prov#"}));
    out.insert("bundle".into(), Value::Object(header));
    out.insert("entity".into(), Value::Object(entity));
    out.insert("activity".into(), Value::Object(activity));
    out.insert("agent".into(), Value::Object(agent));
    for kind in RelationKind::ALL {
        let (sk, tk) = endpoint_keys(kind);
        let mut map = Map::new();
        for r in doc.relations.iter().filter(|r| r.kind == kind) {
            let mut obj = Map::new();
            obj.insert(sk.into(), json!(r.source));
            obj.insert(tk.into(), json!(r.target));
            if let Some(role) = &r.role {
                obj.insert("prov:role".into(), json!(role));
            }
            if let Some(at) = r.at {
                obj.insert("prov:time".into(), json!(at));
            }
            map.insert(format!("{}({},{})", kind.name(), r.source, r.target), Value::Object(obj));
        }
        out.insert(kind.name().into(), Value::Object(map));
    }
    Value::Object(out)
}

fn section<'a>(root: &'a Map<String, Value>, key: &str) -> Result<Option<&'a Map<String, Value>>, ProvJsonError> {
    match root.get(key) {
        None => Ok(None),
        Some(Value::Object(m)) => Ok(Some(m)),
        Some(_) => Err(err(format!("$.{key}"), "expected an object")),
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ProvJsonError> {
    v.as_object().ok_or_else(|| err(path, "expected an object"))
}

fn str_field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, ProvJsonError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(err(format!("{path}.{key}"), "expected a string")),
        None => Err(err(path, format!("missing {key}"))),
    }
}

fn time_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Timestamp, ProvJsonError> {
    str_field(obj, key, path)?.parse().map_err(|e| err(format!("{path}.{key}"), format!("{e}")))
}

fn opt_time(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Option<Timestamp>, ProvJsonError> {
    if obj.contains_key(key) {
        time_field(obj, key, path).map(Some)
    } else {
        Ok(None)
    }
}

fn lookup<T: Copy>(table: &[T], name: impl Fn(T) -> &'static str, value: &str, path: &str) -> Result<T, ProvJsonError> {
    table.iter().copied().find(|t| name(*t) == value).ok_or_else(|| err(path, format!("unknown prov:type {value:?}")))
}

/// Attributes are every non-reserved key; values must be strings.
fn attrs_of(obj: &Map<String, Value>, reserved: &[&str], path: &str) -> Result<Attrs, ProvJsonError> {
    let mut attrs = Attrs::new();
    for (k, v) in obj {
        if reserved.contains(&k.as_str()) {
            continue;
        }
        let s = v.as_str().ok_or_else(|| err(format!("{path}.{k}"), "attribute values must be strings"))?;
        attrs.insert(k.clone(), s.to_string());
    }
    Ok(attrs)
}

pub fn from_prov_json(value: &Value) -> Result<ProvDocument, ProvJsonError> {
    let root = as_object(value, "$")?;
    let mut doc = ProvDocument::default();

    if let Some(h) = section(root, "bundle")? {
        doc.header.id = match h.get("id") {
            None => String::new(),
            Some(_) => str_field(h, "id", "$.bundle")?.to_string(),
        };
        if h.contains_key("instance_id") {
            doc.header.instance_id = Some(str_field(h, "instance_id", "$.bundle")?.into());
        }
        if let Some(first) = h.get("source_seq") {
            let first = first.as_u64().ok_or_else(|| err("$.bundle.source_seq", "expected an unsigned integer"))?;
            let last = match h.get("source_seq_end") {
                None => first,
                Some(v) => v.as_u64().ok_or_else(|| err("$.bundle.source_seq_end", "expected an unsigned integer"))?,
            };
            if last < first {
                return Err(err("$.bundle.source_seq_end", "range end precedes start"));
            }
            doc.header.source_seq = Some(SeqRange { first, last });
        }
        doc.header.emitted_at = opt_time(h, "emitted_at", "$.bundle")?;
        if h.contains_key("event_type") {
            doc.header.event_type = Some(str_field(h, "event_type", "$.bundle")?.to_string());
        }
    }

    for (id, v) in section(root, "entity")?.into_iter().flatten() {
        let path = format!("$.entity[{id:?}]");
        let obj = as_object(v, &path)?;
        let kind = lookup(&ENTITY_KINDS, entity_type, str_field(obj, "prov:type", &path)?, &path)?;
        doc.entities.push(ProvEntity {
            id: id.as_str().into(),
            kind,
            generated_at: time_field(obj, GENERATED_AT, &path)?,
            attributes: attrs_of(obj, &["prov:type", GENERATED_AT], &path)?,
        });
    }
    for (id, v) in section(root, "activity")?.into_iter().flatten() {
        let path = format!("$.activity[{id:?}]");
        let obj = as_object(v, &path)?;
        let activity_type = lookup(&ACTIVITY_TYPES, activity_type, str_field(obj, "prov:type", &path)?, &path)?;
        let started_at = time_field(obj, "prov:startTime", &path)?;
        let ended_at = opt_time(obj, "prov:endTime", &path)?;
        if ended_at.is_some_and(|e| e < started_at) {
            return Err(err(path, "prov:endTime precedes prov:startTime"));
        }
        doc.activities.push(ProvActivity {
            id: id.as_str().into(),
            activity_type,
            started_at,
            ended_at,
            attributes: attrs_of(obj, &["prov:type", "prov:startTime", "prov:endTime"], &path)?,
        });
    }
    for (id, v) in section(root, "agent")?.into_iter().flatten() {
        let path = format!("$.agent[{id:?}]");
        let obj = as_object(v, &path)?;
        let agent_type = lookup(&AGENT_TYPES, agent_type, str_field(obj, "prov:type", &path)?, &path)?;
        doc.agents.push(ProvAgent {
            id: id.as_str().into(),
            agent_type,
            attributes: attrs_of(obj, &["prov:type"], &path)?,
        });
    }
    for kind in RelationKind::ALL {
        let (sk, tk) = endpoint_keys(kind);
        for (rid, v) in section(root, kind.name())?.into_iter().flatten() {
            let path = format!("$.{}[{rid:?}]", kind.name());
            let obj = as_object(v, &path)?;
            let role = match obj.get("prov:role") {
                None => None,
                Some(_) => Some(str_field(obj, "prov:role", &path)?.to_string()),
            };
            doc.relations.push(ProvRelation {
                kind,
                source: str_field(obj, sk, &path)?.into(),
                target: str_field(obj, tk, &path)?.into(),
                role,
                at: opt_time(obj, "prov:time", &path)?,
            });
        }
    }
    Ok(doc.normalized())
}

impl ProvDocument {
    /// Sorts every section (nodes by id, relations by kind, source, target).
    pub fn normalized(mut self) -> Self {
        self.entities.sort_by(|a, b| a.id.cmp(&b.id));
        self.activities.sort_by(|a, b| a.id.cmp(&b.id));
        self.agents.sort_by(|a, b| a.id.cmp(&b.id));
        self.relations.sort_by_key(ProvRelation::key);
        self
    }

    /// Checks node-kind signatures and that every relation endpoint is
    /// declared in this document.
    pub fn check_closed(&self) -> Result<(), ProvJsonError> {
        let class = |id: &NodeId| -> Option<NodeClass> {
            if self.entities.iter().any(|e| &e.id == id) {
                Some(NodeClass::Entity)
            } else if self.activities.iter().any(|a| &a.id == id) {
                Some(NodeClass::Activity)
            } else if self.agents.iter().any(|a| &a.id == id) {
                Some(NodeClass::Agent)
            } else {
                None
            }
        };
        let mut problems: Vec<String> = Vec::new();
        for r in &self.relations {
            let (s, t) = r.kind.signature();
            for (end, want) in [(&r.source, s), (&r.target, t)] {
                match class(end) {
                    None => problems.push(format!("{} references missing node {end}", r.kind.name())),
                    Some(c) if c != want => {
                        problems.push(format!("{} endpoint {end} is a {c:?}, expected {want:?}", r.kind.name()))
                    }
                    Some(_) => {}
                }
            }
        }
        match problems.first() {
            None => Ok(()),
            Some(p) => Err(err("$", p.clone())),
        }
    }
}
