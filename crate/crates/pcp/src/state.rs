//! File-backed runtime: NDJSON logs in one directory, replayed at startup.
//!
//! Layout of a log directory:
//!
//! | file                  | one line per                                   |
//! |-----------------------|------------------------------------------------|
//! | `models.jsonl`        | registered meta-model document                 |
//! | `stakeholders.jsonl`  | registered stakeholder address                 |
//! | `events.jsonl`        | engine event, all instances interleaved        |
//! | `prov.jsonl`          | provenance store record                        |
//! | `rejections.jsonl`    | stakeholder response the connector refused     |
//!
//! Events of a command are written before its provenance records, so a crash
//! can only leave provenance behind the event log; the gap is re-derived on
//! the next open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pcp_core::engine::{EngineEvent, InstanceRuntime, ReplayError};
use pcp_core::metamodel::{default_policy_cycle, parse_meta_meta_model, to_json, MetaMetaModel, ValidationReport};
use pcp_core::prov::ProvDocument;
use pcp_core::routing::{RejectedResponse, StakeholderAddress};
use pcp_core::runtime::{Recorder, Runtime};
use pcp_core::store::{Prepared, ProvStore, StoreError, StoreRecord};
use pcp_core::{InstanceId, VersionId};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const MODELS: &str = "models.jsonl";
pub const STAKEHOLDERS: &str = "stakeholders.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const PROV: &str = "prov.jsonl";
pub const REJECTIONS: &str = "rejections.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file} line {line}: {message}")]
    Corrupt { file: &'static str, line: usize, message: String },
    #[error("{file}: stored model is invalid: {report}")]
    Model { file: &'static str, report: ValidationReport },
    #[error("instance {instance}: {source}")]
    Replay { instance: InstanceId, source: ReplayError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StateError + '_ {
    move |source| StateError::Io { path: path.to_path_buf(), source }
}

/// Provenance recorder that commits to memory and stages records for the
/// log file.
#[derive(Debug, Default)]
pub struct StagingRecorder {
    store: ProvStore,
    unwritten: Vec<StoreRecord>,
}

impl StagingRecorder {
    pub fn store(&self) -> &ProvStore {
        &self.store
    }
}

impl Recorder for StagingRecorder {
    type Error = StoreError;

    fn record(&mut self, document: ProvDocument) -> Result<u64, StoreError> {
        match self.store.prepare(document)? {
            Prepared::Duplicate(seq) => Ok(seq),
            Prepared::Fresh(record) => {
                self.unwritten.push(record.clone());
                Ok(self.store.commit(record))
            }
        }
    }
}

struct Appender {
    path: PathBuf,
    file: File,
}

impl Appender {
    fn open(path: PathBuf) -> Result<Self, StateError> {
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn append<T: Serialize>(&mut self, items: impl IntoIterator<Item = T>, sync: bool) -> Result<(), StateError> {
        let mut buf = Vec::new();
        for item in items {
            serde_json::to_writer(&mut buf, &item).expect("log entries serialise");
            buf.push(b'\n');
        }
        if buf.is_empty() {
            return Ok(());
        }
        let len = self.file.metadata().map_err(io_err(&self.path))?.len();
        let written = self.file.write_all(&buf).and_then(|_| if sync { self.file.sync_data() } else { Ok(()) });
        if let Err(e) = written {
            // Leave no partial batch behind.
            let _ = self.file.set_len(len);
            return Err(io_err(&self.path)(e));
        }
        Ok(())
    }
}

/// Reads an NDJSON file. A torn final line (no trailing newline) is
/// truncated away; any other unparsable line is corruption.
fn read_lines<T: DeserializeOwned>(path: &Path, file: &'static str) -> Result<Vec<T>, StateError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
    }
    let mut out = Vec::new();
    for (i, line) in text[..complete].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| StateError::Corrupt {
            file,
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// A runtime whose every change is journaled to a log directory.
pub struct LocalState {
    rt: Runtime<StagingRecorder>,
    dir: PathBuf,
    sync: bool,
    persisted: BTreeMap<InstanceId, u64>,
    rejections_written: usize,
    events: Appender,
    prov: Appender,
    models: Appender,
    stakeholders: Appender,
    rejections: Appender,
}

impl LocalState {
    /// Opens (or initialises) a log directory. A fresh directory gets the
    /// default cycle model registered as its first version.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StateError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let records: Vec<StoreRecord> = read_lines(&dir.join(PROV), PROV)?;
        let store = ProvStore::rebuild(records).map_err(|e| match e {
            StoreError::Corrupt { position, reason } => {
                StateError::Corrupt { file: PROV, line: position + 1, message: reason }
            }
            other => StateError::Corrupt { file: PROV, line: 0, message: other.to_string() },
        })?;
        let mut rt = Runtime::new(StagingRecorder { store, unwritten: Vec::new() });

        let docs: Vec<serde_json::Value> = read_lines(&dir.join(MODELS), MODELS)?;
        let fresh = docs.is_empty();
        for doc in docs {
            let model =
                parse_meta_meta_model(&doc.to_string()).map_err(|report| StateError::Model { file: MODELS, report })?;
            rt.register_model(model).map_err(|e| StateError::Corrupt {
                file: MODELS,
                line: 0,
                message: e.to_string(),
            })?;
        }
        for (i, addr) in
            read_lines::<StakeholderAddress>(&dir.join(STAKEHOLDERS), STAKEHOLDERS)?.into_iter().enumerate()
        {
            rt.register_stakeholder(addr).map_err(|e| StateError::Corrupt {
                file: STAKEHOLDERS,
                line: i + 1,
                message: e.to_string(),
            })?;
        }

        let mut logs: BTreeMap<InstanceId, Vec<EngineEvent>> = BTreeMap::new();
        for e in read_lines::<EngineEvent>(&dir.join(EVENTS), EVENTS)? {
            logs.entry(e.instance_id.clone()).or_default().push(e);
        }
        let mut persisted = BTreeMap::new();
        for (id, log) in logs {
            let version = match log.first().map(|e| &e.kind) {
                Some(pcp_core::engine::EventKind::InstanceCreated { model_version, .. }) => model_version.clone(),
                _ => {
                    return Err(StateError::Corrupt {
                        file: EVENTS,
                        line: 0,
                        message: format!("{id} does not start with InstanceCreated"),
                    })
                }
            };
            let model = rt.models().get(&version).ok_or_else(|| StateError::Corrupt {
                file: EVENTS,
                line: 0,
                message: format!("{id} uses unregistered model {version}"),
            })?;
            let inst = InstanceRuntime::replay(model, log)
                .map_err(|source| StateError::Replay { instance: id.clone(), source })?;
            persisted.insert(id, inst.state().last_seq);
            rt.restore_instance(inst);
        }
        let rejections: Vec<RejectedResponse> = read_lines(&dir.join(REJECTIONS), REJECTIONS)?;
        let rejections_written = rejections.len();
        rt.restore_rejections(rejections);

        let mut state = Self {
            events: Appender::open(dir.join(EVENTS))?,
            prov: Appender::open(dir.join(PROV))?,
            models: Appender::open(dir.join(MODELS))?,
            stakeholders: Appender::open(dir.join(STAKEHOLDERS))?,
            rejections: Appender::open(dir.join(REJECTIONS))?,
            rt,
            dir,
            sync: true,
            persisted,
            rejections_written,
        };
        if fresh {
            state.register_model(default_policy_cycle()).map_err(|e| StateError::Corrupt {
                file: MODELS,
                line: 0,
                message: e,
            })?;
        }
        let recorded: BTreeMap<InstanceId, u64> = state
            .rt
            .instances()
            .filter_map(|i| Some((i.state().id.clone(), state.store().last_source_seq(&i.state().id)?)))
            .collect();
        state.rt.reconcile_provenance(|i| recorded.get(i).copied());
        state.persist()?;
        Ok(state)
    }

    /// Skips fsync after each write (tests and bulk imports).
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn runtime(&self) -> &Runtime<StagingRecorder> {
        &self.rt
    }

    /// Mutable access for commands; call [`persist`](Self::persist) after.
    pub fn runtime_mut(&mut self) -> &mut Runtime<StagingRecorder> {
        &mut self.rt
    }

    pub fn store(&self) -> &ProvStore {
        &self.rt.recorder().store
    }

    /// Registers and journals a model; the message is the rejection reason.
    pub fn register_model(&mut self, model: MetaMetaModel) -> Result<VersionId, String> {
        let doc: serde_json::Value = serde_json::from_str(&to_json(&model)).expect("canonical model json");
        let version = self.rt.register_model(model).map_err(|e| e.to_string())?;
        self.models.append([doc], self.sync).map_err(|e| e.to_string())?;
        Ok(version)
    }

    pub fn register_stakeholder(&mut self, addr: StakeholderAddress) -> Result<(), String> {
        self.rt.register_stakeholder(addr.clone()).map_err(|e| e.to_string())?;
        self.stakeholders.append([addr], self.sync).map_err(|e| e.to_string())
    }

    /// Writes everything produced since the last call: new events first,
    /// then staged provenance, then refused responses.
    pub fn persist(&mut self) -> Result<(), StateError> {
        let mut fresh: Vec<&EngineEvent> = Vec::new();
        let mut heads = Vec::new();
        for inst in self.rt.instances() {
            let id = &inst.state().id;
            let done = self.persisted.get(id).copied().unwrap_or(0);
            if inst.state().last_seq > done {
                fresh.extend(inst.events_from(done + 1));
                heads.push((id.clone(), inst.state().last_seq));
            }
        }
        self.events.append(fresh, self.sync)?;
        self.persisted.extend(heads);

        let _ = self.rt.flush_provenance();
        let staged = std::mem::take(&mut self.rt.recorder_mut().unwritten);
        if let Err(e) = self.prov.append(&staged, self.sync) {
            self.rt.recorder_mut().unwritten = staged;
            return Err(e);
        }

        let refused = &self.rt.rejected_responses()[self.rejections_written..];
        self.rejections.append(refused, self.sync)?;
        self.rejections_written = self.rt.rejected_responses().len();
        Ok(())
    }
}

/// Shared handle used by the service.
pub type SharedState = Arc<std::sync::Mutex<LocalState>>;
