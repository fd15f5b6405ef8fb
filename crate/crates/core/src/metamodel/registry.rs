use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{validate_model, MetaMetaModel, ValidationReport};
use crate::ids::VersionId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("version {0} is already registered")]
    DuplicateVersion(VersionId),
    #[error("model failed validation:\n{0}")]
    Unvalidated(ValidationReport),
}

/// Registered meta-meta-models, immutable once stored.
#[derive(Debug, Clone, Default)]
pub struct MetaModelRegistry {
    models: BTreeMap<VersionId, Arc<MetaMetaModel>>,
    order: Vec<VersionId>,
}

impl MetaModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-validates `model` and stores it under its version string.
    pub fn register_version(&mut self, model: MetaMetaModel) -> Result<VersionId, RegistryError> {
        if self.models.contains_key(&model.version) {
            return Err(RegistryError::DuplicateVersion(model.version));
        }
        let report = validate_model(&model);
        if !report.is_empty() {
            return Err(RegistryError::Unvalidated(report));
        }
        let version = model.version.clone();
        self.models.insert(version.clone(), Arc::new(model));
        self.order.push(version.clone());
        Ok(version)
    }

    pub fn get(&self, version: &VersionId) -> Option<Arc<MetaMetaModel>> {
        self.models.get(version).cloned()
    }

    pub fn contains(&self, version: &VersionId) -> bool {
        self.models.contains_key(version)
    }

    /// Versions in registration order.
    pub fn versions(&self) -> &[VersionId] {
        &self.order
    }

    pub fn latest(&self) -> Option<Arc<MetaMetaModel>> {
        self.order.last().and_then(|v| self.get(v))
    }
}
