//! App manifests, the fixture-backed tool handlers and the built-in suite.

mod manifest;
mod tools;

use std::collections::BTreeMap;

pub use manifest::{string_args, AppManifest, ManifestError, OfferSpec, ParamSpec, ParamType, ToolSpec};
pub use tools::{DriveFile, Email, ToolOutput, World};

use crate::isc::{Catalog, CatalogError};

const BUNDLED: &[(&str, &str)] = &[
    ("metro_hail", include_str!("../../apps/metro_hail.toml")),
    ("quick_ride", include_str!("../../apps/quick_ride.toml")),
    ("gmail_like", include_str!("../../apps/gmail_like.toml")),
    ("gdrive_like", include_str!("../../apps/gdrive_like.toml")),
    ("travel_mate", include_str!("../../apps/travel_mate.toml")),
    ("health_companion", include_str!("../../apps/health_companion.toml")),
    ("creative_muse", include_str!("../../apps/creative_muse.toml")),
    ("symptom_solver", include_str!("../../apps/symptom_solver.toml")),
    ("typewriter", include_str!("../../apps/typewriter.toml")),
    ("rel_users", include_str!("../../apps/rel_users.toml")),
    ("rel_locations", include_str!("../../apps/rel_locations.toml")),
    ("rel_weather", include_str!("../../apps/rel_weather.toml")),
    ("rel_clock", include_str!("../../apps/rel_clock.toml")),
    ("rel_foods", include_str!("../../apps/rel_foods.toml")),
    ("email_extractor", include_str!("../../apps/email_extractor.toml")),
];

/// One app per letter of the alphabet, each able to type only its letter.
pub fn letter_app(letter: char) -> AppManifest {
    let doc = format!(
        r#"app_id = "type_{l}"
display_name = "Key {u}"
description = "Presses the {l} key."
root_domain = "key{l}.example"

[[tools]]
name = "type_{l}"
description = "Emit {u}."
handler = "type_{l}"
params = []
"#,
        l = letter,
        u = letter.to_ascii_uppercase()
    );
    AppManifest::load(&doc).expect("generated letter manifest is valid")
}

pub fn builtin_suite() -> Vec<AppManifest> {
    let mut apps: Vec<AppManifest> = BUNDLED
        .iter()
        .map(|(name, doc)| AppManifest::load(doc).unwrap_or_else(|e| panic!("bundled manifest {name}: {e}")))
        .collect();
    apps.extend(('a'..='z').map(letter_app));
    apps
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown app {0}")]
    UnknownApp(String),
    #[error("app {0} is already in the store")]
    Duplicate(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Apps known to the store and the subset the user has installed.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    store: BTreeMap<String, AppManifest>,
    installed: Vec<String>,
    catalog: Catalog,
}

impl Registry {
    pub fn new(store: Vec<AppManifest>) -> Result<Self, RegistryError> {
        let mut reg = Registry::default();
        for app in store {
            reg.add_to_store(app)?;
        }
        Ok(reg)
    }

    pub fn builtin() -> Self {
        Self::new(builtin_suite()).expect("built-in suite is consistent")
    }

    pub fn add_to_store(&mut self, app: AppManifest) -> Result<(), RegistryError> {
        app.validate()?;
        if self.store.contains_key(&app.app_id) {
            return Err(RegistryError::Duplicate(app.app_id));
        }
        for offer in &app.functionalities_offered {
            self.catalog.insert(offer.descriptor()?)?;
        }
        self.store.insert(app.app_id.clone(), app);
        Ok(())
    }

    pub fn install(&mut self, app_id: &str) -> Result<(), RegistryError> {
        if !self.store.contains_key(app_id) {
            return Err(RegistryError::UnknownApp(app_id.to_string()));
        }
        if !self.installed.iter().any(|a| a == app_id) {
            self.installed.push(app_id.to_string());
        }
        Ok(())
    }

    pub fn uninstall(&mut self, app_id: &str) -> bool {
        let before = self.installed.len();
        self.installed.retain(|a| a != app_id);
        before != self.installed.len()
    }

    pub fn install_all(&mut self, ids: &[&str]) -> Result<(), RegistryError> {
        ids.iter().try_for_each(|id| self.install(id))
    }

    pub fn store(&self) -> impl Iterator<Item = &AppManifest> {
        self.store.values()
    }

    pub fn get(&self, app_id: &str) -> Option<&AppManifest> {
        self.store.get(app_id)
    }

    pub fn is_installed(&self, app_id: &str) -> bool {
        self.installed.iter().any(|a| a == app_id)
    }

    /// Installed manifests in installation order.
    pub fn installed(&self) -> Vec<&AppManifest> {
        self.installed.iter().filter_map(|id| self.store.get(id)).collect()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Installed apps offering `functionality`.
    pub fn providers(&self, functionality: &str) -> Vec<&AppManifest> {
        self.installed().into_iter().filter(|a| a.offer(functionality).is_some()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_size_and_ids_are_unique() {
        let suite = builtin_suite();
        assert_eq!(suite.len(), 41);
        let mut ids: Vec<&str> = suite.iter().map(|a| a.app_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 41);
    }

    #[test]
    fn registry_catalog_covers_uninstalled_apps() {
        let reg = Registry::builtin();
        assert!(reg.catalog().contains("file_retrieval"));
        assert!(reg.providers("file_retrieval").is_empty());
    }
}
