//! Scenario files a server can run, keyed by file name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use trolley_core::dsl::{parse_simulation_with_sources, ParseError};
use trolley_core::protocol::{ScenarioEntry, ScenarioFileEntry, ScenarioList, PROTOCOL_VERSION};
use trolley_core::scenario::Simulation;

pub const EXTENSION: &str = "trly";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {} parse error(s), first: {}", .errors.len(), .errors[0])]
    Parse { path: PathBuf, errors: Vec<ParseError> },
    #[error("two scenario files are named {0}")]
    DuplicateName(String),
    #[error("no scenario files found")]
    Empty,
}

/// First 16 hex digits of the SHA-256 of the file text.
pub fn file_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct ScenarioFile {
    pub name: String,
    pub path: PathBuf,
    pub file_id: String,
    pub simulation: Simulation,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.to_owned(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_text(name, path.to_owned(), &text)
    }

    pub fn from_text(name: String, path: PathBuf, text: &str) -> Result<Self, CatalogError> {
        let parsed = parse_simulation_with_sources(text).map_err(|errors| CatalogError::Parse {
            path: path.clone(),
            errors,
        })?;
        Ok(ScenarioFile {
            name,
            path,
            file_id: file_id(text),
            simulation: parsed.simulation,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Catalog {
    files: BTreeMap<String, ScenarioFile>,
}

impl Catalog {
    /// Loads every path given; directories contribute their `.trly` files.
    pub fn load(paths: &[PathBuf]) -> Result<Self, CatalogError> {
        let mut catalog = Catalog::default();
        for path in paths {
            if path.is_dir() {
                let entries = fs::read_dir(path).map_err(|source| CatalogError::Io {
                    path: path.clone(),
                    source,
                })?;
                let mut found: Vec<PathBuf> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
                    .collect();
                found.sort();
                for p in found {
                    catalog.insert(ScenarioFile::load(&p)?)?;
                }
            } else {
                catalog.insert(ScenarioFile::load(path)?)?;
            }
        }
        if catalog.files.is_empty() {
            return Err(CatalogError::Empty);
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, file: ScenarioFile) -> Result<(), CatalogError> {
        if self.files.contains_key(&file.name) {
            return Err(CatalogError::DuplicateName(file.name));
        }
        self.files.insert(file.name.clone(), file);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ScenarioFile> {
        self.files.get(name)
    }

    pub fn list(&self) -> ScenarioList {
        ScenarioList {
            protocol_version: PROTOCOL_VERSION,
            files: self
                .files
                .values()
                .map(|f| ScenarioFileEntry {
                    scenario_file: f.name.clone(),
                    file_id: f.file_id.clone(),
                    scenarios: f
                        .simulation
                        .scenarios
                        .iter()
                        .map(|s| ScenarioEntry {
                            test_num: s.test_num,
                            name: s.name.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}
