//! Run manifests.
//!
//! Every artifact-producing run records its provenance in a flat text file
//! of `key=value` lines, one per line, sorted by key. With identical keys
//! and an identical build, a rerun produces identical outputs, so the
//! manifest doubles as a reproduction recipe.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{PspcError, Result};

/// Standard manifest file name written beside outputs.
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Provenance record for one run: seed, dataset hash, process parameters,
/// schedule identifiers, tool version, and free-form extras.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: BTreeMap<String, String>,
}

impl RunManifest {
    /// Creates a manifest pre-populated with the tool version.
    pub fn new() -> Self {
        let mut m = RunManifest {
            entries: BTreeMap::new(),
        };
        m.entries
            .insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
        m
    }

    /// Sets one entry. Keys must not contain `=` or newlines; values must
    /// not contain newlines (they would break the line format).
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if key.is_empty() || key.contains('=') || key.contains('\n') {
            return Err(PspcError::FormatError(format!("bad manifest key {key:?}")));
        }
        let value = value.to_string();
        if value.contains('\n') {
            return Err(PspcError::FormatError(format!(
                "manifest value for {key:?} contains a newline"
            )));
        }
        self.entries.insert(key.to_owned(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Renders the manifest as sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// Parses manifest text. Inverse of [`RunManifest::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PspcError::FormatError(format!("manifest line {} has no '='", lineno + 1))
            })?;
            entries.insert(k.to_owned(), v.to_owned());
        }
        Ok(RunManifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
