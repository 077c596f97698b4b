//! Reference programs for retrieval-augmented prompting.
//!
//! On disk a store is a directory of `<name>.task.txt` + `<name>.adl` pairs,
//! optionally with a cached `<name>.emb` (little-endian `f32` vector).

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::lm::{cosine, LmBackend, LmError};
use crate::diagnostic::{is_executable, Diagnostic};
use crate::fixtures::REFERENCES;
use crate::frontends::{parse, SyntaxStyle};
use crate::ir::Workflow;
use crate::registry::Registry;
use crate::validator::check;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("reference store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("reference `{name}` is not a valid program ({} diagnostics)", .diagnostics.len())]
    InvalidReference {
        name: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("embedding of `{name}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
}

#[derive(Debug, Clone)]
pub struct ReferenceEntry {
    pub name: String,
    pub task: String,
    pub workflow: Workflow,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceStore {
    entries: Vec<ReferenceEntry>,
}

impl ReferenceStore {
    /// Entries must share one embedding dimension.
    pub fn from_entries(entries: Vec<ReferenceEntry>) -> Result<Self, StoreError> {
        if let Some(first) = entries.first() {
            let expected = first.embedding.len();
            for e in &entries {
                if e.embedding.len() != expected {
                    return Err(StoreError::DimensionMismatch {
                        name: e.name.clone(),
                        expected,
                        found: e.embedding.len(),
                    });
                }
            }
        }
        Ok(ReferenceStore { entries })
    }

    /// The sixteen bundled references, embedded with `lm`.
    pub fn bundled(r: &Registry, lm: &dyn LmBackend) -> Result<Self, StoreError> {
        let mut entries = Vec::new();
        for reference in REFERENCES {
            entries.push(entry(
                r,
                lm,
                reference.name,
                reference.task,
                reference.program,
                None,
            )?);
        }
        Self::from_entries(entries)
    }

    /// Loads a store directory, in file-name order. Cached embeddings are used
    /// when present; the rest are computed with `lm`.
    pub fn load_dir(dir: &Path, r: &Registry, lm: &dyn LmBackend) -> Result<Self, StoreError> {
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                e.file_name()
                    .to_str()
                    .and_then(|n| n.strip_suffix(".task.txt"))
                    .map(str::to_string)
            })
            .collect();
        names.sort();
        let mut entries = Vec::new();
        for name in names {
            let task = fs::read_to_string(dir.join(format!("{name}.task.txt")))?;
            let program = fs::read_to_string(dir.join(format!("{name}.adl")))?;
            let cached = match fs::read(dir.join(format!("{name}.emb"))) {
                Ok(bytes) => Some(decode_embedding(&bytes)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(e.into()),
            };
            entries.push(entry(r, lm, &name, &task, &program, cached)?);
        }
        Self::from_entries(entries)
    }

    /// Writes the store in directory form, embeddings included.
    pub fn save_dir(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        for e in &self.entries {
            let program = crate::frontends::emit(&e.workflow, SyntaxStyle::Declarative)
                .expect("declarative prints every validated workflow");
            fs::write(dir.join(format!("{}.task.txt", e.name)), &e.task)?;
            fs::write(dir.join(format!("{}.adl", e.name)), program)?;
            fs::write(
                dir.join(format!("{}.emb", e.name)),
                encode_embedding(&e.embedding),
            )?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top-`k` entries by cosine similarity to the embedded query; ties keep
    /// store order.
    pub fn retrieve(
        &self,
        lm: &dyn LmBackend,
        query: &str,
        k: usize,
    ) -> Result<Vec<&ReferenceEntry>, StoreError> {
        if self.entries.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        let q = lm.embed(query)?;
        let mut scored: Vec<(f32, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine(&q, &e.embedding), i))
            .collect();
        // stable sort keeps entry order among equal scores
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(_, i)| &self.entries[i])
            .collect())
    }
}

fn entry(
    r: &Registry,
    lm: &dyn LmBackend,
    name: &str,
    task: &str,
    program: &str,
    cached: Option<Vec<f32>>,
) -> Result<ReferenceEntry, StoreError> {
    let parsed = parse(program, SyntaxStyle::Declarative);
    let invalid = |diagnostics| StoreError::InvalidReference {
        name: name.to_string(),
        diagnostics,
    };
    let workflow = parsed
        .workflow
        .ok_or_else(|| invalid(parsed.diagnostics.clone()))?;
    let mut diags = parsed.diagnostics;
    diags.extend(check(&workflow, r));
    if !is_executable(&diags) {
        return Err(invalid(diags));
    }
    let task = task.trim().to_string();
    let embedding = match cached {
        Some(v) => v,
        None => lm.embed(&task)?,
    };
    Ok(ReferenceEntry {
        name: name.to_string(),
        task,
        workflow,
        embedding,
    })
}

pub fn encode_embedding(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Trailing bytes that do not fill a whole `f32` are ignored.
pub fn decode_embedding(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
