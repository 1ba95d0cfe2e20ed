//! Atomic file output and per-item manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Writes `path` through a temporary file in the same directory, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// `out.json` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Clone, Debug, Serialize)]
pub struct ItemStatus {
    pub item: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ItemStatus {
    pub fn ok(item: impl Into<String>) -> Self {
        Self {
            item: item.into(),
            status: "ok",
            detail: None,
        }
    }

    pub fn with(item: impl Into<String>, status: &'static str, detail: impl ToString) -> Self {
        Self {
            item: item.into(),
            status,
            detail: Some(detail.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub output: PathBuf,
    pub items: Vec<ItemStatus>,
}

impl Manifest {
    pub fn new(command: &str, output: &Path) -> Self {
        Self {
            command: command.to_string(),
            output: output.to_path_buf(),
            items: Vec::new(),
        }
    }

    pub fn failures(&self) -> usize {
        self.items.iter().filter(|i| i.status != "ok").count()
    }

    /// Written next to the output as `<stem>.manifest.json`.
    pub fn write(&self) -> Result<PathBuf> {
        let path = sibling(&self.output, "manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("a/b.csv"), "meta.json"), Path::new("a/b.meta.json"));
        assert_eq!(sibling(Path::new("x"), "manifest.json"), Path::new("x.manifest.json"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, |w| w.write_all(b"one")).unwrap();
        write_atomic(&p, |w| w.write_all(b"two")).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
