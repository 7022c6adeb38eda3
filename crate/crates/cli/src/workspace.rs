use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use focus_core::pipeline::{ConfigError, PipelineConfig};

/// Directory tree every command writes into.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Creates the tree if needed. Safe to call repeatedly.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("creating workspace {}", root.display()))?;
        let root = root
            .canonicalize()
            .with_context(|| format!("resolving workspace {}", root.display()))?;
        let ws = Self { root };
        for dir in [
            ws.fixtures(),
            ws.results(),
            ws.attended(),
            ws.reports(),
            ws.images(),
            ws.runs(),
        ] {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fixtures(&self) -> PathBuf {
        self.root.join("fixtures")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn attended(&self) -> PathBuf {
        self.root.join("attended")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Resolves `path` against the root and refuses anything that would
    /// land outside it.
    pub fn confine(&self, path: &Path) -> Result<PathBuf> {
        let joined = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        };
        let mut out = PathBuf::new();
        for c in joined.components() {
            match c {
                Component::ParentDir => {
                    out.pop();
                }
                Component::CurDir => {}
                other => out.push(other),
            }
        }
        if !out.starts_with(&self.root) {
            bail!(
                "{} is outside the workspace {}",
                path.display(),
                self.root.display()
            );
        }
        Ok(out)
    }

    /// Relative form of a path under the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Writes a file under the root, creating parent directories.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let path = self.confine(path)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    /// Config from `explicit`, else `<root>/config.json`, else defaults with
    /// mock fixtures in `<root>/fixtures`.
    pub fn load_config(&self, explicit: Option<&Path>) -> Result<PipelineConfig, ConfigError> {
        if let Some(p) = explicit {
            return PipelineConfig::load(p);
        }
        let in_root = self.root.join("config.json");
        if in_root.is_file() {
            return PipelineConfig::load(&in_root);
        }
        let mut config = PipelineConfig::default();
        config.backends.resolve_paths(&self.root);
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let a = Workspace::open(&dir.path().join("ws")).unwrap();
        let b = Workspace::open(&dir.path().join("ws")).unwrap();
        assert_eq!(a.root(), b.root());
        for sub in [
            "fixtures", "results", "attended", "reports", "images", "runs",
        ] {
            assert!(a.root().join(sub).is_dir());
        }
    }

    #[test]
    fn confinement() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(
            ws.confine(Path::new("reports/x")).unwrap(),
            ws.root().join("reports/x")
        );
        assert_eq!(
            ws.confine(Path::new("a/../b")).unwrap(),
            ws.root().join("b")
        );
        assert!(ws.confine(Path::new("../escape")).is_err());
        assert!(ws.confine(Path::new("/etc/passwd")).is_err());
        assert!(ws.write(Path::new("../../canary"), b"x").is_err());
        assert_eq!(
            ws.relative(&ws.root().join("results/r.json")),
            "results/r.json"
        );
    }
}
