use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use tempfile::NamedTempFile;

/// Result of a successful subcommand: files to write plus the stdout summary.
#[derive(Default)]
pub struct Outcome {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: Map<String, Value>,
    /// Names of acceptance checks that did not hold.
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn file(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.artifacts.push((name.into(), bytes.into()));
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }
}

/// Writes every artifact to a temporary file in `dir` first and renames them
/// into place only once all writes succeeded.
pub fn commit(dir: &Path, artifacts: &[(String, Vec<u8>)]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(artifacts.len());
    for (name, bytes) in artifacts {
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| e.error)?;
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        let files = vec![("a.txt".to_string(), b"1".to_vec()), ("b.txt".to_string(), b"2".to_vec())];
        let written = commit(&out, &files).unwrap();
        assert_eq!(written.len(), 2);
        assert_eq!(std::fs::read(out.join("b.txt")).unwrap(), b"2");
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2, "no temporaries left behind");
    }
}
