//! Artifact files: provenance headers and all-or-nothing writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use infogap_core::provenance::{csv_header_line, TOOL_NAME, TOOL_VERSION};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    /// CSV body preceded by the provenance comment line.
    pub fn csv(name: &str, hash: &str, body: &str) -> Self {
        Self {
            name: name.to_string(),
            contents: format!("{}\n{body}", csv_header_line(hash)),
        }
    }

    /// Single-line JSON object whose leading keys carry the provenance.
    pub fn json<T: Serialize>(name: &str, hash: &str, body: &T) -> Result<Self, CliError> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            tool: &'static str,
            version: &'static str,
            config_hash: &'a str,
            body: &'a T,
        }
        let text = serde_json::to_string(&Envelope {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            config_hash: hash,
            body,
        })
        .map_err(|e| CliError::runtime(format!("cannot serialize {name}: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            contents: text + "\n",
        })
    }
}

/// Refuse when any of `names` already exists in `dir` and `force` is off.
pub fn check_clobber(dir: &Path, names: &[&str], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = names
        .iter()
        .map(|n| dir.join(n))
        .filter(|p| p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "refusing to overwrite existing outputs (use --force): {}",
            existing.join(", ")
        )))
    }
}

/// Write every artifact into `dir`, creating it if needed. Without `force`,
/// nothing is written when any target already exists. Each file goes to a
/// temporary sibling first and is renamed into place.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact], force: bool) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    let names: Vec<&str> = artifacts.iter().map(|a| a.name.as_str()).collect();
    check_clobber(dir, &names, force)?;
    let targets: Vec<PathBuf> = artifacts.iter().map(|a| dir.join(&a.name)).collect();
    for (a, target) in artifacts.iter().zip(&targets) {
        let tmp = dir.join(format!(".{}.tmp-{}", a.name, std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(a.contents.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, target)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::runtime(format!("cannot write {}: {e}", target.display())));
        }
    }
    Ok(targets)
}

/// Parse `# infogap <version> config=<hash>` into `(version, hash)`.
pub fn parse_csv_header(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("# ")?.strip_prefix(TOOL_NAME)?.trim_start();
    let (version, hash) = rest.split_once(' ')?;
    Some((version.to_string(), hash.strip_prefix("config=")?.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let a = Artifact::csv("x.csv", "abcd", "a,b\n1,2\n");
        let first = a.contents.lines().next().unwrap();
        assert_eq!(
            parse_csv_header(first),
            Some((TOOL_VERSION.to_string(), "abcd".to_string()))
        );
    }

    #[test]
    fn json_starts_with_provenance() {
        let a = Artifact::json("x.json", "ff", &vec![1, 2]).unwrap();
        assert!(a.contents.starts_with("{\"tool\":\"infogap\",\"version\":"));
        assert_eq!(a.contents.lines().count(), 1);
    }

    #[test]
    fn refuses_to_clobber() {
        let dir = tempfile::tempdir().unwrap();
        let a = vec![Artifact::csv("x.csv", "h", "1\n")];
        write_artifacts(dir.path(), &a, false).unwrap();
        let err = write_artifacts(dir.path(), &a, false).unwrap_err();
        assert_eq!(err.code, 2);
        write_artifacts(dir.path(), &a, true).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
