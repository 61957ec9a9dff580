//! Output directory handling and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Prints a line to stdout. A closed pipe (`scr … | head`) is not an error.
pub fn say(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file named in the manifest, identified by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

impl FileEntry {
    pub fn new(name: impl Into<String>, content: &[u8]) -> Self {
        FileEntry { name: name.into(), sha256: sha256_hex(content), bytes: content.len() }
    }
}

/// An input file read fully into memory so that parsing and hashing see the
/// same bytes.
pub struct Input {
    pub entry: FileEntry,
    pub content: Vec<u8>,
}

pub fn read_input(path: &Path) -> CliResult<Input> {
    let content = fs::read(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    // Only the file name is recorded so reports do not depend on where the
    // data happened to live.
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
    Ok(Input { entry: FileEntry::new(name, &content), content })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a serde_json::Value,
    inputs: &'a [FileEntry],
    outputs: &'a [FileEntry],
}

/// Collects the files of one run under `--out DIR`.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn bytes(&mut self, name: &str, content: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|source| CliError::Write { path, source })?;
        log::info!("wrote {name} ({} bytes)", content.len());
        self.files.push(FileEntry::new(name, content));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut buf = serde_json::to_vec_pretty(value).map_err(scr_core::Error::from)?;
        buf.push(b'\n');
        self.bytes(name, &buf)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        let mut buf = Vec::new();
        scr_core::io::write_rows(&mut buf, rows)?;
        self.bytes(name, &buf)
    }

    /// Writes `manifest.json`; it lists every other output but not itself.
    pub fn finish(mut self, command: &str, config: &serde_json::Value, inputs: &[FileEntry]) -> CliResult<Vec<FileEntry>> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest { tool: "scr", version: env!("CARGO_PKG_VERSION"), command, config, inputs, outputs: &files };
        self.json("manifest.json", &manifest)?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_string() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_lists_outputs_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(&dir.path().join("nested")).unwrap();
        out.bytes("a.txt", b"abc").unwrap();
        let files = out.finish("test", &serde_json::json!({"k": 1}), &[]).unwrap();
        assert_eq!(files.len(), 1);
        let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("nested/manifest.json")).unwrap()).unwrap();
        assert_eq!(m["command"], "test");
        assert_eq!(m["outputs"][0]["sha256"], sha256_hex(b"abc"));
        assert_eq!(m["config"]["k"], 1);
    }
}
