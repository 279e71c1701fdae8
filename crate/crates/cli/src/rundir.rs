use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "MANIFEST.sha256";

/// Output directory whose manifest lists every artifact with its SHA-256,
/// in `sha256sum` format.
pub struct RunDir {
    root: PathBuf,
    entries: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    /// Creates the directory; an existing manifest is extended.
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        let mut entries = BTreeMap::new();
        match fs::read_to_string(root.join(MANIFEST)) {
            Ok(text) => {
                for line in text.lines() {
                    if let Some((hash, name)) = line.split_once("  ") {
                        entries.insert(name.to_string(), hash.to_string());
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(RunDir { root: root.to_path_buf(), entries })
    }

    /// Writes an artifact and records it; the manifest is rewritten each
    /// time so partial runs stay consistent.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.entries.insert(name.to_string(), sha256_hex(bytes));
        self.flush()?;
        Ok(path)
    }

    fn flush(&self) -> io::Result<()> {
        let text: String = self.entries.iter().map(|(name, hash)| format!("{hash}  {name}\n")).collect();
        fs::write(self.root.join(MANIFEST), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_tracks_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path()).unwrap();
        run.write("b/x.txt", b"abc").unwrap();
        run.write("a.txt", b"").unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(
            text,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855  a.txt\n\
             ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad  b/x.txt\n"
        );
        let mut again = RunDir::open(dir.path()).unwrap();
        again.write("c.txt", b"abc").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(MANIFEST)).unwrap().lines().count(), 3);
    }
}
