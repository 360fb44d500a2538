use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{ProviderError, Transcript};

/// Directory of `{key}.json` transcripts. Reads are lock-free; writes go
/// through one mutex and land via rename so readers never see partial files.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    dir: PathBuf,
    writer: Arc<Mutex<()>>,
}

impl ReplayStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(ReplayStore {
            dir,
            writer: Arc::new(Mutex::new(())),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Transcript>, ProviderError> {
        let path = self.path_for(key);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let t: Transcript = serde_json::from_slice(&raw).map_err(|e| ProviderError::CorruptTranscript {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if t.key != key {
            return Err(ProviderError::CorruptTranscript {
                path: path.display().to_string(),
                message: format!("stored key {} does not match file name", t.key),
            });
        }
        Ok(Some(t))
    }

    pub fn put(&self, transcript: &Transcript) -> Result<(), ProviderError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let path = self.path_for(&transcript.key);
        let tmp = self.dir.join(format!(".{}.tmp", transcript.key));
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, transcript).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn keys(&self) -> Result<Vec<String>, ProviderError> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(k) = name.strip_suffix(".json") {
                if !k.starts_with('.') {
                    keys.push(k.to_string());
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}
