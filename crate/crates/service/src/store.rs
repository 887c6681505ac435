//! Session persistence under a state directory: `<id>/session.json` holds the
//! prepared dataset and run configuration, `<id>/checkpoint.json` the latest
//! trainer checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use imboost::data::Dataset;
use imboost::pipeline::RunConfig;
use imboost::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SessionRecord {
    pub dataset: Dataset,
    pub config: RunConfig,
}

pub(crate) struct Restored {
    pub id: String,
    pub record: SessionRecord,
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> std::io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
        })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn checkpoint_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("checkpoint.json")
    }

    pub(crate) fn save_record(&self, id: &str, record: &SessionRecord) -> imboost::Result<()> {
        let dir = self.dir(id);
        fs::create_dir_all(&dir)?;
        let tmp = dir.join("session.json.tmp");
        fs::write(&tmp, serde_json::to_vec(record)?)?;
        fs::rename(tmp, dir.join("session.json"))?;
        Ok(())
    }

    /// Every session found on disk, in id order. Unreadable entries are skipped
    /// with a warning.
    pub(crate) fn restore_all(&self) -> imboost::Result<Vec<Restored>> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("session.json").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            match self.restore(&id) {
                Ok(r) => out.push(r),
                Err(e) => log::warn!("skipping stored session {id}: {e}"),
            }
        }
        Ok(out)
    }

    fn restore(&self, id: &str) -> imboost::Result<Restored> {
        let record: SessionRecord = serde_json::from_slice(&fs::read(self.dir(id).join("session.json"))?)?;
        let path = self.checkpoint_path(id);
        let checkpoint = if path.is_file() { Some(Checkpoint::load(path)?) } else { None };
        Ok(Restored {
            id: id.to_string(),
            record,
            checkpoint,
        })
    }
}
