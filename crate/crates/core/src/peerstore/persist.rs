use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{JournalEntry, PeerRecord, SnapshotRecord, StoreError, StoreState, TorrentRegistry};

pub const REGISTRY_FILE: &str = "registry.toml";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Journal growth after which ingest writes a checkpoint on its own.
const AUTO_CHECKPOINT_BYTES: u64 = 64 << 20;

#[derive(Serialize)]
struct CheckpointOut<'a> {
    journal_offset: u64,
    peers: Vec<&'a PeerRecord>,
    snapshots: &'a [SnapshotRecord],
    ledger: Vec<&'a String>,
}

#[derive(Deserialize)]
struct CheckpointIn {
    journal_offset: u64,
    peers: Vec<PeerRecord>,
    snapshots: Vec<SnapshotRecord>,
    ledger: Vec<String>,
}

pub(crate) struct Persistence {
    dir: PathBuf,
    journal: File,
    journal_len: u64,
    checkpointed_at: u64,
}

impl Persistence {
    pub fn exists(dir: &Path) -> bool {
        dir.join(REGISTRY_FILE).is_file()
    }

    pub fn create(dir: &Path, registry: &TorrentRegistry) -> Result<Self, StoreError> {
        if Self::exists(dir) {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        fs::create_dir_all(dir)?;
        registry.save(dir.join(REGISTRY_FILE))?;
        let journal = OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .open(dir.join(JOURNAL_FILE))?;
        let _ = fs::remove_file(dir.join(CHECKPOINT_FILE));
        Ok(Persistence {
            dir: dir.to_path_buf(),
            journal,
            journal_len: 0,
            checkpointed_at: 0,
        })
    }

    /// Loads the registry and checkpoint, and returns the journal entries
    /// written after the checkpoint.
    pub fn open(dir: &Path) -> Result<(Self, TorrentRegistry, StoreState, Vec<JournalEntry>), StoreError> {
        if !Self::exists(dir) {
            return Err(StoreError::NotAStore(dir.to_path_buf()));
        }
        let registry = TorrentRegistry::load(dir.join(REGISTRY_FILE))?;

        let (offset, state) = match fs::read(dir.join(CHECKPOINT_FILE)) {
            Ok(bytes) => {
                let cp: CheckpointIn = serde_json::from_slice(&bytes)
                    .map_err(|e| StoreError::Corrupt(format!("{CHECKPOINT_FILE}: {e}")))?;
                let state = StoreState {
                    peers: cp.peers.into_iter().map(|p| (u32::from(p.ip), p)).collect(),
                    snapshots: cp.snapshots,
                    ledger: cp.ledger.into_iter().collect(),
                };
                (cp.journal_offset, state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, StoreState::default()),
            Err(e) => return Err(e.into()),
        };

        let journal_path = dir.join(JOURNAL_FILE);
        let bytes = match fs::read(&journal_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if (bytes.len() as u64) < offset {
            return Err(StoreError::Corrupt(format!(
                "{JOURNAL_FILE} is shorter than the checkpoint offset {offset}"
            )));
        }
        let mut pending = Vec::new();
        let mut pos = offset as usize;
        while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
            let line = &bytes[pos..pos + nl];
            if !line.iter().all(u8::is_ascii_whitespace) {
                let entry: JournalEntry = serde_json::from_slice(line)
                    .map_err(|e| StoreError::Corrupt(format!("{JOURNAL_FILE} at byte {pos}: {e}")))?;
                pending.push(entry);
            }
            pos += nl + 1;
        }
        let journal = OpenOptions::new().create(true).append(true).open(&journal_path)?;
        if pos < bytes.len() {
            log::warn!(
                "discarding {} bytes of torn journal tail in {}",
                bytes.len() - pos,
                journal_path.display()
            );
            journal.set_len(pos as u64)?;
        }
        Ok((
            Persistence {
                dir: dir.to_path_buf(),
                journal,
                journal_len: pos as u64,
                checkpointed_at: offset,
            },
            registry,
            state,
            pending,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn save_registry(&self, registry: &TorrentRegistry) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!("{REGISTRY_FILE}.tmp"));
        registry.save(&tmp)?;
        fs::rename(tmp, self.dir.join(REGISTRY_FILE))?;
        Ok(())
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.journal.write_all(&line)?;
        self.journal.flush()?;
        self.journal_len += line.len() as u64;
        Ok(())
    }

    pub fn wants_checkpoint(&self) -> bool {
        self.journal_len - self.checkpointed_at >= AUTO_CHECKPOINT_BYTES
    }

    pub fn checkpoint(&mut self, state: &StoreState) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        {
            let file = File::create(&tmp)?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer(
                &mut w,
                &CheckpointOut {
                    journal_offset: self.journal_len,
                    peers: state.peers.values().collect(),
                    snapshots: &state.snapshots,
                    ledger: state.ledger.iter().collect(),
                },
            )?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(CHECKPOINT_FILE))?;
        self.checkpointed_at = self.journal_len;
        Ok(())
    }
}
