//! Write-ahead journal of session ops.
//!
//! Every op that changes a session is appended here before the caller is
//! acknowledged. The batch writer later commits the op and its outputs to
//! the store; ops past the store's committed sequence are replayed on open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use srl_core::{Millis, RawTraceEvent, ScaffoldRequest};

/// A replayable change to one session. Applying the same ops in the same
/// order to a fresh session rebuilds the same state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Accepted events of one client batch.
    Ingest {
        client_sequence: u64,
        events: Vec<RawTraceEvent>,
    },
    Scaffold {
        request: ScaffoldRequest,
    },
    Interact {
        event: RawTraceEvent,
    },
    /// Events restored from an export; no scaffold bookkeeping.
    Import {
        events: Vec<RawTraceEvent>,
    },
    Finish {
        end: Option<Millis>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    pub session_id: String,
    pub user_id: String,
    pub op: Op,
}

pub struct Journal {
    path: PathBuf,
    file: File,
    fsync: bool,
    last_seq: u64,
    syncer: Arc<Syncer>,
}

/// Group commit: appends happen under the caller's lock, the fsync outside
/// it. One `sync_data` covers every entry written before it started.
pub struct Syncer {
    file: Option<File>,
    written: AtomicU64,
    state: Mutex<SyncState>,
    done: Condvar,
}

#[derive(Default)]
struct SyncState {
    synced: u64,
    running: bool,
}

impl Syncer {
    /// Returns once the entry with sequence `seq` is on disk.
    pub fn wait(&self, seq: u64) -> Result<()> {
        let Some(file) = &self.file else {
            return Ok(());
        };
        let mut state = self.state.lock().unwrap();
        loop {
            if state.synced >= seq {
                return Ok(());
            }
            if state.running {
                state = self.done.wait(state).unwrap();
                continue;
            }
            state.running = true;
            drop(state);
            let target = self.written.load(Ordering::SeqCst);
            let result = file.sync_data();
            state = self.state.lock().unwrap();
            state.running = false;
            if result.is_ok() {
                state.synced = state.synced.max(target);
            }
            self.done.notify_all();
            result.context("syncing journal")?;
        }
    }
}

impl Journal {
    /// Opens or creates the journal and returns the entries it holds. A torn
    /// final line from an interrupted write is dropped.
    pub fn open(path: &Path, fsync: bool) -> Result<(Journal, Vec<Entry>)> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening journal {}", path.display()))?;
        let mut entries = Vec::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => entries.push(e),
                    Err(_) => break,
                }
                good_len += n as u64;
            }
        }
        if file.metadata()?.len() != good_len {
            log::warn!("journal {}: dropping torn tail after byte {good_len}", path.display());
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        let last_seq = entries.last().map_or(0, |e| e.seq);
        let syncer = Arc::new(Syncer {
            file: if fsync { Some(file.try_clone()?) } else { None },
            written: AtomicU64::new(last_seq),
            state: Mutex::new(SyncState::default()),
            done: Condvar::new(),
        });
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
                fsync,
                last_seq,
                syncer,
            },
            entries,
        ))
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn syncer(&self) -> Arc<Syncer> {
        self.syncer.clone()
    }

    /// Writes one entry. It is durable once [`Syncer::wait`] returns for its
    /// sequence number.
    pub fn append(&mut self, entry: &Entry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.last_seq = entry.seq;
        self.syncer.written.fetch_max(entry.seq, Ordering::SeqCst);
        Ok(())
    }

    /// Empties the journal once the store holds everything in it.
    pub fn compact(&mut self, committed: u64) -> Result<bool> {
        if committed < self.last_seq {
            return Ok(false);
        }
        self.file
            .set_len(0)
            .with_context(|| format!("truncating {}", self.path.display()))?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(true)
    }
}
