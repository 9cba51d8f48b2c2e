//! One directory per workflow: `rev-NNNNNN.json` per revision plus
//! `index.json`. Every file is written to a temporary name and renamed into
//! place, revision first and index second, so a crash leaves either the old
//! or the new revision fully visible.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use craftflow_core::notation::{parse_value, to_value};
use craftflow_core::Workflow;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown workflow `{0}`")]
    UnknownId(String),
    #[error("unknown revision {rev} of `{id}`")]
    UnknownRevision { id: String, rev: u64 },
    #[error("edit token missing or wrong")]
    BadToken,
    #[error("edit based on revision {base} but latest is {latest}")]
    Conflict { base: u64, latest: u64 },
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RevisionMeta {
    pub rev: u64,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Revision {
    pub meta: RevisionMeta,
    pub workflow: Workflow,
}

/// Returned once, on creation. The token is not stored, only its hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Created {
    pub id: String,
    pub edit_token: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    id: String,
    token_sha256: String,
    latest: u64,
    created_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct RevisionFile {
    rev: u64,
    author: String,
    created_at: DateTime<Utc>,
    workflow: serde_json::Value,
}

pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

/// Ids we hand out: lowercase hex with a prefix. Anything else is refused
/// before it can reach the filesystem.
fn plausible_id(id: &str) -> bool {
    id.strip_prefix("wf-")
        .is_some_and(|h| !h.is_empty() && h.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()))
}

fn rev_name(rev: u64) -> String {
    format!("rev-{rev:06}.json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // make the rename itself durable where the platform allows it
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

impl Store {
    /// Opens or creates a store and finishes any interrupted writes.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let store = Store { root, locks: Mutex::new(HashMap::new()) };
        for entry in fs::read_dir(&store.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() && plausible_id(&name) {
                store.recover(&name)?;
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.root.join(id);
        if plausible_id(id) && dir.join("index.json").is_file() {
            Ok(dir)
        } else {
            Err(StoreError::UnknownId(id.to_owned()))
        }
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table").entry(id.to_owned()).or_default().clone()
    }

    fn read_index(&self, dir: &Path) -> Result<Index, StoreError> {
        let bytes = fs::read(dir.join("index.json"))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("{}: {e}", dir.display())))
    }

    fn read_revision(dir: &Path, rev: u64) -> Result<Revision, StoreError> {
        let path = dir.join(rev_name(rev));
        let bytes = fs::read(&path)?;
        let file: RevisionFile =
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?;
        let workflow = parse_value(&file.workflow).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?;
        if file.rev != rev {
            return Err(StoreError::Corrupt(format!("{} claims rev {}", path.display(), file.rev)));
        }
        Ok(Revision { meta: RevisionMeta { rev, author: file.author, created_at: file.created_at }, workflow })
    }

    fn write_revision(dir: &Path, rev: u64, author: &str, w: &Workflow) -> Result<RevisionMeta, StoreError> {
        let meta = RevisionMeta { rev, author: author.to_owned(), created_at: Utc::now() };
        let file = RevisionFile { rev, author: meta.author.clone(), created_at: meta.created_at, workflow: to_value(w) };
        write_atomic(&dir.join(rev_name(rev)), &serde_json::to_vec_pretty(&file).expect("serializable"))?;
        Ok(meta)
    }

    fn write_index(dir: &Path, index: &Index) -> Result<(), StoreError> {
        write_atomic(&dir.join("index.json"), &serde_json::to_vec_pretty(index).expect("serializable"))?;
        Ok(())
    }

    /// Drops temporary files, rolls the index forward over complete
    /// revisions written after it, and discards anything unreadable past
    /// that point. A directory whose index was never written belongs to a
    /// create that was never acknowledged and is removed.
    fn recover(&self, id: &str) -> Result<(), StoreError> {
        let dir = self.root.join(id);
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.to_string_lossy().ends_with(".tmp") {
                fs::remove_file(&path)?;
            }
        }
        if !dir.join("index.json").is_file() {
            fs::remove_dir_all(&dir)?;
            return Ok(());
        }
        let mut index = self.read_index(&dir)?;
        let start = index.latest;
        while dir.join(rev_name(index.latest + 1)).is_file() {
            match Self::read_revision(&dir, index.latest + 1) {
                Ok(_) => index.latest += 1,
                Err(_) => break,
            }
        }
        // anything beyond the last good revision is a torn write
        let mut stray = index.latest + 1;
        while dir.join(rev_name(stray)).is_file() {
            fs::remove_file(dir.join(rev_name(stray)))?;
            stray += 1;
        }
        if index.latest != start {
            Self::write_index(&dir, &index)?;
        }
        Ok(())
    }

    pub fn create(&self, w: &Workflow, author: &str) -> Result<Created, StoreError> {
        let (id, dir) = loop {
            let id = format!("wf-{}", random_hex(8));
            let dir = self.root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        };
        let edit_token = random_hex(24);
        let meta = Self::write_revision(&dir, 1, author, w)?;
        let index = Index { id: id.clone(), token_sha256: token_hash(&edit_token), latest: 1, created_at: meta.created_at };
        Self::write_index(&dir, &index)?;
        Ok(Created { id, edit_token })
    }

    pub fn latest(&self, id: &str) -> Result<u64, StoreError> {
        Ok(self.read_index(&self.dir(id)?)?.latest)
    }

    /// The given revision, or the latest one.
    pub fn get(&self, id: &str, rev: Option<u64>) -> Result<Revision, StoreError> {
        let dir = self.dir(id)?;
        let latest = self.read_index(&dir)?.latest;
        let rev = rev.unwrap_or(latest);
        if rev == 0 || rev > latest {
            return Err(StoreError::UnknownRevision { id: id.to_owned(), rev });
        }
        Self::read_revision(&dir, rev)
    }

    pub fn history(&self, id: &str) -> Result<Vec<RevisionMeta>, StoreError> {
        let dir = self.dir(id)?;
        let latest = self.read_index(&dir)?.latest;
        (1..=latest).map(|rev| Ok(Self::read_revision(&dir, rev)?.meta)).collect()
    }

    pub fn check_token(&self, id: &str, token: Option<&str>) -> Result<(), StoreError> {
        let index = self.read_index(&self.dir(id)?)?;
        match token {
            Some(t) if token_hash(t) == index.token_sha256 => Ok(()),
            _ => Err(StoreError::BadToken),
        }
    }

    /// Appends `w` as the next revision. With `base` set, refuses if
    /// someone else saved in the meantime.
    pub fn update(&self, id: &str, token: Option<&str>, w: &Workflow, author: &str, base: Option<u64>) -> Result<u64, StoreError> {
        let dir = self.dir(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().expect("writer lock");
        self.check_token(id, token)?;
        let mut index = self.read_index(&dir)?;
        if let Some(base) = base {
            if base != index.latest {
                return Err(StoreError::Conflict { base, latest: index.latest });
            }
        }
        let rev = index.latest + 1;
        Self::write_revision(&dir, rev, author, w)?;
        index.latest = rev;
        Self::write_index(&dir, &index)?;
        Ok(rev)
    }
}
