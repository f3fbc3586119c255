//! Content-addressed artifact store on the local filesystem.
//!
//! Objects live at `objects/<hex[..2]>/<hex>` where `hex` is the SHA-256 of
//! the bytes. Objects are written once through a temporary file and an
//! atomic no-clobber rename, and every read re-checks the hash. Small
//! mutable pointers (cache entries, session manifests) live under `index/`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact {0} not found")]
    NotFound(ArtifactRef),
    #[error("artifact {reference} is corrupt: content hashes to {actual}")]
    Corrupt { reference: ArtifactRef, actual: String },
    #[error("invalid artifact reference {0:?}")]
    BadRef(String),
    #[error("invalid index key {0:?}")]
    BadKey(String),
    #[error("artifact {reference} is not valid JSON: {message}")]
    Json { reference: ArtifactRef, message: String },
    #[error("store I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Lower-case hex SHA-256 of an artifact's bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArtifactRef(String);

impl ArtifactRef {
    pub fn of(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for ArtifactRef {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(Self(s.to_string()))
        } else {
            Err(StoreError::BadRef(s.to_string()))
        }
    }
}

impl TryFrom<String> for ArtifactRef {
    type Error = StoreError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ArtifactRef> for String {
    fn from(r: ArtifactRef) -> Self {
        r.0
    }
}

impl fmt::Display for ArtifactRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["objects", "index", "tmp"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, reference: &ArtifactRef) -> PathBuf {
        let hex = reference.as_str();
        self.root.join("objects").join(&hex[..2]).join(hex)
    }

    pub fn contains(&self, reference: &ArtifactRef) -> bool {
        self.object_path(reference).is_file()
    }

    // Writes through a temp file in the store and renames into place.
    // `clobber` selects replace-on-rename for mutable index entries.
    fn write_atomic(&self, path: &Path, bytes: &[u8], clobber: bool) -> Result<(), StoreError> {
        let parent = path.parent().expect("store paths have a parent");
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        let tmp_dir = self.root.join("tmp");
        let mut tmp = tempfile::NamedTempFile::new_in(&tmp_dir).map_err(io_err(&tmp_dir))?;
        tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(path))?;
        if clobber {
            tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
            return Ok(());
        }
        match tmp.persist_noclobber(path) {
            Ok(_) => Ok(()),
            // a concurrent writer stored the same content first
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(io_err(path)(e.error)),
        }
    }

    /// Stores `bytes` and returns their reference. Existing objects are left
    /// untouched.
    pub fn put(&self, bytes: &[u8]) -> Result<ArtifactRef, StoreError> {
        let reference = ArtifactRef::of(bytes);
        let path = self.object_path(&reference);
        if !path.is_file() {
            self.write_atomic(&path, bytes, false)?;
        }
        Ok(reference)
    }

    /// Reads an object and verifies its hash.
    pub fn get(&self, reference: &ArtifactRef) -> Result<Vec<u8>, StoreError> {
        let path = self.object_path(reference);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(reference.clone())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let actual = ArtifactRef::of(&bytes);
        if &actual != reference {
            return Err(StoreError::Corrupt {
                reference: reference.clone(),
                actual: actual.0,
            });
        }
        Ok(bytes)
    }

    pub fn put_json<T: Serialize>(&self, value: &T) -> Result<ArtifactRef, StoreError> {
        self.put(&serde_json::to_vec_pretty(value).expect("artifact types serialize"))
    }

    pub fn get_json<T: DeserializeOwned>(&self, reference: &ArtifactRef) -> Result<T, StoreError> {
        let bytes = self.get(reference)?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Json {
            reference: reference.clone(),
            message: e.to_string(),
        })
    }

    fn index_path(&self, namespace: &str, key: &str) -> Result<PathBuf, StoreError> {
        let ok = |s: &str| !s.is_empty() && s.len() <= 128 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if !ok(namespace) || !ok(key) {
            return Err(StoreError::BadKey(format!("{namespace}/{key}")));
        }
        Ok(self.root.join("index").join(namespace).join(key))
    }

    /// Points `namespace/key` at `reference`, replacing any previous target.
    pub fn set_pointer(&self, namespace: &str, key: &str, reference: &ArtifactRef) -> Result<(), StoreError> {
        self.write_atomic(&self.index_path(namespace, key)?, reference.as_str().as_bytes(), true)
    }

    /// The reference `namespace/key` points at, if any. Pointers whose
    /// target is missing read as absent.
    pub fn pointer(&self, namespace: &str, key: &str) -> Result<Option<ArtifactRef>, StoreError> {
        let path = self.index_path(namespace, key)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let reference: ArtifactRef = text.trim().parse()?;
        Ok(self.contains(&reference).then_some(reference))
    }
}

/// Stable key for a serializable value: hex SHA-256 of its JSON.
pub fn key_of<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("keys serialize")))
}
