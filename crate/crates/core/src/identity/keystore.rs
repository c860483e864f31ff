//! Local storage for private keys. Keys are addressed by handle and never
//! leave the store except as a `SigningKey` held in memory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};

use super::{hex, unhex, IdentityError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyHandle(pub String);

impl KeyHandle {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for KeyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait SecureStore: Send {
    fn put(&mut self, handle: &KeyHandle, key: &SigningKey) -> Result<(), IdentityError>;
    fn get(&self, handle: &KeyHandle) -> Result<SigningKey, IdentityError>;
    fn contains(&self, handle: &KeyHandle) -> bool;
}

#[derive(Default)]
pub struct MemoryStore {
    keys: HashMap<KeyHandle, [u8; 32]>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SecureStore for MemoryStore {
    fn put(&mut self, handle: &KeyHandle, key: &SigningKey) -> Result<(), IdentityError> {
        self.keys.insert(handle.clone(), key.to_bytes());
        Ok(())
    }

    fn get(&self, handle: &KeyHandle) -> Result<SigningKey, IdentityError> {
        self.keys
            .get(handle)
            .map(SigningKey::from_bytes)
            .ok_or_else(|| IdentityError::NotFound(format!("key {handle}")))
    }

    fn contains(&self, handle: &KeyHandle) -> bool {
        self.keys.contains_key(handle)
    }
}

/// One hex file per key, created with mode 0600 on unix.
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| IdentityError::Store(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    fn path(&self, handle: &KeyHandle) -> Result<PathBuf, IdentityError> {
        let ok = !handle.0.is_empty()
            && handle
                .0
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(IdentityError::Store(format!("invalid key handle {:?}", handle.0)));
        }
        Ok(self.dir.join(format!("{}.key", handle.0)))
    }
}

impl SecureStore for FileStore {
    fn put(&mut self, handle: &KeyHandle, key: &SigningKey) -> Result<(), IdentityError> {
        let path = self.path(handle)?;
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let write = |opts: &fs::OpenOptions| -> std::io::Result<()> {
            use std::io::Write;
            let mut f = opts.open(&path)?;
            f.write_all(hex(&key.to_bytes()).as_bytes())?;
            f.sync_all()
        };
        write(&opts).map_err(|e| IdentityError::Store(format!("{}: {e}", path.display())))
    }

    fn get(&self, handle: &KeyHandle) -> Result<SigningKey, IdentityError> {
        let path = self.path(handle)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(IdentityError::NotFound(format!("key {handle}")))
            }
            Err(e) => return Err(IdentityError::Store(format!("{}: {e}", path.display()))),
        };
        let bytes: [u8; 32] = unhex(text.trim())?
            .try_into()
            .map_err(|_| IdentityError::Store(format!("{} is not a 32-byte key", path.display())))?;
        Ok(SigningKey::from_bytes(&bytes))
    }

    fn contains(&self, handle: &KeyHandle) -> bool {
        self.path(handle).map(|p| p.exists()).unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn memory_store_round_trip() {
        let key = SigningKey::generate(&mut ChaCha8Rng::seed_from_u64(1));
        let mut s = MemoryStore::new();
        let h = KeyHandle::new("me");
        assert!(!s.contains(&h));
        s.put(&h, &key).unwrap();
        assert_eq!(s.get(&h).unwrap().to_bytes(), key.to_bytes());
        assert!(matches!(s.get(&KeyHandle::new("x")), Err(IdentityError::NotFound(_))));
    }

    #[test]
    fn file_store_round_trip_and_permissions() {
        let dir = tempfile::tempdir().unwrap();
        let key = SigningKey::generate(&mut ChaCha8Rng::seed_from_u64(2));
        let mut s = FileStore::open(dir.path().join("keys")).unwrap();
        let h = KeyHandle::new("node-1");
        s.put(&h, &key).unwrap();
        assert!(s.contains(&h));
        assert_eq!(s.get(&h).unwrap().to_bytes(), key.to_bytes());
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(dir.path().join("keys/node-1.key"))
                .unwrap()
                .permissions()
                .mode();
            assert_eq!(mode & 0o777, 0o600);
        }
        assert!(s.put(&KeyHandle::new("../evil"), &key).is_err());
    }

    #[test]
    fn unusable_directory_is_a_store_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        assert!(matches!(
            FileStore::open(file.join("sub")),
            Err(IdentityError::Store(_))
        ));
    }
}
