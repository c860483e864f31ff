//! A certificate authority kept in a directory: `authority.json` for the
//! state, `keys/` for the root and intermediary keys, `root.pem` for relying
//! parties.

use std::path::{Path, PathBuf};

use offgrid_core::identity::{armor, ArmorKind, Authority, AuthorityState, FileStore, IdentityError, RevocationList};

pub const STATE_FILE: &str = "authority.json";
pub const ROOT_FILE: &str = "root.pem";
pub const CRL_FILE: &str = "crl.pem";

pub struct AuthorityHost {
    dir: PathBuf,
    authority: Authority,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> IdentityError {
    IdentityError::Store(format!("{}: {e}", path.display()))
}

impl AuthorityHost {
    /// Creates a fresh authority. Refuses to overwrite an existing one.
    pub fn init(dir: &Path, name: &str, now_s: i64) -> Result<Self, IdentityError> {
        if dir.join(STATE_FILE).exists() {
            return Err(IdentityError::State(format!(
                "{} already holds an authority",
                dir.display()
            )));
        }
        let store = FileStore::open(dir.join("keys"))?;
        let authority = Authority::bootstrap(name, Box::new(store), now_s, &mut rand::rngs::OsRng)?;
        let host = Self {
            dir: dir.to_path_buf(),
            authority,
        };
        host.save()?;
        std::fs::write(
            dir.join(ROOT_FILE),
            armor(ArmorKind::Certificate, &host.authority.root().encode()),
        )
        .map_err(|e| store_err(dir, e))?;
        Ok(host)
    }

    pub fn open(dir: &Path) -> Result<Self, IdentityError> {
        let path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| store_err(&path, e))?;
        let state: AuthorityState = serde_json::from_str(&text).map_err(|e| store_err(&path, e))?;
        let store = FileStore::open(dir.join("keys"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            authority: Authority::open(state, Box::new(store))?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn authority(&self) -> &Authority {
        &self.authority
    }

    pub fn authority_mut(&mut self) -> &mut Authority {
        &mut self.authority
    }

    pub fn crl(&self) -> &RevocationList {
        self.authority.crl()
    }

    /// Writes the state and the armored CRL.
    pub fn save(&self) -> Result<(), IdentityError> {
        let path = self.dir.join(STATE_FILE);
        let json = serde_json::to_vec_pretty(self.authority.state()).map_err(|e| store_err(&path, e))?;
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        std::fs::write(&tmp, json).map_err(|e| store_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| store_err(&path, e))?;
        let crl = self.dir.join(CRL_FILE);
        std::fs::write(&crl, armor(ArmorKind::RevocationList, &self.authority.crl().encode()))
            .map_err(|e| store_err(&crl, e))
    }
}
