//! The issuing side: root, the civil and official intermediaries, the queue
//! of signing requests and the revocation list.

use std::collections::BTreeMap;

use ed25519_dalek::SigningKey;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::cert::{
    hex, CertTemplate, Certificate, Fingerprint, RoleFlags, Subject, DEFAULT_VALIDITY_SECS, MAX_ZIPCODE_LEN,
};
use super::chain::CertChain;
use super::crl::RevocationList;
use super::request::{RequestStatus, SigningRequest};
use super::{IdentityError, KeyHandle, SecureStore};

pub const ROOT_SERIAL: u64 = 1;
pub const CIVIL_SERIAL: u64 = 2;
pub const OFFICIAL_SERIAL: u64 = 3;
pub const LEAF_SERIAL_BASE: u64 = 100;

const ROOT_HANDLE: &str = "root";
const CIVIL_HANDLE: &str = "civil-intermediary";
const OFFICIAL_HANDLE: &str = "official-intermediary";

/// Which intermediary signs a new leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lineage {
    #[default]
    Civil,
    Official,
}

/// What a relying party needs to verify chains: the root and the current CRL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trust {
    pub root: Certificate,
    pub crl: RevocationList,
}

impl Trust {
    pub fn new(root: Certificate) -> Self {
        Self {
            root,
            crl: RevocationList::empty(),
        }
    }
}

/// Issues a leaf for a pending request. `roles` always gains `authenticated`.
#[allow(clippy::too_many_arguments)]
pub fn approve(
    request: &mut SigningRequest,
    issuer: &Certificate,
    issuer_key: &SigningKey,
    serial: u64,
    roles: RoleFlags,
    zipcode_scope: Option<String>,
    now: i64,
    validity_secs: i64,
) -> Result<Certificate, IdentityError> {
    if !issuer
        .role_flags
        .intersects(RoleFlags::ADMINISTRATOR | RoleFlags::OFFICIAL_INTERMEDIARY)
        || issuer.has(RoleFlags::ROOT)
    {
        return Err(IdentityError::Unauthorized(format!(
            "certificate {} may not approve requests",
            issuer.serial
        )));
    }
    if issuer.public_key != issuer_key.verifying_key().to_bytes() {
        return Err(IdentityError::Unauthorized(
            "key does not match issuer certificate".into(),
        ));
    }
    if !request.is_pending() {
        return Err(IdentityError::State(format!(
            "request {} already decided",
            hex(&request.request_id)
        )));
    }
    request.verify_possession()?;
    let roles = roles | RoleFlags::AUTHENTICATED;
    if !roles.difference(RoleFlags::leaf_allowed()).is_empty() {
        return Err(IdentityError::Unauthorized(format!(
            "roles {:?} cannot be granted to a leaf",
            roles.names()
        )));
    }
    let zipcode_scope = zipcode_scope.map(|z| z.trim().to_string()).filter(|z| !z.is_empty());
    if zipcode_scope.as_ref().is_some_and(|z| z.len() > MAX_ZIPCODE_LEN) {
        return Err(IdentityError::Malformed(format!(
            "zipcode exceeds {MAX_ZIPCODE_LEN} bytes"
        )));
    }
    let cert = CertTemplate {
        serial,
        subject: request.subject.clone(),
        public_key: request.public_key,
        role_flags: roles,
        zipcode_scope,
        issuer_serial: issuer.serial,
        not_before: now,
        not_after: now + validity_secs,
    }
    .sign(issuer_key);
    cert.check_structure()?;
    request.status = RequestStatus::Approved { serial };
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityState {
    pub root: Certificate,
    pub civil: Certificate,
    pub official: Certificate,
    pub next_serial: u64,
    pub validity_secs: i64,
    /// Keyed by hex request id.
    pub requests: BTreeMap<String, SigningRequest>,
    pub issued: BTreeMap<u64, Certificate>,
    pub crl: RevocationList,
}

/// Single writer for issuance and revocation. Private keys stay in `store`.
pub struct Authority {
    state: AuthorityState,
    store: Box<dyn SecureStore>,
}

impl Authority {
    /// Creates the root, a civil intermediary with administrator authority
    /// and the official intermediary, storing their keys in `store`.
    pub fn bootstrap<R: RngCore + CryptoRng>(
        name: &str,
        mut store: Box<dyn SecureStore>,
        now: i64,
        rng: &mut R,
    ) -> Result<Self, IdentityError> {
        let root_key = SigningKey::generate(rng);
        let civil_key = SigningKey::generate(rng);
        let official_key = SigningKey::generate(rng);
        let long = 10 * DEFAULT_VALIDITY_SECS;
        let root = CertTemplate {
            serial: ROOT_SERIAL,
            subject: Subject::new(format!("{name} root"), "root"),
            public_key: root_key.verifying_key().to_bytes(),
            role_flags: RoleFlags::ROOT,
            zipcode_scope: None,
            issuer_serial: ROOT_SERIAL,
            not_before: now,
            not_after: now + long,
        }
        .sign(&root_key);
        let intermediary = |serial, label: &str, uid: &str, flags, key: &SigningKey| {
            CertTemplate {
                serial,
                subject: Subject::new(format!("{name} {label}"), uid),
                public_key: key.verifying_key().to_bytes(),
                role_flags: flags,
                zipcode_scope: None,
                issuer_serial: ROOT_SERIAL,
                not_before: now,
                not_after: now + long,
            }
            .sign(&root_key)
        };
        let civil = intermediary(
            CIVIL_SERIAL,
            "civil intermediary",
            "civil",
            RoleFlags::ADMINISTRATOR,
            &civil_key,
        );
        let official = intermediary(
            OFFICIAL_SERIAL,
            "official intermediary",
            "official",
            RoleFlags::OFFICIAL_INTERMEDIARY,
            &official_key,
        );
        store.put(&KeyHandle::new(ROOT_HANDLE), &root_key)?;
        store.put(&KeyHandle::new(CIVIL_HANDLE), &civil_key)?;
        store.put(&KeyHandle::new(OFFICIAL_HANDLE), &official_key)?;
        Ok(Self {
            state: AuthorityState {
                root,
                civil,
                official,
                next_serial: LEAF_SERIAL_BASE,
                validity_secs: DEFAULT_VALIDITY_SECS,
                requests: BTreeMap::new(),
                issued: BTreeMap::new(),
                crl: RevocationList::empty(),
            },
            store,
        })
    }

    pub fn open(state: AuthorityState, store: Box<dyn SecureStore>) -> Result<Self, IdentityError> {
        for h in [ROOT_HANDLE, CIVIL_HANDLE, OFFICIAL_HANDLE] {
            if !store.contains(&KeyHandle::new(h)) {
                return Err(IdentityError::Store(format!("authority key {h} missing")));
            }
        }
        Ok(Self { state, store })
    }

    pub fn state(&self) -> &AuthorityState {
        &self.state
    }

    pub fn root(&self) -> &Certificate {
        &self.state.root
    }

    pub fn civil(&self) -> &Certificate {
        &self.state.civil
    }

    pub fn official(&self) -> &Certificate {
        &self.state.official
    }

    pub fn crl(&self) -> &RevocationList {
        &self.state.crl
    }

    pub fn trust(&self) -> Trust {
        Trust {
            root: self.state.root.clone(),
            crl: self.state.crl.clone(),
        }
    }

    pub fn submit(&mut self, request: SigningRequest) -> Result<Fingerprint, IdentityError> {
        request.verify_possession()?;
        if !request.is_pending() {
            return Err(IdentityError::State("only pending requests can be submitted".into()));
        }
        let id = request.request_id;
        let key = hex(&id);
        if self.state.requests.contains_key(&key) {
            return Err(IdentityError::State(format!("request {key} already submitted")));
        }
        self.state.requests.insert(key, request);
        Ok(id)
    }

    pub fn request(&self, id: &str) -> Option<&SigningRequest> {
        self.state.requests.get(id)
    }

    pub fn pending(&self) -> Vec<&SigningRequest> {
        let mut v: Vec<_> = self.state.requests.values().filter(|r| r.is_pending()).collect();
        v.sort_by_key(|r| (r.submitted_at, r.request_id));
        v
    }

    pub fn approve(
        &mut self,
        request_id: &str,
        lineage: Lineage,
        roles: RoleFlags,
        zipcode_scope: Option<String>,
        now: i64,
    ) -> Result<Certificate, IdentityError> {
        let (issuer, handle) = match lineage {
            Lineage::Civil => (&self.state.civil, CIVIL_HANDLE),
            Lineage::Official => (&self.state.official, OFFICIAL_HANDLE),
        };
        let key = self.store.get(&KeyHandle::new(handle))?;
        let request = self
            .state
            .requests
            .get_mut(request_id)
            .ok_or_else(|| IdentityError::NotFound(format!("request {request_id}")))?;
        let serial = self.state.next_serial;
        let cert = approve(
            request,
            issuer,
            &key,
            serial,
            roles,
            zipcode_scope,
            now,
            self.state.validity_secs,
        )?;
        self.state.next_serial += 1;
        self.state.issued.insert(serial, cert.clone());
        Ok(cert)
    }

    pub fn reject(&mut self, request_id: &str, reason: &str) -> Result<(), IdentityError> {
        let request = self
            .state
            .requests
            .get_mut(request_id)
            .ok_or_else(|| IdentityError::NotFound(format!("request {request_id}")))?;
        if !request.is_pending() {
            return Err(IdentityError::State(format!("request {request_id} already decided")));
        }
        request.status = RequestStatus::Rejected {
            reason: reason.to_string(),
        };
        Ok(())
    }

    /// Revokes a leaf or an intermediary. The list is re-signed by the root.
    pub fn revoke(&mut self, serial: u64, reason: &str, now: i64) -> Result<&RevocationList, IdentityError> {
        let known = self.state.issued.contains_key(&serial) || serial == CIVIL_SERIAL || serial == OFFICIAL_SERIAL;
        if !known {
            return Err(IdentityError::NotFound(format!("certificate {serial}")));
        }
        let key = self.store.get(&KeyHandle::new(ROOT_HANDLE))?;
        self.state.crl.revoke(serial, reason, now, &self.state.root, &key)?;
        Ok(&self.state.crl)
    }

    pub fn issued(&self, serial: u64) -> Option<&Certificate> {
        self.state.issued.get(&serial)
    }

    pub fn chain_for(&self, serial: u64) -> Result<CertChain, IdentityError> {
        let leaf = self
            .issued(serial)
            .ok_or_else(|| IdentityError::NotFound(format!("certificate {serial}")))?;
        let intermediary = match leaf.issuer_serial {
            CIVIL_SERIAL => &self.state.civil,
            OFFICIAL_SERIAL => &self.state.official,
            other => return Err(IdentityError::NotFound(format!("intermediary {other}"))),
        };
        Ok(CertChain {
            leaf: leaf.clone(),
            intermediary: intermediary.clone(),
            root: self.state.root.clone(),
        })
    }
}
