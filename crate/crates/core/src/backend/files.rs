//! On-disk form of keys and proofs.
//!
//! ```text
//! magic [u8; 4] | version u32 | backend u8 | build_hash [u8; 32]
//! payload_len u64 | payload
//! ```
//!
//! Proof files append `public_count u64 | (field [u8; 32])*` after the
//! payload. Magics: `ZKPK` prover key, `ZKVK` verifier key, `ZKPF` proof.

use thiserror::Error;

use super::{BackendId, ProofBundle, ProverKey, VerifierKey};
use crate::field::{FieldScalar, ENCODED_LEN};

const VERSION: u32 = 1;
const PK_MAGIC: [u8; 4] = *b"ZKPK";
const VK_MAGIC: [u8; 4] = *b"ZKVK";
const PROOF_MAGIC: [u8; 4] = *b"ZKPF";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FileError {
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown backend tag {0}")]
    UnknownBackend(u8),
    #[error("file is truncated")]
    Truncated,
    #[error("trailing bytes at end of file")]
    TrailingBytes,
    #[error("public input {0} is not a canonical field element")]
    BadField(usize),
}

struct Header {
    backend: BackendId,
    build_hash: [u8; 32],
    payload: Vec<u8>,
}

fn write_header(magic: [u8; 4], backend: BackendId, build_hash: &[u8; 32], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(49 + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(backend.tag());
    out.extend_from_slice(build_hash);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FileError> {
        if self.bytes.len() < n {
            return Err(FileError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, FileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, FileError> {
        // A length larger than the remaining input is truncation, not an
        // allocation request.
        let n = self.u64()?;
        if n > self.bytes.len() as u64 {
            return Err(FileError::Truncated);
        }
        Ok(n as usize)
    }

    fn header(&mut self, magic: [u8; 4], name: &'static str) -> Result<Header, FileError> {
        if self.take(4)? != magic {
            return Err(FileError::BadMagic { expected: name });
        }
        let version = u32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(FileError::UnsupportedVersion(version));
        }
        let tag = self.take(1)?[0];
        let backend = BackendId::from_tag(tag).ok_or(FileError::UnknownBackend(tag))?;
        let build_hash = self.take(32)?.try_into().unwrap();
        let n = self.len()?;
        let payload = self.take(n)?.to_vec();
        Ok(Header { backend, build_hash, payload })
    }

    fn finish(self) -> Result<(), FileError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(FileError::TrailingBytes)
        }
    }
}

impl ProverKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        write_header(PK_MAGIC, self.backend, &self.build_hash, &self.payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FileError> {
        let mut r = Reader { bytes };
        let h = r.header(PK_MAGIC, "prover key")?;
        r.finish()?;
        Ok(Self { backend: h.backend, build_hash: h.build_hash, payload: h.payload })
    }
}

impl VerifierKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        write_header(VK_MAGIC, self.backend, &self.build_hash, &self.payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FileError> {
        let mut r = Reader { bytes };
        let h = r.header(VK_MAGIC, "verifier key")?;
        r.finish()?;
        Ok(Self { backend: h.backend, build_hash: h.build_hash, payload: h.payload })
    }
}

impl ProofBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = write_header(PROOF_MAGIC, self.backend, &self.build_hash, &self.proof);
        out.extend_from_slice(&(self.public_inputs.len() as u64).to_le_bytes());
        for x in &self.public_inputs {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FileError> {
        let mut r = Reader { bytes };
        let h = r.header(PROOF_MAGIC, "proof")?;
        let count = r.u64()?;
        if count > (r.bytes.len() / ENCODED_LEN) as u64 {
            return Err(FileError::Truncated);
        }
        let mut public_inputs = Vec::with_capacity(count as usize);
        for i in 0..count as usize {
            let raw: &[u8; ENCODED_LEN] = r.take(ENCODED_LEN)?.try_into().unwrap();
            public_inputs.push(FieldScalar::from_le_bytes(raw).map_err(|_| FileError::BadField(i))?);
        }
        r.finish()?;
        Ok(Self { backend: h.backend, build_hash: h.build_hash, proof: h.payload, public_inputs })
    }
}
