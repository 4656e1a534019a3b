//! Binary encoding of a constraint system.
//!
//! ```text
//! magic "ZR1C" | version u32 | num_public u32 | num_private u32
//! label_count u32 | (len u32, utf8 bytes)*
//! constraint_count u64 | (label u32, lc a, lc b, lc c)*
//! lc := term_count u32 | (tag u8, index u32, coeff [u8; 32])*
//! ```
//!
//! All integers little-endian; field elements in canonical little-endian
//! form. Tags: 0 = constant one, 1 = public, 2 = private.

use std::collections::HashMap;

use thiserror::Error;

use super::{Constraint, ConstraintSystem, LinearCombination, Variable, Visibility};
use crate::field::{FieldScalar, ENCODED_LEN};

pub const MAGIC: [u8; 4] = *b"ZR1C";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unexpected end of input")]
    Truncated,
    #[error("trailing bytes after constraint system")]
    TrailingBytes,
    #[error("invalid variable tag {0}")]
    BadTag(u8),
    #[error("variable index out of range")]
    BadVariable,
    #[error("label index out of range")]
    BadLabel,
    #[error("non-canonical field element")]
    BadField,
    #[error("label is not utf-8")]
    BadUtf8,
}

pub(super) fn encode(cs: &ConstraintSystem) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + cs.constraints.len() * 128);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cs.num_public.to_le_bytes());
    out.extend_from_slice(&cs.num_private.to_le_bytes());
    out.extend_from_slice(&(cs.labels.len() as u32).to_le_bytes());
    for label in &cs.labels {
        out.extend_from_slice(&(label.len() as u32).to_le_bytes());
        out.extend_from_slice(label.as_bytes());
    }
    out.extend_from_slice(&(cs.constraints.len() as u64).to_le_bytes());
    for c in &cs.constraints {
        out.extend_from_slice(&c.label.to_le_bytes());
        for lc in [&c.a, &c.b, &c.c] {
            out.extend_from_slice(&(lc.terms.len() as u32).to_le_bytes());
            for (v, coeff) in &lc.terms {
                let tag = match v.visibility {
                    Visibility::One => 0u8,
                    Visibility::Public => 1,
                    Visibility::Private => 2,
                };
                out.push(tag);
                out.extend_from_slice(&v.index.to_le_bytes());
                out.extend_from_slice(&coeff.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<ConstraintSystem, DecodeError> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let num_public = r.u32()?;
    let num_private = r.u32()?;
    let label_count = r.u32()? as usize;
    let mut labels = Vec::with_capacity(label_count.min(1 << 16));
    for _ in 0..label_count {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::BadUtf8)?;
        labels.push(s.to_string());
    }
    let count = r.u64()?;
    // Each constraint needs at least 16 bytes, which bounds the allocation.
    if count > (r.buf.len() / 16) as u64 {
        return Err(DecodeError::Truncated);
    }
    let mut constraints = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let label = r.u32()?;
        if label as usize >= labels.len() {
            return Err(DecodeError::BadLabel);
        }
        let mut lcs = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = r.u32()? as usize;
            let mut terms = Vec::with_capacity(n.min(r.buf.len() / 37));
            for _ in 0..n {
                let visibility = match r.u8()? {
                    0 => Visibility::One,
                    1 => Visibility::Public,
                    2 => Visibility::Private,
                    t => return Err(DecodeError::BadTag(t)),
                };
                let index = r.u32()?;
                let in_range = match visibility {
                    Visibility::One => index == 0,
                    Visibility::Public => index < num_public,
                    Visibility::Private => index < num_private,
                };
                if !in_range {
                    return Err(DecodeError::BadVariable);
                }
                let coeff_bytes: &[u8; ENCODED_LEN] = r.take(ENCODED_LEN)?.try_into().unwrap();
                let coeff =
                    FieldScalar::from_le_bytes(coeff_bytes).map_err(|_| DecodeError::BadField)?;
                terms.push((Variable::new(visibility, index), coeff));
            }
            lcs.push(LinearCombination { terms });
        }
        let c = lcs.pop().unwrap();
        let b = lcs.pop().unwrap();
        let a = lcs.pop().unwrap();
        constraints.push(Constraint { a, b, c, label });
    }
    if !r.buf.is_empty() {
        return Err(DecodeError::TrailingBytes);
    }
    let label_ids: HashMap<String, u32> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i as u32))
        .collect();
    Ok(ConstraintSystem {
        num_public,
        num_private,
        constraints,
        labels,
        label_ids,
        finalized: true,
    })
}
