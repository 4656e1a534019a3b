//! Rank-1 constraint systems.
//!
//! A system is a list of constraints `<a, z> * <b, z> = <c, z>` over the
//! vector `z = (1, public..., private...)`. Variables are allocated in two
//! classes and only receive their global position in `z` when the system is
//! read out, so public variables always precede private ones regardless of
//! allocation order.

mod encoding;

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::FieldScalar;

pub use encoding::{DecodeError, MAGIC as R1CS_MAGIC, VERSION as R1CS_VERSION};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum R1csError {
    #[error("constraint system is finalized")]
    BuilderFinalized,
    #[error("cannot allocate a second constant-one variable")]
    ConstantAllocation,
    #[error("assignment does not cover the system: expected {expected_public} public and {expected_private} private values, got {got_public} and {got_private}")]
    MissingAssignment {
        expected_public: usize,
        expected_private: usize,
        got_public: usize,
        got_private: usize,
    },
    #[error("constraint references unallocated variable {0:?}")]
    UnknownVariable(Variable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Visibility {
    One,
    Public,
    Private,
}

/// A variable handle. `index` counts within its visibility class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variable {
    visibility: Visibility,
    index: u32,
}

impl Variable {
    pub const ONE: Variable = Variable { visibility: Visibility::One, index: 0 };

    pub fn new(visibility: Visibility, index: u32) -> Self {
        Self { visibility, index }
    }

    pub fn visibility(&self) -> Visibility {
        self.visibility
    }

    pub fn index(&self) -> u32 {
        self.index
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinearCombination {
    terms: Vec<(Variable, FieldScalar)>,
}

impl LinearCombination {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: FieldScalar) -> Self {
        Self::zero().with(Variable::ONE, c)
    }

    pub fn one() -> Self {
        Self::constant(FieldScalar::one())
    }

    pub fn from_terms(terms: Vec<(Variable, FieldScalar)>) -> Self {
        let mut lc = Self { terms };
        lc.normalize();
        lc
    }

    /// Appends `coeff * var` without normalizing.
    pub fn with(mut self, var: Variable, coeff: FieldScalar) -> Self {
        self.terms.push((var, coeff));
        self
    }

    pub fn push(&mut self, var: Variable, coeff: FieldScalar) {
        self.terms.push((var, coeff));
    }

    pub fn terms(&self) -> &[(Variable, FieldScalar)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(mut self, k: FieldScalar) -> Self {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self
    }

    /// Sorts by variable, merges duplicates and drops zero coefficients.
    pub fn normalize(&mut self) {
        if self.terms.len() > 1 {
            self.terms.sort_by_key(|(v, _)| *v);
            let mut merged: Vec<(Variable, FieldScalar)> = Vec::with_capacity(self.terms.len());
            for (v, c) in self.terms.drain(..) {
                match merged.last_mut() {
                    Some((lv, lc)) if *lv == v => *lc += c,
                    _ => merged.push((v, c)),
                }
            }
            self.terms = merged;
        }
        self.terms.retain(|(_, c)| !c.is_zero());
    }

    pub fn evaluate(&self, assignment: &Assignment) -> Option<FieldScalar> {
        let mut acc = FieldScalar::zero();
        for (v, c) in &self.terms {
            acc += assignment.value(*v)? * *c;
        }
        Some(acc)
    }
}

impl From<Variable> for LinearCombination {
    fn from(v: Variable) -> Self {
        Self::zero().with(v, FieldScalar::one())
    }
}

impl Add for LinearCombination {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for LinearCombination {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for LinearCombination {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-FieldScalar::one())
    }
}

impl Mul<FieldScalar> for LinearCombination {
    type Output = Self;
    fn mul(self, k: FieldScalar) -> Self {
        self.scale(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub a: LinearCombination,
    pub b: LinearCombination,
    pub c: LinearCombination,
    label: u32,
}

impl Constraint {
    pub fn is_satisfied(&self, assignment: &Assignment) -> Option<bool> {
        let a = self.a.evaluate(assignment)?;
        let b = self.b.evaluate(assignment)?;
        let c = self.c.evaluate(assignment)?;
        Some(a * b == c)
    }
}

/// Values for every allocated variable, split by class. The constant-one
/// variable is implicit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub public: Vec<FieldScalar>,
    pub private: Vec<FieldScalar>,
}

impl Assignment {
    pub fn new(public: Vec<FieldScalar>, private: Vec<FieldScalar>) -> Self {
        Self { public, private }
    }

    pub fn value(&self, v: Variable) -> Option<FieldScalar> {
        match v.visibility {
            Visibility::One => Some(FieldScalar::one()),
            Visibility::Public => self.public.get(v.index as usize).copied(),
            Visibility::Private => self.private.get(v.index as usize).copied(),
        }
    }

    pub fn value_mut(&mut self, v: Variable) -> Option<&mut FieldScalar> {
        match v.visibility {
            Visibility::One => None,
            Visibility::Public => self.public.get_mut(v.index as usize),
            Visibility::Private => self.private.get_mut(v.index as usize),
        }
    }

    /// `z = (1, public..., private...)`.
    pub fn full_vector(&self) -> Vec<FieldScalar> {
        let mut z = Vec::with_capacity(1 + self.public.len() + self.private.len());
        z.push(FieldScalar::one());
        z.extend_from_slice(&self.public);
        z.extend_from_slice(&self.private);
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Stats {
    pub num_constraints: usize,
    pub num_public: usize,
    pub num_private: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Satisfaction {
    Satisfied,
    Violated { index: usize, annotation: String },
}

impl Satisfaction {
    pub fn is_ok(&self) -> bool {
        matches!(self, Satisfaction::Satisfied)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSystem {
    num_public: u32,
    num_private: u32,
    constraints: Vec<Constraint>,
    labels: Vec<String>,
    label_ids: HashMap<String, u32>,
    finalized: bool,
}

// Below this size a sequential scan beats spinning up the thread pool.
const PARALLEL_CHECK_THRESHOLD: usize = 1 << 14;

impl ConstraintSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, visibility: Visibility) -> Result<Variable, R1csError> {
        if self.finalized {
            return Err(R1csError::BuilderFinalized);
        }
        let counter = match visibility {
            Visibility::One => return Err(R1csError::ConstantAllocation),
            Visibility::Public => &mut self.num_public,
            Visibility::Private => &mut self.num_private,
        };
        let var = Variable::new(visibility, *counter);
        *counter += 1;
        Ok(var)
    }

    /// Adds `a * b = c`, tagged with `annotation` for diagnostics.
    pub fn enforce(
        &mut self,
        annotation: &str,
        mut a: LinearCombination,
        mut b: LinearCombination,
        mut c: LinearCombination,
    ) -> Result<(), R1csError> {
        if self.finalized {
            return Err(R1csError::BuilderFinalized);
        }
        for lc in [&mut a, &mut b, &mut c] {
            lc.normalize();
            for (v, _) in lc.terms() {
                if !self.is_allocated(*v) {
                    return Err(R1csError::UnknownVariable(*v));
                }
            }
        }
        let label = self.intern(annotation);
        self.constraints.push(Constraint { a, b, c, label });
        Ok(())
    }

    fn intern(&mut self, annotation: &str) -> u32 {
        if let Some(&id) = self.label_ids.get(annotation) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(annotation.to_string());
        self.label_ids.insert(annotation.to_string(), id);
        id
    }

    fn is_allocated(&self, v: Variable) -> bool {
        match v.visibility {
            Visibility::One => v.index == 0,
            Visibility::Public => v.index < self.num_public,
            Visibility::Private => v.index < self.num_private,
        }
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn num_public(&self) -> usize {
        self.num_public as usize
    }

    pub fn num_private(&self) -> usize {
        self.num_private as usize
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn annotation(&self, index: usize) -> &str {
        &self.labels[self.constraints[index].label as usize]
    }

    /// Position of `v` in `z = (1, public..., private...)`.
    pub fn global_index(&self, v: Variable) -> usize {
        match v.visibility {
            Visibility::One => 0,
            Visibility::Public => 1 + v.index as usize,
            Visibility::Private => 1 + self.num_public as usize + v.index as usize,
        }
    }

    pub fn stats(&self) -> Stats {
        Stats {
            num_constraints: self.constraints.len(),
            num_public: self.num_public as usize,
            num_private: self.num_private as usize,
        }
    }

    /// Checks every constraint and reports the first violation.
    ///
    /// This is a plain evaluation of the witness; it is not zero-knowledge.
    pub fn is_satisfied(&self, assignment: &Assignment) -> Result<Satisfaction, R1csError> {
        if assignment.public.len() != self.num_public as usize
            || assignment.private.len() != self.num_private as usize
        {
            return Err(R1csError::MissingAssignment {
                expected_public: self.num_public as usize,
                expected_private: self.num_private as usize,
                got_public: assignment.public.len(),
                got_private: assignment.private.len(),
            });
        }
        let holds = |c: &Constraint| c.is_satisfied(assignment).unwrap_or(false);
        let first_bad = if self.constraints.len() >= PARALLEL_CHECK_THRESHOLD {
            self.constraints.par_iter().position_first(|c| !holds(c))
        } else {
            self.constraints.iter().position(|c| !holds(c))
        };
        Ok(match first_bad {
            None => Satisfaction::Satisfied,
            Some(index) => Satisfaction::Violated {
                index,
                annotation: self.annotation(index).to_string(),
            },
        })
    }

    /// Allocated variables that no constraint mentions.
    pub fn unused_variables(&self) -> Vec<Variable> {
        let mut used_pub = vec![false; self.num_public as usize];
        let mut used_priv = vec![false; self.num_private as usize];
        for c in &self.constraints {
            for lc in [&c.a, &c.b, &c.c] {
                for (v, _) in lc.terms() {
                    match v.visibility {
                        Visibility::Public => used_pub[v.index as usize] = true,
                        Visibility::Private => used_priv[v.index as usize] = true,
                        Visibility::One => {}
                    }
                }
            }
        }
        let pubs = used_pub
            .iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| Variable::new(Visibility::Public, i as u32));
        let privs = used_priv
            .iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| Variable::new(Visibility::Private, i as u32));
        pubs.chain(privs).collect()
    }

    /// Canonical little-endian encoding; see the `encoding` module.
    pub fn to_bytes(&self) -> Vec<u8> {
        encoding::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        encoding::decode(bytes)
    }

    /// SHA-256 of the canonical encoding.
    pub fn build_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}
