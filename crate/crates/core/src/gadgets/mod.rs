//! Constraint-emitting gadgets.
//!
//! Every gadget both appends constraints to a [`CircuitBuilder`] and, when
//! the builder carries a witness, computes the values of the variables it
//! introduces. Building the same program with and without values yields the
//! same constraint system, which is how circuit skeletons and honest
//! witnesses stay in lockstep.

mod arith;
mod ber;
mod compare;
mod sigmoid;

pub use arith::{average, conv3d, matmul, rescale, rescale_to, Conv3dShape, Wide};
pub use ber::{and_all, ber_check, ber_check_against};
pub use compare::{hard_threshold, is_nonneg, is_nonneg_lc, range_check, relu};
pub use sigmoid::sigmoid;

use thiserror::Error;

use crate::field::FieldScalar;
use crate::fixed::{FixedPointError, FixedPointFormat};
use crate::r1cs::{Assignment, ConstraintSystem, LinearCombination, R1csError, Variable, Visibility};

#[derive(Debug, Error, PartialEq)]
pub enum GadgetError {
    #[error(transparent)]
    R1cs(#[from] R1csError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel {kernel}x{kernel} does not fit a {height}x{width} input")]
    KernelLargerThanInput { kernel: usize, height: usize, width: usize },
    #[error("average over an empty batch")]
    EmptyBatch,
    #[error("bit strings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("inner dimension {0} is too large for the fixed-point format")]
    InnerDimTooLarge(usize),
    #[error("fixed-point overflow at {0}")]
    Overflow(String),
    #[error("witness value missing at {0}")]
    MissingValue(String),
}

/// A variable holding a signed fixed-point raw value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxpVar {
    pub var: Variable,
    pub value: Option<i128>,
    pub format: FixedPointFormat,
    /// Sign bit from an earlier `W`-bit range check of this variable, if any.
    pub sign: Option<BitVar>,
}

impl FxpVar {
    pub fn lc(&self) -> LinearCombination {
        self.var.into()
    }
}

/// A variable constrained to {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitVar {
    pub var: Variable,
    pub value: Option<bool>,
}

impl BitVar {
    pub fn lc(&self) -> LinearCombination {
        self.var.into()
    }
}

pub struct CircuitBuilder {
    cs: ConstraintSystem,
    witness: Option<Assignment>,
    scope: Vec<String>,
}

impl CircuitBuilder {
    /// A builder that records constraints only.
    pub fn shape() -> Self {
        Self { cs: ConstraintSystem::new(), witness: None, scope: Vec::new() }
    }

    /// A builder that also records witness values; every allocation must
    /// then supply a value.
    pub fn with_witness() -> Self {
        Self {
            cs: ConstraintSystem::new(),
            witness: Some(Assignment::default()),
            scope: Vec::new(),
        }
    }

    pub fn has_witness(&self) -> bool {
        self.witness.is_some()
    }

    pub fn cs(&self) -> &ConstraintSystem {
        &self.cs
    }

    pub fn assignment(&self) -> Option<&Assignment> {
        self.witness.as_ref()
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    fn label(&self, local: &str) -> String {
        if self.scope.is_empty() {
            local.to_string()
        } else {
            format!("{}/{}", self.scope.join("/"), local)
        }
    }

    pub fn alloc(&mut self, visibility: Visibility, value: Option<FieldScalar>) -> Result<Variable, GadgetError> {
        if self.witness.is_some() && value.is_none() {
            return Err(GadgetError::MissingValue(self.label("alloc")));
        }
        let var = self.cs.alloc(visibility)?;
        if let (Some(w), Some(value)) = (&mut self.witness, value) {
            match visibility {
                Visibility::Public => w.public.push(value),
                Visibility::Private => w.private.push(value),
                Visibility::One => unreachable!("constant is never allocated"),
            }
        }
        Ok(var)
    }

    pub fn enforce(
        &mut self,
        local: &str,
        a: LinearCombination,
        b: LinearCombination,
        c: LinearCombination,
    ) -> Result<(), GadgetError> {
        let label = self.label(local);
        self.cs.enforce(&label, a, b, c)?;
        Ok(())
    }

    /// Allocates a fixed-point input. Private inputs are range-checked to the
    /// format width since their values are chosen freely by the prover.
    pub fn alloc_fxp(
        &mut self,
        visibility: Visibility,
        raw: Option<i64>,
        format: FixedPointFormat,
    ) -> Result<FxpVar, GadgetError> {
        let value = raw.map(|r| r as i128);
        let var = self.alloc(visibility, value.map(FieldScalar::from_i128))?;
        let mut x = FxpVar { var, value, format, sign: None };
        if visibility == Visibility::Private {
            let bits = range_check(self, &x.lc(), value, format.width())?;
            x.sign = bits.last().copied();
        }
        Ok(x)
    }

    pub fn alloc_bit(&mut self, visibility: Visibility, value: Option<bool>) -> Result<BitVar, GadgetError> {
        let var = self.alloc(visibility, value.map(FieldScalar::from))?;
        let bit = BitVar { var, value };
        self.enforce_boolean(&bit)?;
        Ok(bit)
    }

    pub fn enforce_boolean(&mut self, bit: &BitVar) -> Result<(), GadgetError> {
        // b * (1 - b) = 0
        self.enforce(
            "bool",
            bit.lc(),
            LinearCombination::one() - bit.lc(),
            LinearCombination::zero(),
        )
    }

    pub fn finish(mut self) -> (ConstraintSystem, Option<Assignment>) {
        self.cs.finalize();
        (self.cs, self.witness)
    }
}

/// Reads a witness value that must exist in witness mode.
pub(crate) fn require<T: Copy>(b: &CircuitBuilder, v: Option<T>, site: &str) -> Result<Option<T>, GadgetError> {
    if b.has_witness() && v.is_none() {
        return Err(GadgetError::MissingValue(b.label(site)));
    }
    Ok(v)
}

#[cfg(test)]
pub(crate) mod testing {
    //! Helpers shared by the gadget unit tests.
    use super::*;
    use crate::r1cs::Satisfaction;

    pub fn q16() -> FixedPointFormat {
        FixedPointFormat::default()
    }

    pub fn private(b: &mut CircuitBuilder, raw: i64) -> FxpVar {
        b.alloc_fxp(Visibility::Private, Some(raw), q16()).unwrap()
    }

    pub fn satisfied(b: CircuitBuilder) -> bool {
        let (cs, w) = b.finish();
        cs.is_satisfied(&w.unwrap()).unwrap().is_ok()
    }

    /// Adds one to `var` in an otherwise satisfying witness and reports
    /// whether the system notices.
    pub fn perturbation_detected(b: CircuitBuilder, var: Variable) -> bool {
        let (cs, w) = b.finish();
        let mut w = w.unwrap();
        assert!(cs.is_satisfied(&w).unwrap().is_ok(), "honest witness must satisfy");
        *w.value_mut(var).unwrap() += FieldScalar::one();
        matches!(cs.is_satisfied(&w).unwrap(), Satisfaction::Violated { .. })
    }
}
