use super::{require, BitVar, CircuitBuilder, FxpVar, GadgetError};
use crate::field::FieldScalar;
use crate::fixed::encode;
use crate::r1cs::{LinearCombination, Visibility};

/// Offset-binary decomposition: allocates `n` bits with
/// `sum b_i 2^i = x + 2^(n-1)`. Costs `n + 1` constraints.
///
/// A witness outside `[-2^(n-1), 2^(n-1))` still gets bits (the low `n` bits
/// of the offset value), which leaves the system unsatisfiable.
pub fn range_check(
    b: &mut CircuitBuilder,
    x: &LinearCombination,
    value: Option<i128>,
    n: u32,
) -> Result<Vec<BitVar>, GadgetError> {
    assert!((1..127).contains(&n), "range width {n} unsupported");
    let value = require(b, value, "range")?;
    let offset_value = value.map(|v| v.wrapping_add(1i128 << (n - 1)));
    let mut bits = Vec::with_capacity(n as usize);
    let mut sum = LinearCombination::zero();
    for i in 0..n {
        let bit = offset_value.map(|v| (v >> i) & 1 == 1);
        let bv = b.alloc_bit(Visibility::Private, bit)?;
        sum.push(bv.var, FieldScalar::pow2(i));
        bits.push(bv);
    }
    let lhs = sum - LinearCombination::constant(FieldScalar::pow2(n - 1));
    b.enforce("range", lhs, LinearCombination::one(), x.clone())?;
    Ok(bits)
}

/// `1` iff `x >= 0`, reusing the sign bit of an earlier range check when
/// available.
pub fn is_nonneg(b: &mut CircuitBuilder, x: &mut FxpVar) -> Result<BitVar, GadgetError> {
    if let Some(sign) = x.sign {
        return Ok(sign);
    }
    let bits = range_check(b, &x.lc(), x.value, x.format.width())?;
    let sign = *bits.last().unwrap();
    x.sign = Some(sign);
    Ok(sign)
}

/// `1` iff the linear combination is nonnegative, for values known to lie in
/// `[-2^(n-1), 2^(n-1))`.
pub fn is_nonneg_lc(
    b: &mut CircuitBuilder,
    x: &LinearCombination,
    value: Option<i128>,
    n: u32,
) -> Result<BitVar, GadgetError> {
    let bits = range_check(b, x, value, n)?;
    Ok(*bits.last().unwrap())
}

/// `max(0, x)` as `s * x` with `s = is_nonneg(x)`.
pub fn relu(b: &mut CircuitBuilder, x: &mut FxpVar) -> Result<FxpVar, GadgetError> {
    b.push_scope("relu");
    let s = is_nonneg(b, x)?;
    let value = x.value.map(|v| v.max(0));
    let out = b.alloc(Visibility::Private, value.map(FieldScalar::from_i128))?;
    b.enforce("select", s.lc(), x.lc(), out.into())?;
    b.pop_scope();
    Ok(FxpVar { var: out, value, format: x.format, sign: None })
}

/// `1` iff `x >= encode(beta)`.
pub fn hard_threshold(b: &mut CircuitBuilder, x: &FxpVar, beta: f64) -> Result<BitVar, GadgetError> {
    b.push_scope("threshold");
    let beta_raw = encode(beta, x.format)?.raw() as i128;
    let diff = x.lc() - LinearCombination::constant(FieldScalar::from_i128(beta_raw));
    // x and beta both fit W bits, so their difference fits W + 1.
    let bit = is_nonneg_lc(b, &diff, x.value.map(|v| v - beta_raw), x.format.width() + 1)?;
    b.pop_scope();
    Ok(bit)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::fixed::{encode, FixedPointFormat};

    fn check_range(value: i128, n: u32) -> (Vec<bool>, bool) {
        let mut b = CircuitBuilder::with_witness();
        let x = b.alloc(Visibility::Private, Some(FieldScalar::from_i128(value))).unwrap();
        let bits = range_check(&mut b, &x.into(), Some(value), n).unwrap();
        assert_eq!(b.cs().stats().num_constraints, n as usize + 1);
        let vals = bits.iter().map(|bit| bit.value.unwrap()).collect();
        (vals, satisfied(b))
    }

    #[test]
    fn range_check_examples() {
        let (bits, ok) = check_range(0, 8);
        assert!(ok);
        assert_eq!(bits, [false, false, false, false, false, false, false, true]);
        let (bits, ok) = check_range(-128, 8);
        assert!(ok);
        assert!(bits.iter().all(|b| !b));
        let (_, ok) = check_range(127, 8);
        assert!(ok);
        let (_, ok) = check_range(128, 8);
        assert!(!ok, "exclusive upper bound must be unsatisfiable");
        let (_, ok) = check_range(-129, 8);
        assert!(!ok);
    }

    #[test]
    fn range_check_has_no_alternative_witness() {
        // x = 2^(n-1) cannot be decomposed: try every bit pattern.
        let n = 4;
        let mut b = CircuitBuilder::with_witness();
        let x = b.alloc(Visibility::Private, Some(FieldScalar::from_i128(8))).unwrap();
        range_check(&mut b, &x.into(), Some(8), n).unwrap();
        let (cs, w) = b.finish();
        let mut w = w.unwrap();
        for pattern in 0..16u32 {
            for i in 0..4 {
                w.private[1 + i] = FieldScalar::from((pattern >> i) & 1 == 1);
            }
            assert!(!cs.is_satisfied(&w).unwrap().is_ok());
        }
    }

    #[test]
    fn is_nonneg_examples() {
        let fmt = q16();
        for (raw, expect) in [(0, true), (-1, false), (encode(3.7, fmt).unwrap().raw(), true)] {
            let mut b = CircuitBuilder::with_witness();
            let mut x = b.alloc_fxp(Visibility::Public, Some(raw), fmt).unwrap();
            let s = is_nonneg(&mut b, &mut x).unwrap();
            assert_eq!(s.value, Some(expect), "raw {raw}");
            assert!(satisfied(b));
        }
    }

    #[test]
    fn is_nonneg_reuses_cached_sign() {
        let mut b = CircuitBuilder::with_witness();
        let mut x = private(&mut b, -5);
        let before = b.cs().stats().num_constraints;
        let s = is_nonneg(&mut b, &mut x).unwrap();
        assert_eq!(b.cs().stats().num_constraints, before);
        assert_eq!(s.value, Some(false));
    }

    #[test]
    fn relu_examples() {
        let fmt = q16();
        for (x, expect) in [(5.0, 5.0), (-3.0, 0.0), (0.0, 0.0)] {
            let mut b = CircuitBuilder::with_witness();
            let mut xv = private(&mut b, encode(x, fmt).unwrap().raw());
            let y = relu(&mut b, &mut xv).unwrap();
            assert_eq!(y.value, Some(encode(expect, fmt).unwrap().raw() as i128));
            assert!(perturbation_detected(b, y.var));
        }
    }

    #[test]
    fn hard_threshold_examples() {
        let fmt = q16();
        let half = encode(0.5, fmt).unwrap().raw();
        for (raw, expect) in [(half, true), (half - 1, false), (encode(0.9, fmt).unwrap().raw(), true)] {
            let mut b = CircuitBuilder::with_witness();
            let x = private(&mut b, raw);
            let bit = hard_threshold(&mut b, &x, 0.5).unwrap();
            assert_eq!(bit.value, Some(expect));
            assert!(perturbation_detected(b, bit.var));
        }
    }

    #[test]
    fn threshold_at_extremes_of_range() {
        let fmt = FixedPointFormat::new(8, 16).unwrap();
        for raw in [fmt.min_raw(), fmt.max_raw()] {
            let mut b = CircuitBuilder::with_witness();
            let x = b.alloc_fxp(Visibility::Private, Some(raw), fmt).unwrap();
            let bit = hard_threshold(&mut b, &x, 0.5).unwrap();
            assert_eq!(bit.value, Some(raw >= 128));
            assert!(satisfied(b));
        }
    }
}
