use super::{rescale_to, CircuitBuilder, FxpVar, GadgetError, Wide};
use crate::field::FieldScalar;
use crate::fixed::{sigmoid_accumulator, sigmoid_coeffs_raw};
use crate::r1cs::LinearCombination;

/// Degree-9 odd polynomial approximation of the logistic sigmoid,
/// evaluated in Horner form over `t = x^2` with a finer-scaled accumulator.
///
/// Five variable products (`x*x`, three `h*t`, the final `h*x`) and five
/// coefficient terms, each step followed by a floor rescale. Reproduces
/// [`crate::fixed::sigmoid_raw`] exactly. Accurate against the true sigmoid
/// on `[-5, 5]`; outside that interval the polynomial is still evaluated
/// as-is until the accumulator overflows.
pub fn sigmoid(b: &mut CircuitBuilder, x: &FxpVar) -> Result<FxpVar, GadgetError> {
    let fmt = x.format;
    let f = fmt.frac_bits();
    let (acc_frac, acc_width) = sigmoid_accumulator(fmt);
    let [c1, c3, c5, c7, c9] = sigmoid_coeffs_raw(fmt);
    b.push_scope("sigmoid");

    let square = Wide { mul: Some((x.lc(), x.lc())), lin: LinearCombination::zero(), value: x.value.map(|v| v * v) };
    let (t, t_val, _) = rescale_to(b, square, f, fmt.width())?;

    // h = c9 * t / 2^f + c7 is linear in t.
    let c = |v: i128| FieldScalar::from_i128(v);
    let first = Wide::linear(
        LinearCombination::from(t).scale(c(c9)) + LinearCombination::constant(c(c7 << f)),
        t_val.map(|t| c9 * t + (c7 << f)),
    );
    let (mut h, mut h_val, _) = rescale_to(b, first, f, acc_width)?;

    for coeff in [c5, c3, c1] {
        let step = Wide {
            mul: Some((h.into(), t.into())),
            lin: LinearCombination::constant(c(coeff << f)),
            value: h_val.zip(t_val).map(|(h, t)| h * t + (coeff << f)),
        };
        (h, h_val, _) = rescale_to(b, step, f, acc_width)?;
    }

    let half = 1i128 << (f - 1 + acc_frac);
    let last = Wide {
        mul: Some((h.into(), x.lc())),
        lin: LinearCombination::constant(c(half)),
        value: h_val.zip(x.value).map(|(h, x)| h * x + half),
    };
    let (y, y_val, sign) = rescale_to(b, last, acc_frac, fmt.width())?;
    b.pop_scope();
    Ok(FxpVar { var: y, value: y_val, format: fmt, sign: Some(sign) })
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::fixed::{decode_raw, encode, sigmoid_raw};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(raw: i64) -> (i64, bool) {
        let mut b = CircuitBuilder::with_witness();
        let x = private(&mut b, raw);
        let y = sigmoid(&mut b, &x).unwrap();
        (y.value.unwrap() as i64, satisfied(b))
    }

    #[test]
    fn sigmoid_of_zero_is_exactly_half() {
        let (y, ok) = run(0);
        assert!(ok);
        assert_eq!(y, q16().one_raw() / 2);
    }

    #[test]
    fn matches_fixed_point_oracle() {
        let fmt = q16();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let raw = rng.gen_range(-(5 << 16)..=(5 << 16));
            let (y, ok) = run(raw);
            assert!(ok);
            assert_eq!(y, sigmoid_raw(raw, fmt).unwrap());
        }
    }

    #[test]
    fn near_polynomial_value_at_one() {
        let fmt = q16();
        let (y, _) = run(encode(1.0, fmt).unwrap().raw());
        assert!((decode_raw(y as i128, fmt) - 0.7078828577).abs() < 2.0 * fmt.ulp());
    }

    #[test]
    fn odd_symmetry_within_two_ulp() {
        let fmt = q16();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..2000 {
            let raw = rng.gen_range(0..=(5 << 16));
            let pos = sigmoid_raw(raw, fmt).unwrap();
            let neg = sigmoid_raw(-raw, fmt).unwrap();
            assert!((pos + neg - fmt.one_raw()).abs() <= 2, "x raw {raw}");
        }
    }

    #[test]
    fn large_inputs_overflow() {
        let mut b = CircuitBuilder::with_witness();
        let x = private(&mut b, encode(1000.0, q16()).unwrap().raw());
        assert!(matches!(sigmoid(&mut b, &x), Err(GadgetError::Overflow(_))));
    }

    #[test]
    fn output_perturbation_detected() {
        let mut b = CircuitBuilder::with_witness();
        let x = private(&mut b, encode(-2.25, q16()).unwrap().raw());
        let y = sigmoid(&mut b, &x).unwrap();
        assert!(perturbation_detected(b, y.var));
    }
}
