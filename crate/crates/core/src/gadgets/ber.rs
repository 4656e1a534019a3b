use super::{is_nonneg_lc, BitVar, CircuitBuilder, GadgetError};
use crate::field::FieldScalar;
use crate::fixed::{ber_threshold, ceil_log2};
use crate::r1cs::{LinearCombination, Visibility};

/// Conjunction of `bits` as a balanced tree of products. An empty input is
/// the constant one.
pub fn and_all(b: &mut CircuitBuilder, bits: &[BitVar]) -> Result<(LinearCombination, Option<bool>), GadgetError> {
    if bits.is_empty() {
        return Ok((LinearCombination::one(), b.has_witness().then_some(true)));
    }
    let mut layer = bits.to_vec();
    b.push_scope("and");
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        for pair in layer.chunks(2) {
            if let [x, y] = pair {
                let value = x.value.zip(y.value).map(|(x, y)| x && y);
                let var = b.alloc(Visibility::Private, value.map(FieldScalar::from))?;
                b.enforce("and", x.lc(), y.lc(), var.into())?;
                next.push(BitVar { var, value });
            } else {
                next.push(pair[0]);
            }
        }
        layer = next;
    }
    b.pop_scope();
    Ok((layer[0].lc(), layer[0].value))
}

/// `1` iff the number of positions where `wm` and `wm_hat` differ is at most
/// `floor(theta * B)`.
pub fn ber_check(b: &mut CircuitBuilder, wm: &[BitVar], wm_hat: &[BitVar], theta: f64) -> Result<BitVar, GadgetError> {
    let t = ber_threshold(theta, wm.len()) as i128;
    ber_check_against(b, wm, wm_hat, LinearCombination::constant(FieldScalar::from_i128(t)), Some(t))
}

/// As [`ber_check`] with the mismatch budget given as a linear combination,
/// so a circuit can expose it as a public input.
pub fn ber_check_against(
    b: &mut CircuitBuilder,
    wm: &[BitVar],
    wm_hat: &[BitVar],
    budget: LinearCombination,
    budget_value: Option<i128>,
) -> Result<BitVar, GadgetError> {
    if wm.len() != wm_hat.len() {
        return Err(GadgetError::LengthMismatch(wm.len(), wm_hat.len()));
    }
    b.push_scope("ber");
    let two = FieldScalar::from_u64(2);
    let mut mismatches = LinearCombination::zero();
    let mut count = b.has_witness().then_some(0i128);
    for (x, y) in wm.iter().zip(wm_hat) {
        // xor = x + y - 2xy
        let both = x.value.zip(y.value).map(|(x, y)| x && y);
        let p = b.alloc(Visibility::Private, both.map(FieldScalar::from))?;
        b.enforce("xor", x.lc(), y.lc(), p.into())?;
        mismatches = mismatches + x.lc() + y.lc() - LinearCombination::from(p).scale(two);
        count = count.zip(x.value.zip(y.value)).map(|(c, (x, y))| c + (x != y) as i128);
    }
    // slack = budget - mismatches lies in [budget - B, budget]; budget <= B.
    let slack = budget - mismatches;
    let slack_value = budget_value.zip(count).map(|(t, c)| t - c);
    let width = ceil_log2(wm.len() as u128 + 1) + 2;
    let ok = is_nonneg_lc(b, &slack, slack_value, width)?;
    b.pop_scope();
    Ok(ok)
}
