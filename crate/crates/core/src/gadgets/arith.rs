use super::{range_check, require, BitVar, CircuitBuilder, FxpVar, GadgetError};
use crate::field::FieldScalar;
use crate::fixed::{encode, FixedPointFormat};
use crate::r1cs::{LinearCombination, Variable, Visibility};

/// An unreduced value `mul.0 * mul.1 + lin` at some doubled scale.
///
/// Keeping one pending product lets the rescale constraint absorb it, which
/// saves a constraint per inner product.
#[derive(Debug, Clone)]
pub struct Wide {
    pub mul: Option<(LinearCombination, LinearCombination)>,
    pub lin: LinearCombination,
    pub value: Option<i128>,
}

impl Wide {
    pub fn linear(lin: LinearCombination, value: Option<i128>) -> Self {
        Self { mul: None, lin, value }
    }
}

fn fits(v: i128, width: u32) -> bool {
    let half = 1i128 << (width - 1);
    v >= -half && v < half
}

/// Floor division of `wide` by `2^shift` into a fresh variable that is
/// range-checked to `out_width` bits. Enforces
/// `wide = q * 2^shift + r` with `0 <= r < 2^shift`, which pins `q` to the
/// floor quotient. Costs `shift + out_width + 2` constraints.
pub fn rescale_to(
    b: &mut CircuitBuilder,
    wide: Wide,
    shift: u32,
    out_width: u32,
) -> Result<(Variable, Option<i128>, BitVar), GadgetError> {
    let value = require(b, wide.value, "rescale")?;
    let q = value.map(|v| v >> shift);
    let r = value.map(|v| v - ((v >> shift) << shift));
    if let Some(q) = q {
        if !fits(q, out_width) {
            return Err(GadgetError::Overflow(format!("rescale to {out_width} bits (quotient {q})")));
        }
    }
    let q_var = b.alloc(Visibility::Private, q.map(FieldScalar::from_i128))?;
    let q_bits = range_check(b, &q_var.into(), q, out_width)?;
    let mut rhs = LinearCombination::from(q_var).scale(FieldScalar::pow2(shift));
    for i in 0..shift {
        let bit = r.map(|r| (r >> i) & 1 == 1);
        let bv = b.alloc_bit(Visibility::Private, bit)?;
        rhs.push(bv.var, FieldScalar::pow2(i));
    }
    match wide.mul {
        Some((x, y)) => b.enforce("rescale", x, y, rhs - wide.lin)?,
        None => b.enforce("rescale", wide.lin, LinearCombination::one(), rhs)?,
    }
    Ok((q_var, q, *q_bits.last().unwrap()))
}

/// Rescale from `2f` back to `f` fractional bits within the format width.
pub fn rescale(b: &mut CircuitBuilder, wide: Wide, format: FixedPointFormat) -> Result<FxpVar, GadgetError> {
    let (var, value, sign) = rescale_to(b, wide, format.frac_bits(), format.width())?;
    Ok(FxpVar { var, value, format, sign: Some(sign) })
}

fn check_format(xs: &[&FxpVar]) -> Result<FixedPointFormat, GadgetError> {
    let fmt = xs[0].format;
    if let Some(other) = xs.iter().find(|x| x.format != fmt) {
        return Err(crate::fixed::FixedPointError::FormatMismatch(fmt, other.format).into());
    }
    Ok(fmt)
}

/// `sum_k a[k] * b[k] (+ bias * 2^f)` with the last product left pending.
fn inner_product(
    b: &mut CircuitBuilder,
    a: &[FxpVar],
    w: &[&FxpVar],
    bias: Option<&FxpVar>,
    fmt: FixedPointFormat,
) -> Result<Wide, GadgetError> {
    let n = a.len();
    let mut lin = LinearCombination::zero();
    let mut value = b.has_witness().then_some(0i128);
    for k in 0..n {
        let prod = a[k].value.zip(w[k].value).map(|(x, y)| x * y);
        value = value.zip(prod).map(|(acc, p)| acc + p);
        if k + 1 < n {
            let p = b.alloc(Visibility::Private, prod.map(FieldScalar::from_i128))?;
            b.enforce("mul", a[k].lc(), w[k].lc(), p.into())?;
            lin.push(p, FieldScalar::one());
        }
    }
    if let Some(bias) = bias {
        lin.push(bias.var, FieldScalar::pow2(fmt.frac_bits()));
        value = value.zip(bias.value).map(|(acc, v)| acc + (v << fmt.frac_bits()));
    }
    let mul = (n > 0).then(|| (a[n - 1].lc(), w[n - 1].lc()));
    Ok(Wide { mul, lin, value })
}

/// `A (M x N) * B (N x L) (+ bias (L))`, one rescale per output entry.
pub fn matmul(
    b: &mut CircuitBuilder,
    a: &[Vec<FxpVar>],
    w: &[Vec<FxpVar>],
    bias: Option<&[FxpVar]>,
) -> Result<Vec<Vec<FxpVar>>, GadgetError> {
    let n = w.len();
    if n == 0 || a.iter().any(|row| row.len() != n) {
        return Err(GadgetError::ShapeMismatch(format!(
            "left operand rows must have length {n}"
        )));
    }
    let l = w[0].len();
    if w.iter().any(|row| row.len() != l) {
        return Err(GadgetError::ShapeMismatch("ragged right operand".into()));
    }
    if let Some(bias) = bias {
        if bias.len() != l {
            return Err(GadgetError::ShapeMismatch(format!("bias length {} != {l}", bias.len())));
        }
    }
    let mut all: Vec<&FxpVar> = a.iter().flatten().chain(w.iter().flatten()).collect();
    if let Some(bias) = bias {
        all.extend(bias.iter());
    }
    let fmt = match all.first() {
        Some(_) => check_format(&all)?,
        None => return Ok(vec![Vec::new(); a.len()]),
    };
    if !fmt.fits_inner_dim(n) {
        return Err(GadgetError::InnerDimTooLarge(n));
    }
    b.push_scope("matmul");
    let columns: Vec<Vec<&FxpVar>> = (0..l).map(|j| w.iter().map(|row| &row[j]).collect()).collect();
    let mut out = Vec::with_capacity(a.len());
    for row in a {
        let mut out_row = Vec::with_capacity(l);
        for (j, col) in columns.iter().enumerate() {
            let wide = inner_product(b, row, col, bias.map(|bs| &bs[j]), fmt)?;
            out_row.push(rescale(b, wide, fmt)?);
        }
        out.push(out_row);
    }
    b.pop_scope();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv3dShape {
    pub fn output_hw(&self) -> Result<(usize, usize), GadgetError> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(GadgetError::ShapeMismatch("kernel and stride must be positive".into()));
        }
        if self.kernel > self.height || self.kernel > self.width {
            return Err(GadgetError::KernelLargerThanInput {
                kernel: self.kernel,
                height: self.height,
                width: self.width,
            });
        }
        Ok((
            (self.height - self.kernel) / self.stride + 1,
            (self.width - self.kernel) / self.stride + 1,
        ))
    }
}

/// Valid (unpadded) convolution of an `H x W x C` input, stored row-major
/// with channels innermost, by `K` kernels stored `K x k x k x C`. Input
/// patches are gathered into rows and multiplied against the kernel matrix,
/// so each output element is one inner product and one rescale. Output is
/// `H' x W' x K`, channels innermost.
pub fn conv3d(
    b: &mut CircuitBuilder,
    input: &[FxpVar],
    kernels: &[FxpVar],
    bias: Option<&[FxpVar]>,
    shape: Conv3dShape,
) -> Result<Vec<FxpVar>, GadgetError> {
    let Conv3dShape { height, width, channels, out_channels, kernel, stride } = shape;
    if input.len() != height * width * channels {
        return Err(GadgetError::ShapeMismatch(format!(
            "input has {} values, expected {height}x{width}x{channels}",
            input.len()
        )));
    }
    if kernels.len() != out_channels * kernel * kernel * channels {
        return Err(GadgetError::ShapeMismatch(format!(
            "kernels have {} values, expected {out_channels}x{kernel}x{kernel}x{channels}",
            kernels.len()
        )));
    }
    let (out_h, out_w) = shape.output_hw()?;
    let patch_len = kernel * kernel * channels;
    let mut patches = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut patch = Vec::with_capacity(patch_len);
            for dy in 0..kernel {
                for dx in 0..kernel {
                    let base = ((oy * stride + dy) * width + ox * stride + dx) * channels;
                    patch.extend_from_slice(&input[base..base + channels]);
                }
            }
            patches.push(patch);
        }
    }
    let kernel_matrix: Vec<Vec<FxpVar>> = (0..patch_len)
        .map(|p| (0..out_channels).map(|o| kernels[o * patch_len + p]).collect())
        .collect();
    b.push_scope("conv3d");
    let out = matmul(b, &patches, &kernel_matrix, bias);
    b.pop_scope();
    Ok(out?.into_iter().flatten().collect())
}

/// Column means of `K` vectors: each column sum is multiplied by the
/// constant `encode(1/K)` and rescaled once.
pub fn average(b: &mut CircuitBuilder, vectors: &[Vec<FxpVar>]) -> Result<Vec<FxpVar>, GadgetError> {
    let k = vectors.len();
    if k == 0 {
        return Err(GadgetError::EmptyBatch);
    }
    let m = vectors[0].len();
    if vectors.iter().any(|v| v.len() != m) {
        return Err(GadgetError::ShapeMismatch("ragged batch".into()));
    }
    let all: Vec<&FxpVar> = vectors.iter().flatten().collect();
    if all.is_empty() {
        return Ok(Vec::new());
    }
    let fmt = check_format(&all)?;
    if !fmt.fits_inner_dim(k) {
        return Err(GadgetError::InnerDimTooLarge(k));
    }
    let recip = encode(1.0 / k as f64, fmt)?.raw() as i128;
    let recip_fs = FieldScalar::from_i128(recip);
    b.push_scope("average");
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut lin = LinearCombination::zero();
        let mut sum = b.has_witness().then_some(0i128);
        for v in vectors {
            lin.push(v[j].var, recip_fs);
            sum = sum.zip(v[j].value).map(|(s, x)| s + x);
        }
        let wide = Wide::linear(lin, sum.map(|s| s * recip));
        out.push(rescale(b, wide, fmt)?);
    }
    b.pop_scope();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::fixed::{dot_rescale, fxp_mul_rescale, FixedPointValue};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alloc_matrix(b: &mut CircuitBuilder, rows: &[Vec<i64>], vis: Visibility) -> Vec<Vec<FxpVar>> {
        rows.iter()
            .map(|r| r.iter().map(|&v| b.alloc_fxp(vis, Some(v), q16()).unwrap()).collect())
            .collect()
    }

    fn raw_values(m: &[Vec<FxpVar>]) -> Vec<Vec<i64>> {
        m.iter().map(|r| r.iter().map(|x| x.value.unwrap() as i64).collect()).collect()
    }

    fn plain_matmul(a: &[Vec<i64>], w: &[Vec<i64>]) -> Vec<Vec<i64>> {
        a.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| {
                        let col: Vec<i64> = w.iter().map(|r| r[j]).collect();
                        dot_rescale(row, &col, None, q16()).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    fn enc(rows: &[&[f64]]) -> Vec<Vec<i64>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| encode(x, q16()).unwrap().raw()).collect())
            .collect()
    }

    #[test]
    fn rescale_matches_floor() {
        let fmt = q16();
        let p = encode(0.3, fmt).unwrap().raw() as i128;
        let n = encode(-0.3, fmt).unwrap().raw() as i128;
        let half = encode(0.5, fmt).unwrap().raw() as i128;
        for (v, expect) in [(half * half, 16384), (p * p, 5898), (n * p, -5899)] {
            let mut b = CircuitBuilder::with_witness();
            let lin = LinearCombination::constant(FieldScalar::from_i128(v));
            let y = rescale(&mut b, Wide::linear(lin, Some(v)), fmt).unwrap();
            assert_eq!(y.value, Some(expect));
            assert_eq!(b.cs().stats().num_constraints, (16 + 48 + 2) as usize);
            assert!(perturbation_detected(b, y.var));
        }
    }

    #[test]
    fn rescale_rejects_overflow() {
        let mut b = CircuitBuilder::with_witness();
        let v = 1i128 << 70;
        let lin = LinearCombination::constant(FieldScalar::from_i128(v));
        assert!(matches!(
            rescale(&mut b, Wide::linear(lin, Some(v)), q16()),
            Err(GadgetError::Overflow(_))
        ));
    }

    #[test]
    fn matmul_integer_example() {
        let mut b = CircuitBuilder::with_witness();
        let a = alloc_matrix(&mut b, &enc(&[&[1.0, 2.0], &[3.0, 4.0]]), Visibility::Private);
        let w = alloc_matrix(&mut b, &enc(&[&[5.0, 6.0], &[7.0, 8.0]]), Visibility::Public);
        let c = matmul(&mut b, &a, &w, None).unwrap();
        assert_eq!(raw_values(&c), enc(&[&[19.0, 22.0], &[43.0, 50.0]]));
        assert!(satisfied(b));
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<Vec<i64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-(1 << 20)..(1 << 20))).collect())
            .collect();
        let one = q16().one_raw();
        let ident: Vec<Vec<i64>> = (0..3).map(|i| (0..3).map(|j| if i == j { one } else { 0 }).collect()).collect();
        let mut b = CircuitBuilder::with_witness();
        let i = alloc_matrix(&mut b, &ident, Visibility::Public);
        let m = alloc_matrix(&mut b, &vals, Visibility::Private);
        let out = matmul(&mut b, &i, &m, None).unwrap();
        assert_eq!(raw_values(&out), vals);
        assert!(satisfied(b));

        let (x, y) = (vals[0][0], vals[1][1]);
        let mut b = CircuitBuilder::with_witness();
        let a = alloc_matrix(&mut b, &[vec![x]], Visibility::Private);
        let w = alloc_matrix(&mut b, &[vec![y]], Visibility::Private);
        let out = matmul(&mut b, &a, &w, None).unwrap();
        let expect = fxp_mul_rescale(
            FixedPointValue::from_raw(x, q16()).unwrap(),
            FixedPointValue::from_raw(y, q16()).unwrap(),
        )
        .unwrap();
        assert_eq!(out[0][0].value, Some(expect.raw() as i128));
    }

    #[test]
    fn matmul_random_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, n, l) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..4));
            let mut gen = |r, c| -> Vec<Vec<i64>> {
                (0..r).map(|_| (0..c).map(|_| rng.gen_range(-(1 << 22)..(1 << 22))).collect()).collect()
            };
            let (av, wv) = (gen(m, n), gen(n, l));
            let mut b = CircuitBuilder::with_witness();
            let a = alloc_matrix(&mut b, &av, Visibility::Private);
            let w = alloc_matrix(&mut b, &wv, Visibility::Public);
            let c = matmul(&mut b, &a, &w, None).unwrap();
            assert_eq!(raw_values(&c), plain_matmul(&av, &wv));
            assert!(satisfied(b));
        }
    }

    #[test]
    fn matmul_shape_errors() {
        let mut b = CircuitBuilder::with_witness();
        let a = alloc_matrix(&mut b, &[vec![1, 2, 3]], Visibility::Private);
        let w = alloc_matrix(&mut b, &[vec![1], vec![2]], Visibility::Private);
        assert!(matches!(matmul(&mut b, &a, &w, None), Err(GadgetError::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_with_bias_adds_in_output_scale() {
        let mut b = CircuitBuilder::with_witness();
        let a = alloc_matrix(&mut b, &enc(&[&[1.5, -2.0]]), Visibility::Private);
        let w = alloc_matrix(&mut b, &enc(&[&[2.0], &[0.25]]), Visibility::Public);
        let bias = alloc_matrix(&mut b, &enc(&[&[0.125]]), Visibility::Public);
        let c = matmul(&mut b, &a, &w, Some(&bias[0])).unwrap();
        assert_eq!(raw_values(&c), enc(&[&[2.625]]));
        assert!(perturbation_detected(b, c[0][0].var));
    }

    fn conv_oracle(input: &[i64], kernels: &[i64], s: Conv3dShape) -> Vec<i64> {
        let (oh, ow) = s.output_hw().unwrap();
        let mut out = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..s.out_channels {
                    let mut acc = 0i128;
                    for dy in 0..s.kernel {
                        for dx in 0..s.kernel {
                            for c in 0..s.channels {
                                let x = input[((oy * s.stride + dy) * s.width + ox * s.stride + dx) * s.channels + c];
                                let k = kernels[((o * s.kernel + dy) * s.kernel + dx) * s.channels + c];
                                acc += x as i128 * k as i128;
                            }
                        }
                    }
                    out.push((acc >> 16) as i64);
                }
            }
        }
        out
    }

    fn run_conv(input: &[i64], kernels: &[i64], s: Conv3dShape) -> (Vec<i64>, bool) {
        let mut b = CircuitBuilder::with_witness();
        let x: Vec<FxpVar> = input.iter().map(|&v| private(&mut b, v)).collect();
        let k: Vec<FxpVar> = kernels
            .iter()
            .map(|&v| b.alloc_fxp(Visibility::Public, Some(v), q16()).unwrap())
            .collect();
        let y = conv3d(&mut b, &x, &k, None, s).unwrap();
        let vals = y.iter().map(|v| v.value.unwrap() as i64).collect();
        (vals, satisfied(b))
    }

    #[test]
    fn conv_4x4_3x3_matches_sliding_window() {
        let s = Conv3dShape { height: 4, width: 4, channels: 1, out_channels: 1, kernel: 3, stride: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input: Vec<i64> = (0..16).map(|_| rng.gen_range(-(1 << 18)..(1 << 18))).collect();
        let kernels: Vec<i64> = (0..9).map(|_| rng.gen_range(-(1 << 17)..(1 << 17))).collect();
        let (out, ok) = run_conv(&input, &kernels, s);
        assert!(ok);
        assert_eq!(out.len(), 4);
        assert_eq!(out, conv_oracle(&input, &kernels, s));
    }

    #[test]
    fn conv_zero_kernel_and_channel_selection() {
        let s = Conv3dShape { height: 3, width: 3, channels: 3, out_channels: 1, kernel: 1, stride: 1 };
        let input: Vec<i64> = (0..27).map(|i| (i as i64 - 13) * 4099).collect();
        let (out, ok) = run_conv(&input, &[0, 0, 0], s);
        assert!(ok && out.iter().all(|&v| v == 0));
        let one = q16().one_raw();
        let (out, ok) = run_conv(&input, &[0, one, 0], s);
        assert!(ok);
        let channel1: Vec<i64> = input.iter().skip(1).step_by(3).copied().collect();
        assert_eq!(out, channel1);
    }

    #[test]
    fn conv_strided_multichannel() {
        let s = Conv3dShape { height: 7, width: 6, channels: 2, out_channels: 3, kernel: 3, stride: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<i64> = (0..7 * 6 * 2).map(|_| rng.gen_range(-(1 << 18)..(1 << 18))).collect();
        let kernels: Vec<i64> = (0..3 * 9 * 2).map(|_| rng.gen_range(-(1 << 17)..(1 << 17))).collect();
        let (out, ok) = run_conv(&input, &kernels, s);
        assert!(ok);
        assert_eq!(out.len(), 3 * 2 * 3);
        assert_eq!(out, conv_oracle(&input, &kernels, s));
    }

    #[test]
    fn conv_kernel_too_large() {
        let s = Conv3dShape { height: 2, width: 2, channels: 1, out_channels: 1, kernel: 3, stride: 1 };
        let mut b = CircuitBuilder::with_witness();
        let x: Vec<FxpVar> = (0..4).map(|_| private(&mut b, 0)).collect();
        let k: Vec<FxpVar> = (0..9).map(|_| private(&mut b, 0)).collect();
        assert!(matches!(
            conv3d(&mut b, &x, &k, None, s),
            Err(GadgetError::KernelLargerThanInput { .. })
        ));
    }

    fn run_average(rows: &[Vec<i64>]) -> Vec<i64> {
        let mut b = CircuitBuilder::with_witness();
        let v = alloc_matrix(&mut b, rows, Visibility::Private);
        let out = average(&mut b, &v).unwrap();
        let vals = out.iter().map(|x| x.value.unwrap() as i64).collect();
        assert!(satisfied(b));
        vals
    }

    #[test]
    fn average_examples() {
        let one = q16().one_raw();
        assert_eq!(run_average(&[vec![one, 0, 0], vec![0, one, 0]]), vec![one / 2, one / 2, 0]);
        let row = vec![12345, -999, 77];
        assert_eq!(run_average(std::slice::from_ref(&row)), row);
        assert_eq!(run_average(&vec![row.clone(); 4]), row);
        for got in run_average(&vec![row.clone(); 3]).iter().zip(&row) {
            assert!((got.0 - got.1).abs() <= 1);
        }
        let mut b = CircuitBuilder::with_witness();
        assert_eq!(average(&mut b, &[]), Err(GadgetError::EmptyBatch));
    }
}
