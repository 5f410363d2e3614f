//! Differentiable ops recorded on the [`Tape`].
//!
//! All matrices are rank-2 row-major; vectors used as per-column scales are
//! rank-1. Every op returns a shape error naming both operands on mismatch
//! and rejects non-finite results.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) mod kernels {
    /// `out[m×n] += a[m×k] · b[k×n]`
    pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            let arow = &a[i * k..(i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }

    /// `out[m×n] += a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
    }

    /// `out[k×n] += a[m×k]ᵀ · b[m×n]`
    pub fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let brow = &b[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let chunks = a.len() / 4;
        for c in 0..chunks {
            for l in 0..4 {
                acc[l] += a[4 * c + l] * b[4 * c + l];
            }
        }
        let mut tail = 0.0;
        for i in 4 * chunks..a.len() {
            tail += a[i] * b[i];
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + libm::exp(-x))
        } else {
            let e = libm::exp(x);
            e / (1.0 + e)
        }
    }
}

/// Precomputed rotation angles for rotating consecutive value pairs.
///
/// Columns are split into `heads` groups of `head_dim`; within a group, pair
/// `j` (columns `2j`, `2j+1`) at row `pos` is rotated by `angle(pos, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRotation {
    head_dim: usize,
    max_positions: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PairRotation {
    pub fn new(
        head_dim: usize,
        max_positions: usize,
        angle: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::config(format!(
                "rotary head dimension {head_dim} must be even and positive"
            )));
        }
        let pairs = head_dim / 2;
        let mut cos = Vec::with_capacity(max_positions * pairs);
        let mut sin = Vec::with_capacity(max_positions * pairs);
        for pos in 0..max_positions {
            for j in 0..pairs {
                let a = angle(pos, j);
                cos.push(libm::cos(a));
                sin.push(libm::sin(a));
            }
        }
        Ok(PairRotation {
            head_dim,
            max_positions,
            cos,
            sin,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    pub fn cos_sin(&self, pos: usize, pair: usize) -> (f64, f64) {
        let i = pos * self.head_dim / 2 + pair;
        (self.cos[i], self.sin[i])
    }

    /// Rotates `data` (rows × cols, row = position) in place; `inverse`
    /// rotates by the negated angles.
    pub(crate) fn apply(&self, data: &mut [f64], rows: usize, cols: usize, inverse: bool) {
        let pairs = self.head_dim / 2;
        for pos in 0..rows {
            let row = &mut data[pos * cols..(pos + 1) * cols];
            let base = pos * pairs;
            for head in row.chunks_mut(self.head_dim) {
                for j in 0..pairs {
                    let (c, mut s) = (self.cos[base + j], self.sin[base + j]);
                    if inverse {
                        s = -s;
                    }
                    let (a, b) = (head[2 * j], head[2 * j + 1]);
                    head[2 * j] = a * c - b * s;
                    head[2 * j + 1] = a * s + b * c;
                }
            }
        }
    }
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn scalar_value(op: &'static str, t: &Tensor) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::shape(op, t.shape(), &[1]));
    }
    Ok(t.item())
}

impl Tape {
    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_matrix("matmul", av)?;
        check_matrix("matmul", bv)?;
        if av.cols() != bv.rows() {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        kernels::matmul(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_matrix("matmul_nt", av)?;
        check_matrix("matmul_nt", bv)?;
        if av.cols() != bv.cols() {
            return Err(Error::shape("matmul_nt", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul_nt", value, Op::MatMulNt(a, b))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c))
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| 1.0 - v);
        self.push("one_minus", value, Op::OneMinus(x))
    }

    /// `s · x` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = scalar_value("mul_scalar", self.value(s))?;
        let value = self.value(x).map(|v| v * sv);
        self.push("mul_scalar", value, Op::MulScalar(x, s))
    }

    /// `x / s` for a one-element `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = scalar_value("div_scalar", self.value(s))?;
        let value = self.value(x).map(|v| v / sv);
        self.push("div_scalar", value, Op::DivScalar(x, s))
    }

    /// Scales row `i` of `x[n×d]` by `c[i]`, where `c` is `n×1`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        check_matrix("mul_col", xv)?;
        if cv.numel() != xv.rows() || cv.cols() != 1 {
            return Err(Error::shape("mul_col", xv.shape(), cv.shape()));
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .chunks(cols)
            .zip(cv.data())
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let value = Tensor::new(xv.shape(), data)?;
        self.push("mul_col", value, Op::MulCol(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(kernels::sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v * kernels::sigmoid(v));
        self.push("silu", value, Op::Silu(x))
    }

    /// Row-wise softmax over the last dimension.
    ///
    /// `mask` is added to the logits before normalisation; its entries are
    /// `0` or `-inf`. It must either match `x`'s shape or be a single row
    /// that is broadcast over all rows. A row whose entries are all masked is
    /// an error.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if let Some(m) = mask {
            let broadcast = m.numel() == cols && m.cols() == cols;
            if m.shape() != xv.shape() && !broadcast {
                return Err(Error::shape("softmax_lastdim", xv.shape(), m.shape()));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != f64::NEG_INFINITY) {
                return Err(Error::InvalidTensor(
                    "softmax mask entries must be 0 or -inf".into(),
                ));
            }
        }
        let mut out = Vec::with_capacity(xv.numel());
        let mut row_buf = vec![0.0; cols];
        for (r, row) in xv.data().chunks(cols).enumerate() {
            row_buf.copy_from_slice(row);
            if let Some(m) = mask {
                let mrow = if m.numel() == cols { m.data() } else { m.row(r) };
                for (v, &mv) in row_buf.iter_mut().zip(mrow) {
                    *v += mv;
                }
            }
            let max = row_buf.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateDistribution { row: r });
            }
            let start = out.len();
            let mut sum = 0.0;
            for &v in &row_buf {
                let e = libm::exp(v - max);
                sum += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= sum;
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        self.push("softmax_lastdim", value, Op::Softmax(x))
    }

    /// Each row divided by `sqrt(mean(row²) + eps)` then scaled elementwise.
    pub fn rms_norm(&mut self, x: Var, scale: Var, eps: f64) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(scale));
        let cols = xv.cols();
        if sv.numel() != cols {
            return Err(Error::shape("rms_norm", xv.shape(), sv.shape()));
        }
        if !(eps >= 0.0) {
            return Err(Error::config(format!("rms_norm eps {eps} must be non-negative")));
        }
        let s = sv.data();
        let mut inv_rms = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(cols) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let inv = 1.0 / libm::sqrt(ms + eps);
            inv_rms.push(inv);
            out.extend(row.iter().zip(s).map(|(v, g)| v * inv * g));
        }
        let value = Tensor::new(xv.shape(), out)?;
        self.push("rms_norm", value, Op::RmsNorm { x, scale, inv_rms })
    }

    /// Rotates consecutive column pairs of `x[n×d]` with a row-indexed table.
    pub fn rotate_pairs(&mut self, x: Var, rotation: &Arc<PairRotation>) -> Result<Var> {
        let xv = self.value(x);
        check_matrix("rotate_pairs", xv)?;
        if xv.cols() % rotation.head_dim() != 0 {
            return Err(Error::shape("rotate_pairs", xv.shape(), &[rotation.head_dim()]));
        }
        if xv.rows() > rotation.max_positions() {
            return Err(Error::shape("rotate_pairs", xv.shape(), &[rotation.max_positions()]));
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        rotation.apply(&mut data, rows, cols, false);
        let value = Tensor::new(&[rows, cols], data)?;
        self.push(
            "rotate_pairs",
            value,
            Op::Rotate {
                x,
                rotation: Arc::clone(rotation),
            },
        )
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        check_matrix("slice_cols", xv)?;
        if len == 0 || start + len > xv.cols() {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let data = xv
            .data()
            .chunks(xv.cols())
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(&[xv.rows(), len], data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start })
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat_cols needs at least one part".into()))?;
        let rows = self.value(*first).rows();
        let mut width = 0;
        for &p in parts {
            let pv = self.value(p);
            check_matrix("concat_cols", pv)?;
            if pv.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), pv.shape()));
            }
            width += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(&[rows, width], data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `ids` of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        check_matrix("gather_rows", tv)?;
        if ids.is_empty() {
            return Err(Error::InvalidTensor("gather_rows needs at least one id".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::Vocab {
                token: bad,
                vocab: tv.rows(),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * tv.cols());
        for &id in ids {
            data.extend_from_slice(tv.row(id));
        }
        let value = Tensor::new(&[ids.len(), tv.cols()], data)?;
        self.push(
            "gather_rows",
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Token-averaged natural-log cross-entropy of `logits[n×V]` against
    /// `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        check_matrix("cross_entropy", lv)?;
        if targets.len() != lv.rows() {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let vocab = lv.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocab { token: bad, vocab });
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut total = 0.0;
        for (row, &t) in lv.data().chunks(vocab).zip(targets) {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let start = probs.len();
            let mut sum = 0.0;
            for &v in row {
                let e = libm::exp(v - max);
                sum += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= sum;
            }
            total += max + libm::log(sum) - row[t];
        }
        let value = Tensor::scalar(total / targets.len() as f64);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Column means of `x[n×c]` as a `1×c` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; cols];
        for row in xv.data().chunks(cols) {
            for (a, b) in data.iter_mut().zip(row) {
                *a += b;
            }
        }
        for v in &mut data {
            *v /= rows as f64;
        }
        let value = Tensor::new(&[1, cols], data)?;
        self.push("mean_rows", value, Op::MeanRows(x))
    }

    /// Shannon entropy `−Σ p ln p` (nats) of a probability vector.
    pub fn entropy(&mut self, p: Var) -> Result<Var> {
        let pv = self.value(p);
        if pv.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidTensor("entropy needs strictly positive probabilities".into()));
        }
        let h = -pv.data().iter().map(|&v| v * libm::log(v)).sum::<f64>();
        self.push("entropy", Tensor::scalar(h), Op::Entropy(p))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.sum() / xv.numel() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::params::ParamSet;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(5);
        let b = rng.normal_tensor(&[3, 3], 0.0, 1.0);
        let i3 = tape.constant(Tensor::eye(3));
        let bv = tape.constant(b.clone());
        let out = tape.matmul(i3, bv).unwrap();
        assert_eq!(tape.value(out), &b);

        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        let out = tape.matmul(a, c).unwrap();
        assert_eq!(tape.value(out).data(), &[17.0, 39.0]);

        let z = tape.constant(Tensor::zeros(&[3, 3]));
        let out = tape.matmul(z, bv).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax_lastdim(x, None).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let mask = t(&[2], &[0.0, f64::NEG_INFINITY]);
        let y = tape.softmax_lastdim(x, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        // exp(k) / (e + e² + e³)
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.softmax_lastdim(x, None).unwrap();
        let denom: f64 = (1..=3).map(|k| libm::exp(k as f64)).sum();
        let expected = [0.09003, 0.24473, 0.66524];
        for (k, (&v, e)) in tape.value(y).data().iter().zip(expected).enumerate() {
            assert!((v - e).abs() < 1e-5);
            assert!((v - libm::exp((k + 1) as f64) / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_fully_masked_row_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[0.0, 1.0, 2.0, 3.0]));
        let mask = t(&[2, 2], &[0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert_eq!(
            tape.softmax_lastdim(x, Some(&mask)).unwrap_err(),
            Error::DegenerateDistribution { row: 1 }
        );
    }

    #[test]
    fn rms_norm_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::ones(&[1, 4]));
        let scale = tape.constant(Tensor::ones(&[4]));
        let y = tape.rms_norm(ones, scale, 1e-6).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let zeros = tape.constant(Tensor::zeros(&[2, 4]));
        let y = tape.rms_norm(zeros, scale, 1e-6).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let x = tape.constant(t(&[1, 2], &[3.0, 4.0]));
        let scale = tape.constant(Tensor::ones(&[2]));
        let y = tape.rms_norm(x, scale, 0.0).unwrap();
        let r = libm::sqrt(12.5);
        let got = tape.value(y).data();
        assert!((got[0] - 3.0 / r).abs() < 1e-15 && (got[1] - 4.0 / r).abs() < 1e-15);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[f64::MAX]));
        assert_eq!(tape.scale(x, 10.0).unwrap_err(), Error::NonFinite { op: "scale" });
    }

    #[test]
    fn gather_rejects_out_of_vocab() {
        let mut tape = Tape::new();
        let table = tape.constant(Tensor::zeros(&[4, 2]));
        assert_eq!(
            tape.gather_rows(table, &[1, 4]).unwrap_err(),
            Error::Vocab { token: 4, vocab: 4 }
        );
    }

    #[test]
    fn no_grad_scope_records_nothing() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::ones(&[2, 2]), true);
        let before = tape.len();
        let out = tape
            .no_grad(|t| {
                let a = t.matmul(w, w)?;
                let b = t.sigmoid(a)?;
                Ok(alloc::vec![b])
            })
            .unwrap();
        assert_eq!(tape.len(), before + 1);
        assert!(!tape.requires_grad(out[0]));
        assert!(tape.is_grad_enabled());
    }

    #[test]
    fn detach_severs_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0), true);
        let sq = tape.mul(w, w).unwrap();
        let cut = tape.detach(sq);
        let loss = tape.mul(cut, w).unwrap();
        tape.backward(loss).unwrap();
        // d/dw [sg(w²)·w] = w² = 9, not 3w² = 27.
        assert_eq!(tape.grad(w).unwrap().item(), 9.0);
    }

    /// Builds a parameter set of random tensors with the given shapes.
    fn random_params(shapes: &[(&str, &[usize])], seed: u64) -> ParamSet {
        let mut rng = Rng::new(seed);
        let mut set = ParamSet::new();
        for (name, shape) in shapes {
            set.add(name, rng.normal_tensor(shape, 0.0, 1.0), true, false);
        }
        set
    }

    #[test]
    fn every_op_passes_grad_check() {
        let set = random_params(
            &[
                ("a", &[3, 4]),
                ("b", &[4, 5]),
                ("c", &[5, 4]),
                ("s", &[1]),
                ("col", &[3, 1]),
                ("scale", &[5]),
                ("table", &[6, 5]),
            ],
            11,
        );
        let rotation = Arc::new(PairRotation::new(2, 8, |p, j| 0.3 * p as f64 + j as f64).unwrap());
        let mask = Tensor::from_fn(&[3, 5], |i| if i % 5 > i / 5 + 2 { f64::NEG_INFINITY } else { 0.0 });
        // matmul_nt(3×5, 5×4) is mis-shaped and must surface as an error.
        let report = grad_check(&set, 1e-5, |tape, p| {
            let ab = tape.matmul(p[0], p[1])?;
            tape.matmul_nt(ab, p[2])
        });
        assert!(matches!(report, Err(Error::Shape { .. })));

        let report = grad_check(&set, 1e-5, |tape, p| {
            let ab = tape.matmul(p[0], p[1])?; // 3×5
            let abc = tape.matmul(ab, p[2])?; // 3×4
            let back = tape.matmul_nt(abc, p[2])?; // 3×5
            let sig = tape.sigmoid(back)?;
            let silu = tape.silu(ab)?;
            let prod = tape.mul(sig, silu)?;
            let diff = tape.sub(prod, ab)?;
            let om = tape.one_minus(diff)?;
            let sc = tape.mul_scalar(om, p[3])?;
            let dv = tape.div_scalar(sc, p[3])?;
            let dv = tape.add(dv, sc)?;
            let mc = tape.mul_col(dv, p[4])?;
            let sm = tape.softmax_lastdim(mc, Some(&mask))?;
            let rn = tape.rms_norm(mc, p[5], 1e-6)?;
            let rn = tape.slice_cols(rn, 1, 4)?;
            let rot = tape.rotate_pairs(rn, &rotation)?;
            let left = tape.slice_cols(rot, 0, 2)?;
            let right = tape.slice_cols(sm, 2, 3)?;
            let cat = tape.concat_cols(&[right, left])?;
            let emb = tape.gather_rows(p[6], &[0, 3, 3])?;
            let mixed = tape.mul(cat, emb)?;
            let logits = tape.scale(mixed, 0.7)?;
            let ce = tape.cross_entropy(logits, &[1, 4, 0])?;
            let probs = tape.softmax_lastdim(logits, None)?;
            let mr = tape.mean_rows(probs)?;
            let h = tape.entropy(mr)?;
            let m = tape.mean(mixed)?;
            let s = tape.sum(cat)?;
            let acc = tape.add(ce, h)?;
            let acc = tape.add(acc, m)?;
            let s = tape.scale(s, 0.1)?;
            tape.add(acc, s)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }
}
