//! Forward tensor math. The autodiff graph calls these same functions, so
//! the direct-call contract and the recorded-graph path cannot drift apart.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dimension("matmul expects rank-2 tensors".into()));
    }
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims differ: {k} vs {k2}"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aip * brow[j];
            }
        }
    }
    Ok(out)
}

pub fn transpose<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.rank(), 2);
    let (m, n) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            let v = a.at(i, j);
            out.set(j, i, v);
        }
    }
    out
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "add shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn sub<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "sub shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "mul shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// a[m×n] + b[1×n], b broadcast over rows.
pub fn add_row<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || b.rows() != 1 || b.cols() != a.cols() {
        return Err(Error::Dimension(format!(
            "add_row expects [m×n] + [1×n], got {:?} + {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x + bd[i % n])
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// a[m×n] * b[1×n], b broadcast over rows.
pub fn mul_row<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || b.rows() != 1 || b.cols() != a.cols() {
        return Err(Error::Dimension(format!(
            "mul_row expects [m×n] * [1×n], got {:?} * {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x * bd[i % n])
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale<S: Scalar>(a: &Tensor<S>, c: S) -> Tensor<S> {
    a.map(|x| x * c)
}

pub fn relu<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(|x| if x > S::zero() { x } else { S::zero() })
}

pub fn abs<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    a.map(|x| x.abs())
}

/// Softmax over the last axis of a tensor of any rank; max-subtracted.
pub fn softmax<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let k = *a.shape().last().unwrap();
    if k == 0 {
        return a.clone();
    }
    let mut data = Vec::with_capacity(a.numel());
    for chunk in a.data().chunks(k) {
        let mx = chunk.iter().cloned().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = chunk.iter().map(|&x| (x - mx).exp()).collect();
        let sum = exps.iter().cloned().fold(S::zero(), |s, e| s + e);
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Per-row normalization to zero mean / unit variance over the feature axis.
/// Variance floor: epsilon inside the square root, so constant rows map to
/// zeros instead of NaN.
pub fn layer_norm_rows<S: Scalar>(x: &Tensor<S>, eps: S) -> Tensor<S> {
    debug_assert_eq!(x.rank(), 2);
    let (m, n) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[m, n]);
    if n == 0 {
        return out;
    }
    let inv_n = S::one() / S::from_f64(n as f64);
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().cloned().fold(S::zero(), |s, v| s + v) * inv_n;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(S::zero(), |s, v| s + v)
            * inv_n;
        let inv_std = S::one() / (var + eps).sqrt();
        for j in 0..n {
            out.set(i, j, (row[j] - mean) * inv_std);
        }
    }
    out
}

/// Layer norm with scale-and-shift: gamma/beta are [1×d] (or [d]) vectors.
pub fn layer_norm_affine<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::Dimension(format!(
            "layer_norm_affine: gamma/beta must have {d} elements"
        )));
    }
    let normed = layer_norm_rows(x, eps);
    let g = Tensor::new(vec![1, d], gamma.data().to_vec())?;
    let b = Tensor::new(vec![1, d], beta.data().to_vec())?;
    add_row(&mul_row(&normed, &g)?, &b)
}

/// 1D convolution ("same" padding) along the sequence axis.
/// x: [len × ch_in], w: [ch_out, ch_in, k] with odd k, b: [1 × ch_out].
pub fn conv1d_same<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if w.rank() != 3 {
        return Err(Error::Dimension(
            "conv1d_same kernel must be [ch_out, ch_in, k]".into(),
        ));
    }
    let (ch_out, ch_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if k % 2 == 0 {
        return Err(Error::Config(format!(
            "conv1d_same kernel width must be odd, got {k}"
        )));
    }
    if x.rank() != 2 || x.cols() != ch_in {
        return Err(Error::Dimension(format!(
            "conv1d_same input channels {:?} do not match kernel ch_in {ch_in}",
            x.shape()
        )));
    }
    if b.numel() != ch_out {
        return Err(Error::Dimension(format!(
            "conv1d_same bias must have {ch_out} elements"
        )));
    }
    let len = x.rows();
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(&[len, ch_out]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    for t in 0..len {
        for o in 0..ch_out {
            let mut acc = bd[o];
            for j in 0..k {
                let s = t + j;
                if s < pad || s - pad >= len {
                    continue;
                }
                let s = s - pad;
                let xrow = &xd[s * ch_in..(s + 1) * ch_in];
                let wrow = &wd[o * ch_in * k + j..];
                for c in 0..ch_in {
                    acc = acc + xrow[c] * wrow[c * k];
                }
            }
            out.set(t, o, acc);
        }
    }
    Ok(out)
}

/// Rows of `a` selected (and possibly repeated) by `indices`.
pub fn gather_rows<S: Scalar>(a: &Tensor<S>, indices: &[usize]) -> Result<Tensor<S>> {
    debug_assert_eq!(a.rank(), 2);
    let n = a.cols();
    let mut data = Vec::with_capacity(indices.len() * n);
    for &i in indices {
        if i >= a.rows() {
            return Err(Error::Dimension(format!(
                "gather_rows index {i} out of range for {} rows",
                a.rows()
            )));
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::new(vec![indices.len(), n], data)
}

pub fn concat_rows<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let n = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?
        .cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != n {
            return Err(Error::Dimension("concat_rows column mismatch".into()));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, n], data)
}

pub fn concat_cols<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let m = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat_cols of nothing".into()))?
        .rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    for p in parts {
        if p.rows() != m {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
    }
    let mut out = Tensor::zeros(&[m, total]);
    for i in 0..m {
        let mut at = 0;
        for p in parts {
            for j in 0..p.cols() {
                let v = p.at(i, j);
                out.set(i, at + j, v);
            }
            at += p.cols();
        }
    }
    Ok(out)
}

pub fn slice_cols<S: Scalar>(a: &Tensor<S>, start: usize, end: usize) -> Result<Tensor<S>> {
    if end > a.cols() || start > end {
        return Err(Error::Dimension(format!(
            "slice_cols {start}..{end} out of range for {} cols",
            a.cols()
        )));
    }
    let m = a.rows();
    let mut data = Vec::with_capacity(m * (end - start));
    for i in 0..m {
        data.extend_from_slice(&a.row(i)[start..end]);
    }
    Tensor::new(vec![m, end - start], data)
}

/// [m×n] → [m×1], summing each row.
pub fn row_sum<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.rank(), 2);
    let m = a.rows();
    let mut out = Tensor::zeros(&[m, 1]);
    for i in 0..m {
        let s = a.row(i).iter().cloned().fold(S::zero(), |s, v| s + v);
        out.set(i, 0, s);
    }
    out
}

pub fn sum_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    Tensor::scalar(a.data().iter().cloned().fold(S::zero(), |s, v| s + v))
}

pub fn mean_all<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let n = a.numel();
    if n == 0 {
        return Tensor::scalar(S::zero());
    }
    Tensor::scalar(sum_all(a).item() / S::from_f64(n as f64))
}

/// Per-position weighted cross-entropy from logits, averaged over unmasked
/// positions. `class_weights[label]` scales each position's term.
pub fn ce_from_logits<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
    class_weights: &[S],
    mask: &[bool],
) -> Result<S> {
    if logits.rank() != 2 || logits.rows() != labels.len() || labels.len() != mask.len() {
        return Err(Error::Dimension(
            "ce_from_logits: logits rows, labels, mask must agree".into(),
        ));
    }
    let k = logits.cols();
    let mut total = S::zero();
    let mut count = 0usize;
    for (i, (&label, &m)) in labels.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if label >= k {
            return Err(Error::Dimension(format!(
                "ce_from_logits: label {label} out of range {k}"
            )));
        }
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let lse = row
            .iter()
            .map(|&z| (z - mx).exp())
            .fold(S::zero(), |s, e| s + e)
            .ln()
            + mx;
        total = total - class_weights[label] * (row[label] - lse);
        count += 1;
    }
    if count == 0 {
        return Ok(S::zero());
    }
    Ok(total / S::from_f64(count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = t(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[1.0], &[1.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, t(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn matmul_zeros() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let b = t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&z, &b).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let x = t(&[&[1.0], &[2.0], &[3.0], &[-4.0]]);
        let w = Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::zeros(&[1, 1]);
        assert_eq!(conv1d_same(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn conv_box_kernel_hand_case() {
        let x = t(&[&[1.0], &[2.0], &[3.0]]);
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1, 1]);
        let y = conv1d_same(&x, &w, &b).unwrap();
        assert_eq!(y, t(&[&[3.0], &[6.0], &[5.0]]));
    }

    #[test]
    fn conv_empty_sequence() {
        let x = Tensor::<f64>::zeros(&[0, 1]);
        let w = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1, 1]);
        let y = conv1d_same(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[0, 1]);
    }

    #[test]
    fn conv_even_kernel_rejected() {
        let x = Tensor::<f64>::zeros(&[2, 1]);
        let w = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1, 1]);
        assert!(matches!(conv1d_same(&x, &w, &b), Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = t(&[&[5.0, 5.0, 5.0]]);
        let y = layer_norm_rows(&x, 1e-5);
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = t(&[&[1.0, 3.0]]);
        let y = layer_norm_rows(&x, 1e-12);
        assert!((y.at(0, 0) + 1.0).abs() < 1e-5);
        assert!((y.at(0, 1) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_affine_gamma_zero_gives_beta() {
        let x = t(&[&[1.0, 3.0], &[2.0, -1.0]]);
        let gamma = Tensor::zeros(&[1, 2]);
        let beta = Tensor::new(vec![1, 2], vec![0.5, -0.25]).unwrap();
        let y = layer_norm_affine(&x, &gamma, &beta, 1e-5).unwrap();
        for i in 0..2 {
            assert_eq!(y.at(i, 0), 0.5);
            assert_eq!(y.at(i, 1), -0.25);
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let x = t(&[&[0.0, 0.0, 0.0]]);
        let y = softmax(&x);
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_case() {
        let x = t(&[&[1.0f64.ln(), 2.0f64.ln(), 1.0f64.ln()]]);
        let y = softmax(&x);
        assert!((y.at(0, 0) - 0.25).abs() < 1e-12);
        assert!((y.at(0, 1) - 0.5).abs() < 1e-12);
        assert!((y.at(0, 2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = t(&[&[0.3, -1.2, 2.0]]);
        let shifted = x.map(|v| v + 123.5);
        let a = softmax(&x);
        let b = softmax(&shifted);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[&[0.1, 0.9, -3.0], &[10.0, 10.0, 9.0]]);
        let y = softmax(&x);
        for i in 0..2 {
            let s: f64 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gather_and_concat() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let g = gather_rows(&a, &[1, 1, 0]).unwrap();
        assert_eq!(g, t(&[&[3.0, 4.0], &[3.0, 4.0], &[1.0, 2.0]]));
        let c = concat_cols(&[&a, &g.map(|x| x)]).err();
        assert!(c.is_some());
    }

    #[test]
    fn ce_from_logits_matches_softmax_nll() {
        let logits = t(&[&[0.2, -0.3, 1.0], &[0.0, 0.0, 0.0]]);
        let probs = softmax(&logits);
        let loss = ce_from_logits(&logits, &[2, 0], &[1.0, 1.0, 1.0], &[true, true]).unwrap();
        let expected = -(probs.at(0, 2).ln() + probs.at(1, 0).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
    }
}
