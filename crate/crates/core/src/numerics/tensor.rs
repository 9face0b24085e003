use crate::error::{Error, Result};

/// Scalar element type for tensors. Training and inference run in `f32`;
/// gradient checking runs the same code in `f64`.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Dense row-major tensor. Rank is at least 1; individual dims may be 0
/// (empty sequences are legal inputs for sequence ops).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Dimension("tensor rank must be >= 1".into()));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Number of rows when viewed as a matrix (rank 2 only).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// The single element of a 1-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, v: S) {
        for x in self.data.iter_mut() {
            *x = v;
        }
    }

    /// Elementwise in-place accumulate; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn same_shape(&self, other: &Tensor<S>) -> bool {
        self.shape == other.shape
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|x| x.as_f32()).collect()
    }

    pub fn from_f32_slice(shape: &[usize], values: &[f32]) -> Result<Self> {
        Tensor::new(
            shape.to_vec(),
            values.iter().map(|&x| S::from_f32(x)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_mismatch() {
        let r = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn new_rejects_rank_zero() {
        let r = Tensor::<f32>::new(vec![], vec![]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_length_dim_is_legal() {
        let t = Tensor::<f32>::zeros(&[0, 80]);
        assert_eq!(t.numel(), 0);
        assert_eq!(t.shape(), &[0, 80]);
    }
}
