//! Dense row-major `f64` tensors.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from external data, rejecting non-finite values and
    /// inconsistent shapes.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Tensor(format!("shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Tensor(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Tensor(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor; callers guarantee the shape/length invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Per-sample shape (everything after the batch dimension).
    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Tensor(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor::from_parts(shape, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// `sum_i weights[i] * tensors[i]`, accumulated in slice order starting
    /// from the first scaled term so a single weight of `1.0` is exact.
    pub fn weighted_sum(tensors: &[&Tensor], weights: &[f64]) -> Result<Tensor> {
        let (first, rest) = tensors
            .split_first()
            .ok_or_else(|| Error::Tensor("weighted sum of no tensors".into()))?;
        if weights.len() != tensors.len() {
            return Err(Error::Tensor(format!(
                "{} weights for {} tensors",
                weights.len(),
                tensors.len()
            )));
        }
        let mut out = (*first).clone();
        for v in out.data.iter_mut() {
            *v *= weights[0];
        }
        for (t, &w) in rest.iter().zip(&weights[1..]) {
            if t.shape != out.shape {
                return Err(Error::Tensor(format!(
                    "weighted sum shape mismatch {:?} vs {:?}",
                    t.shape, out.shape
                )));
            }
            for (o, v) in out.data.iter_mut().zip(&t.data) {
                *o += w * v;
            }
        }
        Ok(out)
    }

    /// Elementwise mean with equal weights `1/n`.
    pub fn mean(tensors: &[&Tensor]) -> Result<Tensor> {
        let w = 1.0 / tensors.len() as f64;
        Tensor::weighted_sum(tensors, &vec![w; tensors.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![2], vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor::from_vec(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::from_vec(vec![0, 2], vec![]).is_err());
        let t = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert_eq!(t.row_len(), 2);
    }

    #[test]
    fn weighted_sum_of_one_is_exact() {
        let t = Tensor::from_vec(vec![3], vec![0.1, -0.0, 1e-300]).unwrap();
        let s = Tensor::weighted_sum(&[&t], &[1.0]).unwrap();
        assert!(s.bit_eq(&t));
    }

    #[test]
    fn mean_of_two() {
        let a = Tensor::from_vec(vec![2], vec![2.0, 4.0]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![4.0, 8.0]).unwrap();
        assert_eq!(Tensor::mean(&[&a, &b]).unwrap().data(), &[3.0, 6.0]);
    }
}
