//! Flat parameter/gradient vectors and the linear algebra used on them.
//!
//! Every model, gradient, and update direction in the simulator is a
//! [`ParamVector`]: a dense `f64` vector with a fixed length. Operations on
//! two vectors require equal lengths and panic otherwise; a length mismatch
//! always means caller code mixed parameters from different models, which is
//! unrecoverable.
//!
//! All reductions run in index order with plain `f64` accumulation, so a
//! given pair of vectors always produces the same dot product bit-for-bit.

use std::ops::Index;

/// Dense vector of model parameters or a gradient over them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wraps raw values. Panics if any entry is non-finite.
    pub fn new(values: Vec<f64>) -> Self {
        for (i, v) in values.iter().enumerate() {
            assert!(v.is_finite(), "ParamVector entry {i} is not finite: {v}");
        }
        ParamVector { values }
    }

    /// The zero vector of dimension `len`.
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn assert_same_len(&self, other: &ParamVector, op: &str) {
        assert_eq!(
            self.len(),
            other.len(),
            "{op}: dimension mismatch ({} vs {})",
            self.len(),
            other.len()
        );
    }

    /// Inner product, accumulated in index order.
    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.assert_same_len(other, "dot");
        let mut acc = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a * b;
        }
        acc
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine of the angle between two vectors, clamped to `[-1, 1]`.
    ///
    /// If either vector has zero norm the similarity is defined as `0.0`
    /// (neutral: a zero gradient conflicts with nothing).
    pub fn cosine_similarity(&self, other: &ParamVector) -> f64 {
        self.assert_same_len(other, "cosine_similarity");
        let na = self.norm();
        let nb = other.norm();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (self.dot(other) / (na * nb)).clamp(-1.0, 1.0)
    }

    /// Removes from `self` its component along `direction`:
    /// `self - (self . direction / ||direction||^2) * direction`.
    ///
    /// Panics if `direction` has zero norm.
    pub fn project_out(&self, direction: &ParamVector) -> ParamVector {
        self.assert_same_len(direction, "project_out");
        let denom = direction.dot(direction);
        assert!(
            denom > 0.0,
            "project_out: direction has zero norm; cannot project onto it"
        );
        let coef = self.dot(direction) / denom;
        let values = self
            .values
            .iter()
            .zip(&direction.values)
            .map(|(s, d)| s - coef * d)
            .collect();
        ParamVector { values }
    }

    /// `alpha * x + y`, elementwise.
    pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> ParamVector {
        x.assert_same_len(y, "axpy");
        let values = x
            .values
            .iter()
            .zip(&y.values)
            .map(|(xi, yi)| alpha * xi + yi)
            .collect();
        ParamVector { values }
    }

    /// `self += alpha * x`, in place.
    pub fn axpy_in_place(&mut self, alpha: f64, x: &ParamVector) {
        self.assert_same_len(x, "axpy_in_place");
        for (s, xi) in self.values.iter_mut().zip(&x.values) {
            *s += alpha * xi;
        }
    }

    /// `alpha * self`, elementwise.
    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self *= alpha`, in place.
    pub fn scale_in_place(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &ParamVector) -> ParamVector {
        self.assert_same_len(other, "add");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        ParamVector { values }
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        self.assert_same_len(other, "sub");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        ParamVector { values }
    }

    /// Consumes the vector, returning the raw values.
    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector::new(values)
    }
}
