//! Dense real-vector primitives.
//!
//! Every parameter vector, task gradient and surgical update in the crate is a
//! [`Vector`]. Binary operations require equal dimensions and report a
//! [`Error::DimensionMismatch`] otherwise.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this value are treated as zero.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("vector"));
        }
        let v = Vector(entries);
        v.check_finite()?;
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("vector"))
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|x| c * x).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        same_dim(self, other)?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        same_dim(self, other)?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self += c * x`
    pub fn axpy(&mut self, c: f64, x: &Vector) -> Result<()> {
        same_dim(self, x)?;
        for (s, xi) in self.0.iter_mut().zip(&x.0) {
            *s += c * xi;
        }
        Ok(())
    }

    /// Elementwise sum of a non-empty list of equal-dimension vectors.
    pub fn sum<'a, I>(vectors: I) -> Result<Vector>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let mut iter = vectors.into_iter();
        let mut acc = iter.next().ok_or(Error::Empty("vector sum"))?.clone();
        for v in iter {
            acc.axpy(1.0, v)?;
        }
        Ok(acc)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl From<Vec<f64>> for Vector {
    /// Unchecked conversion; use [`Vector::new`] at API boundaries.
    fn from(entries: Vec<f64>) -> Self {
        Vector(entries)
    }
}

impl From<&[f64]> for Vector {
    fn from(entries: &[f64]) -> Self {
        Vector(entries.to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

fn same_dim(a: &Vector, b: &Vector) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        })
    }
}

pub fn dot(a: &Vector, b: &Vector) -> Result<f64> {
    same_dim(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

pub fn norm(a: &Vector) -> f64 {
    a.norm_squared().sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    let d = dot(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= EPS_NORM {
        return Err(Error::DegenerateGradient { norm: na });
    }
    if nb <= EPS_NORM {
        return Err(Error::DegenerateGradient { norm: nb });
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Removes the component of `g` along `onto`: `g - (g.onto / |onto|^2) onto`.
pub fn project_out(g: &Vector, onto: &Vector) -> Result<Vector> {
    let d = dot(g, onto)?;
    let nsq = onto.norm_squared();
    if nsq.sqrt() <= EPS_NORM {
        return Err(Error::DegenerateGradient { norm: nsq.sqrt() });
    }
    let mut out = g.clone();
    out.axpy(-d / nsq, onto)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 5.0);
        assert_eq!(dot(&v(&[1.0, 0.0]), &v(&[-1.0, 1.0])).unwrap(), -1.0);
    }

    #[test]
    fn dot_dimension_mismatch() {
        let err = dot(&v(&[1.0, 0.0]), &v(&[1.0])).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&v(&[0.0, 0.0])), 0.0);
        assert_eq!(norm(&v(&[3.0, 4.0])), 5.0);
        assert_eq!(norm(&v(&[1.0, 1.0, 1.0, 1.0])), 2.0);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&v(&[2.0, 0.0]), &v(&[2.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
        assert_abs_diff_eq!(
            cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 1.0])).unwrap(),
            -std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_degenerate() {
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateGradient { .. })
        ));
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1e-13, 0.0])),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn project_out_examples() {
        assert_eq!(
            project_out(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            v(&[1.0, 0.0])
        );
        assert_eq!(
            project_out(&v(&[2.0, 2.0]), &v(&[2.0, 2.0])).unwrap(),
            v(&[0.0, 0.0])
        );
        assert_eq!(
            project_out(&v(&[1.0, 0.0]), &v(&[-1.0, 1.0])).unwrap(),
            v(&[0.5, 0.5])
        );
        assert!(matches!(
            project_out(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])),
            Err(Error::DegenerateGradient { .. })
        ));
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Vector::new(vec![1.0, 2.0]).is_ok());
    }

    fn pair(max_dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_dim).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_is_orthogonal_and_shrinks((g, j) in pair(12)) {
            let (g, j) = (Vector::from(g), Vector::from(j));
            prop_assume!(norm(&j) > 1e-6);
            let r = project_out(&g, &j).unwrap();
            let scale = norm(&g) * norm(&j);
            prop_assert!(dot(&r, &j).unwrap().abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE));
            let expected = g.norm_squared() - dot(&g, &j).unwrap().powi(2) / j.norm_squared();
            let got = r.norm_squared();
            prop_assert!((got - expected).abs() <= 1e-9 * g.norm_squared().max(1e-300));
            prop_assert!(norm(&r) <= norm(&g) * (1.0 + 1e-12));
        }

        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            (a, b) in pair(8),
            c in 1e-3..1e3f64,
            d in 1e-3..1e3f64,
        ) {
            let (a, b) = (Vector::from(a), Vector::from(b));
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let base = cosine(&a, &b).unwrap();
            prop_assert!((base - cosine(&b, &a).unwrap()).abs() <= 1e-12);
            let scaled = cosine(&a.scaled(c), &b.scaled(d)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12);
        }
    }
}
