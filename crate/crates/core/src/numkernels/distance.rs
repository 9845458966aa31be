use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar types distances can be computed over. Arithmetic is always `f64`.
pub trait Real: Copy {
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.to_f64() * y.to_f64()).sum()
}

pub fn squared_euclidean<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let diff = x.to_f64() - y.to_f64();
            diff * diff
        })
        .sum()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa.is_nan() || bb.is_nan() || aa <= 0.0 || bb <= 0.0 {
        return Err(Error::ZeroNorm("cosine_distance"));
    }
    // sqrt(aa * bb) rather than |a| |b|: sqrt(x * x) == x exactly, so a == b gives 0
    Ok((1.0 - dot(a, b) / (aa * bb).sqrt()).clamp(0.0, 2.0))
}

pub fn euclidean_distance<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(squared_euclidean(a, b).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Cosine,
    Euclidean,
}

impl Distance {
    pub fn eval<T: Real>(self, a: &[T], b: &[T]) -> Result<f64> {
        match self {
            Distance::Cosine => cosine_distance(a, b),
            Distance::Euclidean => euclidean_distance(a, b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Cosine => "cosine",
            Distance::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Distance::Cosine),
            "euclidean" | "euc" => Ok(Distance::Euclidean),
            other => Err(Error::InvalidConfig(format!("unknown distance {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    /// Double-double dot product: an extended-precision oracle independent of
    /// the plain f64 accumulation in `dot`.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    fn dd_dot(a: &[f64], b: &[f64]) -> f64 {
        let (mut hi, mut lo) = (0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (p, pe) = two_prod(x, y);
            let (s, se) = two_sum(hi, p);
            hi = s;
            lo += se + pe;
        }
        hi + lo
    }

    fn dd_cosine(a: &[f64], b: &[f64]) -> f64 {
        1.0 - dd_dot(a, b) / (dd_dot(a, a).sqrt() * dd_dot(b, b).sqrt())
    }

    #[test]
    fn identical_is_zero() {
        let a = [0.3f64, -1.2, 4.0];
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_unit_axes() {
        let e1 = [1.0f32, 0.0, 0.0];
        let e2 = [0.0f32, 1.0, 0.0];
        assert_eq!(cosine_distance(&e1, &e2).unwrap(), 1.0);
        assert!((euclidean_distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn opposite_is_two() {
        assert_eq!(cosine_distance(&[1.0f64, 1.0], &[-2.0, -2.0]).unwrap(), 2.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            cosine_distance(&[0.0f64, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(matches!(
            euclidean_distance(&[0.0f64], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn parse_names() {
        assert_eq!("cosine".parse::<Distance>().unwrap(), Distance::Cosine);
        assert_eq!("euclidean".parse::<Distance>().unwrap(), Distance::Euclidean);
        assert!("manhattan".parse::<Distance>().is_err());
    }

    proptest! {
        #[test]
        fn cosine_matches_extended_precision(
            pair in (1usize..64).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            ))
        ) {
            let (a, b) = pair;
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let got = cosine_distance(&a, &b).unwrap();
            let want = dd_cosine(&a, &b).clamp(0.0, 2.0);
            prop_assert!((got - want).abs() <= 1e-7, "{got} vs {want}");
        }

        #[test]
        fn euclidean_matches_extended_precision(
            pair in (1usize..64).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            ))
        ) {
            let (a, b) = pair;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let want = dd_dot(&diff, &diff).sqrt();
            let got = euclidean_distance(&a, &b).unwrap();
            prop_assert!((got - want).abs() <= 1e-7 * want.max(1.0));
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 1..32),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&a) > 1e-3);
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!(cosine_distance(&a, &scaled).unwrap() <= 1e-12);
        }
    }
}
