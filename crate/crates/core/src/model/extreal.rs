use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// A real number extended by `+inf` and `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    MinusInf,
    Finite(f64),
    PlusInf,
}

impl std::ops::Neg for ExtReal {
    type Output = ExtReal;

    fn neg(self) -> ExtReal {
        match self {
            ExtReal::MinusInf => ExtReal::PlusInf,
            ExtReal::Finite(x) => ExtReal::Finite(-x),
            ExtReal::PlusInf => ExtReal::MinusInf,
        }
    }
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    /// Maps IEEE infinities to the flags. NaN is not a value of this type.
    pub fn from_f64(x: f64) -> Self {
        debug_assert!(!x.is_nan(), "NaN passed to ExtReal");
        if x == f64::INFINITY {
            ExtReal::PlusInf
        } else if x == f64::NEG_INFINITY {
            ExtReal::MinusInf
        } else {
            ExtReal::Finite(x)
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::MinusInf => f64::NEG_INFINITY,
            ExtReal::Finite(x) => x,
            ExtReal::PlusInf => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn is_plus_inf(self) -> bool {
        self == ExtReal::PlusInf
    }

    pub fn checked_add(self, other: ExtReal) -> Result<ExtReal> {
        use ExtReal::*;
        match (self, other) {
            (PlusInf, MinusInf) | (MinusInf, PlusInf) => {
                Err(Error::Indeterminate("(+inf) + (-inf)".into()))
            }
            (PlusInf, _) | (_, PlusInf) => Ok(PlusInf),
            (MinusInf, _) | (_, MinusInf) => Ok(MinusInf),
            (Finite(a), Finite(b)) => Ok(ExtReal::from_f64(a + b)),
        }
    }

    pub fn checked_sub(self, other: ExtReal) -> Result<ExtReal> {
        self.checked_add(-other)
    }

    /// Multiplication by a finite scalar. Zero times an infinity is rejected.
    pub fn scale(self, c: f64) -> Result<ExtReal> {
        match self {
            ExtReal::Finite(x) => Ok(ExtReal::from_f64(c * x)),
            inf if c > 0.0 => Ok(inf),
            inf if c < 0.0 => Ok(-inf),
            _ => Err(Error::Indeterminate("0 * inf".into())),
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal::from_f64(x)
    }
}

impl Eq for ExtReal {}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_f64().total_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::MinusInf => write!(f, "-inf"),
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::PlusInf => write!(f, "+inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => s.serialize_f64(*x),
            ExtReal::PlusInf => s.serialize_str("+inf"),
            ExtReal::MinusInf => s.serialize_str("-inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_total() {
        let mut v = vec![
            ExtReal::PlusInf,
            ExtReal::Finite(1.0),
            ExtReal::MinusInf,
            ExtReal::Finite(-3.0),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                ExtReal::MinusInf,
                ExtReal::Finite(-3.0),
                ExtReal::Finite(1.0),
                ExtReal::PlusInf
            ]
        );
    }

    #[test]
    fn indeterminate_sum_is_an_error() {
        assert!(ExtReal::PlusInf.checked_add(ExtReal::MinusInf).is_err());
        assert!(ExtReal::PlusInf.checked_sub(ExtReal::PlusInf).is_err());
        assert_eq!(
            ExtReal::PlusInf.checked_add(ExtReal::Finite(2.0)).unwrap(),
            ExtReal::PlusInf
        );
        assert_eq!(ExtReal::MinusInf.scale(-2.0).unwrap(), ExtReal::PlusInf);
        assert!(ExtReal::PlusInf.scale(0.0).is_err());
    }

    #[test]
    fn overflow_maps_to_flags() {
        let big = ExtReal::Finite(f64::MAX);
        assert_eq!(big.checked_add(big).unwrap(), ExtReal::PlusInf);
    }
}
