//! Extended reals `{-inf} ∪ R` used by cost distributions.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

/// A real number or the infeasibility sentinel `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::NegInf => None,
        }
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Absolute gap between two extended reals: 0 when both are `-inf`,
    /// `+inf` when exactly one is.
    pub fn gap(self, other: ExtReal) -> f64 {
        match (self, other) {
            (ExtReal::NegInf, ExtReal::NegInf) => 0.0,
            (ExtReal::Finite(a), ExtReal::Finite(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal::Finite(v)
    }
}

impl Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::NegInf,
        }
    }
}

impl Add<f64> for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: f64) -> ExtReal {
        self + ExtReal::Finite(rhs)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::NegInf, ExtReal::NegInf) => Some(Ordering::Equal),
            (ExtReal::NegInf, _) => Some(Ordering::Less),
            (_, ExtReal::NegInf) => Some(Ordering::Greater),
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_rules() {
        assert_eq!(ExtReal::NegInf + 3.0, ExtReal::NegInf);
        assert_eq!(ExtReal::Finite(1.0) + 2.0, ExtReal::Finite(3.0));
        assert_eq!(ExtReal::NegInf.max(ExtReal::Finite(-5.0)), ExtReal::Finite(-5.0));
        assert!(ExtReal::NegInf < ExtReal::Finite(-1e300));
    }

    #[test]
    fn gap_conventions() {
        assert_eq!(ExtReal::NegInf.gap(ExtReal::NegInf), 0.0);
        assert_eq!(ExtReal::NegInf.gap(ExtReal::ZERO), f64::INFINITY);
        assert_eq!(ExtReal::Finite(-1.0).gap(ExtReal::Finite(-3.5)), 2.5);
    }
}
