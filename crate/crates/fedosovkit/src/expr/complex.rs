//! Complex combinations of real symbolic scalars.
//!
//! Star products and eigenvalue residuals are complex even when their inputs
//! are real, because odd powers of the deformation parameter carry a factor
//! of `i`.  Keeping explicit real and imaginary parts avoids introducing `i`
//! into the scalar tree itself.

use super::ScalarExpr;

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ComplexExpr {
    pub re: ScalarExpr,
    pub im: ScalarExpr,
}

impl ComplexExpr {
    pub fn new(re: ScalarExpr, im: ScalarExpr) -> Self {
        ComplexExpr { re, im }
    }

    pub fn real(re: ScalarExpr) -> Self {
        ComplexExpr {
            re,
            im: ScalarExpr::zero(),
        }
    }

    pub fn zero() -> Self {
        ComplexExpr::real(ScalarExpr::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    /// Multiply by `i`.
    pub fn times_i(&self) -> Self {
        ComplexExpr {
            re: -self.im.clone(),
            im: self.re.clone(),
        }
    }

    pub fn conj(&self) -> Self {
        ComplexExpr {
            re: self.re.clone(),
            im: -self.im.clone(),
        }
    }

    pub fn scale(&self, s: &ScalarExpr) -> Self {
        ComplexExpr {
            re: s.clone() * self.re.clone(),
            im: s.clone() * self.im.clone(),
        }
    }

    pub fn simplify(&self) -> Self {
        ComplexExpr {
            re: self.re.simplify(),
            im: self.im.simplify(),
        }
    }
}

impl std::ops::Add for ComplexExpr {
    type Output = ComplexExpr;
    fn add(self, rhs: ComplexExpr) -> ComplexExpr {
        ComplexExpr {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl std::ops::Sub for ComplexExpr {
    type Output = ComplexExpr;
    fn sub(self, rhs: ComplexExpr) -> ComplexExpr {
        ComplexExpr {
            re: self.re - rhs.re,
            im: self.im - rhs.im,
        }
    }
}

impl std::ops::Mul for ComplexExpr {
    type Output = ComplexExpr;
    fn mul(self, rhs: ComplexExpr) -> ComplexExpr {
        ComplexExpr {
            re: self.re.clone() * rhs.re.clone() - self.im.clone() * rhs.im.clone(),
            im: self.re * rhs.im + self.im * rhs.re,
        }
    }
}

impl std::ops::Neg for ComplexExpr {
    type Output = ComplexExpr;
    fn neg(self) -> ComplexExpr {
        ComplexExpr {
            re: -self.re,
            im: -self.im,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{expr_compare, Equivalence};

    #[test]
    fn complex_product() {
        // (1 + i x)(1 - i x) = 1 + x^2
        let x = ScalarExpr::var(0);
        let a = ComplexExpr::new(ScalarExpr::one(), x.clone());
        let b = a.conj();
        let p = a * b;
        assert_eq!(
            expr_compare(&p.re, &(ScalarExpr::one() + x.powi(2))),
            Equivalence::Equal
        );
        assert!(p.im.simplify().is_zero());
    }

    #[test]
    fn i_squared_is_minus_one() {
        let i = ComplexExpr::real(ScalarExpr::one()).times_i();
        let m = i.clone() * i;
        assert!(expr_compare(&m.re, &ScalarExpr::int(-1)) == Equivalence::Equal);
        assert!(m.im.is_zero());
    }
}
