//! The formal Weyl algebra attached to a Darboux chart.
//!
//! An element is a truncated series
//!
//! ```text
//! a(x, y, hbar) = sum  a_{k,m}(x)  hbar^k  y^m
//! ```
//!
//! where `y^m` runs over monomials in the fiber variables `y^1..y^{2n}`,
//! `a_{k,m}` are chart scalars, and terms with `2k + |m|` beyond the
//! truncation order are dropped.  The fiber variables pair symplectically:
//! `y^i` with `y^{n+i}` (position-like with momentum-like).
//!
//! The `hbar` power `k` is structural, not a factor inside the coefficient.
//! Coefficients may still mention `hbar` on their own (states like
//! `exp(-2H/hbar)` do); only the grading power is tracked here, which is what
//! makes degree bookkeeping and the `1/hbar` in the fiberwise commutator
//! exact operations instead of symbolic divisions.
//!
//! The fiberwise product `a ∘ b` contracts conjugate pairs:
//!
//! ```text
//! a ∘ b = sum over t, u in N^n of
//!     (i hbar / 2)^{|t|+|u|} (-1)^{|u|} / (t! u!)
//!     * (d/dy)^{t,first half} (d/dy)^{u,second half} a
//!     * (d/dy)^{u,first half} (d/dy)^{t,second half} b
//! ```
//!
//! so in one degree of freedom `y^1 ∘ y^2 = y^1 y^2 + i hbar/2` and
//! `y^2 ∘ y^1 = y^1 y^2 - i hbar/2`.  Since `i` enters only through
//! `(i hbar/2)^{|t|+|u|}`, the product of two real-coefficient elements
//! splits into real and imaginary parts by the parity of `|t| + |u|`; the
//! product returns that pair and never puts `i` into a coefficient.

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::One;
use std::collections::BTreeMap;
use std::fmt;

/// Coefficient ring of a Weyl element.  Implemented by plain chart scalars
/// and by first-order jets (for derivatives with respect to an external
/// deformation parameter).
pub trait CoeffRing: Clone + std::fmt::Debug {
    fn zero() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, r: &BigRational) -> Self;
    fn differentiate(&self, var: usize) -> Result<Self>;
    /// Bring to a normal form in which `is_zero` is reliable.
    fn simplify(&self) -> Self;
    /// Multiply by `hbar^k` inside the ring (used when collapsing the
    /// structural grading back into a scalar).
    fn times_hbar_pow(&self, k: u32) -> Self;
}

impl CoeffRing for ScalarExpr {
    fn zero() -> Self {
        ScalarExpr::zero()
    }
    fn is_zero(&self) -> bool {
        ScalarExpr::is_zero(self)
    }
    fn add(&self, other: &Self) -> Self {
        self.clone() + other.clone()
    }
    fn neg(&self) -> Self {
        -self.clone()
    }
    fn mul(&self, other: &Self) -> Self {
        self.clone() * other.clone()
    }
    fn scale(&self, r: &BigRational) -> Self {
        ScalarExpr::big_rational(r.clone()) * self.clone()
    }
    fn differentiate(&self, var: usize) -> Result<Self> {
        ScalarExpr::differentiate(self, var)
    }
    fn simplify(&self) -> Self {
        ScalarExpr::simplify(self)
    }
    fn times_hbar_pow(&self, k: u32) -> Self {
        if k == 0 {
            self.clone()
        } else {
            ScalarExpr::hbar().powi(k as i32) * self.clone()
        }
    }
}

type Key = (u32, Vec<u8>);

/// A truncated Weyl-algebra element over coefficient ring `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeylElement<C: CoeffRing = ScalarExpr> {
    dim: usize,
    truncation: u32,
    terms: BTreeMap<Key, C>,
}

impl<C: CoeffRing> WeylElement<C> {
    pub fn zero(dim: usize, truncation: u32) -> Self {
        assert!(dim % 2 == 0 && dim > 0, "phase-space dimension must be even");
        WeylElement {
            dim,
            truncation,
            terms: BTreeMap::new(),
        }
    }

    /// The central element with a single `hbar^0 y^0` coefficient.
    pub fn from_coefficient(dim: usize, truncation: u32, c: C) -> Self {
        let mut out = WeylElement::zero(dim, truncation);
        out.add_term(0, vec![0; dim], c);
        out
    }

    pub fn monomial(dim: usize, truncation: u32, hbar_power: u32, y_exponents: Vec<u8>, c: C) -> Self {
        let mut out = WeylElement::zero(dim, truncation);
        out.add_term(hbar_power, y_exponents, c);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn truncation(&self) -> u32 {
        self.truncation
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, &[u8], &C)> {
        self.terms.iter().map(|((k, m), c)| (*k, m.as_slice(), c))
    }

    pub fn coefficient(&self, hbar_power: u32, y_exponents: &[u8]) -> Option<&C> {
        self.terms.get(&(hbar_power, y_exponents.to_vec()))
    }

    fn term_degree(k: u32, m: &[u8]) -> u32 {
        2 * k + m.iter().map(|&e| e as u32).sum::<u32>()
    }

    /// Largest `2k + |m|` present.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|(k, m)| Self::term_degree(*k, m))
            .max()
            .unwrap_or(0)
    }

    /// Accumulate a term; silently drops anything beyond the truncation.
    pub fn add_term(&mut self, hbar_power: u32, y_exponents: Vec<u8>, c: C) {
        debug_assert_eq!(y_exponents.len(), self.dim);
        if c.is_zero() || Self::term_degree(hbar_power, &y_exponents) > self.truncation {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry((hbar_power, y_exponents)) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let sum = e.get().add(&c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut out = self.clone();
        for ((k, m), c) in &other.terms {
            out.add_term(*k, m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.assert_compatible(other);
        let mut out = self.clone();
        for ((k, m), c) in &other.terms {
            out.add_term(*k, m.clone(), c.neg());
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.map_coefficients(|c| c.neg())
    }

    pub fn scale_coefficient(&self, s: &C) -> Self {
        self.map_coefficients(|c| c.mul(s))
    }

    pub fn scale_rational(&self, r: &BigRational) -> Self {
        self.map_coefficients(|c| c.scale(r))
    }

    fn map_coefficients(&self, f: impl Fn(&C) -> C) -> Self {
        let mut out = WeylElement::zero(self.dim, self.truncation);
        for ((k, m), c) in &self.terms {
            out.add_term(*k, m.clone(), f(c));
        }
        out
    }

    /// Simplify every coefficient and drop the ones that reduce to zero.
    pub fn normalize(&self) -> Self {
        self.map_coefficients(|c| c.simplify())
    }

    /// Derivative of the coefficients with respect to a chart coordinate.
    pub fn chart_derivative(&self, var: usize) -> Result<Self> {
        let mut out = WeylElement::zero(self.dim, self.truncation);
        for ((k, m), c) in &self.terms {
            out.add_term(*k, m.clone(), c.differentiate(var)?);
        }
        Ok(out)
    }

    /// Multiply by the structural `hbar` (grading shift by one).
    pub fn hbar_mul(&self) -> Self {
        let mut out = WeylElement::zero(self.dim, self.truncation);
        for ((k, m), c) in &self.terms {
            out.add_term(k + 1, m.clone(), c.clone());
        }
        out
    }

    /// Divide by the structural `hbar`; a term at grading zero cannot be
    /// divided and is reported, not silently dropped.
    pub fn hbar_div(&self, context: &str) -> Result<Self> {
        let mut out = WeylElement::zero(self.dim, self.truncation);
        for ((k, m), c) in &self.terms {
            if *k == 0 {
                return Err(Error::NegativeHbarPower {
                    context: context.to_string(),
                });
            }
            out.add_term(k - 1, m.clone(), c.clone());
        }
        Ok(out)
    }

    /// The center projection: collapse `y -> 0`, folding the structural
    /// grading back into the coefficient ring as `hbar^k`.
    pub fn center(&self) -> C {
        let mut acc = C::zero();
        for ((k, m), c) in &self.terms {
            if m.iter().all(|&e| e == 0) {
                acc = acc.add(&c.times_hbar_pow(*k));
            }
        }
        acc
    }

    fn assert_compatible(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "mixed phase-space dimensions");
        assert_eq!(
            self.truncation, other.truncation,
            "mixed truncation orders"
        );
    }

    /// Fiberwise product, split as `(real part, imaginary part)`.
    pub fn circle(&self, other: &Self) -> (Self, Self) {
        self.assert_compatible(other);
        let n = self.dim / 2;
        let mut re = WeylElement::zero(self.dim, self.truncation);
        let mut im = WeylElement::zero(self.dim, self.truncation);
        let mut pairings = Vec::new();
        for ((k1, m1), c1) in &self.terms {
            for ((k2, m2), c2) in &other.terms {
                // (t, u) pairing bounds per conjugate pair
                let t_max: Vec<u8> = (0..n).map(|i| m1[i].min(m2[n + i])).collect();
                let u_max: Vec<u8> = (0..n).map(|i| m1[n + i].min(m2[i])).collect();
                pairings.clear();
                enumerate_pairs(&t_max, &u_max, &mut pairings);
                for (t, u) in &pairings {
                    let order: u32 =
                        t.iter().map(|&x| x as u32).sum::<u32>() + u.iter().map(|&x| x as u32).sum::<u32>();
                    let k_out = k1 + k2 + order;
                    let mut m_out = vec![0u8; self.dim];
                    let mut numer = BigInt::one();
                    let mut denom = BigInt::one();
                    let mut ok = true;
                    for i in 0..n {
                        // a loses t_i from slot i and u_i from slot n+i;
                        // b loses u_i from slot i and t_i from slot n+i.
                        let (a_lo, a_hi) = (m1[i], m1[n + i]);
                        let (b_lo, b_hi) = (m2[i], m2[n + i]);
                        if t[i] > a_lo || u[i] > a_hi || u[i] > b_lo || t[i] > b_hi {
                            ok = false;
                            break;
                        }
                        m_out[i] = a_lo - t[i] + b_lo - u[i];
                        m_out[n + i] = a_hi - u[i] + b_hi - t[i];
                        numer *= falling(a_lo, t[i]);
                        numer *= falling(a_hi, u[i]);
                        numer *= falling(b_lo, u[i]);
                        numer *= falling(b_hi, t[i]);
                        denom *= factorial(t[i]) * factorial(u[i]);
                    }
                    if !ok {
                        continue;
                    }
                    // (i/2)^order * (-1)^{|u|}
                    let u_total: u32 = u.iter().map(|&x| x as u32).sum();
                    if u_total % 2 == 1 {
                        numer = -numer;
                    }
                    denom *= BigInt::from(2u32).pow(order);
                    let factor = BigRational::new(numer, denom);
                    let coeff = c1.mul(c2).scale(&factor);
                    // i^order routes the term and fixes the sign.
                    match order % 4 {
                        0 => re.add_term(k_out, m_out, coeff),
                        1 => im.add_term(k_out, m_out, coeff),
                        2 => re.add_term(k_out, m_out, coeff.neg()),
                        _ => im.add_term(k_out, m_out, coeff.neg()),
                    }
                }
            }
        }
        (re, im)
    }

    /// `(i/hbar) (g ∘ a - a ∘ g)` for real-coefficient `g`, `a`.
    ///
    /// Pairing terms of even contraction order are symmetric under swapping
    /// the operands, so they cancel in the commutator; odd-order terms appear
    /// twice.  The leftover `i * i^order` is real, and the `hbar^order`
    /// produced by the contraction absorbs the explicit `1/hbar`, so the
    /// result is again a real-coefficient element with grading shift
    /// `order - 1 >= 0`.  No symbolic division happens.
    pub fn commutator_over_i_hbar(g: &Self, a: &Self) -> Self {
        g.assert_compatible(a);
        let n = g.dim / 2;
        let mut out = WeylElement::zero(g.dim, g.truncation);
        let mut pairings = Vec::new();
        for ((k1, m1), c1) in &g.terms {
            for ((k2, m2), c2) in &a.terms {
                let t_max: Vec<u8> = (0..n).map(|i| m1[i].min(m2[n + i])).collect();
                let u_max: Vec<u8> = (0..n).map(|i| m1[n + i].min(m2[i])).collect();
                pairings.clear();
                enumerate_pairs(&t_max, &u_max, &mut pairings);
                for (t, u) in &pairings {
                    let order: u32 =
                        t.iter().map(|&x| x as u32).sum::<u32>() + u.iter().map(|&x| x as u32).sum::<u32>();
                    if order % 2 == 0 {
                        continue;
                    }
                    let k_out = k1 + k2 + order - 1;
                    let mut m_out = vec![0u8; g.dim];
                    let mut numer = BigInt::from(2);
                    let mut denom = BigInt::one();
                    for i in 0..n {
                        let (a_lo, a_hi) = (m1[i], m1[n + i]);
                        let (b_lo, b_hi) = (m2[i], m2[n + i]);
                        m_out[i] = a_lo - t[i] + b_lo - u[i];
                        m_out[n + i] = a_hi - u[i] + b_hi - t[i];
                        numer *= falling(a_lo, t[i]);
                        numer *= falling(a_hi, u[i]);
                        numer *= falling(b_lo, u[i]);
                        numer *= falling(b_hi, t[i]);
                        denom *= factorial(t[i]) * factorial(u[i]);
                    }
                    let u_total: u32 = u.iter().map(|&x| x as u32).sum();
                    if u_total % 2 == 1 {
                        numer = -numer;
                    }
                    // i * i^order: -1 for order = 1 mod 4, +1 for 3 mod 4
                    if order % 4 == 1 {
                        numer = -numer;
                    }
                    denom *= BigInt::from(2u32).pow(order);
                    let factor = BigRational::new(numer, denom);
                    out.add_term(k_out, m_out, c1.mul(c2).scale(&factor));
                }
            }
        }
        out
    }
}

/// All componentwise `(t, u)` with `t <= t_max`, `u <= u_max`.
fn enumerate_pairs(t_max: &[u8], u_max: &[u8], out: &mut Vec<(Vec<u8>, Vec<u8>)>) {
    let n = t_max.len();
    let mut t = vec![0u8; n];
    'outer_t: loop {
        let mut u = vec![0u8; n];
        'outer_u: loop {
            out.push((t.clone(), u.clone()));
            for i in 0..n {
                if u[i] < u_max[i] {
                    u[i] += 1;
                    continue 'outer_u;
                }
                u[i] = 0;
            }
            break;
        }
        for i in 0..n {
            if t[i] < t_max[i] {
                t[i] += 1;
                continue 'outer_t;
            }
            t[i] = 0;
        }
        break;
    }
}

fn falling(m: u8, k: u8) -> BigInt {
    let mut acc = BigInt::one();
    for j in 0..k {
        acc *= BigInt::from(m - j);
    }
    acc
}

fn factorial(k: u8) -> BigInt {
    let mut acc = BigInt::one();
    for j in 2..=k {
        acc *= BigInt::from(j);
    }
    acc
}

/// A Weyl-element-valued one-form: one component per `dx^s`.
#[derive(Clone, Debug)]
pub struct WeylOneForm<C: CoeffRing = ScalarExpr> {
    pub components: Vec<WeylElement<C>>,
}

impl<C: CoeffRing> WeylOneForm<C> {
    pub fn zero(dim: usize, truncation: u32) -> Self {
        WeylOneForm {
            components: (0..dim).map(|_| WeylElement::zero(dim, truncation)).collect(),
        }
    }

    /// The homotopy inverse of the fiber differential on one-forms: the
    /// `dx^s` component gains a factor `y^s`, each term weighted by
    /// `1 / (|m| + 1)` with `|m|` the fiber degree before insertion.
    pub fn delta_inv(&self) -> WeylElement<C> {
        let dim = self.components.len();
        let truncation = self.components[0].truncation;
        let mut out = WeylElement::zero(dim, truncation);
        for (s, comp) in self.components.iter().enumerate() {
            for (k, m, c) in comp.terms() {
                let fiber_degree: u32 = m.iter().map(|&e| e as u32).sum();
                let mut m2 = m.to_vec();
                m2[s] += 1;
                let w = BigRational::new(BigInt::one(), BigInt::from(fiber_degree + 1));
                out.add_term(k, m2, c.scale(&w));
            }
        }
        out
    }
}

impl fmt::Display for WeylElement<ScalarExpr> {
    /// One line per term, sorted by total degree then grading: useful when
    /// eyeballing a lift.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return writeln!(f, "0");
        }
        let mut rows: Vec<(u32, u32, String, String)> = Vec::new();
        for ((k, m), c) in &self.terms {
            let deg = Self::term_degree(*k, m);
            let mono = m
                .iter()
                .enumerate()
                .filter(|&(_, &e)| e > 0)
                .map(|(i, &e)| {
                    if e == 1 {
                        format!("y{}", i + 1)
                    } else {
                        format!("y{}^{}", i + 1, e)
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            let mono = if mono.is_empty() { "1".to_string() } else { mono };
            rows.push((deg, *k, mono, format!("{c}")));
        }
        rows.sort();
        for (deg, k, mono, coeff) in rows {
            writeln!(f, "deg {deg}  hbar^{k}  {mono:<16} {coeff}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{expr_compare, Equivalence};

    fn rat(n: i64, d: i64) -> ScalarExpr {
        ScalarExpr::rational(n, d)
    }

    fn y(dim: usize, slot: usize) -> WeylElement {
        let mut m = vec![0u8; dim];
        m[slot] = 1;
        WeylElement::monomial(dim, 8, 0, m, ScalarExpr::one())
    }

    /// Complex fiberwise product built from four real ones, for cross checks.
    fn circle_complex(
        a: &(WeylElement, WeylElement),
        b: &(WeylElement, WeylElement),
    ) -> (WeylElement, WeylElement) {
        let (rr_re, rr_im) = a.0.circle(&b.0);
        let (ri_re, ri_im) = a.0.circle(&b.1);
        let (ir_re, ir_im) = a.1.circle(&b.0);
        let (ii_re, ii_im) = a.1.circle(&b.1);
        (
            rr_re.sub(&ii_re).sub(&ri_im.add(&ir_im)),
            rr_im.sub(&ii_im).add(&ri_re).add(&ir_re),
        )
    }

    fn assert_weyl_zero(e: &WeylElement) {
        let n = e.normalize();
        assert!(n.is_empty(), "expected zero, got:\n{n}");
    }

    #[test]
    fn conjugate_pair_contractions() {
        // y1 ∘ y2 = y1 y2 + i hbar/2 in one degree of freedom
        let (re, im) = y(2, 0).circle(&y(2, 1));
        assert_eq!(
            re.coefficient(0, &[1, 1]).unwrap().as_rational().unwrap(),
            rat(1, 1).as_rational().unwrap()
        );
        assert_eq!(im.coefficient(1, &[0, 0]).unwrap(), &rat(1, 2));
        // y2 ∘ y1 = y1 y2 - i hbar/2
        let (_, im) = y(2, 1).circle(&y(2, 0));
        assert_eq!(im.coefficient(1, &[0, 0]).unwrap(), &rat(-1, 2));
        // two degrees of freedom: slots pair (1,3) and (2,4)
        let (_, im) = y(4, 2).circle(&y(4, 0));
        assert_eq!(im.coefficient(1, &[0; 4]).unwrap(), &rat(-1, 2));
        let (_, im) = y(4, 0).circle(&y(4, 2));
        assert_eq!(im.coefficient(1, &[0; 4]).unwrap(), &rat(1, 2));
        // unpaired slots commute: y1 ∘ y4 has no contraction
        let (re, im) = y(4, 0).circle(&y(4, 3));
        assert!(im.is_empty());
        assert_eq!(re.terms().count(), 1);
    }

    #[test]
    fn product_preserves_total_degree() {
        let a = WeylElement::monomial(2, 12, 1, vec![2, 1], ScalarExpr::one());
        let b = WeylElement::monomial(2, 12, 0, vec![1, 3], ScalarExpr::one());
        let (re, im) = a.circle(&b);
        let expect = 2 * 1 + 3 + 4;
        for (k, m, _) in re.terms().chain(im.terms()) {
            assert_eq!(
                2 * k + m.iter().map(|&e| e as u32).sum::<u32>(),
                expect
            );
        }
    }

    #[test]
    fn associativity_on_fiber_monomials() {
        // exact at this truncation: total degree 6 <= 8
        let a = (y(2, 0).circle(&y(2, 0)).0, WeylElement::zero(2, 8)); // y1^2
        let b = (
            WeylElement::monomial(2, 8, 0, vec![1, 1], ScalarExpr::one()),
            WeylElement::zero(2, 8),
        );
        let c = (y(2, 1).circle(&y(2, 1)).0, WeylElement::zero(2, 8)); // y2^2
        let ab = circle_complex(&a, &b);
        let bc = circle_complex(&b, &c);
        let left = circle_complex(&ab, &c);
        let right = circle_complex(&a, &bc);
        assert_weyl_zero(&left.0.sub(&right.0));
        assert_weyl_zero(&left.1.sub(&right.1));
    }

    #[test]
    fn commutator_route_matches_two_products() {
        // g, a with x-dependent coefficients; the commutator helper must equal
        // (i/hbar)(g∘a - a∘g) computed the long way.
        let x1 = ScalarExpr::var(0);
        let g = WeylElement::monomial(2, 8, 0, vec![2, 1], x1.clone());
        let a = WeylElement::monomial(2, 8, 0, vec![1, 2], x1.clone().sin());
        let (p_re, p_im) = g.circle(&a);
        let (q_re, q_im) = a.circle(&g);
        // real parts cancel exactly
        assert_weyl_zero(&p_re.sub(&q_re));
        // (i/hbar)(P - Q) = -(im(P) - im(Q))/hbar
        let direct = WeylElement::commutator_over_i_hbar(&g, &a);
        let long = p_im.sub(&q_im).hbar_div("test").unwrap().neg();
        assert_weyl_zero(&direct.sub(&long));
    }

    #[test]
    fn center_projection_folds_grading() {
        let mut e = WeylElement::zero(2, 8);
        e.add_term(0, vec![0, 0], ScalarExpr::var(0));
        e.add_term(1, vec![0, 0], ScalarExpr::var(1));
        e.add_term(0, vec![1, 0], ScalarExpr::int(7));
        let c = e.center();
        let want = ScalarExpr::var(0) + ScalarExpr::hbar() * ScalarExpr::var(1);
        assert_eq!(expr_compare(&c, &want), Equivalence::Equal);
    }

    #[test]
    fn delta_inv_weights_by_fiber_degree() {
        let mut form = WeylOneForm::zero(2, 8);
        form.components[0] =
            WeylElement::monomial(2, 8, 0, vec![1, 1], ScalarExpr::one());
        let e = form.delta_inv();
        // y1 y2 in dx^1 slot: becomes y1^2 y2 / 3
        assert_eq!(e.coefficient(0, &[2, 1]).unwrap(), &rat(1, 3));
    }

    #[test]
    fn hbar_div_rejects_grading_zero() {
        let e = WeylElement::from_coefficient(2, 8, ScalarExpr::one());
        assert!(matches!(
            e.hbar_div("test"),
            Err(crate::Error::NegativeHbarPower { .. })
        ));
        let ok = e.hbar_mul().hbar_div("test").unwrap();
        assert_eq!(ok, e);
    }

    #[test]
    fn truncation_drops_high_degree() {
        let a = WeylElement::monomial(2, 4, 0, vec![2, 0], ScalarExpr::one());
        let b = WeylElement::monomial(2, 4, 0, vec![0, 3], ScalarExpr::one());
        let (re, _) = a.circle(&b);
        // plain product has degree 5 > 4: only contracted terms survive
        for (k, m, _) in re.terms() {
            assert!(2 * k + m.iter().map(|&e| e as u32).sum::<u32>() <= 4);
        }
    }
}
