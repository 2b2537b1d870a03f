//! Exact symbolic scalars over chart coordinates.
//!
//! A [`ScalarExpr`] is an immutable tree with exact rational constants,
//! coordinate variables addressed by chart index, the deformation parameter
//! `hbar` kept symbolic, the circle constant `pi`, field operations, integer
//! powers, the transcendentals needed by the charts in this crate (`sin`,
//! `cos`, `exp`, `sqrt`, `ln`), and opaque symbols with registered
//! derivatives.
//!
//! Opaque symbols are *families*: `V` with derivative orders `(k)`, or a
//! placeholder state function `W` with orders `(s, t)`.  Each family carries a
//! jacobian table saying how a chart derivative acts on it, so formal partial
//! derivatives stay closed under differentiation.  A family built with
//! [`OpaqueFamily::non_differentiable`] makes `differentiate` fail, which is
//! how deliberately-opaque inputs are kept out of symbolic pipelines.
//!
//! Equality of expressions is decided by [`expr_equal`]: the difference is
//! brought to a rational normal form over transcendental atoms (with the
//! `sin^2+cos^2 = 1` and `sqrt(u)^2 = u` rewrites applied), and if the result
//! is neither identically zero nor free of transcendental atoms the verdict
//! falls back to randomized evaluation at sample points.

mod complex;
mod normal;
mod parse;
mod poly;

pub use complex::ComplexExpr;
pub use normal::{expr_compare, expr_equal, is_zero_symbolic, Equivalence};
pub(crate) use normal::{exact_rational_to_f64, linear_opaque_decomposition};
pub use parse::{parse_expr, CoordNames};

use crate::error::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// How a chart derivative acts on an opaque symbol family.
///
/// `jacobian[v][s]` is the coefficient of the order-bump in slot `s` when
/// differentiating with respect to chart variable `v`:
///
/// ```text
/// d/dx^v  F_(orders)  =  sum_s  jacobian[v][s] * F_(orders + e_s)
/// ```
///
/// For a plain function of the chart coordinates the jacobian is the identity
/// table; chain-rule frames install non-trivial entries.
#[derive(Debug)]
pub struct OpaqueFamily {
    name: String,
    slots: usize,
    jacobian: Vec<Vec<ScalarExpr>>,
    differentiable: bool,
}

impl OpaqueFamily {
    /// A family whose slots are the chart coordinates themselves:
    /// `d/dx^v` bumps slot `v`.
    pub fn coordinate(name: impl Into<String>, dim: usize) -> Arc<Self> {
        let mut jacobian = Vec::with_capacity(dim);
        for v in 0..dim {
            let mut row = vec![ScalarExpr::int(0); dim];
            row[v] = ScalarExpr::int(1);
            jacobian.push(row);
        }
        Arc::new(OpaqueFamily {
            name: name.into(),
            slots: dim,
            jacobian,
            differentiable: true,
        })
    }

    /// A family depending on a subset of the chart coordinates.  Slot `s`
    /// tracks derivatives along `depends_on[s]`.
    pub fn on_variables(name: impl Into<String>, dim: usize, depends_on: &[usize]) -> Arc<Self> {
        let mut jacobian = vec![vec![ScalarExpr::int(0); depends_on.len()]; dim];
        for (s, &v) in depends_on.iter().enumerate() {
            jacobian[v][s] = ScalarExpr::int(1);
        }
        Arc::new(OpaqueFamily {
            name: name.into(),
            slots: depends_on.len(),
            jacobian,
            differentiable: true,
        })
    }

    /// A family with an explicit jacobian table (`jacobian[v][s]` as above).
    pub fn with_jacobian(
        name: impl Into<String>,
        jacobian: Vec<Vec<ScalarExpr>>,
    ) -> Result<Arc<Self>> {
        let slots = jacobian.first().map(|r| r.len()).unwrap_or(0);
        if jacobian.iter().any(|r| r.len() != slots) {
            return Err(Error::DimensionMismatch {
                message: "opaque jacobian rows have unequal slot counts".into(),
            });
        }
        Ok(Arc::new(OpaqueFamily {
            name: name.into(),
            slots,
            jacobian,
            differentiable: true,
        }))
    }

    /// A symbol without a registered derivative; differentiation errors.
    pub fn non_differentiable(name: impl Into<String>, slots: usize) -> Arc<Self> {
        Arc::new(OpaqueFamily {
            name: name.into(),
            slots,
            jacobian: Vec::new(),
            differentiable: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slots(&self) -> usize {
        self.slots
    }
}

/// An opaque symbol: a family member at specific derivative orders.
#[derive(Debug, Clone)]
pub struct OpaqueRef {
    pub family: Arc<OpaqueFamily>,
    pub orders: Vec<u32>,
}

impl OpaqueRef {
    /// Render as `V`, `V'`, `V''`, `V'''`, or `W^(s,t)` for multi-slot
    /// families and high orders.
    pub fn label(&self) -> String {
        let total: u32 = self.orders.iter().sum();
        if self.orders.len() == 1 && total <= 3 {
            format!("{}{}", self.family.name, "'".repeat(total as usize))
        } else if total == 0 {
            self.family.name.clone()
        } else {
            let orders: Vec<String> = self.orders.iter().map(|o| o.to_string()).collect();
            format!("{}^({})", self.family.name, orders.join(","))
        }
    }
}

impl PartialEq for OpaqueRef {
    fn eq(&self, other: &Self) -> bool {
        self.family.name == other.family.name && self.orders == other.orders
    }
}
impl Eq for OpaqueRef {}
impl Hash for OpaqueRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.family.name.hash(state);
        self.orders.hash(state);
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub(crate) enum Node {
    Rational(BigRational),
    Var(usize),
    Hbar,
    Pi,
    Sum(Vec<ScalarExpr>),
    Product(Vec<ScalarExpr>),
    Quotient(ScalarExpr, ScalarExpr),
    IntPow(ScalarExpr, i32),
    Sin(ScalarExpr),
    Cos(ScalarExpr),
    Exp(ScalarExpr),
    Sqrt(ScalarExpr),
    Ln(ScalarExpr),
    Opaque(OpaqueRef),
}

/// An immutable exact symbolic scalar.  Cheap to clone (shared subtrees).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ScalarExpr(pub(crate) Arc<Node>);

impl ScalarExpr {
    // ---- leaf constructors ----

    pub fn int(n: i64) -> Self {
        ScalarExpr(Arc::new(Node::Rational(BigRational::from_integer(
            BigInt::from(n),
        ))))
    }

    pub fn rational(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational constant with zero denominator");
        ScalarExpr(Arc::new(Node::Rational(BigRational::new(
            BigInt::from(num),
            BigInt::from(den),
        ))))
    }

    pub fn big_rational(r: BigRational) -> Self {
        ScalarExpr(Arc::new(Node::Rational(r)))
    }

    pub fn var(index: usize) -> Self {
        ScalarExpr(Arc::new(Node::Var(index)))
    }

    pub fn hbar() -> Self {
        ScalarExpr(Arc::new(Node::Hbar))
    }

    pub fn pi() -> Self {
        ScalarExpr(Arc::new(Node::Pi))
    }

    pub fn opaque(family: &Arc<OpaqueFamily>, orders: Vec<u32>) -> Self {
        assert_eq!(
            orders.len(),
            family.slots,
            "opaque symbol `{}` expects {} order slots",
            family.name,
            family.slots
        );
        ScalarExpr(Arc::new(Node::Opaque(OpaqueRef {
            family: Arc::clone(family),
            orders,
        })))
    }

    pub fn zero() -> Self {
        ScalarExpr::int(0)
    }

    pub fn one() -> Self {
        ScalarExpr::int(1)
    }

    // ---- compound constructors (with local folding) ----

    pub fn sum(terms: Vec<ScalarExpr>) -> Self {
        let mut constant = BigRational::zero();
        let mut items: Vec<ScalarExpr> = Vec::with_capacity(terms.len());
        let mut stack: Vec<ScalarExpr> = terms;
        stack.reverse();
        while let Some(t) = stack.pop() {
            match &*t.0 {
                Node::Sum(inner) => {
                    for x in inner.iter().rev() {
                        stack.push(x.clone());
                    }
                }
                Node::Rational(r) => constant += r,
                _ => items.push(t),
            }
        }
        if !constant.is_zero() {
            items.insert(0, ScalarExpr::big_rational(constant));
        }
        match items.len() {
            0 => ScalarExpr::zero(),
            1 => items.pop().unwrap(),
            _ => ScalarExpr(Arc::new(Node::Sum(items))),
        }
    }

    pub fn product(factors: Vec<ScalarExpr>) -> Self {
        let mut constant = BigRational::one();
        let mut items: Vec<ScalarExpr> = Vec::with_capacity(factors.len());
        let mut stack: Vec<ScalarExpr> = factors;
        stack.reverse();
        while let Some(f) = stack.pop() {
            match &*f.0 {
                Node::Product(inner) => {
                    for x in inner.iter().rev() {
                        stack.push(x.clone());
                    }
                }
                Node::Rational(r) => {
                    if r.is_zero() {
                        return ScalarExpr::zero();
                    }
                    constant *= r;
                }
                _ => items.push(f),
            }
        }
        if items.is_empty() {
            return ScalarExpr::big_rational(constant);
        }
        if !constant.is_one() {
            items.insert(0, ScalarExpr::big_rational(constant));
        }
        match items.len() {
            1 => items.pop().unwrap(),
            _ => ScalarExpr(Arc::new(Node::Product(items))),
        }
    }

    pub fn quotient(num: ScalarExpr, den: ScalarExpr) -> Self {
        if num.is_zero() {
            return ScalarExpr::zero();
        }
        if let Node::Rational(r) = &*den.0 {
            if !r.is_zero() {
                return ScalarExpr::product(vec![
                    ScalarExpr::big_rational(r.recip()),
                    num,
                ]);
            }
        }
        if den.is_one() {
            return num;
        }
        ScalarExpr(Arc::new(Node::Quotient(num, den)))
    }

    pub fn powi(self, k: i32) -> Self {
        match k {
            0 => return ScalarExpr::one(),
            1 => return self,
            _ => {}
        }
        match &*self.0 {
            Node::Rational(r) => {
                if !r.is_zero() || k > 0 {
                    let p = rational_powi(r, k);
                    return ScalarExpr::big_rational(p);
                }
            }
            Node::IntPow(base, j) => {
                if let Some(prod) = j.checked_mul(k) {
                    return base.clone().powi(prod);
                }
            }
            _ => {}
        }
        ScalarExpr(Arc::new(Node::IntPow(self, k)))
    }

    pub fn sin(self) -> Self {
        if self.is_zero() {
            return ScalarExpr::zero();
        }
        ScalarExpr(Arc::new(Node::Sin(self)))
    }

    pub fn cos(self) -> Self {
        if self.is_zero() {
            return ScalarExpr::one();
        }
        ScalarExpr(Arc::new(Node::Cos(self)))
    }

    pub fn exp(self) -> Self {
        if self.is_zero() {
            return ScalarExpr::one();
        }
        ScalarExpr(Arc::new(Node::Exp(self)))
    }

    pub fn sqrt(self) -> Self {
        if let Node::Rational(r) = &*self.0 {
            if r.is_zero() {
                return ScalarExpr::zero();
            }
            if !r.is_negative() {
                let n = r.numer().sqrt();
                let d = r.denom().sqrt();
                if &n * &n == *r.numer() && &d * &d == *r.denom() {
                    return ScalarExpr::big_rational(BigRational::new(n, d));
                }
            }
        }
        ScalarExpr(Arc::new(Node::Sqrt(self)))
    }

    pub fn ln(self) -> Self {
        if self.is_one() {
            return ScalarExpr::zero();
        }
        ScalarExpr(Arc::new(Node::Ln(self)))
    }

    // ---- predicates and accessors ----

    pub fn is_zero(&self) -> bool {
        matches!(&*self.0, Node::Rational(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(&*self.0, Node::Rational(r) if r.is_one())
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match &*self.0 {
            Node::Rational(r) => Some(r),
            _ => None,
        }
    }

    /// Variable indices referenced anywhere in the tree (not counting opaque
    /// jacobian tables, which only matter under differentiation).
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<usize>) {
        match &*self.0 {
            Node::Var(i) => {
                out.insert(*i);
            }
            Node::Sum(v) | Node::Product(v) => {
                for x in v {
                    x.collect_variables(out);
                }
            }
            Node::Quotient(a, b) => {
                a.collect_variables(out);
                b.collect_variables(out);
            }
            Node::IntPow(a, _) => a.collect_variables(out),
            Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sqrt(a) | Node::Ln(a) => {
                a.collect_variables(out)
            }
            _ => {}
        }
    }

    pub fn contains_opaque(&self) -> bool {
        match &*self.0 {
            Node::Opaque(_) => true,
            Node::Sum(v) | Node::Product(v) => v.iter().any(|x| x.contains_opaque()),
            Node::Quotient(a, b) => a.contains_opaque() || b.contains_opaque(),
            Node::IntPow(a, _) => a.contains_opaque(),
            Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sqrt(a) | Node::Ln(a) => {
                a.contains_opaque()
            }
            _ => false,
        }
    }

    /// Total degree as a polynomial in the given variables, or `None` if the
    /// expression is not polynomial in them (rational, transcendental or
    /// opaque dependence).
    pub fn polynomial_degree_in(&self, vars: &[usize]) -> Option<usize> {
        match &*self.0 {
            Node::Rational(_) | Node::Hbar | Node::Pi => Some(0),
            Node::Var(i) => Some(if vars.contains(i) { 1 } else { 0 }),
            Node::Sum(v) => v
                .iter()
                .map(|x| x.polynomial_degree_in(vars))
                .try_fold(0usize, |m, d| d.map(|d| m.max(d))),
            Node::Product(v) => v
                .iter()
                .map(|x| x.polynomial_degree_in(vars))
                .try_fold(0usize, |s, d| d.map(|d| s + d)),
            Node::Quotient(a, b) => {
                let db = b.polynomial_degree_in(vars)?;
                if db == 0 {
                    a.polynomial_degree_in(vars)
                } else {
                    None
                }
            }
            Node::IntPow(a, k) => {
                let da = a.polynomial_degree_in(vars)?;
                if *k >= 0 {
                    Some(da * (*k as usize))
                } else if da == 0 {
                    Some(0)
                } else {
                    None
                }
            }
            Node::Sin(a) | Node::Cos(a) | Node::Exp(a) | Node::Sqrt(a) | Node::Ln(a) => {
                if a.polynomial_degree_in(vars)? == 0 {
                    Some(0)
                } else {
                    None
                }
            }
            Node::Opaque(_) => None,
        }
    }

    // ---- calculus ----

    /// Partial derivative with respect to chart variable `var`.
    pub fn differentiate(&self, var: usize) -> Result<ScalarExpr> {
        Ok(match &*self.0 {
            Node::Rational(_) | Node::Hbar | Node::Pi => ScalarExpr::zero(),
            Node::Var(i) => {
                if *i == var {
                    ScalarExpr::one()
                } else {
                    ScalarExpr::zero()
                }
            }
            Node::Sum(v) => {
                let mut out = Vec::with_capacity(v.len());
                for x in v {
                    out.push(x.differentiate(var)?);
                }
                ScalarExpr::sum(out)
            }
            Node::Product(v) => {
                let mut out = Vec::with_capacity(v.len());
                for (i, x) in v.iter().enumerate() {
                    let dx = x.differentiate(var)?;
                    if dx.is_zero() {
                        continue;
                    }
                    let mut factors = Vec::with_capacity(v.len());
                    factors.push(dx);
                    for (j, y) in v.iter().enumerate() {
                        if i != j {
                            factors.push(y.clone());
                        }
                    }
                    out.push(ScalarExpr::product(factors));
                }
                ScalarExpr::sum(out)
            }
            Node::Quotient(a, b) => {
                let da = a.differentiate(var)?;
                let db = b.differentiate(var)?;
                // (a'b - ab') / b^2
                ScalarExpr::quotient(
                    da * b.clone() - a.clone() * db,
                    b.clone().powi(2),
                )
            }
            Node::IntPow(a, k) => {
                let da = a.differentiate(var)?;
                if da.is_zero() {
                    ScalarExpr::zero()
                } else {
                    ScalarExpr::int(*k as i64) * a.clone().powi(k - 1) * da
                }
            }
            Node::Sin(u) => u.clone().cos() * u.differentiate(var)?,
            Node::Cos(u) => ScalarExpr::int(-1) * u.clone().sin() * u.differentiate(var)?,
            Node::Exp(u) => u.clone().exp() * u.differentiate(var)?,
            Node::Sqrt(u) => {
                let du = u.differentiate(var)?;
                if du.is_zero() {
                    ScalarExpr::zero()
                } else {
                    ScalarExpr::quotient(du, ScalarExpr::int(2) * u.clone().sqrt())
                }
            }
            Node::Ln(u) => {
                let du = u.differentiate(var)?;
                if du.is_zero() {
                    ScalarExpr::zero()
                } else {
                    ScalarExpr::quotient(du, u.clone())
                }
            }
            Node::Opaque(r) => {
                if !r.family.differentiable {
                    return Err(Error::OpaqueNotDifferentiable {
                        name: r.family.name.clone(),
                    });
                }
                if var >= r.family.jacobian.len() {
                    return Err(Error::UnknownVariable {
                        index: var,
                        dim: r.family.jacobian.len(),
                        context: format!("derivative of opaque symbol `{}`", r.label()),
                    });
                }
                let mut out = Vec::new();
                for (s, coeff) in r.family.jacobian[var].iter().enumerate() {
                    if coeff.is_zero() {
                        continue;
                    }
                    let mut orders = r.orders.clone();
                    orders[s] += 1;
                    out.push(coeff.clone() * ScalarExpr::opaque(&r.family, orders));
                }
                ScalarExpr::sum(out)
            }
        })
    }

    /// Simultaneous substitution: `Var(i)` becomes `subs[i]`.
    ///
    /// Opaque symbols are chart-bound and cannot be composed with a map, so
    /// their presence is an error.
    pub fn substitute(&self, subs: &[ScalarExpr]) -> Result<ScalarExpr> {
        Ok(match &*self.0 {
            Node::Rational(_) | Node::Hbar | Node::Pi => self.clone(),
            Node::Var(i) => subs
                .get(*i)
                .cloned()
                .ok_or(Error::UnknownVariable {
                    index: *i,
                    dim: subs.len(),
                    context: "substitute".into(),
                })?,
            Node::Sum(v) => {
                let mut out = Vec::with_capacity(v.len());
                for x in v {
                    out.push(x.substitute(subs)?);
                }
                ScalarExpr::sum(out)
            }
            Node::Product(v) => {
                let mut out = Vec::with_capacity(v.len());
                for x in v {
                    out.push(x.substitute(subs)?);
                }
                ScalarExpr::product(out)
            }
            Node::Quotient(a, b) => {
                ScalarExpr::quotient(a.substitute(subs)?, b.substitute(subs)?)
            }
            Node::IntPow(a, k) => a.substitute(subs)?.powi(*k),
            Node::Sin(a) => a.substitute(subs)?.sin(),
            Node::Cos(a) => a.substitute(subs)?.cos(),
            Node::Exp(a) => a.substitute(subs)?.exp(),
            Node::Sqrt(a) => a.substitute(subs)?.sqrt(),
            Node::Ln(a) => a.substitute(subs)?.ln(),
            Node::Opaque(r) => {
                return Err(Error::domain(format!(
                    "cannot substitute into opaque symbol `{}`; opaque symbols are bound to their chart",
                    r.label()
                )))
            }
        })
    }

    /// Replace opaque symbols for which `f` returns an expression; all other
    /// nodes are rebuilt unchanged.  The replacement is not recursed into.
    pub fn replace_opaque(&self, f: &dyn Fn(&OpaqueRef) -> Option<ScalarExpr>) -> ScalarExpr {
        match &*self.0 {
            Node::Rational(_) | Node::Var(_) | Node::Hbar | Node::Pi => self.clone(),
            Node::Sum(v) => ScalarExpr::sum(v.iter().map(|x| x.replace_opaque(f)).collect()),
            Node::Product(v) => {
                ScalarExpr::product(v.iter().map(|x| x.replace_opaque(f)).collect())
            }
            Node::Quotient(a, b) => {
                ScalarExpr::quotient(a.replace_opaque(f), b.replace_opaque(f))
            }
            Node::IntPow(a, k) => a.replace_opaque(f).powi(*k),
            Node::Sin(a) => a.replace_opaque(f).sin(),
            Node::Cos(a) => a.replace_opaque(f).cos(),
            Node::Exp(a) => a.replace_opaque(f).exp(),
            Node::Sqrt(a) => a.replace_opaque(f).sqrt(),
            Node::Ln(a) => a.replace_opaque(f).ln(),
            Node::Opaque(r) => f(r).unwrap_or_else(|| self.clone()),
        }
    }

    /// Numeric evaluation at a chart point.
    pub fn evaluate(&self, env: &EvalEnv) -> Result<f64> {
        let v = self.eval_inner(env)?;
        if !v.is_finite() {
            return Err(Error::eval(clip(&self.to_string()), "non-finite result"));
        }
        Ok(v)
    }

    /// Convenience wrapper for expressions without opaque symbols.
    pub fn evaluate_at(&self, point: &[f64], hbar: f64) -> Result<f64> {
        self.evaluate(&EvalEnv::new(point, hbar))
    }

    fn eval_inner(&self, env: &EvalEnv) -> Result<f64> {
        Ok(match &*self.0 {
            Node::Rational(r) => r
                .to_f64()
                .ok_or_else(|| Error::eval(clip(&self.to_string()), "rational out of f64 range"))?,
            Node::Var(i) => *env.point.get(*i).ok_or(Error::UnknownVariable {
                index: *i,
                dim: env.point.len(),
                context: "evaluate".into(),
            })?,
            Node::Hbar => env.hbar,
            Node::Pi => std::f64::consts::PI,
            Node::Sum(v) => {
                let mut acc = 0.0;
                for x in v {
                    acc += x.eval_inner(env)?;
                }
                acc
            }
            Node::Product(v) => {
                let mut acc = 1.0;
                for x in v {
                    acc *= x.eval_inner(env)?;
                }
                acc
            }
            Node::Quotient(a, b) => {
                let den = b.eval_inner(env)?;
                if den == 0.0 {
                    return Err(Error::eval(
                        clip(&b.to_string()),
                        "division by zero at this chart point",
                    ));
                }
                a.eval_inner(env)? / den
            }
            Node::IntPow(a, k) => {
                let base = a.eval_inner(env)?;
                if base == 0.0 && *k < 0 {
                    return Err(Error::eval(
                        clip(&a.to_string()),
                        "zero raised to a negative power",
                    ));
                }
                base.powi(*k)
            }
            Node::Sin(a) => a.eval_inner(env)?.sin(),
            Node::Cos(a) => a.eval_inner(env)?.cos(),
            Node::Exp(a) => a.eval_inner(env)?.exp(),
            Node::Sqrt(a) => {
                let v = a.eval_inner(env)?;
                if v < 0.0 {
                    return Err(Error::eval(
                        clip(&a.to_string()),
                        format!("square root of negative value {v}"),
                    ));
                }
                v.sqrt()
            }
            Node::Ln(a) => {
                let v = a.eval_inner(env)?;
                if v <= 0.0 {
                    return Err(Error::eval(
                        clip(&a.to_string()),
                        format!("logarithm of non-positive value {v}"),
                    ));
                }
                v.ln()
            }
            Node::Opaque(r) => match env.opaque {
                Some(f) => f(&r.family.name, &r.orders, env.point).ok_or_else(|| {
                    Error::eval(
                        r.label(),
                        "no numeric binding for opaque symbol at this point",
                    )
                })?,
                None => {
                    return Err(Error::eval(
                        r.label(),
                        "expression contains an opaque symbol and the evaluation \
                         environment provides no bindings",
                    ))
                }
            },
        })
    }

    /// Normal form: expanded coprime numerator/denominator over atoms with
    /// sorted monomials, `sin^2 -> 1 - cos^2` and `sqrt(u)^2 -> u` applied.
    /// Best effort: a structurally malformed tree (literal division by zero)
    /// is returned unchanged.
    pub fn simplify(&self) -> ScalarExpr {
        normal::simplify(self)
    }

    /// Canonical prefix rendering, parseable by [`parse_expr`].
    pub fn to_prefix(&self) -> String {
        parse::to_prefix(self, None)
    }

    /// Prefix rendering using chart coordinate names.
    pub fn to_prefix_named(&self, names: &CoordNames) -> String {
        parse::to_prefix(self, Some(names))
    }
}

fn rational_powi(r: &BigRational, k: i32) -> BigRational {
    let mut acc = BigRational::one();
    let abs = k.unsigned_abs();
    for _ in 0..abs {
        acc *= r;
    }
    if k < 0 {
        acc.recip()
    } else {
        acc
    }
}

pub(crate) fn clip(s: &str) -> String {
    if s.len() <= 96 {
        s.to_string()
    } else {
        let cut: String = s.chars().take(93).collect();
        format!("{cut}...")
    }
}

/// Evaluation environment: a chart point, a numeric `hbar`, and optional
/// numeric bindings for opaque symbols `(family name, orders, point) -> value`.
pub struct EvalEnv<'a> {
    pub point: &'a [f64],
    pub hbar: f64,
    pub opaque: Option<&'a dyn Fn(&str, &[u32], &[f64]) -> Option<f64>>,
}

impl<'a> EvalEnv<'a> {
    pub fn new(point: &'a [f64], hbar: f64) -> Self {
        EvalEnv {
            point,
            hbar,
            opaque: None,
        }
    }

    pub fn with_opaque(
        point: &'a [f64],
        hbar: f64,
        opaque: &'a dyn Fn(&str, &[u32], &[f64]) -> Option<f64>,
    ) -> Self {
        EvalEnv {
            point,
            hbar,
            opaque: Some(opaque),
        }
    }
}

// ---- operator overloads ----

impl std::ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::sum(vec![self, rhs])
    }
}

impl std::ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::sum(vec![self, ScalarExpr::int(-1) * rhs])
    }
}

impl std::ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::product(vec![self, rhs])
    }
}

impl std::ops::Div for ScalarExpr {
    type Output = ScalarExpr;
    fn div(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::quotient(self, rhs)
    }
}

impl std::ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::int(-1) * self
    }
}

// ---- display (infix, debugging only; the wire format is prefix) ----

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl ScalarExpr {
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, prec: u8) -> fmt::Result {
        match &*self.0 {
            Node::Rational(r) => {
                if r.is_integer() {
                    write!(f, "{}", r.numer())
                } else if prec >= 2 {
                    write!(f, "({}/{})", r.numer(), r.denom())
                } else {
                    write!(f, "{}/{}", r.numer(), r.denom())
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Hbar => write!(f, "hbar"),
            Node::Pi => write!(f, "pi"),
            Node::Sum(v) => {
                let need = prec >= 1;
                if need {
                    write!(f, "(")?;
                }
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    x.fmt_prec(f, 1)?;
                }
                if need {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Node::Product(v) => {
                let need = prec >= 2;
                if need {
                    write!(f, "(")?;
                }
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, "*")?;
                    }
                    x.fmt_prec(f, 2)?;
                }
                if need {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Node::Quotient(a, b) => {
                let need = prec >= 2;
                if need {
                    write!(f, "(")?;
                }
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)?;
                if need {
                    write!(f, ")")?;
                }
                Ok(())
            }
            Node::IntPow(a, k) => {
                a.fmt_prec(f, 3)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
            Node::Ln(a) => write!(f, "ln({a})"),
            Node::Opaque(r) => write!(f, "{}", r.label()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> ScalarExpr {
        ScalarExpr::var(0)
    }
    fn y() -> ScalarExpr {
        ScalarExpr::var(1)
    }

    #[test]
    fn constant_folding() {
        let e = ScalarExpr::int(2) + ScalarExpr::int(3);
        assert_eq!(e.as_rational().unwrap().to_f64().unwrap(), 5.0);
        let e = ScalarExpr::rational(1, 2) * ScalarExpr::rational(2, 3);
        assert_eq!(e, ScalarExpr::rational(1, 3));
        let e = ScalarExpr::int(0) * x();
        assert!(e.is_zero());
    }

    #[test]
    fn derivative_of_polynomial() {
        // d/dx (x^3 + 2xy) = 3x^2 + 2y
        let e = x().powi(3) + ScalarExpr::int(2) * x() * y();
        let d = e.differentiate(0).unwrap().simplify();
        let expected = (ScalarExpr::int(3) * x().powi(2) + ScalarExpr::int(2) * y()).simplify();
        assert_eq!(d, expected);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // mixed tree with quotient, sqrt, trig
        let e = (x().clone().sin() * y()).powi(2) / (ScalarExpr::int(1) + x().powi(2))
            + (ScalarExpr::int(2) * y()).sqrt();
        let d = e.differentiate(1).unwrap();
        let p = [0.7, 1.3];
        let h = 1e-6;
        let up = e.evaluate_at(&[0.7, 1.3 + h], 1.0).unwrap();
        let dn = e.evaluate_at(&[0.7, 1.3 - h], 1.0).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let sym = d.evaluate_at(&p, 1.0).unwrap();
        assert!((fd - sym).abs() < 1e-8, "fd={fd} sym={sym}");
    }

    #[test]
    fn opaque_family_derivatives() {
        // V(q) in a (q,p) chart: d/dq V = V', d/dp V = 0
        let v = OpaqueFamily::on_variables("V", 2, &[0]);
        let sym = ScalarExpr::opaque(&v, vec![0]);
        let dq = sym.differentiate(0).unwrap();
        assert_eq!(dq, ScalarExpr::opaque(&v, vec![1]));
        let dp = sym.differentiate(1).unwrap();
        assert!(dp.is_zero());
        // second derivative label
        let ddq = dq.differentiate(0).unwrap();
        assert_eq!(format!("{ddq}"), "V''");
    }

    #[test]
    fn non_differentiable_opaque_errors() {
        let f = OpaqueFamily::non_differentiable("blob", 1);
        let sym = ScalarExpr::opaque(&f, vec![0]);
        assert!(matches!(
            sym.differentiate(0),
            Err(Error::OpaqueNotDifferentiable { .. })
        ));
    }

    #[test]
    fn substitute_composes() {
        // e = x^2 + y; substitute x -> 2H cos T etc. is exercised elsewhere,
        // here just check index plumbing.
        let e = x().powi(2) + y();
        let s = e
            .substitute(&[y().clone(), ScalarExpr::int(3)])
            .unwrap()
            .simplify();
        let expected = (y().powi(2) + ScalarExpr::int(3)).simplify();
        assert_eq!(s, expected);
    }

    #[test]
    fn evaluation_domain_errors_name_subtree() {
        let e = ScalarExpr::one() / (x() - ScalarExpr::one());
        let err = e.evaluate_at(&[1.0], 1.0).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("division by zero"), "{msg}");
    }

    #[test]
    fn sqrt_perfect_square_folds() {
        assert_eq!(ScalarExpr::rational(9, 4).sqrt(), ScalarExpr::rational(3, 2));
    }
}
