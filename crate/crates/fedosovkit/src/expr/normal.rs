//! Rational normal form over transcendental atoms, and expression equality.
//!
//! An expression is flattened into `num/den` where both sides are exact
//! multivariate polynomials whose indeterminates ("atoms") are chart
//! variables, `hbar`, `pi`, transcendental calls with canonicalized
//! arguments, and opaque symbols.  Two rewrites are applied on top of plain
//! rational arithmetic, because the charts in this crate lean on them:
//!
//! * `sin(u)^2 -> 1 - cos(u)^2` (squares of sines are eliminated), and
//! * `sqrt(u)^2 -> u`.
//!
//! Zero detection on the difference of two expressions is then exact: if the
//! reduced numerator is the zero polynomial the expressions agree as
//! functions.  A nonzero numerator containing only `Var`/`hbar`/`pi` atoms
//! proves disagreement (`pi` is transcendental, `hbar` is a formal
//! parameter).  A nonzero numerator that still mentions transcendental or
//! opaque atoms is inconclusive, since atoms can satisfy hidden identities
//! such as `sin(2t) = 2 sin(t) cos(t)`; those cases fall back to randomized
//! evaluation with a fixed seed.

use super::poly::{poly_gcd, Mono, Poly};
use super::{EvalEnv, Node, ScalarExpr};
use num::rational::BigRational;
use num::traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
enum Atom {
    Var(usize),
    Hbar,
    Pi,
    Sin(ScalarExpr),
    Cos(ScalarExpr),
    Exp(ScalarExpr),
    Sqrt(ScalarExpr),
    Ln(ScalarExpr),
    Opaque(String, Vec<u32>),
}

impl Atom {
    fn is_transcendental(&self) -> bool {
        !matches!(self, Atom::Var(_) | Atom::Hbar | Atom::Pi)
    }

    fn to_expr(&self) -> ScalarExpr {
        match self {
            Atom::Var(i) => ScalarExpr::var(*i),
            Atom::Hbar => ScalarExpr::hbar(),
            Atom::Pi => ScalarExpr::pi(),
            Atom::Sin(u) => u.clone().sin(),
            Atom::Cos(u) => u.clone().cos(),
            Atom::Exp(u) => u.clone().exp(),
            Atom::Sqrt(u) => u.clone().sqrt(),
            Atom::Ln(u) => u.clone().ln(),
            Atom::Opaque(_, _) => unreachable!("opaque atoms keep their original expression"),
        }
    }
}

#[derive(Default)]
struct Interner {
    atoms: Vec<Atom>,
    // Original expressions for opaque atoms, so they can be reproduced.
    originals: Vec<Option<ScalarExpr>>,
    map: HashMap<Atom, usize>,
}

impl Interner {
    fn intern(&mut self, atom: Atom, original: Option<ScalarExpr>) -> usize {
        if let Some(&id) = self.map.get(&atom) {
            return id;
        }
        let id = self.atoms.len();
        self.atoms.push(atom.clone());
        self.originals.push(original);
        self.map.insert(atom, id);
        id
    }

    fn atom_expr(&self, id: usize) -> ScalarExpr {
        match &self.atoms[id] {
            Atom::Opaque(_, _) => self.originals[id]
                .clone()
                .expect("opaque atom stores its original expression"),
            other => other.to_expr(),
        }
    }
}

#[derive(Clone, Debug)]
struct RationalForm {
    num: Poly,
    den: Poly,
}

impl RationalForm {
    fn from_poly(p: Poly) -> Self {
        RationalForm { num: p, den: Poly::one() }
    }

    fn reduce(mut self) -> Option<Self> {
        if self.den.is_zero() {
            return None;
        }
        if self.num.is_zero() {
            return Some(RationalForm { num: Poly::zero(), den: Poly::one() });
        }
        let g = poly_gcd(&self.num, &self.den);
        if let Some(c) = g.as_constant() {
            debug_assert!(c.is_one());
        } else {
            self.num = self.num.div_exact(&g)?;
            self.den = self.den.div_exact(&g)?;
        }
        let (scale, prim) = self.den.int_normalize();
        self.den = prim;
        self.num = self.num.scale(&scale.recip());
        Some(self)
    }

    fn add(&self, other: &Self) -> Option<Self> {
        RationalForm {
            num: self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
        .reduce()
    }

    fn mul(&self, other: &Self) -> Option<Self> {
        RationalForm {
            num: self.num.mul(&other.num),
            den: self.den.mul(&other.den),
        }
        .reduce()
    }

    fn div(&self, other: &Self) -> Option<Self> {
        if other.num.is_zero() {
            return None;
        }
        RationalForm {
            num: self.num.mul(&other.den),
            den: self.den.mul(&other.num),
        }
        .reduce()
    }

    fn powi(&self, k: i32) -> Option<Self> {
        if k == 0 {
            return Some(RationalForm::from_poly(Poly::one()));
        }
        let (base_num, base_den) = if k > 0 {
            (self.num.clone(), self.den.clone())
        } else {
            if self.num.is_zero() {
                return None;
            }
            (self.den.clone(), self.num.clone())
        };
        let e = k.unsigned_abs();
        RationalForm {
            num: base_num.pow(e),
            den: base_den.pow(e),
        }
        .reduce()
    }
}

/// Convert to a rational form, interning atoms along the way.  `None` marks a
/// structurally degenerate tree (a literal division by zero somewhere).
fn to_rf(e: &ScalarExpr, it: &mut Interner) -> Option<RationalForm> {
    let rf = match &*e.0 {
        Node::Rational(r) => RationalForm::from_poly(Poly::constant(r.clone())),
        Node::Var(i) => RationalForm::from_poly(Poly::atom(it.intern(Atom::Var(*i), None))),
        Node::Hbar => RationalForm::from_poly(Poly::atom(it.intern(Atom::Hbar, None))),
        Node::Pi => RationalForm::from_poly(Poly::atom(it.intern(Atom::Pi, None))),
        Node::Sum(v) => {
            let mut acc = RationalForm::from_poly(Poly::zero());
            for x in v {
                acc = acc.add(&to_rf(x, it)?)?;
            }
            acc
        }
        Node::Product(v) => {
            let mut acc = RationalForm::from_poly(Poly::one());
            for x in v {
                acc = acc.mul(&to_rf(x, it)?)?;
                if acc.num.is_zero() {
                    break;
                }
            }
            acc
        }
        Node::Quotient(a, b) => to_rf(a, it)?.div(&to_rf(b, it)?)?,
        Node::IntPow(a, k) => to_rf(a, it)?.powi(*k)?,
        Node::Sin(u) => transcendental_atom(u, it, Atom::Sin)?,
        Node::Cos(u) => transcendental_atom(u, it, Atom::Cos)?,
        Node::Exp(u) => transcendental_atom(u, it, Atom::Exp)?,
        Node::Sqrt(u) => transcendental_atom(u, it, Atom::Sqrt)?,
        Node::Ln(u) => transcendental_atom(u, it, Atom::Ln)?,
        Node::Opaque(r) => {
            let id = it.intern(
                Atom::Opaque(r.family.name().to_string(), r.orders.clone()),
                Some(e.clone()),
            );
            RationalForm::from_poly(Poly::atom(id))
        }
    };
    reduce_identities(rf, it)
}

fn transcendental_atom(
    arg: &ScalarExpr,
    it: &mut Interner,
    make: fn(ScalarExpr) -> Atom,
) -> Option<RationalForm> {
    // Canonicalize the argument with its own conversion pass so that, say,
    // sin(2H) and sin(H + H) intern to the same atom.
    let canon = simplify(arg);
    let id = it.intern(make(canon), None);
    Some(RationalForm::from_poly(Poly::atom(id)))
}

/// Apply `sin^2 -> 1 - cos^2` and `sqrt(u)^2 -> u` until stable.
fn reduce_identities(rf: RationalForm, it: &mut Interner) -> Option<RationalForm> {
    let num = reduce_poly(rf.num, it)?;
    let den = reduce_poly(rf.den, it)?;
    num.div(&den)
}

fn reduce_poly(p: Poly, it: &mut Interner) -> Option<RationalForm> {
    let mut current = RationalForm::from_poly(p);
    for _ in 0..64 {
        let (next, changed) = reduce_poly_once(&current.num, it)?;
        if !changed {
            return Some(current);
        }
        current = next.div(&RationalForm::from_poly(current.den))?;
    }
    // The rewrite system terminates on the inputs this crate builds; give up
    // gracefully rather than loop if an exotic nest defeats it.
    Some(current)
}

fn reduce_poly_once(p: &Poly, it: &mut Interner) -> Option<(RationalForm, bool)> {
    let mut out = RationalForm::from_poly(Poly::zero());
    let mut changed = false;
    for (mono, coeff) in p.terms() {
        let mut plain = Mono::one();
        let mut extra = RationalForm::from_poly(Poly::one());
        let mut term_changed = false;
        for &(id, exp) in mono.pairs() {
            match it.atoms[id].clone() {
                Atom::Sin(u) if exp >= 2 => {
                    // sin^e = (1 - cos^2)^(e/2) * sin^(e mod 2)
                    let cos_id = it.intern(Atom::Cos(u), None);
                    let one_minus = Poly::one().sub(&Poly::term(
                        Mono::atom_pow(cos_id, 2),
                        BigRational::one(),
                    ));
                    extra = extra.mul(&RationalForm::from_poly(one_minus.pow(exp / 2)))?;
                    if exp % 2 == 1 {
                        plain = plain.mul(&Mono::atom(id));
                    }
                    term_changed = true;
                }
                Atom::Sqrt(u) if exp >= 2 => {
                    let inner = to_rf(&u, it)?;
                    extra = extra.mul(&inner.powi((exp / 2) as i32)?)?;
                    if exp % 2 == 1 {
                        plain = plain.mul(&Mono::atom(id));
                    }
                    term_changed = true;
                }
                _ => {
                    plain = plain.mul(&Mono::atom_pow(id, exp));
                }
            }
        }
        let base = RationalForm::from_poly(Poly::term(plain, coeff.clone()));
        let term_rf = base.mul(&extra)?;
        out = out.add(&term_rf)?;
        changed |= term_changed;
    }
    Some((out, changed))
}

/// Render a rational form back into an expression tree, terms in descending
/// monomial order.
fn rf_to_expr(rf: &RationalForm, it: &Interner) -> ScalarExpr {
    let num = poly_to_expr(&rf.num, it);
    if let Some(c) = rf.den.as_constant() {
        if c.is_one() {
            return num;
        }
    }
    ScalarExpr::quotient(num, poly_to_expr(&rf.den, it))
}

fn poly_to_expr(p: &Poly, it: &Interner) -> ScalarExpr {
    let mut terms: Vec<ScalarExpr> = Vec::with_capacity(p.num_terms());
    // Iterate leading-first for readable output.
    let collected: Vec<_> = p.terms().collect();
    for (mono, coeff) in collected.into_iter().rev() {
        let mut factors: Vec<ScalarExpr> = Vec::new();
        if !coeff.is_one() || mono.is_one() {
            factors.push(ScalarExpr::big_rational(coeff.clone()));
        }
        for &(id, exp) in mono.pairs() {
            factors.push(it.atom_expr(id).powi(exp as i32));
        }
        terms.push(ScalarExpr::product(factors));
    }
    ScalarExpr::sum(terms)
}

/// Normal form of an expression; returns the input unchanged if the tree is
/// structurally degenerate (literal zero denominator).
pub(crate) fn simplify(e: &ScalarExpr) -> ScalarExpr {
    let mut it = Interner::default();
    match to_rf(e, &mut it) {
        Some(rf) => rf_to_expr(&rf, &it),
        None => e.clone(),
    }
}

/// Verdict of [`expr_compare`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Equivalence {
    /// Proved equal: the difference reduces to the zero normal form.
    Equal,
    /// Agrees at every random sample point; not certified symbolically.
    EqualNumerically,
    /// Proved different, either symbolically or by a witness point.
    NotEqual,
}

/// Decide whether two expressions agree as functions of the chart point and
/// `hbar`.  See the module docs for the exact guarantees of each verdict.
pub fn expr_compare(a: &ScalarExpr, b: &ScalarExpr) -> Equivalence {
    let diff = a.clone() - b.clone();
    let mut it = Interner::default();
    if let Some(rf) = to_rf(&diff, &mut it) {
        if rf.num.is_zero() {
            return Equivalence::Equal;
        }
        let has_transcendental = rf
            .num
            .atoms()
            .into_iter()
            .any(|id| it.atoms[id].is_transcendental());
        if !has_transcendental {
            // Nonzero polynomial in chart variables, hbar and pi: pi is
            // transcendental and hbar is a formal parameter, so this cannot
            // vanish identically.
            return Equivalence::NotEqual;
        }
    }
    numeric_compare(&diff, a, b)
}

/// `true` when the two expressions agree as functions (symbolically certified
/// or numerically indistinguishable at the fixed random sample set).
pub fn expr_equal(a: &ScalarExpr, b: &ScalarExpr) -> bool {
    expr_compare(a, b) != Equivalence::NotEqual
}

fn numeric_compare(diff: &ScalarExpr, a: &ScalarExpr, b: &ScalarExpr) -> Equivalence {
    let mut vars = a.variables();
    vars.extend(b.variables());
    let dim = vars.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f0c1);
    let wanted = 20;
    let mut got = 0;
    for _attempt in 0..400 {
        if got == wanted {
            break;
        }
        let point: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..2.2)).collect();
        let hbar = rng.gen_range(0.1..1.1);
        // Every opaque symbol is an independent unknown at a fixed point;
        // draw one value per (family, orders) pair and memoize it for both
        // sides of the comparison.
        let seed: u64 = rng.gen();
        let cache: RefCell<HashMap<(String, Vec<u32>), f64>> = RefCell::new(HashMap::new());
        let opaque = move |name: &str, orders: &[u32], _pt: &[f64]| -> Option<f64> {
            let key = (name.to_string(), orders.to_vec());
            let mut cache = cache.borrow_mut();
            let len = cache.len() as u64;
            let v = cache.entry(key).or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(len));
                r.gen_range(0.3..1.5)
            });
            Some(*v)
        };
        let env = EvalEnv::with_opaque(&point, hbar, &opaque);
        let (va, vb) = match (a.evaluate(&env), b.evaluate(&env)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => continue,
        };
        let scale = 1.0 + va.abs() + vb.abs();
        if (va - vb).abs() > 1e-9 * scale {
            return Equivalence::NotEqual;
        }
        got += 1;
    }
    if got == 0 {
        // Could not evaluate anywhere; refuse to certify.
        let _ = diff;
        return Equivalence::NotEqual;
    }
    Equivalence::EqualNumerically
}

/// Decompose an expression that is linear and homogeneous in the opaque
/// symbols of one family: returns `(hbar power, derivative orders,
/// coefficient)` triples with the coefficients free of `hbar` and of the
/// family.  `None` when the expression does not have that shape (a term
/// without the family, a quadratic term, or `hbar`/family atoms in a
/// denominator).
pub(crate) fn linear_opaque_decomposition(
    e: &ScalarExpr,
    family: &str,
) -> Option<Vec<(u32, Vec<u32>, ScalarExpr)>> {
    let mut it = Interner::default();
    let rf = to_rf(e, &mut it)?;
    if rf.num.is_zero() {
        return Some(Vec::new());
    }
    let is_family = |id: usize| matches!(&it.atoms[id], Atom::Opaque(n, _) if n == family);
    let is_hbar = |id: usize| matches!(&it.atoms[id], Atom::Hbar);
    if rf.den.atoms().into_iter().any(|id| is_family(id) || is_hbar(id)) {
        return None;
    }
    let mut buckets: BTreeMap<(u32, Vec<u32>), Poly> = BTreeMap::new();
    for (mono, coeff) in rf.num.terms() {
        let mut hbar_power = 0u32;
        let mut orders: Option<Vec<u32>> = None;
        let mut rest = Mono::one();
        for &(id, exp) in mono.pairs() {
            if is_hbar(id) {
                hbar_power = exp;
            } else if is_family(id) {
                if exp != 1 || orders.is_some() {
                    return None;
                }
                match &it.atoms[id] {
                    Atom::Opaque(_, o) => orders = Some(o.clone()),
                    _ => unreachable!(),
                }
            } else {
                rest = rest.mul(&Mono::atom_pow(id, exp));
            }
        }
        let orders = orders?;
        buckets
            .entry((hbar_power, orders))
            .or_insert_with(Poly::zero)
            .add_term(rest, coeff.clone());
    }
    let den = poly_to_expr(&rf.den, &it);
    let mut out = Vec::new();
    for ((hbar_power, orders), poly) in buckets {
        let num = poly_to_expr(&poly, &it);
        out.push((
            hbar_power,
            orders,
            ScalarExpr::quotient(num, den.clone()).simplify(),
        ));
    }
    Some(out)
}

/// Strict symbolic zero test: the normal form of `e` is the zero polynomial.
pub fn is_zero_symbolic(e: &ScalarExpr) -> bool {
    let mut it = Interner::default();
    match to_rf(e, &mut it) {
        Some(rf) => rf.num.is_zero(),
        None => false,
    }
}

// Re-export for sibling modules that need plain rational arithmetic checks.
pub(crate) fn as_exact_rational(e: &ScalarExpr) -> Option<BigRational> {
    let mut it = Interner::default();
    let rf = to_rf(e, &mut it)?;
    let num = rf.num.as_constant()?;
    let den = rf.den.as_constant()?;
    if den.is_zero() {
        return None;
    }
    Some(num / den)
}

pub(crate) fn exact_rational_to_f64(e: &ScalarExpr) -> Option<f64> {
    as_exact_rational(e).and_then(|r| r.to_f64())
}
