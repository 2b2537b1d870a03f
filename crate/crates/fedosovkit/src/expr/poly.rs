//! Exact multivariate polynomials over `BigRational`, used as the substrate
//! of the rational normal form.  "Variables" here are atom ids handed out by
//! the normal-form interner; this module knows nothing about what they mean.
//!
//! Monomials are ordered graded-lexicographically with smaller atom ids more
//! significant.  That order is compatible with multiplication, which the
//! leading-term division algorithm relies on.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::{One, Signed, Zero};
use num::Integer;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// A monomial: sorted `(atom id, exponent)` pairs, no zero exponents.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Mono(Vec<(usize, u32)>);

impl Mono {
    pub fn one() -> Self {
        Mono(Vec::new())
    }

    pub fn atom(id: usize) -> Self {
        Mono(vec![(id, 1)])
    }

    pub fn atom_pow(id: usize, exp: u32) -> Self {
        if exp == 0 {
            Mono::one()
        } else {
            Mono(vec![(id, exp)])
        }
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u64 {
        self.0.iter().map(|&(_, e)| e as u64).sum()
    }

    pub fn exponent_of(&self, id: usize) -> u32 {
        self.0
            .iter()
            .find(|&&(a, _)| a == id)
            .map(|&(_, e)| e)
            .unwrap_or(0)
    }

    pub fn pairs(&self) -> &[(usize, u32)] {
        &self.0
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((self.0[i].0, self.0[i].1 + other.0[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Mono(out)
    }

    /// `self / other` when every exponent of `other` fits under `self`.
    pub fn try_div(&self, other: &Mono) -> Option<Mono> {
        let mut out = Vec::with_capacity(self.0.len());
        let mut j = 0;
        for &(a, e) in &self.0 {
            let mut e = e;
            if j < other.0.len() && other.0[j].0 < a {
                // `other` contains an atom absent from `self`
                return None;
            }
            if j < other.0.len() && other.0[j].0 == a {
                let oe = other.0[j].1;
                if oe > e {
                    return None;
                }
                e -= oe;
                j += 1;
            }
            if e > 0 {
                out.push((a, e));
            }
        }
        if j < other.0.len() {
            return None;
        }
        Some(Mono(out))
    }

    /// Componentwise minimum (greatest common monomial factor).
    pub fn gcd(&self, other: &Mono) -> Mono {
        let mut out = Vec::new();
        let mut j = 0;
        for &(a, e) in &self.0 {
            while j < other.0.len() && other.0[j].0 < a {
                j += 1;
            }
            if j < other.0.len() && other.0[j].0 == a {
                out.push((a, e.min(other.0[j].1)));
            }
        }
        Mono(out)
    }

    /// Drop atom `id` from the monomial, returning its exponent.
    pub fn without(&self, id: usize) -> (Mono, u32) {
        let mut out = Vec::with_capacity(self.0.len());
        let mut exp = 0;
        for &(a, e) in &self.0 {
            if a == id {
                exp = e;
            } else {
                out.push((a, e));
            }
        }
        (Mono(out), exp)
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // Lexicographic: the smallest atom id where exponents differ decides;
        // the larger exponent there wins.
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.0.get(i), other.0.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&(a, ea)), Some(&(b, eb))) => match a.cmp(&b) {
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                    Ordering::Equal => {
                        match ea.cmp(&eb) {
                            Ordering::Equal => {}
                            ord => return ord,
                        }
                        i += 1;
                        j += 1;
                    }
                },
            }
        }
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A polynomial: monomial -> nonzero rational coefficient.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Poly {
    terms: BTreeMap<Mono, BigRational>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn one() -> Self {
        Poly::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Mono::one(), c);
        }
        Poly { terms }
    }

    pub fn atom(id: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Mono::atom(id), BigRational::one());
        Poly { terms }
    }

    pub fn term(m: Mono, c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Poly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty() || (self.terms.len() == 1 && self.terms.keys().next().unwrap().is_one())
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.terms.is_empty() {
            return Some(BigRational::zero());
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            if m.is_one() {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &BigRational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Leading (greatest) monomial and coefficient.
    pub fn leading(&self) -> Option<(&Mono, &BigRational)> {
        self.terms.iter().next_back()
    }

    pub fn atoms(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for m in self.terms.keys() {
            for &(a, _) in m.pairs() {
                out.insert(a);
            }
        }
        out
    }

    pub fn max_degree_of(&self, id: usize) -> u32 {
        self.terms
            .keys()
            .map(|m| m.exponent_of(id))
            .max()
            .unwrap_or(0)
    }

    pub fn add_term(&mut self, m: Mono, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), -c.clone()))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn mul_term(&self, m: &Mono, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(mm, cc)| (mm.mul(m), cc * c))
                .collect(),
        }
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        self.mul_term(&Mono::one(), c)
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::one();
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// Greatest monomial dividing every term.
    pub fn common_monomial(&self) -> Mono {
        let mut it = self.terms.keys();
        let mut acc = match it.next() {
            Some(m) => m.clone(),
            None => return Mono::one(),
        };
        for m in it {
            acc = acc.gcd(m);
            if acc.is_one() {
                break;
            }
        }
        acc
    }

    /// Exact division; `None` when `other` does not divide `self`.
    pub fn div_exact(&self, other: &Poly) -> Option<Poly> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Poly::zero());
        }
        if let Some(c) = other.as_constant() {
            return Some(self.scale(&c.recip()));
        }
        let (lm, lc) = other.leading().unwrap();
        let mut rem = self.clone();
        let mut quo = Poly::zero();
        while let Some((rm, rc)) = rem.leading() {
            let m = rm.try_div(lm)?;
            let c = rc / lc;
            quo.add_term(m.clone(), c.clone());
            rem = rem.sub(&other.mul_term(&m, &c));
        }
        Some(quo)
    }

    /// Integer-normalized form: returns `(scale, primitive)` with
    /// `self = scale * primitive`, where `primitive` has coprime integer
    /// coefficients and positive leading coefficient.
    pub fn int_normalize(&self) -> (BigRational, Poly) {
        if self.is_zero() {
            return (BigRational::one(), Poly::zero());
        }
        let mut den_lcm = BigInt::one();
        for c in self.terms.values() {
            den_lcm = den_lcm.lcm(c.denom());
        }
        let mut num_gcd = BigInt::zero();
        for c in self.terms.values() {
            let int_c = c.numer() * (&den_lcm / c.denom());
            num_gcd = num_gcd.gcd(&int_c);
        }
        let mut scale = BigRational::new(num_gcd, den_lcm);
        let lead_sign_negative = self
            .leading()
            .map(|(_, c)| c.is_negative())
            .unwrap_or(false);
        if lead_sign_negative {
            scale = -scale;
        }
        let inv = scale.recip();
        (scale, self.scale(&inv))
    }

    /// View in a main atom: degree in `v` -> coefficient polynomial (free of `v`).
    fn coeffs_in(&self, v: usize) -> BTreeMap<u32, Poly> {
        let mut out: BTreeMap<u32, Poly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let (rest, e) = m.without(v);
            out.entry(e).or_insert_with(Poly::zero).add_term(rest, c.clone());
        }
        out.retain(|_, p| !p.is_zero());
        out
    }

    fn from_coeffs_in(v: usize, coeffs: BTreeMap<u32, Poly>) -> Poly {
        let mut out = Poly::zero();
        for (e, p) in coeffs {
            let vm = Mono::atom_pow(v, e);
            for (m, c) in &p.terms {
                out.add_term(m.mul(&vm), c.clone());
            }
        }
        out
    }
}

/// Polynomial gcd, returned primitive over the integers with positive leading
/// coefficient.  `gcd(0, b) = primitive(b)`; `gcd(0, 0) = 0`.
pub fn poly_gcd(a: &Poly, b: &Poly) -> Poly {
    if a.is_zero() {
        return b.int_normalize().1;
    }
    if b.is_zero() {
        return a.int_normalize().1;
    }
    let (_, pa) = a.int_normalize();
    let (_, pb) = b.int_normalize();
    if pa == pb {
        return pa;
    }
    // Split off common monomial factors first; they are frequent (powers of a
    // single chart function in a denominator) and keep the PRS small.
    let ma = pa.common_monomial();
    let mb = pb.common_monomial();
    let mg = ma.gcd(&mb);
    let one = BigRational::one();
    let ca = pa
        .div_exact(&Poly::term(ma.clone(), one.clone()))
        .expect("common monomial divides");
    let cb = pb
        .div_exact(&Poly::term(mb.clone(), one.clone()))
        .expect("common monomial divides");
    let core = gcd_primitive(&ca, &cb);
    let with_mono = core.mul_term(&mg, &BigRational::one());
    with_mono.int_normalize().1
}

fn gcd_primitive(a: &Poly, b: &Poly) -> Poly {
    if a.as_constant().is_some() || b.as_constant().is_some() {
        // Constants are units over the rationals; the polynomial gcd is 1.
        return Poly::one();
    }
    // Pick the main atom with the smallest combined degree to keep the
    // pseudo-remainder sequence short.
    let atoms: BTreeSet<usize> = a.atoms().union(&b.atoms()).copied().collect();
    let v = *atoms
        .iter()
        .min_by_key(|&&v| a.max_degree_of(v) as u64 + b.max_degree_of(v) as u64)
        .expect("non-constant polynomials have atoms");
    let da = a.max_degree_of(v);
    let db = b.max_degree_of(v);
    if da == 0 || db == 0 {
        // v is missing from one side, so the gcd is free of v: it must divide
        // every v-coefficient of the side that does contain v.
        let (with_v, without_v) = if da == 0 { (b, a) } else { (a, b) };
        let cont = content_in(with_v, v);
        return gcd_primitive(&cont, without_v);
    }

    let cont_a = content_in(a, v);
    let cont_b = content_in(b, v);
    let cont_gcd = gcd_primitive(&cont_a, &cont_b);
    let prim_a = a.div_exact(&cont_a).expect("content divides");
    let prim_b = b.div_exact(&cont_b).expect("content divides");

    let (mut f, mut g) = if da >= db {
        (prim_a, prim_b)
    } else {
        (prim_b, prim_a)
    };
    loop {
        let r = pseudo_rem(&f, &g, v);
        if r.is_zero() {
            let gp = g
                .div_exact(&content_in(&g, v))
                .expect("content divides")
                .int_normalize()
                .1;
            return cont_gcd.mul(&gp).int_normalize().1;
        }
        if r.max_degree_of(v) == 0 {
            return cont_gcd;
        }
        f = g;
        g = r
            .div_exact(&content_in(&r, v))
            .expect("content divides")
            .int_normalize()
            .1;
    }
}

/// Content of `p` with respect to atom `v`: gcd of its `v`-coefficients.
fn content_in(p: &Poly, v: usize) -> Poly {
    let coeffs = p.coeffs_in(v);
    let mut acc = Poly::zero();
    for c in coeffs.values() {
        acc = if acc.is_zero() {
            c.int_normalize().1
        } else {
            poly_gcd(&acc, c)
        };
        if acc.as_constant().is_some() {
            return Poly::one();
        }
    }
    if acc.is_zero() {
        Poly::one()
    } else {
        acc
    }
}

/// Pseudo-remainder of `f` by `g` in atom `v` (both must contain `v`).
fn pseudo_rem(f: &Poly, g: &Poly, v: usize) -> Poly {
    let dg = g.max_degree_of(v);
    let g_coeffs = g.coeffs_in(v);
    let lc_g = g_coeffs[&dg].clone();
    let mut r = f.clone();
    loop {
        if r.is_zero() {
            return r;
        }
        let dr = r.max_degree_of(v);
        if dr < dg {
            return r;
        }
        let r_coeffs = r.coeffs_in(v);
        let lc_r = r_coeffs[&dr].clone();
        // r <- lc_g * r - lc_r * v^(dr-dg) * g
        let shifted = Poly::from_coeffs_in(
            v,
            g_coeffs
                .iter()
                .map(|(e, p)| (e + (dr - dg), p.clone()))
                .collect(),
        );
        r = r.mul(&lc_g).sub(&shifted.mul(&lc_r));
    }
}
