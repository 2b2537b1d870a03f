//! Symplectic connections on a Darboux chart.
//!
//! A connection is stored through its totally symmetric coefficient table
//! `gamma_ijk` (indices sorted ascending, missing entries zero).  The chart
//! carries the standard symplectic pairing between coordinate `i` and
//! coordinate `n+i`:
//!
//! ```text
//! omega_{i, n+i} = +1        omega^{i, n+i} = -1      (inverse)
//! ```
//!
//! Two constructions produce connections here:
//!
//! * [`flat_pushforward`] transports the trivial flat connection through an
//!   explicit canonical map, given the old Darboux coordinates as symbolic
//!   functions of the new ones; the result is flat by construction and the
//!   map is verified to be canonical first.
//! * hand-assembled tables (from JSON files or chart-specific derivations),
//!   whose flatness is checked through the curvature tensor
//!
//! ```text
//! K_ijkl = d_k gamma_ijl - d_l gamma_ijk
//!        + omega^{st} gamma_til gamma_sjk - omega^{st} gamma_tik gamma_sjl
//! ```
//!
//! which must vanish for the recursion built on top to converge to an
//! associative product.

use crate::error::{Error, Result};
use crate::expr::{expr_compare, CoordNames, Equivalence, ScalarExpr};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// `omega_{r d}` of the standard block form (`+1` on `(i, n+i)`).
pub fn omega_lower(dim: usize, r: usize, d: usize) -> i64 {
    let n = dim / 2;
    if d == r + n {
        1
    } else if r == d + n {
        -1
    } else {
        0
    }
}

/// `omega^{r d}`, the inverse matrix (`-1` on `(i, n+i)`).
pub fn omega_upper(dim: usize, r: usize, d: usize) -> i64 {
    -omega_lower(dim, r, d)
}

/// How scalar coefficients attached to a chart are differentiated.
///
/// `Direct` charts write their scalars in the chart coordinates themselves.
/// `ChainRule` charts write scalars in some auxiliary coordinates (for the
/// action-angle style charts: the original flat ones) and differentiate
/// through the inverse Jacobian `d(auxiliary x^v) / d(chart Q^i)`, itself
/// expressed in the auxiliary coordinates.
#[derive(Clone, Debug)]
pub enum Frame {
    Direct,
    ChainRule { inv_jacobian: Vec<Vec<ScalarExpr>> },
}

impl Frame {
    /// Derivative of `e` along chart coordinate `i`.
    pub fn derivative(&self, e: &ScalarExpr, i: usize) -> Result<ScalarExpr> {
        match self {
            Frame::Direct => e.differentiate(i),
            Frame::ChainRule { inv_jacobian } => {
                let row = inv_jacobian.get(i).ok_or(Error::UnknownVariable {
                    index: i,
                    dim: inv_jacobian.len(),
                    context: "chain-rule frame derivative".into(),
                })?;
                let mut out = ScalarExpr::zero();
                for (v, coeff) in row.iter().enumerate() {
                    if coeff.is_zero() {
                        continue;
                    }
                    let d = e.differentiate(v)?;
                    if !d.is_zero() {
                        out = out + coeff.clone() * d;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Frame::Direct => None,
            Frame::ChainRule { inv_jacobian } => Some(inv_jacobian.len()),
        }
    }
}

/// Totally symmetric connection coefficients on a `dim`-dimensional chart.
#[derive(Clone, Debug)]
pub struct SymplecticConnection {
    dim: usize,
    gamma: BTreeMap<[usize; 3], ScalarExpr>,
}

impl SymplecticConnection {
    /// The flat connection (all coefficients zero).
    pub fn flat(dim: usize) -> Self {
        assert!(dim % 2 == 0 && dim > 0);
        SymplecticConnection {
            dim,
            gamma: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_trivial(&self) -> bool {
        self.gamma.is_empty()
    }

    fn sorted(mut ijk: [usize; 3]) -> [usize; 3] {
        ijk.sort_unstable();
        ijk
    }

    /// Set a coefficient (indices in any order; total symmetry is implied).
    pub fn set(&mut self, i: usize, j: usize, k: usize, expr: ScalarExpr) {
        assert!(i < self.dim && j < self.dim && k < self.dim);
        let key = Self::sorted([i, j, k]);
        if expr.is_zero() {
            self.gamma.remove(&key);
        } else {
            self.gamma.insert(key, expr);
        }
    }

    /// `gamma_ijk` (zero when absent).
    pub fn get(&self, i: usize, j: usize, k: usize) -> ScalarExpr {
        self.gamma
            .get(&Self::sorted([i, j, k]))
            .cloned()
            .unwrap_or_else(ScalarExpr::zero)
    }

    /// The stored (sorted-index) entries.
    pub fn entries(&self) -> impl Iterator<Item = (&[usize; 3], &ScalarExpr)> {
        self.gamma.iter()
    }

    /// Curvature component `K_ijkl` under the given frame.
    pub fn curvature_component(
        &self,
        frame: &Frame,
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    ) -> Result<ScalarExpr> {
        let mut out = frame.derivative(&self.get(i, j, l), k)?
            - frame.derivative(&self.get(i, j, k), l)?;
        for s in 0..self.dim {
            for t in 0..self.dim {
                let w = omega_upper(self.dim, s, t);
                if w == 0 {
                    continue;
                }
                let quad = self.get(t, i, l) * self.get(s, j, k)
                    - self.get(t, i, k) * self.get(s, j, l);
                out = out + ScalarExpr::int(w) * quad;
            }
        }
        Ok(out.simplify())
    }

    /// All independent curvature components (`i <= j`, `k < l`), skipping the
    /// ones that simplify to zero.
    pub fn curvature(&self, frame: &Frame) -> Result<Vec<([usize; 4], ScalarExpr)>> {
        let mut out = Vec::new();
        for i in 0..self.dim {
            for j in i..self.dim {
                for k in 0..self.dim {
                    for l in (k + 1)..self.dim {
                        let val = self.curvature_component(frame, i, j, k, l)?;
                        if !val.is_zero() {
                            out.push(([i, j, k, l], val));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Check flatness.  Symbolic zero is accepted outright; components that
    /// resist symbolic reduction (opaque symbols) are accepted when they
    /// vanish at the randomized sample set, and anything with a nonzero
    /// witness is an error naming the component.
    pub fn check_flat(&self, frame: &Frame) -> Result<()> {
        for ([i, j, k, l], val) in self.curvature(frame)? {
            match expr_compare(&val, &ScalarExpr::zero()) {
                Equivalence::Equal | Equivalence::EqualNumerically => {}
                Equivalence::NotEqual => {
                    return Err(Error::NotFlat {
                        message: format!(
                            "curvature component K_{}{}{}{} = {} does not vanish",
                            i + 1,
                            j + 1,
                            k + 1,
                            l + 1,
                            val
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Transport the flat connection through a canonical map.
///
/// `old_of_new[r]` gives the `r`-th original Darboux coordinate as a symbolic
/// function of the new chart coordinates (variables `0..dim` of the
/// expressions are the new coordinates).  The result is
///
/// ```text
/// gamma_ijk = omega_{r d} (d x^r / d Q^i) (d^2 x^d / d Q^j d Q^k)
/// ```
///
/// The map is first verified to be canonical (the pulled-back symplectic
/// form must be the standard one); that also guarantees the total symmetry
/// of the result, which is asserted.
pub fn flat_pushforward(old_of_new: &[ScalarExpr]) -> Result<SymplecticConnection> {
    let dim = old_of_new.len();
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::DimensionMismatch {
            message: format!("chart map must cover an even dimension, got {dim}"),
        });
    }
    // first derivatives d x^r / d Q^i
    let mut jac = vec![vec![ScalarExpr::zero(); dim]; dim];
    for (r, x) in old_of_new.iter().enumerate() {
        for i in 0..dim {
            jac[r][i] = x.differentiate(i)?.simplify();
        }
    }
    // canonicity: sum_rd omega_rd (d x^r/d Q^i)(d x^d/d Q^j) = omega_ij
    for i in 0..dim {
        for j in 0..dim {
            let mut pulled = ScalarExpr::zero();
            for r in 0..dim {
                for d in 0..dim {
                    let w = omega_lower(dim, r, d);
                    if w != 0 {
                        pulled = pulled
                            + ScalarExpr::int(w) * jac[r][i].clone() * jac[d][j].clone();
                    }
                }
            }
            let want = ScalarExpr::int(omega_lower(dim, i, j));
            if expr_compare(&pulled, &want) == Equivalence::NotEqual {
                return Err(Error::domain(format!(
                    "map is not canonical: pulled-back omega_{}{} = {} instead of {}",
                    i + 1,
                    j + 1,
                    pulled.simplify(),
                    want
                )));
            }
        }
    }
    let mut conn = SymplecticConnection::flat(dim);
    for i in 0..dim {
        for j in i..dim {
            for k in j..dim {
                let mut g = ScalarExpr::zero();
                for r in 0..dim {
                    for d in 0..dim {
                        let w = omega_lower(dim, r, d);
                        if w == 0 {
                            continue;
                        }
                        let second = jac[d][j].differentiate(k)?;
                        g = g + ScalarExpr::int(w) * jac[r][i].clone() * second;
                    }
                }
                conn.set(i, j, k, g.simplify());
            }
        }
    }
    // Total symmetry holds for canonical maps; verify on one representative
    // permutation per entry as a guard against a non-symmetric chart slipping
    // through the numeric canonicity fallback.
    for i in 0..dim {
        for j in i..dim {
            for k in j..dim {
                if i == j {
                    continue;
                }
                let mut alt = ScalarExpr::zero();
                for r in 0..dim {
                    for d in 0..dim {
                        let w = omega_lower(dim, r, d);
                        if w == 0 {
                            continue;
                        }
                        let second = jac[d][i].differentiate(k)?;
                        alt = alt + ScalarExpr::int(w) * jac[r][j].clone() * second;
                    }
                }
                if expr_compare(&conn.get(i, j, k), &alt) == Equivalence::NotEqual {
                    return Err(Error::domain(format!(
                        "pushforward is not symmetric in ({}, {}, {}); the chart map is not canonical",
                        i + 1,
                        j + 1,
                        k + 1
                    )));
                }
            }
        }
    }
    Ok(conn)
}

/// Transport a connection through a canonical map.
///
/// `old_of_new[r]` is the `r`-th old coordinate as a function of the new
/// chart; the source coefficients are functions of the old coordinates.
///
/// ```text
/// gamma'_ijk = gamma_rds(x(Q)) J^r_i J^d_j J^s_k
///            + omega_{r d} J^r_i (d J^d_k / d Q^j)
/// ```
///
/// with `J^r_i = d x^r / d Q^i`.  The zero-connection case reduces to
/// [`flat_pushforward`], which also performs the canonicity check; this
/// function assumes the map was already validated when the source is
/// nontrivial.
pub fn transform_connection(
    source: &SymplecticConnection,
    old_of_new: &[ScalarExpr],
) -> Result<SymplecticConnection> {
    let dim = old_of_new.len();
    if dim != source.dim() {
        return Err(Error::DimensionMismatch {
            message: format!(
                "map covers dimension {dim} but the connection lives in {}",
                source.dim()
            ),
        });
    }
    let inhomogeneous = flat_pushforward(old_of_new)?;
    if source.is_trivial() {
        return Ok(inhomogeneous);
    }
    let mut jac = vec![vec![ScalarExpr::zero(); dim]; dim];
    for (r, x) in old_of_new.iter().enumerate() {
        for i in 0..dim {
            jac[r][i] = x.differentiate(i)?.simplify();
        }
    }
    // source coefficients composed with the map
    let mut pulled: BTreeMap<[usize; 3], ScalarExpr> = BTreeMap::new();
    for (ijk, e) in source.entries() {
        pulled.insert(*ijk, e.substitute(old_of_new)?);
    }
    let get_pulled = |i: usize, j: usize, k: usize| -> ScalarExpr {
        let mut key = [i, j, k];
        key.sort_unstable();
        pulled.get(&key).cloned().unwrap_or_else(ScalarExpr::zero)
    };
    let mut out = SymplecticConnection::flat(dim);
    for i in 0..dim {
        for j in i..dim {
            for k in j..dim {
                let mut g = inhomogeneous.get(i, j, k);
                for r in 0..dim {
                    for d in 0..dim {
                        for s in 0..dim {
                            let src = get_pulled(r, d, s);
                            if src.is_zero() {
                                continue;
                            }
                            g = g + src
                                * jac[r][i].clone()
                                * jac[d][j].clone()
                                * jac[s][k].clone();
                        }
                    }
                }
                out.set(i, j, k, g.simplify());
            }
        }
    }
    Ok(out)
}

/// The connection one-form `(1/2) gamma_ijk y^i y^j dx^k` as a
/// Weyl-element-valued one-form (quadratic in the fiber variables).
pub fn connection_one_form(
    conn: &SymplecticConnection,
    truncation: u32,
) -> crate::weyl::WeylOneForm {
    let dim = conn.dim();
    let mut form = crate::weyl::WeylOneForm::zero(dim, truncation);
    for s in 0..dim {
        for i in 0..dim {
            for j in i..dim {
                let g = conn.get(i, j, s);
                if g.is_zero() {
                    continue;
                }
                let mut m = vec![0u8; dim];
                m[i] += 1;
                m[j] += 1;
                // the symmetric sum over (i,j) and (j,i) cancels the 1/2
                // off the diagonal
                let coeff = if i == j {
                    ScalarExpr::rational(1, 2) * g
                } else {
                    g
                };
                form.components[s].add_term(0, m, coeff);
            }
        }
    }
    form
}

// ---- JSON serialization ----

#[derive(Serialize, Deserialize)]
struct GammaEntry {
    /// 1-based indices, any order.
    ijk: [usize; 3],
    /// Prefix-syntax expression.
    expr: String,
}

#[derive(Serialize, Deserialize)]
struct ConnectionFile {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coordinates: Option<Vec<String>>,
    gamma: Vec<GammaEntry>,
}

impl SymplecticConnection {
    /// Serialize with optional coordinate names for the expressions.
    pub fn to_json(&self, names: Option<&CoordNames>) -> Result<String> {
        let file = ConnectionFile {
            dim: self.dim,
            coordinates: names.map(|n| n.names().to_vec()),
            gamma: self
                .gamma
                .iter()
                .map(|(ijk, e)| GammaEntry {
                    ijk: [ijk[0] + 1, ijk[1] + 1, ijk[2] + 1],
                    expr: match names {
                        Some(n) => e.to_prefix_named(n),
                        None => e.to_prefix(),
                    },
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, CoordNames)> {
        let file: ConnectionFile = serde_json::from_str(text)?;
        if file.dim % 2 != 0 || file.dim == 0 {
            return Err(Error::DimensionMismatch {
                message: format!("connection dimension must be even, got {}", file.dim),
            });
        }
        let names = match &file.coordinates {
            Some(v) => {
                if v.len() != file.dim {
                    return Err(Error::DimensionMismatch {
                        message: format!(
                            "{} coordinate names for dimension {}",
                            v.len(),
                            file.dim
                        ),
                    });
                }
                CoordNames::new(v)
            }
            None => CoordNames::default(),
        };
        let mut conn = SymplecticConnection::flat(file.dim);
        for entry in &file.gamma {
            for &ix in &entry.ijk {
                if ix == 0 || ix > file.dim {
                    return Err(Error::DimensionMismatch {
                        message: format!(
                            "gamma index {ix} out of range 1..={}",
                            file.dim
                        ),
                    });
                }
            }
            let expr = crate::expr::parse_expr(&entry.expr, &names)?;
            let prior = conn.get(entry.ijk[0] - 1, entry.ijk[1] - 1, entry.ijk[2] - 1);
            if !prior.is_zero() {
                return Err(Error::domain(format!(
                    "duplicate gamma entry for indices {:?}",
                    entry.ijk
                )));
            }
            conn.set(entry.ijk[0] - 1, entry.ijk[1] - 1, entry.ijk[2] - 1, expr);
        }
        Ok((conn, names))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::expr_equal;

    /// The harmonic oscillator action-angle style map:
    /// q = sqrt(2H) cos T, p = -sqrt(2H) sin T with (T, H) as vars (0, 1).
    fn oscillator_map() -> Vec<ScalarExpr> {
        let t = ScalarExpr::var(0);
        let h = ScalarExpr::var(1);
        let amp = (ScalarExpr::int(2) * h).sqrt();
        vec![
            amp.clone() * t.clone().cos(),
            -(amp * t.sin()),
        ]
    }

    #[test]
    fn identity_map_gives_trivial_connection() {
        let conn =
            flat_pushforward(&[ScalarExpr::var(0), ScalarExpr::var(1)]).unwrap();
        assert!(conn.is_trivial());
    }

    #[test]
    fn oscillator_pushforward_matches_known_table() {
        let conn = flat_pushforward(&oscillator_map()).unwrap();
        let t = || ScalarExpr::var(0);
        let h = || ScalarExpr::var(1);
        let _ = t;
        // gamma_TTT = -2H, gamma_TTH = 0, gamma_THH = -1/(2H), gamma_HHH = 0
        assert!(expr_equal(&conn.get(0, 0, 0), &(-(ScalarExpr::int(2) * h()))));
        assert!(conn.get(0, 0, 1).simplify().is_zero());
        assert!(expr_equal(
            &conn.get(0, 1, 1),
            &(ScalarExpr::int(-1) / (ScalarExpr::int(2) * h()))
        ));
        assert!(conn.get(1, 1, 1).simplify().is_zero());
    }

    #[test]
    fn oscillator_connection_is_flat() {
        let conn = flat_pushforward(&oscillator_map()).unwrap();
        conn.check_flat(&Frame::Direct).unwrap();
    }

    #[test]
    fn non_canonical_map_is_rejected() {
        // q -> 2q is not canonical
        let bad = vec![ScalarExpr::int(2) * ScalarExpr::var(0), ScalarExpr::var(1)];
        assert!(flat_pushforward(&bad).is_err());
    }

    #[test]
    fn invented_connection_fails_flatness() {
        let mut conn = SymplecticConnection::flat(2);
        conn.set(0, 0, 0, ScalarExpr::var(1));
        // K_1112 picks up d_H gamma_TTT = 1, and no quadratic term compensates
        assert!(conn.check_flat(&Frame::Direct).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let conn = flat_pushforward(&oscillator_map()).unwrap();
        let names = CoordNames::new(&["T", "H"]);
        let text = conn.to_json(Some(&names)).unwrap();
        let (back, names2) = SymplecticConnection::from_json(&text).unwrap();
        assert_eq!(names2.names(), names.names());
        for i in 0..2 {
            for j in i..2 {
                for k in j..2 {
                    assert!(expr_equal(&conn.get(i, j, k), &back.get(i, j, k)));
                }
            }
        }
    }

    #[test]
    fn json_rejects_bad_indices_and_duplicates() {
        let text = r#"{"dim": 2, "gamma": [{"ijk": [1, 1, 3], "expr": "x1"}]}"#;
        assert!(SymplecticConnection::from_json(text).is_err());
        let text = r#"{"dim": 2, "gamma": [
            {"ijk": [1, 1, 2], "expr": "x1"},
            {"ijk": [2, 1, 1], "expr": "x2"}
        ]}"#;
        assert!(SymplecticConnection::from_json(text).is_err());
    }

    #[test]
    fn one_form_matches_hand_expansion() {
        let conn = flat_pushforward(&oscillator_map()).unwrap();
        let form = connection_one_form(&conn, 8);
        let h = ScalarExpr::var(1);
        // dT slot: -H y1^2 - (1/(4H)) y2^2 ; dH slot: -(1/(2H)) y1 y2
        let dt = &form.components[0];
        assert!(expr_equal(
            dt.coefficient(0, &[2, 0]).unwrap(),
            &(-h.clone())
        ));
        assert!(expr_equal(
            dt.coefficient(0, &[0, 2]).unwrap(),
            &(ScalarExpr::int(-1) / (ScalarExpr::int(4) * h.clone()))
        ));
        let dh = &form.components[1];
        assert!(expr_equal(
            dh.coefficient(0, &[1, 1]).unwrap(),
            &(ScalarExpr::int(-1) / (ScalarExpr::int(2) * h))
        ));
        assert_eq!(dt.terms().count(), 2);
        assert_eq!(dh.terms().count(), 1);
    }

    #[test]
    fn transform_roundtrip_recovers_flat() {
        // nonlinear canonical pair: (u, v) with q = e^u, p = v e^{-u};
        // inverse u = ln q, v = q p.  Pushing flat forward and then back
        // must land on the zero connection.
        let u = ScalarExpr::var(0);
        let v = ScalarExpr::var(1);
        let fwd = vec![
            u.clone().exp(),
            v * (-u).exp(),
        ];
        let conn_uv = flat_pushforward(&fwd).unwrap();
        assert!(!conn_uv.is_trivial());
        conn_uv.check_flat(&Frame::Direct).unwrap();
        let q = ScalarExpr::var(0);
        let p = ScalarExpr::var(1);
        let back = vec![q.clone().ln(), q * p];
        let round = transform_connection(&conn_uv, &back).unwrap();
        for i in 0..2 {
            for j in i..2 {
                for k in j..2 {
                    let g = round.get(i, j, k);
                    assert!(
                        expr_equal(&g, &ScalarExpr::zero()),
                        "gamma_{i}{j}{k} = {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn chain_rule_frame_differentiates_through_jacobian() {
        // auxiliary coords (q, p); chart "T" derivative = p d/dq - q d/dp
        // (harmonic flow at H fixed, checked on e = q^2 + p^2: flow invariant)
        let q = ScalarExpr::var(0);
        let p = ScalarExpr::var(1);
        let frame = Frame::ChainRule {
            inv_jacobian: vec![
                vec![p.clone(), -q.clone()],
                vec![ScalarExpr::zero(), ScalarExpr::zero()],
            ],
        };
        let e = q.clone().powi(2) + p.clone().powi(2);
        let d = frame.derivative(&e, 0).unwrap().simplify();
        assert!(d.is_zero(), "flow derivative of the invariant: {d}");
        let d2 = frame.derivative(&q, 0).unwrap();
        assert!(expr_equal(&d2, &p));
    }
}
