//! The flat Fedosov construction: lifting chart scalars to flat sections of
//! the Weyl bundle and multiplying them there.
//!
//! Given a flat symplectic connection `gamma` on a Darboux chart, a scalar
//! `f` lifts to the Weyl element solving the flat-section equation, built by
//! the fiber-degree recursion
//!
//! ```text
//! a_0 = f,     a_{z+1} = delta_inv( d a_z + (i/hbar)[gamma, a_z] )
//! ```
//!
//! where `d` differentiates coefficients along the chart and `[.,.]` is the
//! fiberwise commutator.  Because the connection form is quadratic in the
//! fiber variables, the commutator preserves both the fiber degree and the
//! `hbar` grading, so the lift of a scalar carries no structural `hbar` at
//! all; every power of `hbar` in a star product comes from contractions
//! between two lifts.
//!
//! The product of scalars is the center projection of the fiberwise product
//! of their lifts.  With the sign convention used throughout this crate
//! (`q * p = q p - i hbar / 2`), the projection composes the lifts in
//! reversed order relative to the fiber product's own pairing orientation:
//!
//! ```text
//! f * g = sigma( lift(g) ∘ lift(f) )
//! ```
//!
//! Both orientations yield associative products deforming the same Poisson
//! structure up to sign; the reversed one is what reproduces the bracket
//! normalization `{q, p} = -1` that the rest of the crate is built around
//! (see the crate-level docs).
//!
//! Truncation: with order `N`, lifts are exact through fiber degree `N` and
//! the scalar product is exact through `hbar^floor(N/2)`; higher
//! coefficients are dropped, not approximated.

use crate::connection::{connection_one_form, Frame, SymplecticConnection};
use crate::error::{Error, Result};
use crate::expr::{
    linear_opaque_decomposition, ComplexExpr, CoordNames, OpaqueFamily, ScalarExpr,
};
use crate::weyl::{WeylElement, WeylOneForm};
use std::collections::BTreeMap;

/// An immutable chart-plus-connection bundle on which lifts and star
/// products are computed.
#[derive(Clone, Debug)]
pub struct FedosovContext {
    dim: usize,
    truncation: u32,
    names: CoordNames,
    connection: SymplecticConnection,
    frame: Frame,
    gamma_form: WeylOneForm,
}

impl FedosovContext {
    /// Default truncation: star products exact through `hbar^4`.
    pub const DEFAULT_TRUNCATION: u32 = 8;

    /// Build a context, verifying the connection is flat (symbolically, with
    /// a randomized numeric fallback for opaque coefficients).
    pub fn new(
        connection: SymplecticConnection,
        frame: Frame,
        names: CoordNames,
        truncation: u32,
    ) -> Result<Self> {
        connection.check_flat(&frame)?;
        Self::new_unchecked(connection, frame, names, truncation)
    }

    /// Build a context without the flatness check.  Intended for formula
    /// extraction over a connection whose coefficients are free symbols (and
    /// therefore cannot satisfy the curvature identity); products computed
    /// in such a context are formal.
    pub fn new_unchecked(
        connection: SymplecticConnection,
        frame: Frame,
        names: CoordNames,
        truncation: u32,
    ) -> Result<Self> {
        if truncation < 2 {
            return Err(Error::domain(format!(
                "truncation order must be at least 2, got {truncation}"
            )));
        }
        let dim = connection.dim();
        let gamma_form = connection_one_form(&connection, truncation);
        Ok(FedosovContext {
            dim,
            truncation,
            names,
            connection,
            frame,
            gamma_form,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn truncation(&self) -> u32 {
        self.truncation
    }

    pub fn names(&self) -> &CoordNames {
        &self.names
    }

    pub fn connection(&self) -> &SymplecticConnection {
        &self.connection
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// `d a + (i/hbar)[gamma, a]` as a one-form.
    pub fn covariant_exterior_derivative(&self, a: &WeylElement) -> Result<WeylOneForm> {
        let mut form = WeylOneForm::zero(self.dim, self.truncation);
        for s in 0..self.dim {
            let mut comp = self.frame_derivative(a, s)?;
            let gamma_s = &self.gamma_form.components[s];
            if !gamma_s.is_empty() {
                comp = comp.add(&WeylElement::commutator_over_i_hbar(gamma_s, a));
            }
            form.components[s] = comp;
        }
        Ok(form)
    }

    fn frame_derivative(&self, a: &WeylElement, s: usize) -> Result<WeylElement> {
        match &self.frame {
            Frame::Direct => a.chart_derivative(s),
            Frame::ChainRule { inv_jacobian } => {
                let mut out = WeylElement::zero(self.dim, self.truncation);
                for (v, coeff) in inv_jacobian[s].iter().enumerate() {
                    if coeff.is_zero() {
                        continue;
                    }
                    out = out.add(&a.chart_derivative(v)?.scale_coefficient(coeff));
                }
                Ok(out)
            }
        }
    }

    /// Lift a chart scalar to its flat section, exact through fiber degree
    /// `N`.  The center projection of the result returns `f`.
    pub fn lift(&self, f: &ScalarExpr) -> Result<WeylElement> {
        let mut total = WeylElement::from_coefficient(self.dim, self.truncation, f.clone());
        let mut layer = total.clone();
        for _z in 1..=self.truncation {
            layer = self
                .covariant_exterior_derivative(&layer)?
                .delta_inv()
                .normalize();
            if layer.is_empty() {
                break;
            }
            total = total.add(&layer);
        }
        Ok(total)
    }

    /// Star product of two chart scalars, split into real and imaginary
    /// parts (exact for real inputs).
    pub fn star(&self, f: &ScalarExpr, g: &ScalarExpr) -> Result<ComplexExpr> {
        let (re, im) = self.star_elements(f, g)?;
        Ok(ComplexExpr::new(
            re.center().simplify(),
            im.center().simplify(),
        ))
    }

    fn star_elements(&self, f: &ScalarExpr, g: &ScalarExpr) -> Result<(WeylElement, WeylElement)> {
        let lf = self.lift(f)?;
        let lg = self.lift(g)?;
        Ok(lg.circle(&lf))
    }

    /// Moyal bracket `(f*g - g*f)/(i hbar)`, real for real inputs.  Under
    /// this crate's sign convention `bracket(q, p) = -1`.
    pub fn bracket(&self, f: &ScalarExpr, g: &ScalarExpr) -> Result<ScalarExpr> {
        let (_, im) = self.star_elements(f, g)?;
        // f*g - g*f = 2i Im(f*g); the imaginary part carries grading >= 1.
        let halved = im.hbar_div("moyal bracket of real scalars")?;
        Ok((ScalarExpr::int(2) * halved.center()).simplify())
    }

    /// Residuals of the star-eigenvalue system for a candidate pair:
    /// `(Re(h*w) - e*w, Im(h*w))`.  Both vanish exactly on a genuine
    /// eigenpair.
    pub fn eigen_equation_residuals(
        &self,
        h: &ScalarExpr,
        w: &ScalarExpr,
        e: &ScalarExpr,
    ) -> Result<(ScalarExpr, ScalarExpr)> {
        let hw = self.star(h, w)?;
        let real = (hw.re - e.clone() * w.clone()).simplify();
        Ok((real, hw.im))
    }

    /// Expand `H * W` for a placeholder state `W(T, H)` on a two-dimensional
    /// chart and collect the coefficient of each `hbar^r  d^s/dT^s  d^t/dH^t
    /// W`.  The real part contributes the even-`r` entries directly; the
    /// imaginary part is `(hbar/2) [dW/dT + sum hbar^{r-1} theta ...]`, so
    /// odd-`r` entries are twice the raw coefficient.
    pub fn theta_coefficients(&self, max_r: u32) -> Result<ThetaTable> {
        if self.dim != 2 {
            return Err(Error::DimensionMismatch {
                message: format!(
                    "state-equation coefficients require a 2-dimensional chart, got {}",
                    self.dim
                ),
            });
        }
        let w_family = OpaqueFamily::on_variables("W", 2, &[0, 1]);
        let w = ScalarExpr::opaque(&w_family, vec![0, 0]);
        let h = ScalarExpr::var(1);
        let hw = self.star(&h, &w)?;
        let mut table = ThetaTable {
            entries: BTreeMap::new(),
        };
        let re_parts = linear_opaque_decomposition(&hw.re, "W").ok_or_else(|| {
            Error::domain("real part of H*W is not linear in the placeholder state")
        })?;
        for (r, orders, coeff) in re_parts {
            if r % 2 != 0 {
                return Err(Error::domain(format!(
                    "odd hbar power {r} in the real part of H*W; real inputs \
                     should produce even powers only"
                )));
            }
            if r > max_r {
                continue;
            }
            table.insert(r, orders[0], orders[1], coeff);
        }
        let im_parts = linear_opaque_decomposition(&hw.im, "W").ok_or_else(|| {
            Error::domain("imaginary part of H*W is not linear in the placeholder state")
        })?;
        for (r, orders, coeff) in im_parts {
            if r % 2 != 1 {
                return Err(Error::domain(format!(
                    "even hbar power {r} in the imaginary part of H*W"
                )));
            }
            if r > max_r {
                continue;
            }
            table.insert(r, orders[0], orders[1], (ScalarExpr::int(2) * coeff).simplify());
        }
        Ok(table)
    }
}

/// Coefficients of the expanded state equation, keyed by
/// `(hbar power r, T-derivative count s, H-derivative count t)`.
#[derive(Clone, Debug)]
pub struct ThetaTable {
    pub entries: BTreeMap<(u32, u32, u32), ScalarExpr>,
}

impl ThetaTable {
    fn insert(&mut self, r: u32, s: u32, t: u32, coeff: ScalarExpr) {
        if !coeff.is_zero() {
            self.entries.insert((r, s, t), coeff);
        }
    }

    /// The coefficient at `(r, s, t)`, zero when absent.
    pub fn get(&self, r: u32, s: u32, t: u32) -> ScalarExpr {
        self.entries
            .get(&(r, s, t))
            .cloned()
            .unwrap_or_else(ScalarExpr::zero)
    }
}
