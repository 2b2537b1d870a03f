//! First-order stationary perturbation theory in time-energy coordinates.
//!
//! The unperturbed problem lives on a chart `(T₀, H₀)` with a flat
//! symplectic connection.  A perturbed Hamiltonian `H = H₀ + λH₁(T₀, H₀)`
//! is absorbed into new canonical coordinates
//!
//! ```text
//! T = T₀ + λT₁(T₀, H₀),    H = H₀ + λH₁(T₀, H₀),
//! ```
//!
//! which stay canonical at first order exactly when `T₁` solves
//! `∂T₁/∂T₀ + ∂H₁/∂H₀ = 0` ([`solve_t1`]).  When `∂H₁/∂H₀` has a nonzero
//! time average `m(H₀)`, that solution grows linearly in time: the
//! perturbation shifts the oscillation frequency, and no periodic
//! reparametrization can absorb it.  A secular `T₁` would make the new
//! chart multivalued on the time circle and silently invalidate every
//! integral over it, so the change of coordinates used here keeps only
//! the periodic part of `T₁` and moves the mean into the Hamiltonian:
//! with `M' = m`, `M(0) = 0`, the pair `(T₁_periodic, H₁ − M)` is again
//! canonical at first order, and the perturbed Hamiltonian in the new
//! chart becomes `H + λM(H)` instead of the bare coordinate `H`.
//!
//! Pushing the flat connection through the periodic change gives
//! `γ′ = γ + λγ₁` ([`connection_first_order`]) and with it a corrected
//! star product `A ∗̃ B = A ∗ B + λ A ∗̄ B`
//! ([`PerturbationProblem::star_correction`]).
//!
//! Writing `E = E₀ + λE₁` and `W_E = W_{E0} + λW_{E1}` in the eigenvalue
//! equation `(H + λM) ∗̃ W_E = E W_E` and collecting powers of `λ` gives
//! the unperturbed equation at order zero and
//!
//! ```text
//! (H − E₀) ∗ W_{E1} = E₁ W_{E0} − H ∗̄ W_{E0} − M ∗ W_{E0}
//! ```
//!
//! at order one.  Star-multiplying from the left by the projection
//! `W_{E0} ∗` and integrating kills the left side; the `M` term collapses
//! exactly by the cyclic property of the integrated star product, leaving
//!
//! ```text
//! E₁ = 2πħ ∫ dT dH  W_{E0} (H ∗̄ W_{E0})  +  ∫ dT dH  W_{E0} M ,
//! ```
//!
//! computed by [`PerturbationProblem::first_order_energy`].  The linear
//! equation itself is exposed as a residual checker for candidate
//! corrections ([`PerturbationProblem::first_order_residual`]); no general
//! solver for `W_{E1}` is attempted.  Both work in the periodic gauge, so
//! a candidate `W_{E1}` must be the correction in that gauge.
//!
//! Variable layout: index 0 is the time coordinate, index 1 the energy
//! coordinate, and index 2 is reserved for the deformation parameter `λ`
//! inside the jet computation.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};

use crate::connection::{Frame, SymplecticConnection};
use crate::error::{Error, Result};
use crate::expr::{
    expr_compare, ComplexExpr, CoordNames, Equivalence, OpaqueFamily, ScalarExpr,
};
use crate::fedosov::{FedosovContext, ThetaTable};
use crate::numeric;
use crate::oscillator::{self, OscillatorEigenstate};

/// Largest harmonic the trigonometric analysis will look for.  Time
/// dependence of perturbations must be a trigonometric polynomial in the
/// chart's periodic coordinate; products and powers of harmonics are fine,
/// fractional frequencies are not.
const MAX_FREQUENCY: usize = 12;

/// A finite Fourier series `mean + Σ_k a_k cos(kT) + b_k sin(kT)` with
/// coefficients depending on the energy coordinate only.
struct TrigSeries {
    mean: ScalarExpr,
    cosine: Vec<(usize, ScalarExpr)>,
    sine: Vec<(usize, ScalarExpr)>,
}

impl TrigSeries {
    fn to_expr(&self) -> ScalarExpr {
        let t = ScalarExpr::var(0);
        let mut out = self.mean.clone();
        for (k, a) in &self.cosine {
            out = out + a.clone() * (ScalarExpr::int(*k as i64) * t.clone()).cos();
        }
        for (k, b) in &self.sine {
            out = out + b.clone() * (ScalarExpr::int(*k as i64) * t.clone()).sin();
        }
        out
    }
}

fn at_time_zero(e: &ScalarExpr) -> Result<ScalarExpr> {
    Ok(e
        .substitute(&[ScalarExpr::zero(), ScalarExpr::var(1)])?
        .simplify())
}

/// Exact Gaussian elimination of a rational matrix against symbolic right
/// sides.  The matrices here are small Vandermonde-type systems and always
/// invertible.
fn solve_exact(mut mat: Vec<Vec<BigRational>>, mut rhs: Vec<ScalarExpr>) -> Result<Vec<ScalarExpr>> {
    let n = mat.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| !mat[r][col].is_zero())
            .ok_or_else(|| Error::domain("harmonic analysis produced a singular system"))?;
        mat.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        let pivot = mat[col][col].clone();
        for r in 0..n {
            if r == col || mat[r][col].is_zero() {
                continue;
            }
            let factor = &mat[r][col] / &pivot;
            for c in col..n {
                let delta = &factor * &mat[col][c];
                mat[r][c] = &mat[r][c] - delta;
            }
            rhs[r] = (rhs[r].clone()
                - ScalarExpr::big_rational(factor) * rhs[col].clone())
            .simplify();
        }
    }
    let mut out = Vec::with_capacity(n);
    for (r, e) in rhs.into_iter().enumerate() {
        out.push((ScalarExpr::big_rational(mat[r][r].recip()) * e).simplify());
    }
    Ok(out)
}

/// Resolve an expression on the chart into a finite Fourier series in the
/// time coordinate.  The derivatives at `T = 0` determine the harmonic
/// amplitudes through an exact rational Vandermonde system; the candidate
/// series is accepted only when it compares equal to the input, so a
/// mismatch of frequencies cannot slip through.
fn trig_series(g: &ScalarExpr) -> Result<TrigSeries> {
    let simplified = g.simplify();
    if !simplified.variables().contains(&0) {
        return Ok(TrigSeries {
            mean: simplified,
            cosine: Vec::new(),
            sine: Vec::new(),
        });
    }
    let mut derivs = vec![simplified.clone()];
    for top in 1..=MAX_FREQUENCY {
        while derivs.len() < 2 * top + 1 {
            let next = derivs.last().unwrap().differentiate(0)?.simplify();
            derivs.push(next);
        }
        // even derivatives: unknowns (mean, a_1 .. a_top)
        let mut mat = vec![vec![BigRational::zero(); top + 1]; top + 1];
        let mut rhs = Vec::with_capacity(top + 1);
        for r in 0..=top {
            if r == 0 {
                mat[0][0] = BigRational::one();
            }
            for k in 1..=top {
                let mut v = BigInt::from(k).pow(2 * r as u32);
                if r % 2 == 1 {
                    v = -v;
                }
                mat[r][k] = BigRational::from_integer(v);
            }
            rhs.push(at_time_zero(&derivs[2 * r])?);
        }
        let even = solve_exact(mat, rhs)?;
        // odd derivatives: unknowns (b_1 .. b_top)
        let mut mat = vec![vec![BigRational::zero(); top]; top];
        let mut rhs = Vec::with_capacity(top);
        for r in 0..top {
            for k in 1..=top {
                let mut v = BigInt::from(k).pow(2 * r as u32 + 1);
                if r % 2 == 1 {
                    v = -v;
                }
                mat[r][k - 1] = BigRational::from_integer(v);
            }
            rhs.push(at_time_zero(&derivs[2 * r + 1])?);
        }
        let odd = solve_exact(mat, rhs)?;
        let series = TrigSeries {
            mean: even[0].clone(),
            cosine: even
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, a)| !a.is_zero())
                .map(|(k, a)| (k, a.clone()))
                .collect(),
            sine: odd
                .iter()
                .enumerate()
                .filter(|(_, b)| !b.is_zero())
                .map(|(k, b)| (k + 1, b.clone()))
                .collect(),
        };
        if expr_compare(&series.to_expr(), &simplified) != Equivalence::NotEqual {
            return Ok(series);
        }
    }
    Err(Error::domain(format!(
        "the time dependence is not a trigonometric polynomial with \
         frequencies up to {MAX_FREQUENCY}"
    )))
}

/// Gauge function of the first-order coordinate change.
#[derive(Clone, Debug)]
pub struct T1Solution {
    /// `T₁(T₀, H₀) = −∫₀^{T₀} ∂H₁/∂H₀ dT₀'`, vanishing at `T₀ = 0`.
    pub t1: ScalarExpr,
    /// The periodic part of `t1`; equals `t1` when no secular term exists.
    pub periodic: ScalarExpr,
    /// Period mean of `∂H₁/∂H₀`.  A nonzero mean makes `t1` grow linearly
    /// in time: the perturbation shifts the oscillation frequency at first
    /// order, and the coordinate change alone cannot stay periodic.
    pub frequency_shift: ScalarExpr,
}

/// Solve the first-order canonicity condition for the time gauge `T₁`.
pub fn solve_t1(h1: &ScalarExpr) -> Result<T1Solution> {
    if h1.variables().into_iter().any(|v| v > 1) {
        return Err(Error::domain(
            "perturbations live on the two-dimensional time-energy chart",
        ));
    }
    let g = h1.differentiate(1)?.simplify();
    if g.is_zero() {
        return Ok(T1Solution {
            t1: ScalarExpr::zero(),
            periodic: ScalarExpr::zero(),
            frequency_shift: ScalarExpr::zero(),
        });
    }
    let series = trig_series(&g)?;
    let t = ScalarExpr::var(0);
    let mut periodic = ScalarExpr::zero();
    for (k, a) in &series.cosine {
        let kk = ScalarExpr::rational(1, *k as i64);
        periodic = periodic
            - kk * a.clone() * (ScalarExpr::int(*k as i64) * t.clone()).sin();
    }
    for (k, b) in &series.sine {
        let kk = ScalarExpr::rational(1, *k as i64);
        periodic = periodic
            - kk * b.clone()
                * (ScalarExpr::one() - (ScalarExpr::int(*k as i64) * t.clone()).cos());
    }
    let periodic = periodic.simplify();
    let t1 = (periodic.clone() - series.mean.clone() * t).simplify();
    Ok(T1Solution {
        t1,
        periodic,
        frequency_shift: series.mean,
    })
}

/// The `λ`-linear part `γ₁` of the connection pushed through the inverse
/// coordinate change `T₀ = T − λT₁`, `H₀ = H − λH₁`:
///
/// ```text
/// γ₁_ijk = −( T₁ ∂_T γ_ijk + H₁ ∂_H γ_ijk
///           + Σ_slots Σ_a ∂u^a/∂x^slot · γ_(a, other two)
///           + ω_(first index, c) ∂²u^c/∂x∂x ) ,
/// ```
///
/// with `u = (T₁, H₁)`.  The inhomogeneous term is symmetrized over the
/// three index slots; the representatives differ exactly by derivatives of
/// the gauge condition `∂T₁/∂T + ∂H₁/∂H = 0`, so the choice is immaterial
/// for a solved gauge.
pub fn connection_first_order(
    base: &SymplecticConnection,
    t1: &ScalarExpr,
    h1: &ScalarExpr,
) -> Result<SymplecticConnection> {
    if base.dim() != 2 {
        return Err(Error::DimensionMismatch {
            message: format!(
                "first-order perturbation works on a 2-dimensional chart, got {}",
                base.dim()
            ),
        });
    }
    let u = [t1.clone(), h1.clone()];
    let mut out = SymplecticConnection::flat(2);
    for &(i, j, k) in &[(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)] {
        let idx = [i, j, k];
        let mut acc = ScalarExpr::zero();
        let here = base.get(i, j, k);
        if !here.is_zero() {
            for (m, shift) in u.iter().enumerate() {
                let dg = here.differentiate(m)?;
                if !dg.is_zero() {
                    acc = acc + shift.clone() * dg;
                }
            }
        }
        for slot in 0..3 {
            for (a, component) in u.iter().enumerate() {
                let du = component.differentiate(idx[slot])?;
                if du.is_zero() {
                    continue;
                }
                let entry = base.get(a, idx[(slot + 1) % 3], idx[(slot + 2) % 3]);
                if !entry.is_zero() {
                    acc = acc + du * entry;
                }
            }
        }
        let mut inhom = ScalarExpr::zero();
        for slot in 0..3 {
            let (x, y) = (idx[(slot + 1) % 3], idx[(slot + 2) % 3]);
            let second = if idx[slot] == 0 {
                h1.differentiate(x)?.differentiate(y)?
            } else {
                -(t1.differentiate(x)?.differentiate(y)?)
            };
            inhom = inhom + second;
        }
        acc = acc + ScalarExpr::rational(1, 3) * inhom;
        out.set(i, j, k, (-acc).simplify());
    }
    Ok(out)
}

/// Antiderivative in the energy variable, normalized to vanish at zero
/// energy.  Frequency-shift means of trigonometric-polynomial perturbations
/// are polynomial in the energy, and only that class is reconstructed.
fn antiderivative_in_energy(m: &ScalarExpr) -> Result<ScalarExpr> {
    const MAX_DEGREE: usize = 16;
    let h = ScalarExpr::var(1);
    let mut out = ScalarExpr::zero();
    let mut derivative = m.simplify();
    let mut factorial = BigRational::one();
    for k in 0..=MAX_DEGREE {
        if derivative.is_zero() {
            let out = out.simplify();
            if expr_compare(&out.differentiate(1)?, m) == Equivalence::NotEqual {
                break;
            }
            return Ok(out);
        }
        let coefficient = derivative
            .substitute(&[ScalarExpr::var(0), ScalarExpr::zero()])?
            .simplify();
        let scale = (factorial.clone()
            * BigRational::from_integer(BigInt::from(k as i64 + 1)))
        .recip();
        out = out + ScalarExpr::big_rational(scale) * coefficient * h.clone().powi(k as i32 + 1);
        derivative = derivative.differentiate(1)?.simplify();
        factorial *= BigRational::from_integer(BigInt::from(k as i64 + 1));
    }
    Err(Error::domain(
        "the frequency-shift mean is not polynomial in the energy, so it \
         cannot be absorbed into the perturbed Hamiltonian",
    ))
}

/// A first-order perturbation of an oscillator level: the perturbing
/// profile, its time gauge, the connection correction, and the eigenstate
/// the corrections act on.
#[derive(Clone, Debug)]
pub struct PerturbationProblem {
    h1: ScalarExpr,
    lambda: f64,
    state: OscillatorEigenstate,
    w0: ScalarExpr,
    t1: T1Solution,
    shift_primitive: ScalarExpr,
    base: SymplecticConnection,
    gamma1: SymplecticConnection,
    truncation: u32,
    warnings: Vec<String>,
}

/// Numerical outcome of the energy-shift quadrature.
#[derive(Clone, Debug)]
pub struct EnergyCorrection {
    /// `E₁`, the coefficient of `λ` in the perturbed level.
    pub e1: f64,
    /// Integral of the imaginary part of `W_{E0}(H ∗̄ W_{E0})`, which must
    /// vanish for a well-posed correction; reported as a diagnostic.
    pub imaginary_part: f64,
    /// Upper end of the energy integration window.
    pub cutoff: f64,
    pub warnings: Vec<String>,
}

impl PerturbationProblem {
    /// Set up the perturbation `H = H₀ + λH₁` around the `n`-th oscillator
    /// level.  `h1` is written in the chart variables (time = 0,
    /// energy = 1).
    pub fn oscillator(n: u32, hbar: f64, h1: ScalarExpr, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::domain("the perturbation strength must be finite"));
        }
        if h1.variables().into_iter().any(|v| v > 1) {
            return Err(Error::domain(
                "perturbations live on the two-dimensional time-energy chart",
            ));
        }
        let state = oscillator::wigner_eigenfunction(n, hbar)?;
        let w0 = state.symbol_in_h().substitute(&[ScalarExpr::var(1)])?;
        let t1 = solve_t1(&h1)?;
        let base = oscillator::oscillator_connection();
        // The chart change must stay single-valued on the time circle, so
        // only the periodic part of T₁ enters it; the secular mean rides
        // with the Hamiltonian as H + λM(H) instead.
        let shift_primitive = if t1.frequency_shift.is_zero() {
            ScalarExpr::zero()
        } else {
            antiderivative_in_energy(&t1.frequency_shift)?
        };
        let effective_h1 = (h1.clone() - shift_primitive.clone()).simplify();
        let gamma1 = connection_first_order(&base, &t1.periodic, &effective_h1)?;
        let mut warnings = Vec::new();
        let mut worst = 0.0f64;
        let mut worst_at = (0.0, 0.0);
        for ti in 0..12 {
            let t = 2.0 * std::f64::consts::PI * ti as f64 / 12.0;
            for hj in 0..16 {
                // geometric sweep of the energy window that carries the state
                let h = hbar * 0.25 * 72.0f64.powf(hj as f64 / 15.0);
                let Ok(value) = h1.evaluate_at(&[t, h], hbar) else {
                    continue;
                };
                let ratio = (lambda * value / h).abs();
                if ratio > worst {
                    worst = ratio;
                    worst_at = (t, h);
                }
            }
        }
        if worst > 0.1 {
            warnings.push(format!(
                "|λ H₁| reaches {:.3} of the unperturbed energy near \
                 (T, H) = ({:.2}, {:.2}); first order is strained there",
                worst, worst_at.0, worst_at.1
            ));
        }
        Ok(PerturbationProblem {
            h1,
            lambda,
            state,
            w0,
            t1,
            shift_primitive,
            base,
            gamma1,
            truncation: FedosovContext::DEFAULT_TRUNCATION,
            warnings,
        })
    }

    pub fn with_truncation(mut self, truncation: u32) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn h1(&self) -> &ScalarExpr {
        &self.h1
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state(&self) -> &OscillatorEigenstate {
        &self.state
    }

    /// Unperturbed symbol of the state in the chart variables.
    pub fn unperturbed_symbol(&self) -> &ScalarExpr {
        &self.w0
    }

    pub fn time_gauge(&self) -> &T1Solution {
        &self.t1
    }

    /// The `λ`-linear connection correction `γ₁`, in the periodic gauge.
    pub fn connection_correction(&self) -> &SymplecticConnection {
        &self.gamma1
    }

    /// `M(H)`, the energy antiderivative of the frequency-shift mean.  The
    /// periodic chart change absorbs `H₁ − M` into the coordinates; the
    /// remainder stays with the Hamiltonian, which reads `H + λM(H)` in
    /// the new chart.  Zero when the perturbation shifts no frequency.
    pub fn shift_primitive(&self) -> &ScalarExpr {
        &self.shift_primitive
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn jet_context(&self) -> Result<FedosovContext> {
        let lam = ScalarExpr::var(2);
        let mut conn = self.base.clone();
        for (&[i, j, k], entry) in self.gamma1.entries() {
            conn.set(
                i,
                j,
                k,
                self.base.get(i, j, k) + lam.clone() * entry.clone(),
            );
        }
        // The jet connection is flat only through first order; its
        // curvature is O(λ²), which is outside the order this context is
        // ever read at, so the flatness check must be skipped.
        FedosovContext::new_unchecked(
            conn,
            Frame::Direct,
            CoordNames::new(&["T", "H"]),
            self.truncation,
        )
    }

    /// Coefficients of `ħ^r ∂_T^s ∂_H^t W` in `H ∗̄ W`, obtained by
    /// substituting this problem's connection correction into the
    /// symbolic table.  Keeping both the state and the correction opaque
    /// while the recursion runs is what makes this affordable: concrete
    /// trigonometric profiles would swell every intermediate of the
    /// recursion, but they enter here only as replacements in the final,
    /// compact coefficients.
    fn correction_table(&self) -> Result<ThetaTable> {
        let symbolic = symbolic_correction_table(self.truncation)?;
        concretize_table(&symbolic, &self.gamma1)
    }

    /// The correction product `A ∗̄ B`: the `λ`-linear part of the star
    /// product built from `γ + λγ₁`, extracted by differentiating the jet
    /// result in the reserved parameter variable.  When the left factor is
    /// the energy coordinate itself the product is assembled from
    /// [`Self::correction_table`] instead of a direct jet star, which is
    /// far cheaper for transcendental right factors.
    pub fn star_correction(&self, a: &ScalarExpr, b: &ScalarExpr) -> Result<ComplexExpr> {
        for e in [a, b] {
            if e.variables().contains(&2) {
                return Err(Error::domain(
                    "variable 2 is reserved for the deformation parameter",
                ));
            }
        }
        if expr_compare(a, &ScalarExpr::var(1)) == Equivalence::Equal {
            return apply_theta(&self.correction_table()?, b);
        }
        let ctx = self.jet_context()?;
        let full = ctx.star(a, b)?;
        Ok(ComplexExpr::new(
            lambda_coefficient(&full.re, 1)?,
            lambda_coefficient(&full.im, 1)?,
        ))
    }

    /// Residual of the first-order equation for a candidate correction
    /// `W_{E1}` and shift `E₁`, in the periodic gauge:
    ///
    /// ```text
    /// (H − E₀) ∗ W_{E1} + H ∗̄ W_{E0} + M ∗ W_{E0} − E₁ W_{E0} .
    /// ```
    pub fn first_order_residual(
        &self,
        w_e1: &ScalarExpr,
        e1: &ScalarExpr,
    ) -> Result<ComplexExpr> {
        if w_e1.variables().into_iter().any(|v| v > 1) {
            return Err(Error::domain(
                "candidate corrections live on the two-dimensional chart",
            ));
        }
        if !e1.variables().is_empty() {
            return Err(Error::domain("the energy shift must be constant"));
        }
        let h = ScalarExpr::var(1);
        let base_ctx = FedosovContext::new(
            self.base.clone(),
            Frame::Direct,
            CoordNames::new(&["T", "H"]),
            self.truncation,
        )?;
        let sw1 = apply_theta(&base_ctx.theta_coefficients(self.truncation)?, w_e1)?;
        let corr = self.star_correction(&h, &self.w0)?;
        let e0 = self.state.energy_symbol();
        let mut re =
            sw1.re - e0 * w_e1.clone() + corr.re - e1.clone() * self.w0.clone();
        let mut im = sw1.im + corr.im;
        if !self.shift_primitive.is_zero() {
            let mw = base_ctx.star(&self.shift_primitive, &self.w0)?;
            re = re + mw.re;
            im = im + mw.im;
        }
        Ok(ComplexExpr::new(re.simplify(), im.simplify()))
    }

    /// First correction to the level,
    /// `E₁ = 2πħ ∫ dT dH W_{E0}(H ∗̄ W_{E0}) + ∫ dT dH W_{E0} M`.
    /// The second term is the frequency-shift part of the Hamiltonian
    /// projected on the state; the cyclic property of the integrated star
    /// product collapses it to an ordinary integral with no `ħ` corrections.
    /// The time integral is done exactly on the harmonic decomposition; the
    /// energy integral by adaptive quadrature under the state's own decay.
    pub fn first_order_energy(&self) -> Result<EnergyCorrection> {
        let h = ScalarExpr::var(1);
        let corr = self.star_correction(&h, &self.w0)?;
        let two_pi_hbar = 2.0 * std::f64::consts::PI * self.state.hbar();
        let (re, mut warnings) =
            self.plane_integral(&(self.w0.clone() * corr.re).simplify())?;
        let (im, more) = self.plane_integral(&(self.w0.clone() * corr.im).simplify())?;
        warnings.extend(more);
        let mut e1 = two_pi_hbar * re;
        if !self.shift_primitive.is_zero() {
            let weighted = (self.w0.clone() * self.shift_primitive.clone()).simplify();
            let (shift_term, more) = self.plane_integral(&weighted)?;
            warnings.extend(more);
            e1 += shift_term;
        }
        let cutoff = self.energy_cutoff();
        Ok(EnergyCorrection {
            e1,
            imaginary_part: two_pi_hbar * im,
            cutoff,
            warnings,
        })
    }

    fn energy_cutoff(&self) -> f64 {
        // where exp(-2H/hbar) falls below 1e-14
        0.5 * self.state.hbar() * 14.0 * std::f64::consts::LN_10
    }

    /// `∫₀^{2π} dT ∫₀^∞ dH f`, with the time direction integrated exactly.
    fn plane_integral(&self, f: &ScalarExpr) -> Result<(f64, Vec<String>)> {
        let mean = trig_series(f)?.mean;
        if mean.is_zero() {
            return Ok((0.0, Vec::new()));
        }
        let hbar = self.state.hbar();
        let sample = |h: f64| mean.evaluate_at(&[0.0, h], hbar);
        // an integrable mean stays bounded toward the chart's H = 0 edge
        let near = sample(1e-6 * hbar)?.abs();
        let nearer = sample(1e-7 * hbar)?.abs();
        if nearer > 8.0 * near.max(1e-9) {
            return Err(Error::numeric_check(format!(
                "the time-averaged integrand grows toward H = 0 \
                 ({near:.3e} at 1e-6 hbar, {nearer:.3e} at 1e-7 hbar); \
                 the energy integral does not converge"
            )));
        }
        // the quadrature nodes stay interior, so a bounded integrand is
        // never evaluated at the H = 0 edge itself
        let cutoff = self.energy_cutoff();
        let value = numeric::integrate(
            |h| sample(h).unwrap_or(f64::NAN),
            0.0,
            cutoff,
            1e-12,
            1e-15,
        )?;
        let mut warnings = Vec::new();
        let edge = sample(cutoff)?.abs();
        if edge > 1e-13 * (1.0 + value.abs()) {
            warnings.push(format!(
                "integrand is still {edge:.3e} at the decay cutoff H = {cutoff:.2}"
            ));
        }
        Ok((2.0 * std::f64::consts::PI * value, warnings))
    }
}

const CORRECTION_TRIPLES: [(usize, usize, usize); 4] =
    [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)];

fn correction_symbol_name(i: usize, j: usize, k: usize) -> String {
    format!("P{i}{j}{k}")
}

/// The expanded state equation for the oscillator connection perturbed by
/// free symbols `P_ijk`, filtered down to the part linear in those
/// symbols: the shape of `H ∗̄ W` for any first-order correction.  The
/// result depends only on the truncation, so it is computed once per
/// process.
fn symbolic_correction_table(truncation: u32) -> Result<Arc<ThetaTable>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<ThetaTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(table) = cache.lock().unwrap().get(&truncation) {
        return Ok(table.clone());
    }
    let base = oscillator::oscillator_connection();
    let mut conn = base.clone();
    for &(i, j, k) in &CORRECTION_TRIPLES {
        let family =
            OpaqueFamily::on_variables(correction_symbol_name(i, j, k), 2, &[0, 1]);
        conn.set(
            i,
            j,
            k,
            base.get(i, j, k) + ScalarExpr::opaque(&family, vec![0, 0]),
        );
    }
    // flat only through first order in the symbols, which is the part kept
    let ctx = FedosovContext::new_unchecked(
        conn,
        Frame::Direct,
        CoordNames::new(&["T", "H"]),
        truncation,
    )?;
    let full = ctx.theta_coefficients(truncation)?;
    let mut entries = BTreeMap::new();
    for (&key, coeff) in &full.entries {
        let linear = correction_linear_part(coeff)?;
        if !linear.is_zero() {
            entries.insert(key, linear);
        }
    }
    let table = Arc::new(ThetaTable { entries });
    cache
        .lock()
        .unwrap()
        .insert(truncation, table.clone());
    Ok(table)
}

fn is_correction_symbol(name: &str) -> bool {
    CORRECTION_TRIPLES
        .iter()
        .any(|&(i, j, k)| name == correction_symbol_name(i, j, k))
}

/// Drop everything but the terms of total degree one in the correction
/// symbols.  The symbols are temporarily masked as extra variables so the
/// grading can be read off with plain derivatives.
fn correction_linear_part(e: &ScalarExpr) -> Result<ScalarExpr> {
    use std::cell::RefCell;
    let atoms: RefCell<Vec<ScalarExpr>> = RefCell::new(Vec::new());
    let index: RefCell<HashMap<(String, Vec<u32>), usize>> = RefCell::new(HashMap::new());
    let masked = e.replace_opaque(&|r| {
        if !is_correction_symbol(r.family.name()) {
            return None;
        }
        let key = (r.family.name().to_string(), r.orders.clone());
        let mut index = index.borrow_mut();
        let next = atoms.borrow().len();
        let slot = *index.entry(key).or_insert_with(|| {
            atoms
                .borrow_mut()
                .push(ScalarExpr::opaque(&r.family, r.orders.clone()));
            next
        });
        Some(ScalarExpr::var(3 + slot))
    });
    let atoms = atoms.into_inner();
    if atoms.is_empty() {
        return Ok(ScalarExpr::zero());
    }
    let mut zero_slots = vec![ScalarExpr::var(0), ScalarExpr::var(1), ScalarExpr::var(2)];
    zero_slots.extend(std::iter::repeat(ScalarExpr::zero()).take(atoms.len()));
    let mut out = ScalarExpr::zero();
    for (slot, atom) in atoms.iter().enumerate() {
        let d = masked.differentiate(3 + slot)?;
        if d.is_zero() {
            continue;
        }
        out = out + atom.clone() * d.substitute(&zero_slots)?;
    }
    Ok(out.simplify())
}

/// Substitute a concrete connection correction for the symbols of the
/// cached table.
fn concretize_table(
    symbolic: &ThetaTable,
    gamma1: &SymplecticConnection,
) -> Result<ThetaTable> {
    use std::cell::RefCell;
    // derivatives of the four entries, memoized by (triple, orders)
    let memo: RefCell<HashMap<(String, Vec<u32>), ScalarExpr>> = RefCell::new(HashMap::new());
    let derivative_of = |name: &str, orders: &[u32]| -> Result<ScalarExpr> {
        let key = (name.to_string(), orders.to_vec());
        if let Some(d) = memo.borrow().get(&key) {
            return Ok(d.clone());
        }
        let &(i, j, k) = CORRECTION_TRIPLES
            .iter()
            .find(|&&(i, j, k)| name == correction_symbol_name(i, j, k))
            .expect("unknown correction symbol");
        let mut d = gamma1.get(i, j, k);
        for _ in 0..orders[0] {
            d = d.differentiate(0)?;
        }
        for _ in 0..orders[1] {
            d = d.differentiate(1)?;
        }
        let d = d.simplify();
        memo.borrow_mut().insert(key, d.clone());
        Ok(d)
    };
    let mut entries = BTreeMap::new();
    for (&key, coeff) in &symbolic.entries {
        let error: RefCell<Option<Error>> = RefCell::new(None);
        let concrete = coeff.replace_opaque(&|r| {
            if !is_correction_symbol(r.family.name()) {
                return None;
            }
            match derivative_of(r.family.name(), &r.orders) {
                Ok(d) => Some(d),
                Err(e) => {
                    *error.borrow_mut() = Some(e);
                    Some(ScalarExpr::zero())
                }
            }
        });
        if let Some(e) = error.into_inner() {
            return Err(e);
        }
        let concrete = concrete.simplify();
        if !concrete.is_zero() {
            entries.insert(key, concrete);
        }
    }
    Ok(ThetaTable { entries })
}

/// Apply expanded-equation coefficients to a concrete state:
/// `Σ Θ_(r,s,t) ħ^r ∂_T^s ∂_H^t b`, with even powers of `ħ` building the
/// real part and odd powers, half-weighted, the imaginary part.
fn apply_theta(table: &ThetaTable, b: &ScalarExpr) -> Result<ComplexExpr> {
    let mut re = ScalarExpr::zero();
    let mut im = ScalarExpr::zero();
    for (&(r, s, t), coeff) in &table.entries {
        let mut d = b.clone();
        for _ in 0..s {
            d = d.differentiate(0)?;
        }
        for _ in 0..t {
            d = d.differentiate(1)?;
        }
        if d.is_zero() {
            continue;
        }
        let term = coeff.clone() * ScalarExpr::hbar().powi(r as i32) * d;
        if r % 2 == 0 {
            re = re + term;
        } else {
            im = im + term;
        }
    }
    Ok(ComplexExpr::new(
        re.simplify(),
        (ScalarExpr::rational(1, 2) * im).simplify(),
    ))
}

/// Coefficient of `λ^order` of a polynomial in the reserved parameter
/// variable.
fn lambda_coefficient(e: &ScalarExpr, order: u32) -> Result<ScalarExpr> {
    let mut d = e.clone();
    let mut factorial = 1i64;
    for step in 0..order {
        d = d.differentiate(2)?;
        factorial *= (step + 1) as i64;
    }
    let at_zero = d.substitute(&[
        ScalarExpr::var(0),
        ScalarExpr::var(1),
        ScalarExpr::zero(),
    ])?;
    Ok((ScalarExpr::rational(1, factorial) * at_zero).simplify())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::flat_pushforward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_exactly(e: &ScalarExpr, want: &ScalarExpr) {
        assert_eq!(
            expr_compare(e, want),
            Equivalence::Equal,
            "expected {want}, got {e}"
        );
    }

    fn assert_same_function(e: &ScalarExpr, want: &ScalarExpr) {
        assert_ne!(
            expr_compare(e, want),
            Equivalence::NotEqual,
            "expected {want}, got {e}"
        );
    }

    fn t_var() -> ScalarExpr {
        ScalarExpr::var(0)
    }

    fn h_var() -> ScalarExpr {
        ScalarExpr::var(1)
    }

    /// `q⁴` on the oscillator chart: `(2H)² cos⁴T`.
    fn quartic_profile() -> ScalarExpr {
        ScalarExpr::int(4) * h_var().powi(2) * t_var().cos().powi(4)
    }

    #[test]
    fn gauge_solutions_match_the_textbook_integrals() {
        let sol = solve_t1(&h_var()).unwrap();
        assert_exactly(&sol.t1, &(-t_var()));
        assert_exactly(&sol.frequency_shift, &ScalarExpr::one());
        assert!(sol.periodic.is_zero());

        let sol = solve_t1(&t_var().cos()).unwrap();
        assert!(sol.t1.is_zero() && sol.frequency_shift.is_zero());

        let sol = solve_t1(&(h_var() * t_var().cos())).unwrap();
        assert_exactly(&sol.t1, &(-t_var().sin()));
        assert!(sol.frequency_shift.is_zero());

        // 4H²cos⁴T: the mean of 8H cos⁴T is 3H, and the oscillating part
        // integrates to the two even harmonics
        let sol = solve_t1(&quartic_profile()).unwrap();
        assert_exactly(&sol.frequency_shift, &(ScalarExpr::int(3) * h_var()));
        let two_t = (ScalarExpr::int(2) * t_var()).sin();
        let four_t = (ScalarExpr::int(4) * t_var()).sin();
        let want = -(ScalarExpr::int(3) * h_var() * t_var())
            - ScalarExpr::int(2) * h_var() * two_t
            - ScalarExpr::rational(1, 4) * h_var() * four_t;
        assert_same_function(&sol.t1, &want);
        // gauge fixing: T₁ vanishes at T = 0
        let at_zero = sol
            .t1
            .substitute(&[ScalarExpr::zero(), h_var()])
            .unwrap()
            .simplify();
        assert!(at_zero.is_zero(), "gauge origin: {at_zero}");
    }

    #[test]
    fn gauge_solver_rejects_fractional_frequencies() {
        let h1 = h_var() * (ScalarExpr::rational(1, 2) * t_var()).cos();
        let err = solve_t1(&h1).unwrap_err();
        assert!(err.to_string().contains("trigonometric"), "{err}");
        assert!(solve_t1(&ScalarExpr::var(2)).is_err());
    }

    #[test]
    fn connection_correction_matches_the_printed_rule_up_to_one_coefficient() {
        // free symbols for the two connection entries entering the first
        // component, the perturbing profile, and its gauge
        let g111 = OpaqueFamily::on_variables("g111", 2, &[0, 1]);
        let g112 = OpaqueFamily::on_variables("g112", 2, &[0, 1]);
        let t1f = OpaqueFamily::on_variables("T1", 2, &[0, 1]);
        let h1f = OpaqueFamily::on_variables("H1", 2, &[0, 1]);
        let (g111, g112) = (
            ScalarExpr::opaque(&g111, vec![0, 0]),
            ScalarExpr::opaque(&g112, vec![0, 0]),
        );
        let (t1, h1) = (
            ScalarExpr::opaque(&t1f, vec![0, 0]),
            ScalarExpr::opaque(&h1f, vec![0, 0]),
        );
        let mut base = SymplecticConnection::flat(2);
        base.set(0, 0, 0, g111.clone());
        base.set(0, 0, 1, g112.clone());
        let gamma1 = connection_first_order(&base, &t1, &h1).unwrap();

        let printed = -(t1.clone() * g111.differentiate(0).unwrap()
            + h1.clone() * g111.differentiate(1).unwrap()
            + ScalarExpr::int(3) * g111.clone() * t1.differentiate(0).unwrap()
            + g112.clone() * h1.differentiate(0).unwrap()
            + h1.differentiate(0).unwrap().differentiate(0).unwrap());
        // the tensor part triples the mixed entry; the published sample
        // rule carries it with coefficient one
        let diff = (gamma1.get(0, 0, 0) - printed).simplify();
        let expected =
            -(ScalarExpr::int(2) * g112 * h1.differentiate(0).unwrap());
        assert_exactly(&diff, &expected.simplify());
    }

    #[test]
    fn nothing_to_perturb_means_no_correction() {
        let base = oscillator::oscillator_connection();
        let gamma1 =
            connection_first_order(&base, &ScalarExpr::zero(), &ScalarExpr::zero()).unwrap();
        assert!(gamma1.is_trivial());
    }

    /// An exactly canonical deformation of the identity whose derivative
    /// at `λ = 0` is `(−T₁, −H₁)`.  The first-order inverse change
    /// `(T − λT₁, H − λH₁)` itself misses canonicity by exactly `λ²`,
    /// which the exact-arithmetic chart validation rightly rejects, so the
    /// finite-difference probe needs families like these; the derivative
    /// of the pushed-forward connection at `λ = 0` is the same either way.
    enum ExactFamily {
        /// `(T(1+λ), H/(1+λ))`, the flow of `H₁ = H`, `T₁ = −T`.
        Rescale,
        /// `(T + λU(T), H/(1 + λU'(T)))`: unit Jacobian by its triangular
        /// shape, realizing `H₁ = H·U'(T)`, `T₁ = −U(T)`.
        TimeProfile { integral: ScalarExpr },
    }

    impl ExactFamily {
        fn h1(&self) -> ScalarExpr {
            match self {
                ExactFamily::Rescale => h_var(),
                ExactFamily::TimeProfile { integral } => {
                    (h_var() * integral.differentiate(0).unwrap()).simplify()
                }
            }
        }

        fn map_at(&self, lambda: BigRational) -> [ScalarExpr; 2] {
            let lam = ScalarExpr::big_rational(lambda);
            match self {
                ExactFamily::Rescale => [
                    (ScalarExpr::one() + lam.clone()) * t_var(),
                    h_var() / (ScalarExpr::one() + lam),
                ],
                ExactFamily::TimeProfile { integral } => [
                    t_var() + lam.clone() * integral.clone(),
                    h_var()
                        / (ScalarExpr::one()
                            + lam * integral.differentiate(0).unwrap()),
                ],
            }
        }
    }

    fn central_difference_check(
        base_map: &[ScalarExpr],
        family: &ExactFamily,
        points: &[(f64, f64)],
    ) {
        let h1 = family.h1();
        let sol = solve_t1(&h1).unwrap();
        let base = flat_pushforward(base_map).unwrap();
        let gamma1 = connection_first_order(&base, &sol.t1, &h1).unwrap();
        let lambda = BigRational::new(BigInt::from(1), BigInt::from(1_000_000));
        let lam = 1e-6;
        let pushed = |l: BigRational| {
            let subs = family.map_at(l);
            let composite: Vec<ScalarExpr> = base_map
                .iter()
                .map(|x| x.substitute(&subs).unwrap())
                .collect();
            flat_pushforward(&composite).unwrap()
        };
        let plus = pushed(lambda.clone());
        let minus = pushed(-lambda);
        for &(t, h) in points {
            let at = [t, h];
            for &(i, j, k) in &[(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)] {
                let fd = (plus.get(i, j, k).evaluate_at(&at, 1.0).unwrap()
                    - minus.get(i, j, k).evaluate_at(&at, 1.0).unwrap())
                    / (2.0 * lam);
                let sym = gamma1.get(i, j, k).evaluate_at(&at, 1.0).unwrap();
                let scale = 1.0 + fd.abs().max(sym.abs());
                assert!(
                    (fd - sym).abs() <= 1e-6 * scale,
                    "entry ({i}{j}{k}) at (T, H) = ({t}, {h}): \
                     finite difference {fd:.9e} vs formula {sym:.9e}"
                );
            }
        }
    }

    #[test]
    fn oscillator_corrections_match_the_finite_difference_oracle() {
        let amp = (ScalarExpr::int(2) * h_var()).sqrt();
        let base_map = [amp.clone() * t_var().cos(), -(amp * t_var().sin())];
        let points = [(0.7, 1.3), (2.4, 0.8), (4.1, 2.2)];
        central_difference_check(&base_map, &ExactFamily::Rescale, &points);
        central_difference_check(
            &base_map,
            &ExactFamily::TimeProfile {
                integral: t_var().sin(),
            },
            &points,
        );
        // a two-harmonic gauge exercises the mixed tensor terms harder
        central_difference_check(
            &base_map,
            &ExactFamily::TimeProfile {
                integral: (t_var().sin()
                    + ScalarExpr::rational(1, 3)
                        * (ScalarExpr::int(2) * t_var()).sin())
                .simplify(),
            },
            &points,
        );
    }

    #[test]
    fn sheared_chart_pins_the_disputed_coefficient() {
        // two stacked shears give a base connection with every component
        // nonzero, so each term of the transformation rule is exercised
        let a = t_var() + ScalarExpr::rational(1, 2) * h_var().powi(2);
        let base_map = [a.clone(), h_var() + ScalarExpr::rational(1, 3) * a.powi(3)];
        let base = flat_pushforward(&base_map).unwrap();
        let point = [0.9, 1.1];
        for &(i, j, k) in &[(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)] {
            let v = base.get(i, j, k).evaluate_at(&point, 1.0).unwrap();
            assert!(v.abs() > 1e-3, "base entry ({i}{j}{k}) too small: {v}");
        }
        let family = ExactFamily::TimeProfile {
            integral: t_var().sin(),
        };
        let h1 = family.h1();
        let points = [(0.9, 1.1), (1.7, 0.6)];
        central_difference_check(&base_map, &family, &points);

        // evaluating the published sample rule (mixed-entry coefficient 1)
        // against the same finite difference shows the transcription slip
        let sol = solve_t1(&h1).unwrap();
        let gamma1 = connection_first_order(&base, &sol.t1, &h1).unwrap();
        let printed = -(sol.t1.clone() * base.get(0, 0, 0).differentiate(0).unwrap()
            + h1.clone() * base.get(0, 0, 0).differentiate(1).unwrap()
            + ScalarExpr::int(3)
                * base.get(0, 0, 0)
                * sol.t1.differentiate(0).unwrap()
            + base.get(0, 0, 1) * h1.differentiate(0).unwrap()
            + h1.differentiate(0).unwrap().differentiate(0).unwrap());
        let lambda = BigRational::new(BigInt::from(1), BigInt::from(1_000_000));
        let pushed = |l: BigRational| {
            let subs = family.map_at(l);
            let composite: Vec<ScalarExpr> = base_map
                .iter()
                .map(|x| x.substitute(&subs).unwrap())
                .collect();
            flat_pushforward(&composite).unwrap()
        };
        let plus = pushed(lambda.clone());
        let minus = pushed(-lambda);
        let at = [0.9, 1.1];
        let fd = (plus.get(0, 0, 0).evaluate_at(&at, 1.0).unwrap()
            - minus.get(0, 0, 0).evaluate_at(&at, 1.0).unwrap())
            / 2e-6;
        let ours = gamma1.get(0, 0, 0).evaluate_at(&at, 1.0).unwrap();
        let published = printed.evaluate_at(&at, 1.0).unwrap();
        assert!((fd - ours).abs() <= 1e-6 * (1.0 + fd.abs()));
        let gap = (fd - published).abs();
        assert!(
            gap > 1e3 * (fd - ours).abs().max(1e-9),
            "published variant unexpectedly close: gap {gap:.3e}"
        );
    }

    #[test]
    fn corrected_connection_stays_flat_through_first_order() {
        let base = oscillator::oscillator_connection();
        let sol = solve_t1(&(h_var() * t_var().cos())).unwrap();
        let gamma1 =
            connection_first_order(&base, &sol.t1, &(h_var() * t_var().cos())).unwrap();
        let lam = ScalarExpr::var(2);
        let mut jet = base.clone();
        for (&[i, j, k], entry) in gamma1.entries() {
            jet.set(i, j, k, base.get(i, j, k) + lam.clone() * entry.clone());
        }
        for i in 0..2 {
            for j in i..2 {
                let component = jet
                    .curvature_component(&Frame::Direct, i, j, 0, 1)
                    .unwrap();
                let linear = lambda_coefficient(&component, 1).unwrap();
                assert_same_function(&linear, &ScalarExpr::zero());
            }
        }
    }

    #[test]
    fn star_correction_vanishes_without_a_perturbation() {
        let problem =
            PerturbationProblem::oscillator(0, 1.0, ScalarExpr::zero(), 0.01).unwrap();
        assert!(problem.connection_correction().is_trivial());
        let corr = problem
            .star_correction(&h_var(), problem.unperturbed_symbol())
            .unwrap();
        assert!(corr.re.is_zero() && corr.im.is_zero());

        // constants are central whatever the perturbation
        let problem = PerturbationProblem::oscillator(0, 1.0, h_var(), 0.01).unwrap();
        let corr = problem
            .star_correction(&ScalarExpr::int(2), &ScalarExpr::int(3))
            .unwrap();
        assert!(corr.re.is_zero() && corr.im.is_zero());
        assert!(problem
            .star_correction(&ScalarExpr::var(2), &h_var())
            .is_err());
    }

    #[test]
    fn rescaling_solution_satisfies_the_first_order_equation() {
        // H₁ = H₀ is pure frequency shift: the periodic gauge absorbs all
        // of it into M(H) = H, the chart change degenerates to the
        // identity, and the state needs no correction at all, so the
        // first-order pieces are W₁ = 0 and E₁ = E₀
        for n in 0..=1u32 {
            let problem =
                PerturbationProblem::oscillator(n, 1.0, h_var(), 0.01).unwrap();
            assert!(problem.connection_correction().is_trivial());
            assert_exactly(problem.shift_primitive(), &h_var());
            let e1 = problem.state().energy_symbol();
            let residual = problem
                .first_order_residual(&ScalarExpr::zero(), &e1)
                .unwrap();
            assert_same_function(&residual.re, &ScalarExpr::zero());
            assert_same_function(&residual.im, &ScalarExpr::zero());
        }
    }

    #[test]
    fn order_bookkeeping_reproduces_the_two_equations() {
        // an identity between two truncations of the same recursion, so a
        // low order keeps it cheap without weakening it
        let problem = PerturbationProblem::oscillator(0, 1.0, h_var(), 0.01)
            .unwrap()
            .with_truncation(6);
        let w0 = problem.unperturbed_symbol().clone();
        let w1 = (-(h_var()) * w0.differentiate(1).unwrap()).simplify();
        let e0 = problem.state().energy_symbol();
        let e1 = e0.clone();
        let lam = ScalarExpr::var(2);
        let jet = problem.jet_context().unwrap();
        let h = h_var();
        let trial = (w0.clone() + lam.clone() * w1.clone()).simplify();
        let full = jet.star(&h, &trial).unwrap();
        let residual =
            (full.re - (e0.clone() + lam.clone() * e1.clone()) * trial).simplify();

        let base_ctx = FedosovContext::new(
            oscillator::oscillator_connection(),
            Frame::Direct,
            CoordNames::new(&["T", "H"]),
            6,
        )
        .unwrap();
        let order0 = lambda_coefficient(&residual, 0).unwrap();
        let want0 = (base_ctx.star(&h, &w0).unwrap().re - e0.clone() * w0.clone()).simplify();
        assert_same_function(&order0, &want0);

        let order1 = lambda_coefficient(&residual, 1).unwrap();
        let corr = problem.star_correction(&h, &w0).unwrap();
        let want1 = (base_ctx.star(&h, &w1).unwrap().re + corr.re
            - e1.clone() * w0
            - e0 * w1)
            .simplify();
        assert_same_function(&order1, &want1);
    }

    #[test]
    fn rescaling_shifts_the_energy_by_the_level_itself() {
        for n in 0..=2u32 {
            let problem =
                PerturbationProblem::oscillator(n, 1.0, h_var(), 0.01).unwrap();
            let correction = problem.first_order_energy().unwrap();
            let want = problem.state().energy();
            assert!(
                (correction.e1 - want).abs() < 1e-10 * want,
                "n = {n}: E1 = {} vs {want}",
                correction.e1
            );
            assert!(correction.imaginary_part.abs() < 1e-12);
            assert!(correction.warnings.is_empty());
        }
    }

    #[test]
    fn quartic_shift_matches_the_ladder_oracle() {
        // <n|q^4|n> by ladder algebra: (3 hbar^2 / 4)(2n² + 2n + 1)
        for (n, hbar) in [(0u32, 1.0f64), (1, 1.0), (2, 1.0), (1, 0.7)] {
            let problem =
                PerturbationProblem::oscillator(n, hbar, quartic_profile(), 1e-3).unwrap();
            let correction = problem.first_order_energy().unwrap();
            let nn = n as f64;
            let want = 0.75 * hbar * hbar * (2.0 * nn * nn + 2.0 * nn + 1.0);
            assert!(
                (correction.e1 - want).abs() < 1e-4 * want,
                "n = {n}, hbar = {hbar}: E1 = {} vs {want}",
                correction.e1
            );
            assert!(correction.imaginary_part.abs() < 1e-10);
        }
    }

    #[test]
    fn purely_time_dependent_perturbations_shift_nothing() {
        for n in 0..=2u32 {
            let problem =
                PerturbationProblem::oscillator(n, 1.0, t_var().cos(), 1e-3).unwrap();
            let correction = problem.first_order_energy().unwrap();
            assert!(
                correction.e1.abs() < 1e-10,
                "n = {n}: E1 = {}",
                correction.e1
            );
        }
    }

    #[test]
    fn energy_shift_is_linear_in_the_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h1a = h_var().powi(2) * t_var().cos().powi(2);
        let h1b = h_var() * t_var().cos() + h_var().powi(2);
        let e1 = |h1: ScalarExpr| {
            PerturbationProblem::oscillator(1, 1.0, h1, 1e-3)
                .unwrap()
                .first_order_energy()
                .unwrap()
                .e1
        };
        let ea = e1(h1a.clone());
        let eb = e1(h1b.clone());
        for _ in 0..2 {
            let alpha = ScalarExpr::rational(rng.gen_range(-9..9), rng.gen_range(1..7));
            let beta = ScalarExpr::rational(rng.gen_range(-9..9), rng.gen_range(1..7));
            let af = crate::expr::exact_rational_to_f64(&alpha).unwrap();
            let bf = crate::expr::exact_rational_to_f64(&beta).unwrap();
            let mixed = e1((alpha * h1a.clone() + beta * h1b.clone()).simplify());
            let want = af * ea + bf * eb;
            assert!(
                (mixed - want).abs() <= 1e-8 * (1.0 + want.abs()),
                "E1 = {mixed} vs {want} for ({af}, {bf})"
            );
        }
    }

    #[test]
    fn projecting_the_linear_equation_reproduces_the_shift() {
        // integrating W₀ ∗ (H ∗̄ W₀) over the chart must give E₁/(2πħ),
        // because the unperturbed state star-projects onto itself
        let h1 = (h_var() * t_var().cos() + h_var()).simplify();
        let problem = PerturbationProblem::oscillator(0, 1.0, h1, 1e-3).unwrap();
        let correction = problem.first_order_energy().unwrap();
        let base_ctx = FedosovContext::new(
            oscillator::oscillator_connection(),
            Frame::Direct,
            CoordNames::new(&["T", "H"]),
            FedosovContext::DEFAULT_TRUNCATION,
        )
        .unwrap();
        let h = h_var();
        let corr = problem.star_correction(&h, problem.unperturbed_symbol()).unwrap();
        let projected_re = base_ctx
            .star(problem.unperturbed_symbol(), &corr.re)
            .unwrap();
        let projected_im = base_ctx
            .star(problem.unperturbed_symbol(), &corr.im)
            .unwrap();
        let real_part = (projected_re.re - projected_im.im).simplify();
        let (integral, _) = problem.plane_integral(&real_part).unwrap();
        let two_pi_hbar = 2.0 * std::f64::consts::PI;
        let via_projection = two_pi_hbar * integral;
        assert!(
            (via_projection - correction.e1).abs() <= 1e-6 * (1.0 + correction.e1.abs()),
            "projected route {via_projection} vs direct {}",
            correction.e1
        );
    }

    #[test]
    #[ignore]
    fn stage_probe() {
        use std::time::Instant;

        // rescale: table path vs direct jet extraction, then E1 vs E0
        let p = PerturbationProblem::oscillator(0, 1.0, h_var(), 1e-3)
            .unwrap()
            .with_truncation(6);
        let t0 = Instant::now();
        let via_table = p.star_correction(&h_var(), p.unperturbed_symbol()).unwrap();
        println!("rescale table corr: {:?}", t0.elapsed());
        let t1 = Instant::now();
        let jet = p.jet_context().unwrap();
        let full = jet.star(&h_var(), p.unperturbed_symbol()).unwrap();
        let direct_re = lambda_coefficient(&full.re, 1).unwrap();
        let direct_im = lambda_coefficient(&full.im, 1).unwrap();
        println!("rescale direct corr: {:?}", t1.elapsed());
        println!(
            "re match: {:?}  im match: {:?}",
            expr_compare(&via_table.re, &direct_re),
            expr_compare(&via_table.im, &direct_im)
        );
        let t2 = Instant::now();
        let e = p.first_order_energy().unwrap();
        println!("rescale E1 trunc 6: {} ({:?})", e.e1, t2.elapsed());

        // quartic at rising truncation; the first call per truncation pays
        // for the shared symbolic table
        for trunc in [4u32, 6, 8] {
            let ts = Instant::now();
            let table = symbolic_correction_table(trunc).unwrap();
            println!(
                "symbolic table trunc {trunc}: {:?} entries {}",
                ts.elapsed(),
                table.entries.len()
            );
            let p = PerturbationProblem::oscillator(0, 1.0, quartic_profile(), 1e-3)
                .unwrap()
                .with_truncation(trunc);
            let t3 = Instant::now();
            let e = p.first_order_energy().unwrap();
            println!("quartic n=0 trunc {trunc}: E1 = {} ({:?})", e.e1, t3.elapsed());
        }
    }

    #[test]
    fn constructor_checks_the_window_and_the_inputs() {
        let problem =
            PerturbationProblem::oscillator(0, 1.0, h_var().powi(2), 0.9).unwrap();
        assert!(
            problem.warnings().iter().any(|w| w.contains("strained")),
            "{:?}",
            problem.warnings()
        );
        let quiet = PerturbationProblem::oscillator(0, 1.0, h_var(), 1e-3).unwrap();
        assert!(quiet.warnings().is_empty());
        assert!(PerturbationProblem::oscillator(0, 1.0, ScalarExpr::var(2), 0.1).is_err());
        assert!(PerturbationProblem::oscillator(0, 1.0, h_var(), f64::NAN).is_err());
        assert!(PerturbationProblem::oscillator(0, -1.0, h_var(), 0.1).is_err());
    }
}
