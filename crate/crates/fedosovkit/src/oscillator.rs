//! The harmonic oscillator worked end to end in time-energy coordinates.
//!
//! With `H = (q^2 + p^2)/2` as the energy coordinate and `T` as the angle
//! conjugate to it, the star-eigenvalue problem `H * W = E W` for a
//! `T`-independent state collapses to a single radial ODE,
//!
//! ```text
//! (H - E) W  -  hbar^2 ( (H/4) W'' + (1/4) W' )  =  0 ,
//! ```
//!
//! whose residual is [`eigen_ode_residual`].  Factoring out the decaying
//! exponential, `W = e^{-2H/hbar} w`, and rescaling to `y = 4H/hbar` turns
//! the ODE into a confluent equation solved by the asymptotic series
//! `G(alpha, alpha, y)` of [`kummer_g`].  The general solution has two
//! branches, returned by [`general_solution_terms`]: one carries `e^{-2H/hbar}`
//! and terminates to a Laguerre polynomial exactly when
//! `alpha = (hbar - 2E)/(2 hbar)` is a nonpositive integer, the other carries
//! `e^{+2H/hbar}` and can never contribute to a normalizable state.  Requiring
//! a normalizable solution therefore quantizes the energy to
//! `E = hbar (n + 1/2)` ([`quantize`]), and the surviving states are the
//! oscillator Wigner eigenfunctions of [`wigner_eigenfunction`],
//!
//! ```text
//! W_n = (-1)^n / (pi hbar) * e^{-2H/hbar} * L_n(4H/hbar) .
//! ```
//!
//! [`hermite_wavefunction`] supplies the matching position-space states, so
//! the phase-space spectrum can be checked against the usual wavefunction
//! picture.

use num::bigint::BigInt;
use num::rational::BigRational;

use crate::connection::SymplecticConnection;
use crate::error::{Error, Result};
use crate::expr::exact_rational_to_f64;
use crate::expr::ScalarExpr;
use crate::grid::{GridFunction, GridSpec};

/// Eigenstate indices above this make the exact-rational Laguerre recurrence
/// and its derivatives unwieldy; the numeric routines stay stable well past
/// it, so the cap only protects the symbolic layer.
pub const MAX_EIGENSTATE_INDEX: u32 = 60;

/// Coefficients of the flat connection written in the oscillator's
/// time-energy chart, `T = var 0` and `H = var 1`.
///
/// Only two independent components survive: `gamma_TTT = -2H` and
/// `gamma_THH = -1/(2H)`.  The chart is a canonical transformation of the
/// plane away from the origin, so the curvature of this connection vanishes
/// identically; [`SymplecticConnection::check_flat`] accepts it.
pub fn oscillator_connection() -> SymplecticConnection {
    let h = ScalarExpr::var(1);
    let mut conn = SymplecticConnection::flat(2);
    conn.set(0, 0, 0, ScalarExpr::int(-2) * h.clone());
    conn.set(0, 1, 1, ScalarExpr::int(-1) / (ScalarExpr::int(2) * h));
    conn
}

/// Residual of the radial star-eigenvalue equation for a `T`-independent
/// state `w(H)`, with `H = var 0`:
///
/// ```text
/// (H - E) w  -  hbar^2 ( (H/4) w'' + (1/4) w' ) .
/// ```
///
/// The residual is identically zero exactly when `(w, E)` is a formal
/// eigenpair of the oscillator star product.
pub fn eigen_ode_residual(w: &ScalarExpr, e: &ScalarExpr) -> Result<ScalarExpr> {
    if w.variables().into_iter().any(|v| v != 0) {
        return Err(Error::domain(
            "radial states depend on the energy variable (index 0) only",
        ));
    }
    if !e.variables().is_empty() {
        return Err(Error::domain("the trial energy must be constant on the chart"));
    }
    let h = ScalarExpr::var(0);
    let w1 = w.differentiate(0)?;
    let w2 = w1.differentiate(0)?;
    let quarter = ScalarExpr::rational(1, 4);
    let correction = ScalarExpr::hbar().powi(2) * quarter * (h.clone() * w2 + w1);
    Ok(((h - e.clone()) * w.clone() - correction).simplify())
}

/// The `n`-th Laguerre polynomial in `var 0`, built by the exact-rational
/// recurrence `(k+1) L_{k+1} = (2k + 1 - y) L_k - k L_{k-1}`.
pub fn laguerre_polynomial(n: u32) -> ScalarExpr {
    let y = ScalarExpr::var(0);
    let mut prev = ScalarExpr::one();
    if n == 0 {
        return prev;
    }
    let mut cur = (ScalarExpr::one() - y.clone()).simplify();
    for k in 1..n {
        let k = i64::from(k);
        let next = ((ScalarExpr::int(2 * k + 1) - y.clone()) * cur.clone()
            - ScalarExpr::int(k) * prev)
            / ScalarExpr::int(k + 1);
        prev = cur;
        cur = next.simplify();
    }
    cur
}

/// Physicists' Hermite polynomial in `var 0`, by the integer recurrence
/// `H_{k+1} = 2x H_k - 2k H_{k-1}`.
pub fn hermite_polynomial(n: u32) -> ScalarExpr {
    let x = ScalarExpr::var(0);
    let mut prev = ScalarExpr::one();
    if n == 0 {
        return prev;
    }
    let mut cur = ScalarExpr::int(2) * x.clone();
    for k in 1..n {
        let next = ScalarExpr::int(2) * x.clone() * cur.clone()
            - ScalarExpr::int(2 * i64::from(k)) * prev;
        prev = cur;
        cur = next.simplify();
    }
    cur
}

/// Partial sum of the confluent series
/// `G(alpha, beta, y) = sum_k (alpha)_k (beta)_k / (k! y^k)`.
///
/// The series is asymptotic in `1/y`: unless a Pochhammer factor reaches
/// zero it has zero radius of convergence, and the magnitude of the first
/// omitted term is the standard error estimate for the partial sum.
#[derive(Clone, Copy, Debug)]
pub struct KummerSum {
    /// Sum of the terms actually accumulated.
    pub value: f64,
    /// Magnitude of the first term left out; zero when the series broke off.
    pub first_omitted: f64,
    /// How many terms the sum used (termination can stop it early).
    pub terms_used: u32,
    /// A Pochhammer factor reached zero, so the sum is exact.
    pub terminated: bool,
    /// Term magnitudes stopped decreasing inside the summed window without
    /// the series breaking off; the tail is divergent and `value` is only an
    /// asymptotic estimate.
    pub diverging: bool,
}

/// Sum the first `terms` terms of `G(alpha, beta, y)`.
pub fn kummer_g(alpha: f64, beta: f64, y: f64, terms: u32) -> Result<KummerSum> {
    if terms == 0 {
        return Err(Error::domain("the confluent series needs at least one term"));
    }
    if !(alpha.is_finite() && beta.is_finite() && y.is_finite()) || y == 0.0 {
        return Err(Error::domain(
            "confluent series parameters must be finite with a nonzero argument",
        ));
    }
    let mut value = 0.0;
    let mut term = 1.0_f64;
    let mut terminated = false;
    let mut grew = false;
    let mut terms_used = 0u32;
    for k in 0..terms {
        value += term;
        terms_used = k + 1;
        let next = term * (alpha + f64::from(k)) * (beta + f64::from(k))
            / (f64::from(k + 1) * y);
        if next == 0.0 {
            terminated = true;
            term = 0.0;
            break;
        }
        if next.abs() >= term.abs() {
            grew = true;
        }
        term = next;
    }
    Ok(KummerSum {
        value,
        first_omitted: term.abs(),
        terms_used,
        terminated,
        diverging: grew && !terminated,
    })
}

/// One branch of the general solution of the radial equation, in the form
/// `prefactor * G(alpha, alpha, argument)`.
#[derive(Clone, Debug)]
pub struct SolutionBranch {
    /// The repeated series parameter of `G`.
    pub alpha: ScalarExpr,
    /// Series argument: `-4H/hbar` on the decaying branch, `+4H/hbar` on the
    /// growing one.
    pub argument: ScalarExpr,
    /// `e^{-2H/hbar} (4H/hbar)^{-alpha}` or its growing counterpart.
    pub prefactor: ScalarExpr,
    /// `Some(n)` when the series breaks off after `n + 1` terms, which
    /// happens exactly when `-alpha` is a nonnegative integer.
    pub quantum_number: Option<u32>,
    /// Whether the branch can appear in a normalizable state.  The growing
    /// branch never can: its exponential defeats every phase-space integral,
    /// and its series never terminates at real energies, so it does not even
    /// define a function beyond the asymptotic regime.  The decaying branch
    /// qualifies only when its series terminates.
    pub normalizable: bool,
}

impl SolutionBranch {
    /// The branch as an explicit expression: `prefactor` times the first
    /// `terms` series terms.  When the series terminates inside the window
    /// the result is exact; the trailing terms vanish identically.
    pub fn series_expression(&self, terms: u32) -> Result<ScalarExpr> {
        if terms == 0 {
            return Err(Error::domain("the confluent series needs at least one term"));
        }
        let mut sum = ScalarExpr::zero();
        let mut term = ScalarExpr::one();
        for k in 0..terms {
            sum = sum + term.clone();
            if k + 1 < terms {
                let shifted = (self.alpha.clone() + ScalarExpr::int(i64::from(k))).simplify();
                term = term * shifted.clone() * shifted
                    / (ScalarExpr::int(i64::from(k + 1)) * self.argument.clone());
            }
        }
        Ok((self.prefactor.clone() * sum).simplify())
    }
}

/// The two solution branches of the radial equation at trial energy `e`
/// (an expression in `hbar` only): the decaying branch first, the growing
/// branch second.
pub fn general_solution_terms(e: &ScalarExpr) -> Result<(SolutionBranch, SolutionBranch)> {
    if !e.variables().is_empty() {
        return Err(Error::domain("the trial energy must be constant on the chart"));
    }
    let hb = ScalarExpr::hbar();
    let two_hb = ScalarExpr::int(2) * hb.clone();
    let alpha_decaying =
        ((hb.clone() - ScalarExpr::int(2) * e.clone()) / two_hb.clone()).simplify();
    let alpha_growing = ((hb + ScalarExpr::int(2) * e.clone()) / two_hb).simplify();
    Ok((
        solution_branch(alpha_decaying, -1),
        solution_branch(alpha_growing, 1),
    ))
}

fn solution_branch(alpha: ScalarExpr, exponent_sign: i64) -> SolutionBranch {
    let h = ScalarExpr::var(0);
    let hb = ScalarExpr::hbar();
    let y = (ScalarExpr::int(4) * h.clone() / hb.clone()).simplify();
    let argument = if exponent_sign < 0 {
        (-y.clone()).simplify()
    } else {
        y.clone()
    };
    let exponential = (ScalarExpr::int(2 * exponent_sign) * h / hb).exp();
    // (4H/hbar)^(-alpha): an integer power stays in the rational-function
    // world, anything else needs the exp/ln form.
    let power = match integer_value(&alpha) {
        Some(m) => y.powi(-m as i32),
        None => (-(alpha.clone() * y.ln())).exp(),
    };
    let quantum_number = match integer_value(&alpha) {
        Some(m) if m <= 0 => Some((-m) as u32),
        _ => None,
    };
    SolutionBranch {
        normalizable: exponent_sign < 0 && quantum_number.is_some(),
        prefactor: (exponential * power).simplify(),
        alpha,
        argument,
        quantum_number,
    }
}

fn integer_value(e: &ScalarExpr) -> Option<i64> {
    let x = exact_rational_to_f64(e)?;
    if x.fract() == 0.0 && x.abs() <= 1e6 {
        Some(x as i64)
    } else {
        None
    }
}

/// The level index when `e` sits on the oscillator spectrum
/// `E = hbar (n + 1/2)`, within a relative tolerance of `1e-9`.
pub fn quantize(e: f64, hbar: f64) -> Option<u32> {
    if !(hbar > 0.0 && hbar.is_finite() && e.is_finite()) {
        return None;
    }
    let x = e / hbar - 0.5;
    let n = x.round();
    if n >= 0.0 && (x - n).abs() <= 1e-9 * (1.0 + x.abs()) {
        Some(n as u32)
    } else {
        None
    }
}

/// An oscillator Wigner eigenfunction `W_n`, held symbolically in both the
/// radial form (`H = var 0`) and the plane form (`q = var 0`, `p = var 1`).
#[derive(Clone, Debug)]
pub struct OscillatorEigenstate {
    n: u32,
    hbar: f64,
    symbol_h: ScalarExpr,
    symbol_qp: ScalarExpr,
}

impl OscillatorEigenstate {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn energy(&self) -> f64 {
        self.hbar * (f64::from(self.n) + 0.5)
    }

    /// The eigenvalue as an expression, `hbar (2n + 1)/2`.
    pub fn energy_symbol(&self) -> ScalarExpr {
        ScalarExpr::hbar() * ScalarExpr::rational(2 * i64::from(self.n) + 1, 2)
    }

    /// `W_n` as a function of the energy coordinate `H = var 0`.
    pub fn symbol_in_h(&self) -> &ScalarExpr {
        &self.symbol_h
    }

    /// `W_n` as a function of the plane coordinates `(q, p)`.
    pub fn symbol_in_qp(&self) -> &ScalarExpr {
        &self.symbol_qp
    }

    /// Sample the plane form on a grid, carrying this state's `hbar`.
    pub fn grid(&self, spec: GridSpec) -> Result<GridFunction> {
        GridFunction::sample_expr(spec, self.hbar, &self.symbol_qp)
    }
}

/// The normalized Wigner function of the `n`-th oscillator eigenstate,
/// `W_n = (-1)^n / (pi hbar) * e^{-2H/hbar} * L_n(4H/hbar)`.
pub fn wigner_eigenfunction(n: u32, hbar: f64) -> Result<OscillatorEigenstate> {
    check_hbar(hbar)?;
    if n > MAX_EIGENSTATE_INDEX {
        return Err(Error::domain(format!(
            "symbolic eigenstates are capped at index {MAX_EIGENSTATE_INDEX}, requested {n}"
        )));
    }
    let h = ScalarExpr::var(0);
    let hb = ScalarExpr::hbar();
    let y = ScalarExpr::int(4) * h.clone() / hb.clone();
    let laguerre = laguerre_polynomial(n).substitute(&[y])?;
    let sign = ScalarExpr::int(if n % 2 == 0 { 1 } else { -1 });
    let envelope = (ScalarExpr::int(-2) * h / hb.clone()).exp();
    let symbol_h = (sign / (ScalarExpr::pi() * hb) * envelope * laguerre).simplify();
    let q = ScalarExpr::var(0);
    let p = ScalarExpr::var(1);
    let symbol_qp = symbol_h
        .substitute(&[(q.powi(2) + p.powi(2)) / ScalarExpr::int(2)])?
        .simplify();
    Ok(OscillatorEigenstate {
        n,
        hbar,
        symbol_h,
        symbol_qp,
    })
}

/// The `n`-th normalized position-space eigenfunction of
/// `H = (q^2 + p^2)/2`.
#[derive(Clone, Debug)]
pub struct HermiteWavefunction {
    n: u32,
    hbar: f64,
}

/// Build the `n`-th Hermite eigenfunction at the given `hbar`.
pub fn hermite_wavefunction(n: u32, hbar: f64) -> Result<HermiteWavefunction> {
    check_hbar(hbar)?;
    Ok(HermiteWavefunction { n, hbar })
}

impl HermiteWavefunction {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn energy(&self) -> f64 {
        self.hbar * (f64::from(self.n) + 0.5)
    }

    /// Pointwise value through the normalized three-term recurrence, which
    /// is stable for indices far beyond [`MAX_EIGENSTATE_INDEX`].
    pub fn eval(&self, q: f64) -> f64 {
        let x = q / self.hbar.sqrt();
        let mut prev = 0.0;
        let mut cur = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
        for k in 0..self.n {
            let kf = f64::from(k);
            let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
            prev = cur;
            cur = next;
        }
        cur / self.hbar.powf(0.25)
    }

    pub fn sample(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&q| self.eval(q)).collect()
    }

    /// The closed form with the exact normalization kept under the root:
    ///
    /// ```text
    /// psi_n(q) = (2^n n!)^{-1/2} (pi hbar)^{-1/4}
    ///            e^{-q^2/(2 hbar)} H_n(q / sqrt(hbar)) .
    /// ```
    pub fn symbol(&self) -> Result<ScalarExpr> {
        if self.n > MAX_EIGENSTATE_INDEX {
            return Err(Error::domain(format!(
                "symbolic eigenstates are capped at index {MAX_EIGENSTATE_INDEX}, requested {}",
                self.n
            )));
        }
        let q = ScalarExpr::var(0);
        let hb = ScalarExpr::hbar();
        let hermite = hermite_polynomial(self.n).substitute(&[q.clone() / hb.clone().sqrt()])?;
        let mut weight = BigRational::from_integer(BigInt::from(1));
        for k in 1..=i64::from(self.n) {
            weight *= BigRational::from_integer(BigInt::from(2 * k));
        }
        let norm = ScalarExpr::one()
            / (ScalarExpr::big_rational(weight).sqrt()
                * (ScalarExpr::pi() * hb.clone()).sqrt().sqrt());
        let envelope = (-(q.powi(2)) / (ScalarExpr::int(2) * hb)).exp();
        Ok((norm * envelope * hermite).simplify())
    }
}

fn check_hbar(hbar: f64) -> Result<()> {
    if hbar.is_finite() && hbar > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "hbar must be positive and finite, got {hbar}"
        )))
    }
}
