//! The Moyal product on flat charts, in two interchangeable representations.
//!
//! The differential form expands `a ∗ b` as the bidifferential series
//! `Σ_k (1/k!) (iħ/2)^k P^k(a, b)`, where one application of `P` contracts a
//! derivative of each factor against the inverse symplectic form,
//! `P(a, b) = ω^{vw} ∂_v a ∂_w b`.  With the sign convention used throughout
//! this crate (`ω^{qp} = −1`) this yields `q ∗ p = qp − iħ/2` and a
//! normalized bracket with `{q, p} = −1`.  The series terminates whenever one
//! factor is polynomial.
//!
//! The integral form realizes the same product for sampled grid data.  A
//! grid function is the phase-space symbol of an operator; [`star_integral`]
//! converts both factors to integral kernels, composes the kernels as
//! matrices, and converts back.  Composition happens in reverse order (the
//! kernel of `b` acts after the kernel of `a`): under the `qp − iħ/2`
//! convention the symbol of an operator product `ÂB̂` is `b ∗ a`, mirroring
//! the lift-order swap used by the Fedosov construction in this crate.
//!
//! [`hamiltonian_eigen_residuals`] specializes the differential form to
//! `H = p²/2 + V(q)` acting on a sampled function: the two residual grids it
//! returns are `−(2/ħ)·Im(H ∗ W)` and `Re(H ∗ W) − E·W`, with `∂_p^r W` and
//! `∂_q W`, `∂_q² W` taken spectrally.  A true eigen-Wigner function at the
//! right energy zeroes both.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::connection::omega_upper;
use crate::error::{Error, Result};
use crate::expr::{ComplexExpr, ScalarExpr};
use crate::grid::{GridFunction, GridSpec};

/// Largest truncation order accepted by the differential routines; keeps
/// `order!` inside `i64` so series coefficients stay exact rationals.
pub const MAX_DIFFERENTIAL_ORDER: u32 = 20;

fn factorial(k: u32) -> i64 {
    (1..=i64::from(k)).product::<i64>().max(1)
}

/// Smallest even phase-space dimension containing every variable of `a`
/// and `b`.  Derivatives along absent coordinates vanish, so rounding up
/// never changes the product.
fn inferred_phase_dim(a: &ScalarExpr, b: &ScalarExpr) -> usize {
    let max_var = a
        .variables()
        .into_iter()
        .chain(b.variables())
        .max()
        .unwrap_or(1);
    let dim = max_var + 1;
    (dim + dim % 2).max(2)
}

/// One contraction step of the Poisson bidifferential: each `(∂a, ∂b, ±1)`
/// term spawns one child per nonzero `ω^{vw}`.  Terms whose factor has
/// differentiated to zero are dropped, so a terminating series empties the
/// list.
fn poisson_step(
    terms: &[(ScalarExpr, ScalarExpr, i64)],
    dim: usize,
) -> Result<Vec<(ScalarExpr, ScalarExpr, i64)>> {
    let mut next = Vec::with_capacity(terms.len() * dim);
    for (da, db, sign) in terms {
        for v in 0..dim {
            for w in 0..dim {
                let omega = omega_upper(dim, v, w);
                if omega == 0 {
                    continue;
                }
                let nda = da.clone().differentiate(v)?.simplify();
                if nda.is_zero() {
                    continue;
                }
                let ndb = db.clone().differentiate(w)?.simplify();
                if ndb.is_zero() {
                    continue;
                }
                next.push((nda, ndb, sign * omega));
            }
        }
    }
    Ok(next)
}

fn signed_term_sum(terms: &[(ScalarExpr, ScalarExpr, i64)]) -> ScalarExpr {
    let mut sum = ScalarExpr::zero();
    for (da, db, sign) in terms {
        let product = da.clone() * db.clone();
        sum = if *sign < 0 { sum - product } else { sum + product };
    }
    sum
}

/// table[i][j] = ∂_q^i ∂_p^j f for i + j ≤ order; entries beyond a vanished
/// derivative stay zero without further differentiation.
fn mixed_partials(f: &ScalarExpr, order: u32) -> Result<Vec<Vec<ScalarExpr>>> {
    let order = order as usize;
    let mut table: Vec<Vec<ScalarExpr>> = Vec::with_capacity(order + 1);
    for i in 0..=order {
        let base = if i == 0 {
            f.clone().simplify()
        } else {
            let up: &ScalarExpr = &table[i - 1][0];
            if up.is_zero() {
                ScalarExpr::zero()
            } else {
                up.clone().differentiate(0)?.simplify()
            }
        };
        let mut row = Vec::with_capacity(order + 1 - i);
        row.push(base);
        for j in 1..=(order - i) {
            let prev = &row[j - 1];
            let next = if prev.is_zero() {
                ScalarExpr::zero()
            } else {
                prev.clone().differentiate(1)?.simplify()
            };
            row.push(next);
        }
        table.push(row);
    }
    Ok(table)
}

fn binomial(k: u32, r: u32) -> i64 {
    let mut value = 1i64;
    for s in 0..r.min(k - r) {
        value = value * i64::from(k - s) / i64::from(s + 1);
    }
    value
}

/// P^k(a, b) on the single canonical pair, from precomputed mixed partials:
/// Σ_r C(k,r) (−1)^{k−r} (∂_q^{k−r} ∂_p^r a)(∂_q^r ∂_p^{k−r} b).
/// Collapsing the 2^k contraction terms into k+1 binomial-weighted products
/// keeps high truncation orders affordable.
fn poisson_power_2d(
    ta: &[Vec<ScalarExpr>],
    tb: &[Vec<ScalarExpr>],
    k: u32,
) -> ScalarExpr {
    let mut sum = ScalarExpr::zero();
    for r in 0..=k {
        let da = &ta[(k - r) as usize][r as usize];
        let db = &tb[r as usize][(k - r) as usize];
        if da.is_zero() || db.is_zero() {
            continue;
        }
        let signed = if (k - r) % 2 == 1 {
            -binomial(k, r)
        } else {
            binomial(k, r)
        };
        sum = sum + ScalarExpr::int(signed) * da.clone() * db.clone();
    }
    sum.simplify()
}

/// Truncated Moyal product `Σ_{k≤order} (1/k!)(iħ/2)^k P^k(a, b)`, split
/// into real and imaginary parts.  Exact (the truncation is immaterial)
/// when either factor is polynomial and `order` reaches the terminating
/// degree.  The phase-space dimension is inferred from the variables
/// appearing in the factors.
///
/// `moyal_differential(q, p, 1)` returns `(qp, −ħ/2)`; on the 4-D chart,
/// angular momentum obeys `L ∗ L = L² − ħ²/2`.
pub fn moyal_differential(a: &ScalarExpr, b: &ScalarExpr, order: u32) -> Result<ComplexExpr> {
    if order > MAX_DIFFERENTIAL_ORDER {
        return Err(Error::domain(format!(
            "truncation order {order} exceeds the supported maximum {MAX_DIFFERENTIAL_ORDER}"
        )));
    }
    let mut re = a.clone() * b.clone();
    let mut im = ScalarExpr::zero();
    for (k, power) in poisson_powers(a, b, order)? {
        let coeff = ScalarExpr::rational(1, factorial(k))
            * (ScalarExpr::hbar() * ScalarExpr::rational(1, 2)).powi(k as i32);
        let term = (coeff * power).simplify();
        // i^k decides where the term lands: 1, i, −1, −i as k mod 4 walks 0..3.
        match k % 4 {
            0 => re = re + term,
            1 => im = im + term,
            2 => re = re - term,
            _ => im = im - term,
        }
    }
    Ok(ComplexExpr::new(re.simplify(), im.simplify()))
}

/// The nonzero `P^k(a, b)` for k in 1..=order, tagged with k.  Uses the
/// binomial collapse on one canonical pair and the generic contraction
/// term list on higher-dimensional charts.
fn poisson_powers(
    a: &ScalarExpr,
    b: &ScalarExpr,
    order: u32,
) -> Result<Vec<(u32, ScalarExpr)>> {
    let dim = inferred_phase_dim(a, b);
    let mut powers = Vec::new();
    if dim == 2 {
        let ta = mixed_partials(a, order)?;
        let tb = mixed_partials(b, order)?;
        for k in 1..=order {
            let power = poisson_power_2d(&ta, &tb, k);
            if !power.is_zero() {
                powers.push((k, power));
            }
        }
    } else {
        let mut terms = vec![(a.clone(), b.clone(), 1_i64)];
        for k in 1..=order {
            terms = poisson_step(&terms, dim)?;
            if terms.is_empty() {
                break;
            }
            let power = signed_term_sum(&terms).simplify();
            if !power.is_zero() {
                powers.push((k, power));
            }
        }
    }
    Ok(powers)
}

/// Normalized Moyal bracket `(a ∗ b − b ∗ a)/(iħ)` in the differential
/// representation: only odd orders survive,
/// `Σ_{k odd ≤ order} (−1)^{(k−1)/2} (1/k!)(ħ/2)^{k−1} P^k(a, b)`.
/// The result is real for real symbols; `moyal_bracket(q, p, 1) = −1`.
pub fn moyal_bracket(a: &ScalarExpr, b: &ScalarExpr, order: u32) -> Result<ScalarExpr> {
    if order > MAX_DIFFERENTIAL_ORDER {
        return Err(Error::domain(format!(
            "truncation order {order} exceeds the supported maximum {MAX_DIFFERENTIAL_ORDER}"
        )));
    }
    let mut bracket = ScalarExpr::zero();
    for (k, power) in poisson_powers(a, b, order)? {
        if k % 2 == 0 {
            continue;
        }
        let sign = if ((k - 1) / 2) % 2 == 0 { 1 } else { -1 };
        let coeff = ScalarExpr::rational(sign, factorial(k))
            * (ScalarExpr::hbar() * ScalarExpr::rational(1, 2)).powi(k as i32 - 1);
        bracket = bracket + coeff * power;
    }
    Ok(bracket.simplify())
}

// ---------------------------------------------------------------------------
// Integral representation on grids.
// ---------------------------------------------------------------------------

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
}

/// Trigonometric upsampling of the q-axis by a factor of two.  Returns a
/// `(2·n_q − 1) × n_p` row-major array whose even rows coincide with the
/// input and whose odd rows interpolate the q-midpoints.  Treats each
/// column as one period of a trigonometric polynomial; for samples that
/// decay at the boundary the wrap-around is harmless.
fn upsample_q(w: &GridFunction) -> Vec<f64> {
    let n_q = w.spec().n_q;
    let n_p = w.spec().n_p;
    let fine_rows = 2 * n_q - 1;
    let mut out = vec![0.0; fine_rows * n_p];
    let mut buf = vec![Complex64::default(); n_q];
    let mut padded = vec![Complex64::default(); 2 * n_q];
    for j in 0..n_p {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(w.value(i, j), 0.0);
        }
        fft_in_place(&mut buf, false);
        padded.fill(Complex64::default());
        let half = n_q / 2;
        if n_q % 2 == 0 {
            padded[..half].copy_from_slice(&buf[..half]);
            // The Nyquist bin is shared between the two half-spectra.
            padded[half] = buf[half] * 0.5;
            padded[2 * n_q - half] = buf[half] * 0.5;
            for (k, val) in buf.iter().enumerate().skip(half + 1) {
                padded[k + n_q] = *val;
            }
        } else {
            padded[..=half].copy_from_slice(&buf[..=half]);
            for (k, val) in buf.iter().enumerate().skip(half + 1) {
                padded[k + n_q] = *val;
            }
        }
        fft_in_place(&mut padded, true);
        let scale = 1.0 / n_q as f64;
        for i in 0..fine_rows {
            out[i * n_p + j] = padded[i].re * scale;
        }
    }
    out
}

/// Integral kernel of the operator whose phase-space symbol is `w`:
///
///   K(q₁, q₂) = (1/2πħ) ∫ w((q₁+q₂)/2, p) · e^{i p (q₁−q₂)/ħ} dp,
///
/// returned as an `n_q × n_q` row-major complex matrix on the grid's
/// q-axis.  Midpoints `(q₁+q₂)/2` falling between grid rows come from the
/// factor-two upsampling.  The p-integral is a trapezoid sum; its
/// truncation and aliasing errors are negligible exactly when `w` decays
/// at the p-boundary.
pub(crate) fn weyl_kernel(w: &GridFunction) -> Vec<Complex64> {
    let spec = w.spec();
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let (dq, dp) = (spec.q_step(), spec.p_step());
    let hbar = w.hbar();
    let fine = upsample_q(w);
    let fine_rows = 2 * n_q - 1;
    let offsets = 2 * n_q - 1;

    // phase[l * offsets + c] = w_l Δp · exp(i p_l ξ_c / ħ), ξ_c = (c − (n_q−1)) Δq
    let mut phase = vec![Complex64::default(); n_p * offsets];
    for l in 0..n_p {
        let p = spec.p_at(l);
        let weight = if l == 0 || l == n_p - 1 { 0.5 } else { 1.0 };
        for c in 0..offsets {
            let xi = (c as f64 - (n_q as f64 - 1.0)) * dq;
            phase[l * offsets + c] = Complex64::from_polar(weight * dp, p * xi / hbar);
        }
    }

    // transform[m][c] = Σ_l fine[m][l] · phase[l][c]
    let mut transform = vec![Complex64::default(); fine_rows * offsets];
    transform
        .par_chunks_mut(offsets)
        .enumerate()
        .for_each(|(m, row)| {
            for l in 0..n_p {
                let f = fine[m * n_p + l];
                if f == 0.0 {
                    continue;
                }
                let ph = &phase[l * offsets..(l + 1) * offsets];
                for (slot, e) in row.iter_mut().zip(ph) {
                    *slot += e * f;
                }
            }
        });

    let norm = 1.0 / (2.0 * std::f64::consts::PI * hbar);
    let mut kernel = vec![Complex64::default(); n_q * n_q];
    for i in 0..n_q {
        for j in 0..n_q {
            kernel[i * n_q + j] = transform[(i + j) * offsets + (i + n_q - 1 - j)] * norm;
        }
    }
    kernel
}

/// Matrix composition `left · right` with trapezoid weights on the shared
/// coordinate, so the product approximates `∫ left(q₁, z) right(z, q₂) dz`.
fn compose_kernels(left: &[Complex64], right: &[Complex64], n: usize, dq: f64) -> Vec<Complex64> {
    let mut weighted = right.to_vec();
    for z in [0, n - 1] {
        for entry in &mut weighted[z * n..(z + 1) * n] {
            *entry *= 0.5;
        }
    }
    for entry in &mut weighted {
        *entry *= dq;
    }
    let mut out = vec![Complex64::default(); n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for z in 0..n {
            let l = left[i * n + z];
            if l == Complex64::default() {
                continue;
            }
            let rrow = &weighted[z * n..(z + 1) * n];
            for (slot, r) in row.iter_mut().zip(rrow) {
                *slot += l * r;
            }
        }
    });
    out
}

/// Back-transform of a kernel to its phase-space symbol,
///
///   s(q, p) = ∫ K(q + ξ/2, q − ξ/2) · e^{−i p ξ/ħ} dξ,
///
/// sampled over the even offsets ξ = 2mΔq that keep both kernel arguments
/// on the grid.  The ξ-window shrinks toward the q-boundary; for decaying
/// kernels the missing tail is negligible.  The 2Δq sampling limits the
/// representable momenta to |p| < πħ/(2Δq), which [`star_integral`] checks
/// up front.
fn kernel_to_symbol(kernel: &[Complex64], spec: &GridSpec, hbar: f64) -> (Vec<f64>, Vec<f64>) {
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let dq = spec.q_step();
    let mut re = vec![0.0; n_q * n_p];
    let mut im = vec![0.0; n_q * n_p];
    re.par_chunks_mut(n_p)
        .zip(im.par_chunks_mut(n_p))
        .enumerate()
        .for_each(|(i, (re_row, im_row))| {
            let reach = i.min(n_q - 1 - i) as i64;
            for l in 0..n_p {
                let p = spec.p_at(l);
                let mut acc = Complex64::default();
                for m in -reach..=reach {
                    let weight = if reach > 0 && m.abs() == reach { 0.5 } else { 1.0 };
                    let row = (i as i64 + m) as usize;
                    let col = (i as i64 - m) as usize;
                    let xi = 2.0 * m as f64 * dq;
                    acc += kernel[row * n_q + col]
                        * Complex64::from_polar(weight, -p * xi / hbar);
                }
                re_row[l] = acc.re * 2.0 * dq;
                im_row[l] = acc.im * 2.0 * dq;
            }
        });
    (re, im)
}

fn check_nyquist(spec: &GridSpec, hbar: f64) -> Result<()> {
    let p_reach = spec.p_min.abs().max(spec.p_max.abs());
    let limit = std::f64::consts::PI * hbar / (2.0 * spec.q_step());
    if p_reach >= limit {
        return Err(Error::domain(format!(
            "momentum window reaches |p| = {p_reach:.6} but the q-spacing {:.6} at ħ = {hbar} \
             only represents |p| < πħ/(2Δq) = {limit:.6}; refine the q-axis or shrink the p-window",
            spec.q_step()
        )));
    }
    Ok(())
}

/// Full complex result of the integral-form star product, with the input
/// boundary-decay measurement attached.
#[derive(Debug)]
pub struct StarProduct {
    pub re: GridFunction,
    pub im: GridFunction,
    /// Largest boundary-to-peak sample ratio among the two inputs.  The
    /// quadrature assumes decay at the grid edge; values above about 1e−10
    /// mean the window is too small and the result carries that error.
    pub boundary_ratio: f64,
}

/// Integral-form Moyal product of two sampled symbols on a shared grid.
///
/// Both factors become integral kernels, the kernels are composed (in
/// reverse order, matching the `qp − iħ/2` convention), and the product
/// kernel is transformed back.  Cost is dominated by the dense kernel
/// products, O(n_q²·(n_q + n_p)).
///
/// Errors on grid/ħ mismatch and when the momentum window exceeds the
/// Nyquist band πħ/(2Δq) of the back-transform.  Boundary decay is not
/// enforced, only measured; see [`StarProduct::boundary_ratio`].
pub fn star_integral(a: &GridFunction, b: &GridFunction) -> Result<StarProduct> {
    a.check_compatible(b)?;
    check_nyquist(a.spec(), a.hbar())?;
    let boundary_ratio = [a, b]
        .iter()
        .map(|w| {
            let peak = w.sup_norm();
            if peak == 0.0 {
                0.0
            } else {
                w.boundary_sup() / peak
            }
        })
        .fold(0.0, f64::max);

    let (ka, kb) = rayon::join(|| weyl_kernel(a), || weyl_kernel(b));
    let product = compose_kernels(&kb, &ka, a.spec().n_q, a.spec().q_step());
    let (re, im) = kernel_to_symbol(&product, a.spec(), a.hbar());
    Ok(StarProduct {
        re: GridFunction::new(a.spec().clone(), a.hbar(), re)?,
        im: GridFunction::new(a.spec().clone(), a.hbar(), im)?,
        boundary_ratio,
    })
}

/// Real part of the integral-form star product.  For the Hermitian
/// combinations that arise in eigen-equations and purity checks this is the
/// whole answer; use [`star_integral`] when the imaginary part matters.
pub fn moyal_integral(a: &GridFunction, b: &GridFunction) -> Result<GridFunction> {
    Ok(star_integral(a, b)?.re)
}

/// Normalized Moyal bracket of two real sampled symbols,
/// `(a ∗ b − b ∗ a)/(iħ) = (2/ħ)·Im(a ∗ b)`.
///
/// Both inputs must decay at the grid boundary for the integral form to be
/// trustworthy.  Brackets against a polynomial observable (which cannot
/// decay) are available symbolically through [`moyal_bracket`], or as the
/// flow residual of [`hamiltonian_eigen_residuals`] when the observable is
/// a Hamiltonian.
pub fn moyal_bracket_grid(a: &GridFunction, b: &GridFunction) -> Result<GridFunction> {
    let star = star_integral(a, b)?;
    let hbar = star.im.hbar();
    star.im.map(|v| 2.0 * v / hbar)
}

/// Literal quadrature of the four-fold integral form
///
///   (a ∗ b)(x) = (1/π²ħ²) ∫∫ a(x′) b(x″) ·
///                exp((2i/ħ)[(q″−q)(p′−p) − (q′−q)(p″−p)]) dx′ dx″
///
/// at the requested grid points, by trapezoid sums over both phase-space
/// planes.  O(n⁴) per point: a reference for validating the kernel
/// pipeline on small grids, not a production path.
///
/// The phase orientation is the one consistent with `q ∗ p = qp − iħ/2`:
/// integrating out x″ against A = q must produce `qB − (iħ/2)∂_p B`.  The
/// same formula is often printed with the opposite orientation, which
/// belongs to the `qp + iħ/2` convention.
pub fn moyal_integral_direct(
    a: &GridFunction,
    b: &GridFunction,
    points: &[(usize, usize)],
) -> Result<Vec<Complex64>> {
    a.check_compatible(b)?;
    let spec = a.spec();
    let hbar = a.hbar();
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let cell = spec.q_step() * spec.p_step();
    let edge = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let values = points
        .par_iter()
        .map(|&(i0, j0)| {
            if i0 >= n_q || j0 >= n_p {
                return Err(Error::domain(format!(
                    "sample point ({i0}, {j0}) lies outside the {n_q}×{n_p} grid"
                )));
            }
            let (q0, p0) = (spec.q_at(i0), spec.p_at(j0));
            let mut acc = Complex64::default();
            for i1 in 0..n_q {
                let dq1 = spec.q_at(i1) - q0;
                for l1 in 0..n_p {
                    let av = a.value(i1, l1) * edge(i1, n_q) * edge(l1, n_p);
                    if av == 0.0 {
                        continue;
                    }
                    let dp1 = spec.p_at(l1) - p0;
                    let mut inner = Complex64::default();
                    for i2 in 0..n_q {
                        let dq2 = spec.q_at(i2) - q0;
                        for l2 in 0..n_p {
                            let bv = b.value(i2, l2) * edge(i2, n_q) * edge(l2, n_p);
                            if bv == 0.0 {
                                continue;
                            }
                            let dp2 = spec.p_at(l2) - p0;
                            let phase = 2.0 * (dq2 * dp1 - dq1 * dp2) / hbar;
                            inner += Complex64::from_polar(bv, phase);
                        }
                    }
                    acc += inner * av;
                }
            }
            let norm = cell * cell / (std::f64::consts::PI * hbar).powi(2);
            Ok(acc * norm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values)
}

/// Mean value `∫∫ w·a dq dp` of a symbol `a(q, p)` in the state sampled by
/// `w`, via the grid's product trapezoid rule.  The caller is responsible
/// for `w` being normalized; `∫∫ w` itself is `w.integral()`.
pub fn expectation(w: &GridFunction, a: &ScalarExpr) -> Result<f64> {
    let sampled = GridFunction::sample_expr(w.spec().clone(), w.hbar(), a)?;
    Ok(w.zip_with(&sampled, |x, y| x * y)?.integral())
}

// ---------------------------------------------------------------------------
// Spectral derivatives and the Hamiltonian eigen-system.
// ---------------------------------------------------------------------------

/// Derivative multipliers and tail measurement for one grid axis, treating
/// the samples as one period of length n·step.
struct AxisSpectra {
    lines: Vec<Vec<Complex64>>,
    n: usize,
    step: f64,
    tail_ratio: f64,
}

fn axis_spectra(w: &GridFunction, axis: usize) -> AxisSpectra {
    let spec = w.spec();
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let (n, lines_count, step) = if axis == 0 {
        (n_q, n_p, spec.q_step())
    } else {
        (n_p, n_q, spec.p_step())
    };
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut lines = Vec::with_capacity(lines_count);
    let mut overall_peak = 0.0_f64;
    let mut tail_peak = 0.0_f64;
    // Frequencies with |k| above 80% of the Nyquist index count as tail:
    // resolved smooth data has spectrally small content there.
    let tail_start = (4 * (n / 2)) / 5;
    for line in 0..lines_count {
        let mut buf: Vec<Complex64> = (0..n)
            .map(|k| {
                let v = if axis == 0 {
                    w.value(k, line)
                } else {
                    w.value(line, k)
                };
                Complex64::new(v, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            let k_signed = if k <= n / 2 { k } else { n - k };
            let mag = c.norm();
            overall_peak = overall_peak.max(mag);
            if k_signed >= tail_start {
                tail_peak = tail_peak.max(mag);
            }
        }
        lines.push(buf);
    }
    let tail_ratio = if overall_peak == 0.0 {
        0.0
    } else {
        tail_peak / overall_peak
    };
    AxisSpectra {
        lines,
        n,
        step,
        tail_ratio,
    }
}

impl AxisSpectra {
    /// r-th spectral derivative along this axis, one output line per input
    /// line.  The Nyquist bin of an even-length axis is zeroed for odd r,
    /// where its sign is ambiguous.
    fn derivative(&self, r: u32) -> Vec<Vec<f64>> {
        let n = self.n;
        let period = n as f64 * self.step;
        let base = 2.0 * std::f64::consts::PI / period;
        let mut planner = FftPlanner::new();
        let inverse = planner.plan_fft_inverse(n);
        self.lines
            .par_iter()
            .map(|line| {
                let mut buf: Vec<Complex64> = line
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let k_signed = if k <= n / 2 {
                            k as i64
                        } else {
                            k as i64 - n as i64
                        };
                        if n % 2 == 0 && k == n / 2 && r % 2 == 1 {
                            return Complex64::default();
                        }
                        let ik = Complex64::new(0.0, base * k_signed as f64);
                        c * ik.powu(r)
                    })
                    .collect();
                inverse.process(&mut buf);
                buf.iter().map(|c| c.re / n as f64).collect()
            })
            .collect()
    }
}

fn grid_from_axis_lines(
    lines: &[Vec<f64>],
    axis: usize,
    spec: &GridSpec,
    hbar: f64,
) -> Result<GridFunction> {
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let mut values = vec![0.0; n_q * n_p];
    if axis == 0 {
        for (j, line) in lines.iter().enumerate() {
            for (i, v) in line.iter().enumerate() {
                values[i * n_p + j] = *v;
            }
        }
    } else {
        for (i, line) in lines.iter().enumerate() {
            values[i * n_p..(i + 1) * n_p].copy_from_slice(line);
        }
    }
    GridFunction::new(spec.clone(), hbar, values)
}

/// Spectral partial derivative of a sampled function along `axis` (0 for q,
/// 1 for p), order `r`, treating the grid periodically.  Accurate for
/// smooth samples that decay at the boundary.
pub fn spectral_derivative(w: &GridFunction, axis: usize, r: u32) -> Result<GridFunction> {
    if axis > 1 {
        return Err(Error::domain("axis must be 0 (q) or 1 (p)"));
    }
    let spectra = axis_spectra(w, axis);
    grid_from_axis_lines(&spectra.derivative(r), axis, w.spec(), w.hbar())
}

/// Residual grids of the two coupled equations satisfied by an eigen-Wigner
/// function of `H = p²/2 + V(q)` (unit mass):
///
///   flow  = −(2/ħ)·Im(H ∗ W)
///         = −p ∂_q W + Σ_{r odd ≤ order} (−1)^{(r−1)/2}(1/r!)(ħ/2)^{r−1} V⁽ʳ⁾ ∂_p^r W,
///   eigen = Re(H ∗ W) − E·W
///         = (p²/2 + V − E)·W − (ħ²/8) ∂_q² W
///           + Σ_{r even, 2 ≤ r ≤ order} (−1)^{r/2}(1/r!)(ħ/2)^r V⁽ʳ⁾ ∂_p^r W.
///
/// Both series come from the same product expansion that fixes
/// `q ∗ p = qp − iħ/2`; for polynomial `V` they terminate at `r = deg V`.
/// Derivatives of `W` are spectral.  Returns `(flow, eigen)`.
///
/// Errors when `V` involves anything but the position variable, and when
/// the spectral tail of `w` along either axis exceeds 1e−6 of its peak
/// (the grid does not resolve `w` well enough for the derivatives).
pub fn hamiltonian_eigen_residuals(
    v: &ScalarExpr,
    w: &GridFunction,
    e: f64,
    order: u32,
) -> Result<(GridFunction, GridFunction)> {
    if v.variables().into_iter().any(|var| var != 0) {
        return Err(Error::domain(
            "the potential must depend on the position variable only",
        ));
    }
    if !(1..=MAX_DIFFERENTIAL_ORDER).contains(&order) {
        return Err(Error::domain(format!(
            "derivative order must lie in 1..={MAX_DIFFERENTIAL_ORDER}"
        )));
    }
    let spec = w.spec().clone();
    let hbar = w.hbar();
    let (n_q, n_p) = (spec.n_q, spec.n_p);

    let q_spectra = axis_spectra(w, 0);
    let p_spectra = axis_spectra(w, 1);
    let tail = q_spectra.tail_ratio.max(p_spectra.tail_ratio);
    if tail > 1e-6 {
        return Err(Error::numeric_check(format!(
            "spectral tail of the sampled function is {tail:.3e} of its peak; \
             the grid is too coarse for reliable spectral derivatives"
        )));
    }

    // V and its q-derivatives, sampled along the q-axis.  Dropping orders
    // once the derivative hits zero terminates the series for polynomials.
    let mut v_samples: Vec<Option<Vec<f64>>> = Vec::with_capacity(order as usize + 1);
    let mut current = v.clone().simplify();
    for r in 0..=order {
        if r > 0 {
            current = current.differentiate(0)?.simplify();
        }
        if current.is_zero() {
            v_samples.push(None);
        } else {
            let mut line = Vec::with_capacity(n_q);
            for i in 0..n_q {
                line.push(current.evaluate_at(&[spec.q_at(i)], hbar)?);
            }
            v_samples.push(Some(line));
        }
    }

    let dq_w = grid_from_axis_lines(&q_spectra.derivative(1), 0, &spec, hbar)?;
    let dq2_w = grid_from_axis_lines(&q_spectra.derivative(2), 0, &spec, hbar)?;
    let dp_w: Vec<Option<GridFunction>> = (1..=order)
        .map(|r| {
            if v_samples[r as usize].is_none() {
                Ok(None)
            } else {
                grid_from_axis_lines(&p_spectra.derivative(r), 1, &spec, hbar).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    let mut flow = vec![0.0; n_q * n_p];
    let mut eigen = vec![0.0; n_q * n_p];
    for i in 0..n_q {
        let v0 = v_samples[0].as_ref().map_or(0.0, |line| line[i]);
        for j in 0..n_p {
            let p = spec.p_at(j);
            let idx = i * n_p + j;
            flow[idx] = -p * dq_w.value(i, j);
            eigen[idx] = (0.5 * p * p + v0 - e) * w.value(i, j)
                - hbar * hbar / 8.0 * dq2_w.value(i, j);
        }
    }
    for r in 1..=order as usize {
        let (line, dpr) = match (&v_samples[r], &dp_w[r - 1]) {
            (Some(line), Some(dpr)) => (line, dpr),
            _ => continue,
        };
        let magnitude = (hbar / 2.0).powi(r as i32 - 1) / factorial(r as u32) as f64;
        if r % 2 == 1 {
            let coeff = if ((r - 1) / 2) % 2 == 0 { magnitude } else { -magnitude };
            for i in 0..n_q {
                let vr = line[i];
                for j in 0..n_p {
                    flow[i * n_p + j] += coeff * vr * dpr.value(i, j);
                }
            }
        } else {
            let coeff = (hbar / 2.0) * if (r / 2) % 2 == 0 { magnitude } else { -magnitude };
            for i in 0..n_q {
                let vr = line[i];
                for j in 0..n_p {
                    eigen[i * n_p + j] += coeff * vr * dpr.value(i, j);
                }
            }
        }
    }
    Ok((
        GridFunction::new(spec.clone(), hbar, flow)?,
        GridFunction::new(spec, hbar, eigen)?,
    ))
}
