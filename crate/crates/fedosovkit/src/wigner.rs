//! Deciding whether a sampled phase-space function is the Wigner function
//! of a pure state.
//!
//! The module owns three layers.  First the transform itself,
//! [`wigner_from_wavefunction`]:
//!
//! ```text
//! W(q, p) = (1/2πħ) ∫ dξ  conj(ψ)(q + ξ/2) ψ(q − ξ/2) e^{−iξp/ħ} ,
//! ```
//!
//! together with its momentum-side twin, which must produce the same
//! function.  Second, the necessary conditions every pure-state Wigner
//! function satisfies ([`check_basic_properties`]): realness, unit mass,
//! `∫∫W² = 1/(2πħ)`, the bound `|W| ≤ 1/(πħ)`, and a continuity heuristic.
//! Third, the two decisive criteria.  A normalized real `W` is pure exactly
//! when it star-squares to itself, `W ∗ W = W/(2πħ)`
//! ([`purity_idempotence`]), and exactly when its position kernel
//!
//! ```text
//! ϱ(q₁, q₂) = ∫ dp  W((q₁+q₂)/2, p) e^{ip(q₁−q₂)/ħ}
//! ```
//!
//! factors as `F(q₁)·conj(F)(q₂)` ([`purity_factorization`]); the factor is
//! the wavefunction itself up to a global phase and is recovered by
//! [`extract_wavefunction`].  Both criteria work on arbitrary real grids,
//! which is the point: candidate solutions of a star-eigenvalue equation
//! arrive with no Hilbert-space pedigree.
//!
//! The rank-one test runs on singular values of the sampled `ϱ` rather than
//! on the pointwise factorization condition, which is not numerically
//! robust; the pointwise form survives here only as documentation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::moyal;

/// How a candidate state entered the system.  Only `FromWavefunction`
/// carries a construction guarantee (the transform of a normalized ψ);
/// the purity verdict for the other two is genuinely open until tested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    FromWavefunction,
    Candidate,
    Constructed,
}

/// A real phase-space function under examination, with its origin recorded.
#[derive(Clone, Debug)]
pub struct WignerState {
    values: GridFunction,
    provenance: Provenance,
}

impl WignerState {
    /// Wrap an externally supplied grid (a file, a solver output).
    pub fn candidate(values: GridFunction) -> WignerState {
        WignerState {
            values,
            provenance: Provenance::Candidate,
        }
    }

    /// Wrap a grid built from a known closed form.
    pub fn constructed(values: GridFunction) -> WignerState {
        WignerState {
            values,
            provenance: Provenance::Constructed,
        }
    }

    pub fn values(&self) -> &GridFunction {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn hbar(&self) -> f64 {
        self.values.hbar()
    }

    pub fn spec(&self) -> &GridSpec {
        self.values.spec()
    }
}

fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

fn check_wavefunction_norm(samples: &[Complex64], step: f64, label: &str) -> Result<()> {
    let n = samples.len();
    let norm: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, v)| trapezoid_weight(i, n) * v.norm_sqr())
        .sum::<f64>()
        * step;
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "{label} must be normalized on the grid; its square integrates to {norm}"
        )));
    }
    Ok(())
}

/// The Wigner transform of position-space samples `psi` on the `q`-axis of
/// `spec`.  The `ξ`-integral runs over the offsets the grid can represent,
/// so `ψ` must have decayed at the grid edge for the result to be faithful.
///
/// The integrand is Hermitian under `ξ → −ξ`, so the transform is real up
/// to rounding; the imaginary residue is measured and must stay below
/// `1e-10` before it is discarded.
pub fn wigner_from_wavefunction(
    spec: GridSpec,
    hbar: f64,
    psi: &[Complex64],
) -> Result<WignerState> {
    spec.validate()?;
    if psi.len() != spec.n_q {
        return Err(Error::domain(format!(
            "expected {} wavefunction samples on the q-axis, got {}",
            spec.n_q,
            psi.len()
        )));
    }
    check_wavefunction_norm(psi, spec.q_step(), "the wavefunction")?;
    let n_q = spec.n_q;
    let n_p = spec.n_p;
    let dq = spec.q_step();

    // phase[j * n_q + k] = e^{-i (2k dq) p_j / hbar}, the ξ = 2k dq mode
    let mut phase = vec![Complex64::default(); n_p * n_q];
    for j in 0..n_p {
        let p = spec.p_at(j);
        for k in 0..n_q {
            phase[j * n_q + k] = Complex64::from_polar(1.0, -2.0 * k as f64 * dq * p / hbar);
        }
    }

    let scale = dq / (std::f64::consts::PI * hbar);
    let mut raw = vec![Complex64::default(); n_q * n_p];
    raw.par_chunks_mut(n_p).enumerate().for_each(|(i, row)| {
        let reach = i.min(n_q - 1 - i);
        for (j, slot) in row.iter_mut().enumerate() {
            let ph = &phase[j * n_q..j * n_q + n_q];
            let mut acc = psi[i].conj() * psi[i];
            for k in 1..=reach {
                let weight = if k == reach { 0.5 } else { 1.0 };
                let forward = psi[i + k].conj() * psi[i - k] * ph[k];
                let backward = psi[i - k].conj() * psi[i + k] * ph[k].conj();
                acc += (forward + backward) * weight;
            }
            *slot = acc * scale;
        }
    });

    finish_transform(spec, hbar, raw, "position-side transform")
}

/// The momentum-space samples of `psi` on the `p`-axis of `spec`,
/// `φ(p) = (2πħ)^{-1/2} ∫ dq ψ(q) e^{+iqp/ħ}`, by direct quadrature.
///
/// The kernel sign is the one that makes the two transform routes agree;
/// it mirrors the sign conventions used throughout the star product.
pub fn momentum_representation(
    spec: &GridSpec,
    hbar: f64,
    psi: &[Complex64],
) -> Result<Vec<Complex64>> {
    spec.validate()?;
    if psi.len() != spec.n_q {
        return Err(Error::domain(format!(
            "expected {} wavefunction samples on the q-axis, got {}",
            spec.n_q,
            psi.len()
        )));
    }
    let dq = spec.q_step();
    let norm = dq / (2.0 * std::f64::consts::PI * hbar).sqrt();
    let out = (0..spec.n_p)
        .into_par_iter()
        .map(|j| {
            let p = spec.p_at(j);
            let mut acc = Complex64::default();
            for (i, v) in psi.iter().enumerate() {
                let w = trapezoid_weight(i, spec.n_q);
                acc += v * Complex64::from_polar(w, spec.q_at(i) * p / hbar);
            }
            acc * norm
        })
        .collect();
    Ok(out)
}

/// The Wigner transform evaluated from momentum-space samples `phi` on the
/// `p`-axis:
///
/// ```text
/// W(q, p) = (1/2πħ) ∫ dη  conj(φ)(p + η/2) φ(p − η/2) e^{+iηq/ħ} ,
/// ```
///
/// the equivalent companion of the position-side formula.
pub fn wigner_from_momentum_wavefunction(
    spec: GridSpec,
    hbar: f64,
    phi: &[Complex64],
) -> Result<WignerState> {
    spec.validate()?;
    if phi.len() != spec.n_p {
        return Err(Error::domain(format!(
            "expected {} wavefunction samples on the p-axis, got {}",
            spec.n_p,
            phi.len()
        )));
    }
    check_wavefunction_norm(phi, spec.p_step(), "the momentum wavefunction")?;
    let n_q = spec.n_q;
    let n_p = spec.n_p;
    let dp = spec.p_step();

    // phase[i * n_p + k] = e^{+i (2k dp) q_i / hbar}
    let mut phase = vec![Complex64::default(); n_q * n_p];
    for i in 0..n_q {
        let q = spec.q_at(i);
        for k in 0..n_p {
            phase[i * n_p + k] = Complex64::from_polar(1.0, 2.0 * k as f64 * dp * q / hbar);
        }
    }

    let scale = dp / (std::f64::consts::PI * hbar);
    let mut raw = vec![Complex64::default(); n_q * n_p];
    raw.par_chunks_mut(n_p).enumerate().for_each(|(i, row)| {
        let ph = &phase[i * n_p..i * n_p + n_p];
        for (j, slot) in row.iter_mut().enumerate() {
            let reach = j.min(n_p - 1 - j);
            let mut acc = phi[j].conj() * phi[j];
            for k in 1..=reach {
                let weight = if k == reach { 0.5 } else { 1.0 };
                let forward = phi[j + k].conj() * phi[j - k] * ph[k];
                let backward = phi[j - k].conj() * phi[j + k] * ph[k].conj();
                acc += (forward + backward) * weight;
            }
            *slot = acc * scale;
        }
    });

    finish_transform(spec, hbar, raw, "momentum-side transform")
}

fn finish_transform(
    spec: GridSpec,
    hbar: f64,
    raw: Vec<Complex64>,
    label: &str,
) -> Result<WignerState> {
    let residue = raw.iter().map(|v| v.im.abs()).fold(0.0f64, f64::max);
    if residue > 1e-10 {
        return Err(Error::numeric_check(format!(
            "{label} left an imaginary residue of {residue:.3e}; \
             the input cannot be a consistently sampled wavefunction"
        )));
    }
    let values = GridFunction::new(spec, hbar, raw.into_iter().map(|v| v.re).collect())?;
    let mass = values.integral();
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::numeric_check(format!(
            "{label} has phase-space mass {mass}; the wavefunction does not \
             decay inside the grid"
        )));
    }
    Ok(WignerState {
        values,
        provenance: Provenance::FromWavefunction,
    })
}

/// Outcome of the five necessary checks.  Report only: a failed entry means
/// the state cannot be pure, a clean report proves nothing by itself.
#[derive(Clone, Copy, Debug)]
pub struct PropertyReport {
    /// Samples are real by representation; recorded for the report format.
    pub real: bool,
    /// `∫∫W` and whether it is within `1e-3` of one.
    pub mass: f64,
    pub mass_ok: bool,
    /// `∫∫W²` and whether `2πħ ∫∫W²` is within `1e-3` of one.
    pub l2: f64,
    pub l2_ok: bool,
    /// `sup|W|` and the bound `|W| ≤ 1/(πħ)` with `1e-6` slack.
    pub sup: f64,
    pub bound_ok: bool,
    /// Largest adjacent-sample jump relative to `sup|W|`.  A grid can only
    /// see continuity heuristically; the `0.75` threshold flags
    /// sample-to-sample oscillation (sign-alternating noise reaches 2),
    /// while smooth reference states stay below about 0.4 at the coarsest
    /// supported resolution.
    pub max_jump: f64,
    pub continuity_ok: bool,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.real && self.mass_ok && self.l2_ok && self.bound_ok && self.continuity_ok
    }
}

/// Run the five necessary pure-state checks on a candidate.
pub fn check_basic_properties(w: &WignerState) -> PropertyReport {
    let g = w.values();
    let spec = g.spec();
    let hbar = g.hbar();
    let mass = g.integral();
    let l2 = g.l2_integral();
    let sup = g.sup_norm();
    let mut max_jump = 0.0f64;
    let vals = g.values();
    for i in 0..spec.n_q {
        for j in 0..spec.n_p {
            let v = vals[i * spec.n_p + j];
            if i + 1 < spec.n_q {
                max_jump = max_jump.max((vals[(i + 1) * spec.n_p + j] - v).abs());
            }
            if j + 1 < spec.n_p {
                max_jump = max_jump.max((vals[i * spec.n_p + j + 1] - v).abs());
            }
        }
    }
    let bound = 1.0 / (std::f64::consts::PI * hbar);
    let relative_jump = if sup > 0.0 { max_jump / sup } else { 0.0 };
    PropertyReport {
        real: true,
        mass,
        mass_ok: (mass - 1.0).abs() <= 1e-3,
        l2,
        l2_ok: (2.0 * std::f64::consts::PI * hbar * l2 - 1.0).abs() <= 1e-3,
        sup,
        bound_ok: sup <= bound * (1.0 + 1e-6),
        max_jump: relative_jump,
        continuity_ok: relative_jump <= 0.75,
    }
}

/// Result of the star-square criterion.
#[derive(Clone, Copy, Debug)]
pub struct IdempotenceCheck {
    /// `‖2πħ (W ∗ W) − W‖_∞ / ‖W‖_∞`.
    pub defect: f64,
    pub pure: bool,
    /// Boundary mass seen by the star product; large values mean the grid
    /// clipped the state and the defect is not trustworthy.
    pub boundary_ratio: f64,
}

/// Star-square criterion at the default threshold `1e-4`: a normalized real
/// `W` is pure exactly when `W ∗ W = W/(2πħ)`.
pub fn purity_idempotence(w: &WignerState) -> Result<IdempotenceCheck> {
    purity_idempotence_with(w, 1e-4)
}

/// Star-square criterion with a caller-chosen defect threshold.
pub fn purity_idempotence_with(w: &WignerState, threshold: f64) -> Result<IdempotenceCheck> {
    let g = w.values();
    let mass = g.integral();
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::domain(format!(
            "the idempotence criterion applies to normalized states; mass is {mass}"
        )));
    }
    let star = moyal::star_integral(g, g)?;
    let two_pi_hbar = 2.0 * std::f64::consts::PI * g.hbar();
    let sup = g.sup_norm();
    let defect = star
        .re
        .values()
        .iter()
        .zip(g.values())
        .map(|(s, v)| (two_pi_hbar * s - v).abs())
        .fold(0.0f64, f64::max)
        / sup;
    Ok(IdempotenceCheck {
        defect,
        pure: defect < threshold,
        boundary_ratio: star.boundary_ratio,
    })
}

/// The position kernel `ϱ(q₁, q₂)` of the state, row-major `n_q × n_q`
/// with `ϱ[i·n_q + j] = ϱ(q_i, q_j)`.
pub fn density_matrix(w: &WignerState) -> Vec<Complex64> {
    let two_pi_hbar = 2.0 * std::f64::consts::PI * w.hbar();
    moyal::weyl_kernel(w.values())
        .into_iter()
        .map(|v| v * two_pi_hbar)
        .collect()
}

/// Result of the factorization criterion.
#[derive(Clone, Debug)]
pub struct FactorizationCheck {
    /// Ratio of the second to the largest singular value of the sampled
    /// `ϱ`; a rank-one kernel has ratio zero.
    pub sigma_ratio: f64,
    pub pure: bool,
    /// `max|ϱ(q₁,q₂) − conj(ϱ)(q₂,q₁)|` relative to `max|ϱ|`.
    pub hermiticity_defect: f64,
    /// The rank-one factor `F` with `ϱ ≈ F(q₁)·conj(F)(q₂)`, phase fixed so
    /// `F` is real positive at the marginal's maximum.  Meaningful only
    /// when `pure` holds.
    pub factor: Vec<Complex64>,
}

/// Factorization criterion at the default threshold `1e-5` on the
/// singular-value ratio.
pub fn purity_factorization(w: &WignerState) -> Result<FactorizationCheck> {
    purity_factorization_with(w, 1e-5)
}

/// Factorization criterion with a caller-chosen singular-value threshold.
pub fn purity_factorization_with(
    w: &WignerState,
    threshold: f64,
) -> Result<FactorizationCheck> {
    let g = w.values();
    let mass = g.integral();
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::domain(format!(
            "the factorization criterion applies to normalized states; mass is {mass}"
        )));
    }
    let report = check_basic_properties(w);
    if !report.continuity_ok {
        return Err(Error::domain(format!(
            "the sampled state jumps by {:.3} of its sup between neighbors; \
             the kernel of such a state is not resolved on this grid",
            report.max_jump
        )));
    }
    let n = g.spec().n_q;
    let rho = density_matrix(w);

    let peak = rho.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Err(Error::domain("the position kernel is identically zero"));
    }
    let mut hermiticity = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            hermiticity = hermiticity.max((rho[i * n + j] - rho[j * n + i].conj()).norm());
        }
    }
    let hermiticity_defect = hermiticity / peak;

    // Singular values through the real 2n × 2n embedding [[Re, -Im], [Im, Re]];
    // each singular value of the complex matrix appears twice, so the rank
    // test reads the first and third entries of the sorted list.
    let embedded = DMatrix::<f64>::from_fn(2 * n, 2 * n, |r, c| {
        let v = rho[(r % n) * n + (c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    });
    let mut sigma: Vec<f64> = embedded.svd(false, false).singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    let sigma_ratio = sigma[2] / sigma[0];

    let factor = rank_one_factor(&rho, g.spec())?;
    Ok(FactorizationCheck {
        sigma_ratio,
        pure: sigma_ratio < threshold,
        hermiticity_defect,
        factor,
    })
}

/// Rank-one factor by the column construction: pick `q₀` maximizing the
/// marginal `ϱ(q, q)`, set `F(q₀) = sqrt(marginal)` with zero phase, and
/// read off `F(q) = ϱ(q, q₀)/conj(F)(q₀)`.
fn rank_one_factor(rho: &[Complex64], spec: &GridSpec) -> Result<Vec<Complex64>> {
    let n = spec.n_q;
    let mut anchor = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let diag = rho[i * n + i].re;
        if diag > best {
            best = diag;
            anchor = i;
        }
    }
    if best <= 0.0 {
        return Err(Error::domain(
            "the position marginal has no positive maximum; no factor exists",
        ));
    }
    let amplitude = best.sqrt();
    Ok((0..n).map(|i| rho[i * n + anchor] / amplitude).collect())
}

/// A wavefunction recovered from a pure state's kernel.
#[derive(Clone, Debug)]
pub struct ExtractedWavefunction {
    /// Samples on the grid's `q`-axis, phase fixed at the marginal maximum.
    pub samples: Vec<Complex64>,
    /// `∫|F|² dq` on the grid.
    pub norm: f64,
    /// Whether the norm landed within `1e-4` of one.
    pub valid: bool,
}

/// Recover the wavefunction of a state that passed the factorization
/// criterion.  Errors when the state is not pure by that test.
pub fn extract_wavefunction(w: &WignerState) -> Result<ExtractedWavefunction> {
    let check = purity_factorization(w)?;
    if !check.pure {
        return Err(Error::domain(format!(
            "wavefunction extraction requires a pure state; singular-value \
             ratio is {:.3e}",
            check.sigma_ratio
        )));
    }
    let samples = check.factor;
    let n = samples.len();
    let dq = w.spec().q_step();
    let norm: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, v)| trapezoid_weight(i, n) * v.norm_sqr())
        .sum::<f64>()
        * dq;
    Ok(ExtractedWavefunction {
        samples,
        valid: (norm - 1.0).abs() <= 1e-4,
        norm,
    })
}

/// Which printed form of the cosine phase the literal quadrature uses.
/// The two are algebraically identical; evaluating both guards the
/// bracket expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosineForm {
    /// `(q′−q)(p″−p) − (q″−q)(p′−p)`.
    ExpandedBracket,
    /// The cyclic triple of cross products,
    /// `q′p″ − p′q″ + qp′ − pq′ + q″p − p″q`.
    VectorProduct,
}

/// Literal four-fold quadrature of the real purity integral,
///
/// ```text
/// (2/πħ) ∫∫∫∫ W(q′,p′) W(q″,p″) cos[(2/ħ)·phase] dq′dp′dq″dp″ ,
/// ```
///
/// which equals `2πħ·(W ∗ W)` for real `W` (the imaginary part of the
/// complex form cancels).  Returned per requested grid point.  The cost is
/// quartic in the grid side; this is a cross-check for the kernel pipeline,
/// not a production path.
pub fn star_square_direct(
    w: &WignerState,
    points: &[(usize, usize)],
    form: CosineForm,
) -> Result<Vec<f64>> {
    let g = w.values();
    let spec = g.spec();
    let (n_q, n_p) = (spec.n_q, spec.n_p);
    let hbar = g.hbar();
    let vals = g.values();
    let measure = spec.q_step() * spec.p_step();
    let qs: Vec<f64> = (0..n_q).map(|i| spec.q_at(i)).collect();
    let ps: Vec<f64> = (0..n_p).map(|j| spec.p_at(j)).collect();
    let mut out = Vec::with_capacity(points.len());
    for &(pi, pj) in points {
        if pi >= n_q || pj >= n_p {
            return Err(Error::domain(format!(
                "sample point ({pi}, {pj}) is outside the {n_q} x {n_p} grid"
            )));
        }
        let (q, p) = (qs[pi], ps[pj]);
        let total: f64 = (0..n_q)
            .into_par_iter()
            .map(|i1| {
                let q1 = qs[i1];
                let wq1 = trapezoid_weight(i1, n_q);
                let mut acc = 0.0;
                for j1 in 0..n_p {
                    let a = vals[i1 * n_p + j1];
                    if a == 0.0 {
                        continue;
                    }
                    let p1 = ps[j1];
                    let w1 = wq1 * trapezoid_weight(j1, n_p) * a;
                    for i2 in 0..n_q {
                        let q2 = qs[i2];
                        let wq2 = trapezoid_weight(i2, n_q);
                        for j2 in 0..n_p {
                            let b = vals[i2 * n_p + j2];
                            if b == 0.0 {
                                continue;
                            }
                            let p2 = ps[j2];
                            let bracket = match form {
                                CosineForm::ExpandedBracket => {
                                    (q1 - q) * (p2 - p) - (q2 - q) * (p1 - p)
                                }
                                CosineForm::VectorProduct => {
                                    q1 * p2 - p1 * q2 + q * p1 - p * q1 + q2 * p - p2 * q
                                }
                            };
                            acc += w1
                                * wq2
                                * trapezoid_weight(j2, n_p)
                                * b
                                * (2.0 * bracket / hbar).cos();
                        }
                    }
                }
                acc
            })
            .sum();
        out.push(total * measure * measure * 2.0 / (std::f64::consts::PI * hbar));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::{hermite_wavefunction, wigner_eigenfunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const HBAR: f64 = 1.0;

    fn spec129() -> GridSpec {
        GridSpec::square(8.0, 129)
    }

    fn spec97() -> GridSpec {
        GridSpec::square(8.0, 97)
    }

    fn hermite_samples(n: u32, spec: &GridSpec, hbar: f64) -> Vec<Complex64> {
        let psi = hermite_wavefunction(n, hbar).unwrap();
        (0..spec.n_q)
            .map(|i| Complex64::new(psi.eval(spec.q_at(i)), 0.0))
            .collect()
    }

    fn eigenstate_grid(n: u32, spec: &GridSpec) -> GridFunction {
        wigner_eigenfunction(n, HBAR)
            .unwrap()
            .grid(spec.clone())
            .unwrap()
    }

    fn rel_sup_diff(a: &GridFunction, b: &GridFunction) -> f64 {
        let scale = b.sup_norm();
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
            / scale
    }

    /// `(1/(c πħ)) e^{-((q-q0)² + (p-p0)²)/(c ħ)}`: normalized for any
    /// `c ≥ 1`; pure exactly when `c = 1`.
    fn gaussian_grid(
        spec: &GridSpec,
        hbar: f64,
        c: f64,
        q0: f64,
        p0: f64,
    ) -> GridFunction {
        GridFunction::sample(spec.clone(), hbar, |q, p| {
            ((-(q - q0).powi(2) - (p - p0).powi(2)) / (c * hbar)).exp()
                / (c * std::f64::consts::PI * hbar)
        })
        .unwrap()
    }

    fn squeezed_grid(spec: &GridSpec, hbar: f64, s: f64) -> GridFunction {
        GridFunction::sample(spec.clone(), hbar, |q, p| {
            ((-q * q / (s * s) - s * s * p * p) / hbar).exp() / (std::f64::consts::PI * hbar)
        })
        .unwrap()
    }

    #[test]
    fn transform_reproduces_the_ground_state_gaussian() {
        let spec = spec129();
        let psi = hermite_samples(0, &spec, HBAR);
        let state = wigner_from_wavefunction(spec.clone(), HBAR, &psi).unwrap();
        assert_eq!(state.provenance(), Provenance::FromWavefunction);
        let exact = GridFunction::sample(spec, HBAR, |q, p| {
            (-(q * q + p * p) / HBAR).exp() / (std::f64::consts::PI * HBAR)
        })
        .unwrap();
        let diff = rel_sup_diff(state.values(), &exact);
        assert!(diff < 1e-6, "ground-state transform off by {diff:.3e}");
        assert!((state.values().integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn transform_matches_the_oscillator_eigenfunctions() {
        let spec = spec129();
        for n in 0..=3u32 {
            let psi = hermite_samples(n, &spec, HBAR);
            let state = wigner_from_wavefunction(spec.clone(), HBAR, &psi).unwrap();
            let closed = eigenstate_grid(n, &spec);
            let diff = rel_sup_diff(state.values(), &closed);
            assert!(diff < 1e-5, "n = {n}: transform vs closed form {diff:.3e}");
        }
    }

    #[test]
    fn momentum_route_agrees_with_the_position_route() {
        let spec = spec129();
        // a parity-mixed superposition so the two routes are not trivially
        // related by symmetry
        let a = hermite_samples(1, &spec, HBAR);
        let b = hermite_samples(2, &spec, HBAR);
        let psi: Vec<Complex64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x * 0.6 + y * 0.8)
            .collect();
        let position = wigner_from_wavefunction(spec.clone(), HBAR, &psi).unwrap();

        let phi = momentum_representation(&spec, HBAR, &psi).unwrap();
        // oracle for the pieces: this transform maps the n-th state to
        // i^n times itself
        let direct: Vec<Complex64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                x * Complex64::new(0.0, 1.0) * 0.6 + y * Complex64::new(-1.0, 0.0) * 0.8
            })
            .collect();
        let worst = phi
            .iter()
            .zip(&direct)
            .map(|(u, v)| (u - v).norm())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-8, "momentum representation off by {worst:.3e}");

        let momentum = wigner_from_momentum_wavefunction(spec, HBAR, &phi).unwrap();
        let diff = rel_sup_diff(momentum.values(), position.values());
        assert!(diff < 1e-6, "the two transform routes differ by {diff:.3e}");
    }

    #[test]
    fn transform_rejects_bad_input() {
        let spec = spec129();
        let mut psi = hermite_samples(0, &spec, HBAR);
        assert!(wigner_from_wavefunction(spec.clone(), HBAR, &psi[1..]).is_err());
        for v in psi.iter_mut() {
            *v *= 1.01;
        }
        let err = wigner_from_wavefunction(spec, HBAR, &psi).unwrap_err();
        assert!(err.to_string().contains("normalized"), "{err}");
    }

    #[test]
    fn property_report_flags_the_textbook_failures() {
        let spec = spec97();
        let bound = 1.0 / (std::f64::consts::PI * HBAR);

        let w0 = WignerState::constructed(eigenstate_grid(0, &spec));
        let report = check_basic_properties(&w0);
        assert!(report.all_pass(), "{report:?}");
        // the ground state saturates the sup bound at the origin
        assert!((report.sup - bound).abs() < 1e-12 * bound);

        // equal mixture: normalized, but the squared integral drops to half
        // the pure value
        let mix = WignerState::constructed(
            eigenstate_grid(0, &spec)
                .zip_with(&eigenstate_grid(1, &spec), |a, b| 0.5 * (a + b))
                .unwrap(),
        );
        let report = check_basic_properties(&mix);
        assert!(report.mass_ok && !report.l2_ok);
        let scaled = 2.0 * std::f64::consts::PI * HBAR * report.l2;
        assert!((scaled - 0.5).abs() < 1e-6, "mixture 2πħ∫∫W² = {scaled}");

        // doubled state: mass check reports the factor
        let doubled =
            WignerState::candidate(eigenstate_grid(0, &spec).map(|v| 2.0 * v).unwrap());
        let report = check_basic_properties(&doubled);
        assert!(!report.mass_ok && (report.mass - 2.0).abs() < 1e-6);
        assert!(!report.bound_ok);
    }

    #[test]
    fn idempotence_accepts_the_eigenstates() {
        let spec = spec97();
        for n in 0..=3u32 {
            let state = WignerState::constructed(eigenstate_grid(n, &spec));
            let check = purity_idempotence(&state).unwrap();
            assert!(
                check.pure && check.defect < 1e-4,
                "n = {n}: defect {:.3e}",
                check.defect
            );
            assert!(check.boundary_ratio < 1e-10);
        }
    }

    #[test]
    fn idempotence_rejects_mixtures_with_the_predicted_defect() {
        let spec = spec97();
        // equal mixture: 2πħ (W ∗ W) = (W₀ + W₁)/4, giving defect 1/2
        let mix = WignerState::constructed(
            eigenstate_grid(0, &spec)
                .zip_with(&eigenstate_grid(1, &spec), |a, b| 0.5 * (a + b))
                .unwrap(),
        );
        let check = purity_idempotence(&mix).unwrap();
        assert!(!check.pure);
        assert!(
            (check.defect - 0.5).abs() < 1e-3,
            "mixture defect {:.5}",
            check.defect
        );

        // doubled-variance Gaussian: star-square is again Gaussian with
        // width 1/0.8 and weight 0.8, so the defect peaks near 0.25
        let thermal = WignerState::constructed(gaussian_grid(&spec, HBAR, 2.0, 0.0, 0.0));
        let check = purity_idempotence(&thermal).unwrap();
        assert!(!check.pure && check.defect > 0.2, "defect {:.3}", check.defect);
        let star = moyal::star_integral(thermal.values(), thermal.values()).unwrap();
        let two_pi_hbar = 2.0 * std::f64::consts::PI * HBAR;
        let oracle = GridFunction::sample(spec, HBAR, |q, p| {
            0.8 * (-(q * q + p * p) * 0.8 / HBAR).exp() / (two_pi_hbar)
        })
        .unwrap();
        let scaled = star.re.map(|v| two_pi_hbar * v).unwrap();
        let diff = rel_sup_diff(&scaled, &oracle);
        assert!(diff < 1e-4, "thermal star-square vs oracle {diff:.3e}");
    }

    #[test]
    fn factorization_accepts_the_eigenstates_with_hermite_factors() {
        let spec = spec97();
        for n in 0..=3u32 {
            let state = WignerState::constructed(eigenstate_grid(n, &spec));
            let check = purity_factorization(&state).unwrap();
            assert!(
                check.pure && check.sigma_ratio < 1e-5,
                "n = {n}: sigma ratio {:.3e}",
                check.sigma_ratio
            );
            assert!(check.hermiticity_defect < 1e-8);

            // the factor is the Hermite function up to the sign fixed at the
            // marginal's maximum
            let psi = hermite_wavefunction(n, HBAR).unwrap();
            let mut anchor = 0;
            let mut best = f64::NEG_INFINITY;
            let marg: Vec<f64> = (0..spec.n_q)
                .map(|i| psi.eval(spec.q_at(i)).powi(2))
                .collect();
            for (i, &m) in marg.iter().enumerate() {
                if m > best {
                    best = m;
                    anchor = i;
                }
            }
            let align = psi.eval(spec.q_at(anchor)).signum();
            let sup = marg.iter().cloned().fold(0.0f64, f64::max).sqrt();
            let worst = (0..spec.n_q)
                .map(|i| {
                    let want = align * psi.eval(spec.q_at(i));
                    (check.factor[i].re - want).hypot(check.factor[i].im)
                })
                .fold(0.0f64, f64::max);
            assert!(
                worst < 1e-4 * sup,
                "n = {n}: factor deviates by {worst:.3e} of {sup:.3e}"
            );
        }
    }

    #[test]
    fn diagonal_of_the_kernel_is_the_position_marginal() {
        let spec = spec97();
        let state = WignerState::constructed(eigenstate_grid(0, &spec));
        let rho = density_matrix(&state);
        let n = spec.n_q;
        let dp = spec.p_step();
        for i in (0..n).step_by(8) {
            let marginal: f64 = (0..spec.n_p)
                .map(|j| {
                    trapezoid_weight(j, spec.n_p) * state.values().value(i, j) * dp
                })
                .sum();
            let diag = rho[i * n + i];
            assert!(diag.im.abs() < 1e-12);
            assert!(
                (diag.re - marginal).abs() < 1e-10,
                "row {i}: {} vs {marginal}",
                diag.re
            );
            assert!(marginal >= -1e-12);
        }
    }

    #[test]
    fn factorization_rejects_the_equal_mixture() {
        let spec = spec97();
        let mix = WignerState::constructed(
            eigenstate_grid(0, &spec)
                .zip_with(&eigenstate_grid(1, &spec), |a, b| 0.5 * (a + b))
                .unwrap(),
        );
        let check = purity_factorization(&mix).unwrap();
        assert!(!check.pure);
        // equal weights: the two occupied directions carry the same
        // singular value
        assert!(
            (check.sigma_ratio - 1.0).abs() < 1e-3,
            "sigma ratio {:.5}",
            check.sigma_ratio
        );
        assert!(extract_wavefunction(&mix).is_err());
    }

    #[test]
    fn extraction_round_trips_through_the_transform() {
        let spec = spec129();
        for n in [0u32, 1, 2] {
            let state = WignerState::constructed(eigenstate_grid(n, &spec));
            let extracted = extract_wavefunction(&state).unwrap();
            assert!(
                extracted.valid,
                "n = {n}: extracted norm {}",
                extracted.norm
            );
            // renormalize to kill the quadrature-level mass drift before
            // feeding the samples back in
            let scale = extracted.norm.sqrt().recip();
            let psi: Vec<Complex64> =
                extracted.samples.iter().map(|v| v * scale).collect();
            let rebuilt = wigner_from_wavefunction(spec.clone(), HBAR, &psi).unwrap();
            let diff = rel_sup_diff(rebuilt.values(), state.values());
            assert!(diff < 1e-4, "n = {n}: round trip off by {diff:.3e}");
        }
    }

    #[test]
    fn extraction_recovers_the_first_two_hermite_states() {
        let spec = spec129();
        for n in [0u32, 1] {
            let state = WignerState::constructed(eigenstate_grid(n, &spec));
            let extracted = extract_wavefunction(&state).unwrap();
            let psi = hermite_wavefunction(n, HBAR).unwrap();
            let samples: Vec<f64> = (0..spec.n_q).map(|i| psi.eval(spec.q_at(i))).collect();
            let sup = samples.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
            // align the free global sign at the largest oracle sample
            let anchor = samples
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0;
            let align = (samples[anchor] * extracted.samples[anchor].re).signum();
            let worst = samples
                .iter()
                .zip(&extracted.samples)
                .map(|(want, got)| (align * got.re - want).hypot(got.im))
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-5 * sup, "n = {n}: deviation {worst:.3e}");
        }
    }

    #[test]
    fn the_two_criteria_agree_on_a_mixed_corpus() {
        let spec = spec97();
        let mut corpus: Vec<(String, WignerState, bool)> = Vec::new();
        for n in 0..=3u32 {
            corpus.push((
                format!("eigenstate {n}"),
                WignerState::constructed(eigenstate_grid(n, &spec)),
                true,
            ));
        }
        for (q0, p0) in [(1.0, 0.0), (0.5, -0.5), (-0.8, 0.3), (1.2, 0.9)] {
            corpus.push((
                format!("coherent ({q0}, {p0})"),
                WignerState::constructed(gaussian_grid(&spec, HBAR, 1.0, q0, p0)),
                true,
            ));
        }
        for s in [0.8, 1.2, 1.5] {
            corpus.push((
                format!("squeezed {s}"),
                WignerState::constructed(squeezed_grid(&spec, HBAR, s)),
                true,
            ));
        }
        for c in [1.5, 2.0, 2.5, 3.0] {
            corpus.push((
                format!("thermal {c}"),
                WignerState::constructed(gaussian_grid(&spec, HBAR, c, 0.0, 0.0)),
                false,
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let m = rng.gen_range(0..4u32);
            let mut n = rng.gen_range(0..4u32);
            while n == m {
                n = rng.gen_range(0..4u32);
            }
            let lambda = rng.gen_range(0.25..0.75);
            let grid = eigenstate_grid(m, &spec)
                .zip_with(&eigenstate_grid(n, &spec), |a, b| {
                    lambda * a + (1.0 - lambda) * b
                })
                .unwrap();
            corpus.push((
                format!("mixture {lambda:.2}·W{m} + …·W{n}"),
                WignerState::constructed(grid),
                false,
            ));
        }
        assert_eq!(corpus.len(), 20);
        for (name, state, expect_pure) in &corpus {
            let idem = purity_idempotence(state).unwrap();
            let fact = purity_factorization(state).unwrap();
            assert_eq!(
                idem.pure, *expect_pure,
                "{name}: idempotence defect {:.3e}",
                idem.defect
            );
            assert_eq!(
                fact.pure, *expect_pure,
                "{name}: sigma ratio {:.3e}",
                fact.sigma_ratio
            );
        }
    }

    #[test]
    fn random_superpositions_pass_every_check() {
        let spec = spec129();
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let modes: Vec<Vec<Complex64>> =
            (0..6).map(|n| hermite_samples(n, &spec, HBAR)).collect();
        for _ in 0..3 {
            let coeffs: Vec<Complex64> = (0..6)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut psi = vec![Complex64::default(); spec.n_q];
            for (c, mode) in coeffs.iter().zip(&modes) {
                for (slot, v) in psi.iter_mut().zip(mode) {
                    *slot += c * v;
                }
            }
            let norm: f64 = psi
                .iter()
                .enumerate()
                .map(|(i, v)| trapezoid_weight(i, spec.n_q) * v.norm_sqr())
                .sum::<f64>()
                * spec.q_step();
            let scale = norm.sqrt().recip();
            for v in psi.iter_mut() {
                *v *= scale;
            }
            let state = wigner_from_wavefunction(spec.clone(), HBAR, &psi).unwrap();
            let report = check_basic_properties(&state);
            assert!(report.all_pass(), "{report:?}");
            let idem = purity_idempotence(&state).unwrap();
            assert!(idem.pure, "defect {:.3e}", idem.defect);
            let fact = purity_factorization(&state).unwrap();
            assert!(fact.pure, "sigma ratio {:.3e}", fact.sigma_ratio);
        }
    }

    #[test]
    fn cosine_quadrature_forms_agree_and_match_the_kernel_path() {
        let hbar = 2.0;
        let spec = GridSpec::square(6.0, 65);
        let states = [
            WignerState::constructed(gaussian_grid(&spec, hbar, 1.0, 0.0, 0.0)),
            WignerState::constructed(gaussian_grid(&spec, hbar, 1.0, 0.8, -0.4)),
            WignerState::constructed(gaussian_grid(&spec, hbar, 2.0, 0.0, 0.0)),
        ];
        let points = [(32usize, 32usize), (24, 36)];
        for state in &states {
            let expanded =
                star_square_direct(state, &points, CosineForm::ExpandedBracket).unwrap();
            let vectorial =
                star_square_direct(state, &points, CosineForm::VectorProduct).unwrap();
            for (a, b) in expanded.iter().zip(&vectorial) {
                assert!(
                    (a - b).abs() <= 1e-8 * a.abs().max(1e-12),
                    "cosine forms disagree: {a} vs {b}"
                );
            }
            let star = moyal::star_integral(state.values(), state.values()).unwrap();
            let two_pi_hbar = 2.0 * std::f64::consts::PI * hbar;
            let sup = state.values().sup_norm();
            for (&(i, j), direct) in points.iter().zip(&expanded) {
                let kernel_path = two_pi_hbar * star.re.value(i, j);
                assert!(
                    (direct - kernel_path).abs() <= 1e-3 * sup,
                    "literal quadrature {direct:.6e} vs kernel {kernel_path:.6e}"
                );
            }
        }
    }

    #[test]
    fn unnormalized_states_are_turned_away() {
        let spec = spec97();
        let doubled =
            WignerState::candidate(eigenstate_grid(0, &spec).map(|v| 2.0 * v).unwrap());
        assert!(purity_idempotence(&doubled).is_err());
        assert!(purity_factorization(&doubled).is_err());
    }
}
