//! Scalar numerics shared by the chart builders and the quadrature-based
//! checks: adaptive Gauss–Kronrod integration, bracketed root finding, and
//! finite-difference derivatives.

use crate::error::{Error, Result};

/// 15-point Kronrod abscissae (positive half), embedding the 7-point Gauss
/// rule at the odd positions.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn kronrod_segment<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let fsum = f(center - x) + f(center + x);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Adaptive quadrature of `f` over `[a, b]` by bisecting the segment with
/// the largest Kronrod error estimate until the total estimate satisfies
/// `max(abs_tol, rel_tol * |integral|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("quadrature limits must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    struct Seg {
        a: f64,
        b: f64,
        value: f64,
        err: f64,
    }
    // Seed with several segments so moderately localized features are
    // sampled before the error test can declare convergence.
    let mut segments = Vec::with_capacity(16);
    for i in 0..16 {
        let sa = a + (b - a) * (i as f64) / 16.0;
        let sb = a + (b - a) * ((i + 1) as f64) / 16.0;
        let (value, err) = kronrod_segment(&f, sa, sb);
        segments.push(Seg {
            a: sa,
            b: sb,
            value,
            err,
        });
    }
    for _ in 0..2000 {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let total_err: f64 = segments.iter().map(|s| s.err).sum();
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            if !total.is_finite() {
                return Err(Error::domain("quadrature produced a non-finite value"));
            }
            return Ok(total);
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .unwrap();
        let Seg { a, b, .. } = segments.swap_remove(worst);
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            return Err(Error::domain(
                "quadrature segment collapsed below floating-point resolution",
            ));
        }
        let (v1, e1) = kronrod_segment(&f, a, mid);
        let (v2, e2) = kronrod_segment(&f, mid, b);
        segments.push(Seg {
            a,
            b: mid,
            value: v1,
            err: e1,
        });
        segments.push(Seg {
            a: mid,
            b,
            value: v2,
            err: e2,
        });
    }
    Err(Error::domain(
        "quadrature failed to converge within the subdivision budget",
    ))
}

/// Root of `f` inside `[lo, hi]` by bisection down to an interval of width
/// `tol`.  The endpoints must bracket a sign change.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::domain(format!(
            "root not bracketed on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Step size for finite differences, scaled to the magnitude of the point.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// Fourth-order central first derivative with the default step rule.
pub fn central_derivative<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = fd_step(x);
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// Second-order central first derivative with a caller-chosen step; used
/// when each evaluation of `f` carries its own noise floor and the step must
/// be balanced against it.
pub fn central_derivative_with_step<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central second derivative with a caller-chosen step.
pub fn second_derivative_with_step<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_integrals_are_exact() {
        let v = integrate(|x| x * x, 0.0, 1.0, 1e-12, 1e-14).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
        let v = integrate(|x| x.powi(9) - 3.0 * x.powi(4), -1.0, 2.0, 1e-12, 1e-14).unwrap();
        let exact = (2f64.powi(10) - 1.0) / 10.0 - 3.0 * (2f64.powi(5) + 1.0) / 5.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn smooth_transcendental_integrals() {
        let v = integrate(f64::sin, 0.0, std::f64::consts::PI, 1e-13, 1e-15).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let v = integrate(f64::exp, 0.0, 1.0, 1e-13, 1e-15).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn adaptive_refinement_handles_narrow_peak() {
        // a Gaussian of width 0.05 inside a wide window
        let v = integrate(
            |x| (-((x - 0.3) / 0.05).powi(2)).exp(),
            -10.0,
            10.0,
            1e-12,
            1e-16,
        )
        .unwrap();
        let exact = 0.05 * std::f64::consts::PI.sqrt();
        assert!((v - exact).abs() < 1e-13, "got {v}, want {exact}");
        // sharp exponential decay from an endpoint, the Laguerre-weight shape
        let hbar = 0.05;
        let v = integrate(|h| (-2.0 * h / hbar).exp(), 0.0, 20.0, 1e-12, 1e-16).unwrap();
        assert!(((v - hbar / 2.0) / (hbar / 2.0)).abs() < 1e-11, "got {v}");
    }

    #[test]
    fn integrable_endpoint_singularity_after_substitution() {
        // 1/sqrt(1-z) over [0,1] via z = 1 - s^2, the turning-point pattern
        let v = integrate(|_| 2.0, 0.0, 1.0, 1e-12, 1e-14).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        // same integral with a smooth extra factor
        let v = integrate(
            |s| 2.0 * (1.0 - s * s).cos(),
            0.0,
            1.0,
            1e-12,
            1e-14,
        )
        .unwrap();
        let reference = integrate(
            |z| z.cos() / (1.0 - z).sqrt(),
            0.0,
            1.0 - 1e-12,
            1e-9,
            1e-12,
        )
        .unwrap();
        assert!((v - reference).abs() < 1e-5);
    }

    #[test]
    fn bisection_finds_cosine_root() {
        let r = bisect(f64::cos, 0.0, 2.0, 1e-13).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn central_derivative_accuracy() {
        let d = central_derivative(f64::sin, 1.0);
        assert!((d - 1f64.cos()).abs() < 1e-9);
        let d = central_derivative(|x| x.powi(3), 2.0);
        assert!((d - 12.0).abs() < 1e-7);
    }
}
