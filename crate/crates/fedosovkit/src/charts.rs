//! Canonical coordinate charts: the closed-form oscillator and planar polar
//! charts, and the time–energy chart built numerically from a confining
//! potential.
//!
//! A `ChartMap` carries the transformation in both directions, each either
//! as symbolic expressions or as a numeric routine.  Every chart produced
//! here is canonical: its Jacobian `J` satisfies `Jᵀ Ω J = Ω` at regular
//! points, which `canonicity_defect` measures.
//!
//! Time–energy conventions: `H` is the Hamiltonian value and `T` is the
//! time of flight along the Hamiltonian flow, counted from the right
//! turning point (where the closed-form oscillator chart has `q = √(2H)`,
//! `p = 0`).  `T` grows monotonically over a full period, so the lower
//! branch `p < 0` comes first; this removes the sign discontinuity of the
//! two-branch arrival-time formula while agreeing with it on each branch.

use crate::connection::{flat_pushforward, omega_lower, Frame, SymplecticConnection};
use crate::error::{Error, Result};
use crate::expr::{parse_expr, CoordNames, OpaqueFamily, ScalarExpr};
use crate::numeric;
use num::BigRational;
use std::fmt;
use std::sync::Arc;

type NumericMap = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// One direction of a chart transformation.
#[derive(Clone)]
pub enum MapRoutine {
    /// Component expressions in the source chart's variables.
    Symbolic(Vec<ScalarExpr>),
    Numeric(NumericMap),
}

impl MapRoutine {
    fn apply(&self, point: &[f64]) -> Result<Vec<f64>> {
        match self {
            MapRoutine::Symbolic(exprs) => exprs
                .iter()
                .map(|e| e.evaluate_at(point, 1.0))
                .collect::<Result<Vec<f64>>>(),
            MapRoutine::Numeric(f) => f(point),
        }
    }
}

/// A canonical transformation between the flat chart and a curvilinear
/// Darboux chart, with enough structure to evaluate it, differentiate it,
/// and push the flat connection through it when a closed-form inverse
/// exists.
#[derive(Clone)]
pub struct ChartMap {
    name: String,
    dim: usize,
    source_names: CoordNames,
    target_names: CoordNames,
    forward: MapRoutine,
    inverse: MapRoutine,
    /// Source coordinates as expressions in the target variables, when the
    /// inverse has a closed form; drives the connection pushforward.
    source_of_target: Option<Vec<ScalarExpr>>,
    domain: String,
}

impl fmt::Debug for ChartMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ChartMap {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_names(&self) -> &CoordNames {
        &self.source_names
    }

    pub fn target_names(&self) -> &CoordNames {
        &self.target_names
    }

    /// Description of the excluded singular set.
    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// Map a flat-chart point into the chart.
    pub fn forward(&self, source: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(source)?;
        self.forward.apply(source)
    }

    /// Map a chart point back to the flat chart.
    pub fn inverse(&self, target: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(target)?;
        self.inverse.apply(target)
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                message: format!(
                    "chart `{}` expects {} coordinates, got {}",
                    self.name,
                    self.dim,
                    point.len()
                ),
            });
        }
        Ok(())
    }

    /// Source coordinates as expressions in the target variables, when the
    /// chart has a closed-form inverse.
    pub fn symbolic_source_of_target(&self) -> Option<&[ScalarExpr]> {
        self.source_of_target.as_deref()
    }

    /// Forward Jacobian `J[i][v] = dQ^i/dx^v` at a source point, by central
    /// differences on the forward routine.  Near a chart cut (an angle
    /// wrapping to zero) the stencil straddles the jump; evaluate at
    /// interior points.
    pub fn jacobian_forward(&self, source: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(source)?;
        let mut jac = vec![vec![0.0; self.dim]; self.dim];
        for v in 0..self.dim {
            let h = numeric::fd_step(source[v]);
            let eval = |offset: f64| -> Result<Vec<f64>> {
                let mut pt = source.to_vec();
                pt[v] += offset;
                self.forward.apply(&pt)
            };
            let m2 = eval(-2.0 * h)?;
            let m1 = eval(-h)?;
            let p1 = eval(h)?;
            let p2 = eval(2.0 * h)?;
            for i in 0..self.dim {
                jac[i][v] = (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) / (12.0 * h);
            }
        }
        Ok(jac)
    }

    /// Largest entry of `Jᵀ Ω J − Ω` at a regular point; zero for an exact
    /// canonical transformation.  Uses the symbolic inverse when available
    /// (machine precision), otherwise the finite-difference forward
    /// Jacobian.
    pub fn canonicity_defect(&self, source: &[f64]) -> Result<f64> {
        self.check_dim(source)?;
        let jac: Vec<Vec<f64>> = if let MapRoutine::Symbolic(exprs) = &self.inverse {
            // K[v][i] = dx^v/dQ^i at the image point; the inverse map is
            // canonical exactly when the forward map is.
            let target = self.forward.apply(source)?;
            let mut k = vec![vec![0.0; self.dim]; self.dim];
            for (v, e) in exprs.iter().enumerate() {
                for i in 0..self.dim {
                    k[v][i] = e.differentiate(i)?.evaluate_at(&target, 1.0)?;
                }
            }
            k
        } else {
            self.jacobian_forward(source)?
        };
        let mut defect: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = 0.0;
                for v in 0..self.dim {
                    for w in 0..self.dim {
                        let om = omega_lower(self.dim, v, w);
                        if om != 0 {
                            s += om as f64 * jac[v][i] * jac[w][j];
                        }
                    }
                }
                defect = defect.max((s - omega_lower(self.dim, i, j) as f64).abs());
            }
        }
        Ok(defect)
    }

    /// Push the flat connection through the chart.  Requires a closed-form
    /// inverse.
    pub fn connection(&self) -> Result<SymplecticConnection> {
        match &self.source_of_target {
            Some(exprs) => flat_pushforward(exprs),
            None => Err(Error::domain(format!(
                "chart `{}` has no closed-form inverse; build its connection \
                 from the potential instead",
                self.name
            ))),
        }
    }
}

/// The identity chart on canonical coordinates.
pub fn flat_chart_2d() -> ChartMap {
    let id = vec![ScalarExpr::var(0), ScalarExpr::var(1)];
    ChartMap {
        name: "flat2d".into(),
        dim: 2,
        source_names: CoordNames::new(&["q", "p"]),
        target_names: CoordNames::new(&["q", "p"]),
        forward: MapRoutine::Symbolic(id.clone()),
        inverse: MapRoutine::Symbolic(id.clone()),
        source_of_target: Some(id),
        domain: "entire plane".into(),
    }
}

/// The closed-form harmonic-oscillator chart `q = √(2H) cos T`,
/// `p = −√(2H) sin T`, defined for `H > 0`, `0 ≤ T < 2π`.
pub fn oscillator_chart() -> ChartMap {
    let t = ScalarExpr::var(0);
    let h = ScalarExpr::var(1);
    let amp = (ScalarExpr::int(2) * h).sqrt();
    let source_of_target = vec![amp.clone() * t.clone().cos(), -(amp * t.sin())];
    let forward: NumericMap = Arc::new(|pt: &[f64]| {
        let (q, p) = (pt[0], pt[1]);
        let h = 0.5 * (q * q + p * p);
        if h <= 1e-300 {
            return Err(Error::domain(
                "oscillator chart is singular at the origin (q, p) = (0, 0)",
            ));
        }
        let mut t = (-p).atan2(q);
        if t < 0.0 {
            t += 2.0 * std::f64::consts::PI;
        }
        Ok(vec![t, h])
    });
    ChartMap {
        name: "oscillatorTH".into(),
        dim: 2,
        source_names: CoordNames::new(&["q", "p"]),
        target_names: CoordNames::new(&["T", "H"]),
        forward: MapRoutine::Numeric(forward),
        inverse: MapRoutine::Symbolic(source_of_target.clone()),
        source_of_target: Some(source_of_target),
        domain: "H > 0, 0 <= T < 2*pi; singular at the origin".into(),
    }
}

/// The planar polar chart `(x, y, p_x, p_y) → (r, φ, p_r, L)` with
/// `L = x p_y − y p_x`; the symplectic form becomes `dr∧dp_r + dφ∧dL`.
pub fn polar_chart_4d() -> ChartMap {
    let r = ScalarExpr::var(0);
    let phi = ScalarExpr::var(1);
    let pr = ScalarExpr::var(2);
    let l = ScalarExpr::var(3);
    let source_of_target = vec![
        r.clone() * phi.clone().cos(),
        r.clone() * phi.clone().sin(),
        pr.clone() * phi.clone().cos() - l.clone() / r.clone() * phi.clone().sin(),
        pr * phi.clone().sin() + l / r * phi.cos(),
    ];
    let forward: NumericMap = Arc::new(|pt: &[f64]| {
        let (x, y, px, py) = (pt[0], pt[1], pt[2], pt[3]);
        let r = x.hypot(y);
        if r <= 1e-300 {
            return Err(Error::domain("polar chart is singular at r = 0"));
        }
        let mut phi = y.atan2(x);
        if phi < 0.0 {
            phi += 2.0 * std::f64::consts::PI;
        }
        Ok(vec![r, phi, (x * px + y * py) / r, x * py - y * px])
    });
    ChartMap {
        name: "polar4d".into(),
        dim: 4,
        source_names: CoordNames::new(&["x", "y", "px", "py"]),
        target_names: CoordNames::new(&["r", "phi", "pr", "L"]),
        forward: MapRoutine::Numeric(forward),
        inverse: MapRoutine::Symbolic(source_of_target.clone()),
        source_of_target: Some(source_of_target),
        domain: "r > 0, 0 <= phi < 2*pi".into(),
    }
}

/// Shared state of a numeric time–energy chart for one potential.
struct TimeEnergyMap {
    v: ScalarExpr,
    vp: ScalarExpr,
    vpp: ScalarExpr,
    vppp: ScalarExpr,
    mass: f64,
}

impl TimeEnergyMap {
    fn new(v: &ScalarExpr, mass: f64) -> Result<Self> {
        let vp = v.differentiate(0)?;
        let vpp = vp.differentiate(0)?;
        let vppp = vpp.differentiate(0)?;
        Ok(TimeEnergyMap {
            v: v.clone(),
            vp,
            vpp,
            vppp,
            mass,
        })
    }

    fn v_at(&self, q: f64) -> Result<f64> {
        self.v.evaluate_at(&[q, 0.0], 1.0)
    }

    fn vp_at(&self, q: f64) -> Result<f64> {
        self.vp.evaluate_at(&[q, 0.0], 1.0)
    }

    /// Turning points `q_left < q_right` of the energy shell through `q`,
    /// found by outward bracketing and bisection.  `q` must satisfy
    /// `V(q) ≤ e`.
    fn turning_points(&self, q: f64, e: f64) -> Result<(f64, f64)> {
        let root = |mut inside: f64, mut outside: f64| -> Result<f64> {
            for _ in 0..200 {
                if self.v_at(outside)? > e {
                    break;
                }
                let step = 2.0 * (outside - inside);
                inside = outside;
                outside += step;
            }
            if self.v_at(outside)? <= e {
                return Err(Error::domain(
                    "no turning point found; the potential does not confine this energy",
                ));
            }
            numeric::bisect(
                |z| self.v_at(z).map(|v| v - e).unwrap_or(f64::NAN),
                inside,
                outside,
                1e-12 * (1.0 + inside.abs().max(outside.abs())),
            )
        };
        let scale = 0.1 * (1.0 + q.abs());
        let q_right = root(q, q + scale)?;
        let q_left = root(q, q - scale)?;
        self.validate_shell(q_left, q_right, e)?;
        Ok((q_left, q_right))
    }

    /// The shell must be a single well: `V < e` strictly inside and the
    /// potential must actually slope at both ends.  A shell that touches
    /// the energy in its interior is a separatrix, where the time of
    /// arrival diverges.
    fn validate_shell(&self, q_left: f64, q_right: f64, e: f64) -> Result<()> {
        if !(q_left < q_right) {
            return Err(Error::domain("degenerate energy shell"));
        }
        for i in 1..256 {
            let z = q_left + (q_right - q_left) * (i as f64) / 256.0;
            if self.v_at(z)? - e >= -1e-12 * (1.0 + e.abs()) {
                return Err(Error::domain(
                    "time of arrival is infinite: the potential reaches the \
                     energy inside the well (peak in the window); cover this \
                     region with more than one chart",
                ));
            }
        }
        for q0 in [q_left, q_right] {
            if self.vp_at(q0)?.abs() < 1e-10 {
                return Err(Error::domain(
                    "time of arrival is infinite: turning point sits on a \
                     stationary point of the potential",
                ));
            }
        }
        Ok(())
    }

    /// Time of flight from a turning point to depth `t_max` into the well,
    /// where depth is measured as `t = sigma * (z - turning)` with `sigma`
    /// the direction pointing inside.
    ///
    /// Near the turning point the radicand `e − V` suffers catastrophic
    /// cancellation, so the first stretch uses a cubic Taylor model of the
    /// potential built from exact symbolic derivatives: after polishing the
    /// model root `t_s`, the substitution `t = t_s + r²` gives a smooth
    /// bounded integrand with no subtraction of nearby quantities.  Beyond
    /// the model window the direct integrand is well conditioned.
    fn branch_time(&self, turning: f64, sigma: f64, t_max: f64, e: f64) -> Result<f64> {
        if t_max <= 0.0 {
            return Ok(0.0);
        }
        let m = self.mass;
        let point = [turning, 0.0];
        let delta = e - self.v.evaluate_at(&point, 1.0)?;
        let c1 = -sigma * self.vp.evaluate_at(&point, 1.0)?;
        let q2 = -0.5 * self.vpp.evaluate_at(&point, 1.0)?;
        let q3 = -sigma * self.vppp.evaluate_at(&point, 1.0)? / 6.0;
        if c1 <= 0.0 {
            return Err(Error::domain(
                "time of arrival is infinite: turning point sits on a \
                 stationary point of the potential",
            ));
        }
        // small root of delta + c1 t + q2 t^2 (+ q3 t^3), then Newton on the cubic
        let disc = (c1 * c1 - 4.0 * q2 * delta).max(0.0).sqrt();
        let mut t_s = -2.0 * delta / (c1 + disc);
        for _ in 0..2 {
            let f = delta + t_s * (c1 + t_s * (q2 + t_s * q3));
            let fp = c1 + t_s * (2.0 * q2 + 3.0 * q3 * t_s);
            if fp != 0.0 {
                t_s -= f / fp;
            }
        }
        let w = (1e-3 * (1.0 + turning.abs())).min(t_max);
        if w <= t_s {
            return Ok(0.0);
        }
        // model radicand factored as r^2 (qp + a r^2 + q3 r^4) at t = t_s + r^2
        let qp = c1 + t_s * (2.0 * q2 + 3.0 * q3 * t_s);
        let a = q2 + 3.0 * q3 * t_s;
        let inner = numeric::integrate(
            |r| {
                let model = qp + r * r * (a + q3 * r * r);
                if model <= 0.0 {
                    f64::NAN
                } else {
                    2.0 * m / (2.0 * m * model).sqrt()
                }
            },
            0.0,
            (w - t_s).sqrt(),
            1e-12,
            1e-14,
        )?;
        if t_max <= w {
            return Ok(inner);
        }
        let outer = numeric::integrate(
            |s| {
                let z = turning + sigma * (t_s + s * s);
                let radicand = match self.v_at(z) {
                    Ok(v) => 2.0 * m * (e - v),
                    Err(_) => return f64::NAN,
                };
                if radicand <= 0.0 {
                    f64::NAN
                } else {
                    2.0 * m * s / radicand.sqrt()
                }
            },
            (w - t_s).sqrt(),
            (t_max - t_s).sqrt(),
            1e-12,
            1e-14,
        )?;
        Ok(inner + outer)
    }

    /// Time from the right turning point to `q` along the lower branch.
    fn time_from_right(&self, q: f64, e: f64, q_left: f64, q_right: f64) -> Result<f64> {
        let mid = 0.5 * (q_left + q_right);
        if q >= mid {
            self.branch_time(q_right, -1.0, q_right - q, e)
        } else {
            let half = self.half_period(e, q_left, q_right)?;
            Ok(half - self.branch_time(q_left, 1.0, q - q_left, e)?)
        }
    }

    fn half_period(&self, e: f64, q_left: f64, q_right: f64) -> Result<f64> {
        let mid = 0.5 * (q_left + q_right);
        Ok(self.branch_time(q_left, 1.0, mid - q_left, e)?
            + self.branch_time(q_right, -1.0, q_right - mid, e)?)
    }

    fn forward(&self, pt: &[f64]) -> Result<Vec<f64>> {
        let (q, p) = (pt[0], pt[1]);
        let e = p * p / (2.0 * self.mass) + self.v_at(q)?;
        if p == 0.0 {
            let slope = self.vp_at(q)?;
            if slope.abs() < 1e-10 {
                return Err(Error::domain(
                    "singular chart point: p = 0 and V'(q) = 0",
                ));
            }
            if slope > 0.0 {
                return Ok(vec![0.0, e]);
            }
            let (q_left, q_right) = self.turning_points(q, e)?;
            return Ok(vec![self.half_period(e, q_left, q_right)?, e]);
        }
        let (q_left, q_right) = self.turning_points(q, e)?;
        let t_lower = self.time_from_right(q, e, q_left, q_right)?;
        if p < 0.0 {
            Ok(vec![t_lower, e])
        } else {
            let period = 2.0 * self.half_period(e, q_left, q_right)?;
            Ok(vec![period - t_lower, e])
        }
    }

    /// Newton iteration on the flow: solve `time_from_right(q) = t` using
    /// the known derivative `dT/dq = −m/√(2m(e−V))`, bracketed by bisection.
    fn inverse(&self, pt: &[f64]) -> Result<Vec<f64>> {
        let (t_raw, e) = (pt[0], pt[1]);
        let anchor = self.find_allowed_point(e)?;
        let (q_left, q_right) = self.turning_points(anchor, e)?;
        let half = self.half_period(e, q_left, q_right)?;
        let period = 2.0 * half;
        let t = t_raw.rem_euclid(period);
        let (target, lower_branch) = if t <= half { (t, true) } else { (period - t, false) };
        let mut lo = q_left;
        let mut hi = q_right;
        let mut q = q_left + (q_right - q_left) * (1.0 - target / half).clamp(0.0, 1.0);
        for _ in 0..80 {
            let f = self.time_from_right(q, e, q_left, q_right)? - target;
            if f.abs() < 1e-13 * (1.0 + period) {
                break;
            }
            // time_from_right decreases in q
            if f > 0.0 {
                lo = q;
            } else {
                hi = q;
            }
            let radicand = 2.0 * self.mass * (e - self.v_at(q)?);
            let newton = if radicand > 0.0 {
                q + f * radicand.sqrt() / self.mass
            } else {
                f64::NAN
            };
            q = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * (1.0 + q.abs()) {
                break;
            }
        }
        let radicand = (2.0 * self.mass * (e - self.v_at(q)?)).max(0.0);
        let p_mag = radicand.sqrt();
        Ok(vec![q, if lower_branch { -p_mag } else { p_mag }])
    }

    /// Some `q` with `V(q) < e`, located by scanning windows of doubling
    /// width around the origin.
    fn find_allowed_point(&self, e: f64) -> Result<f64> {
        let mut best: Option<(f64, f64)> = None;
        let mut width = 1.0;
        for _ in 0..24 {
            for i in 0..=64 {
                let q = -width + 2.0 * width * (i as f64) / 64.0;
                if let Ok(v) = self.v_at(q) {
                    if best.map_or(true, |(_, bv)| v < bv) {
                        best = Some((q, v));
                    }
                }
            }
            if let Some((q, v)) = best {
                if v < e {
                    return Ok(q);
                }
            }
            width *= 2.0;
        }
        Err(Error::domain(
            "no classically allowed region found at this energy",
        ))
    }
}

/// Time–energy chart for a confining potential `V(q)` (expression in the
/// single variable `q`) and a positive mass.  Forward maps `(q, p)` to
/// `(T, H)` by adaptive quadrature of the arrival time; the inverse runs a
/// safeguarded Newton iteration along the flow.
pub fn time_energy_chart(v: &ScalarExpr, mass: f64) -> Result<ChartMap> {
    if !(mass > 0.0) {
        return Err(Error::domain("mass must be positive"));
    }
    if v.variables().iter().any(|&i| i != 0) {
        return Err(Error::domain(
            "the potential must depend on the position variable only",
        ));
    }
    let map = Arc::new(TimeEnergyMap::new(v, mass)?);
    let fwd = Arc::clone(&map);
    let inv = Arc::clone(&map);
    Ok(ChartMap {
        name: format!("timeEnergy:{}", v.to_prefix_named(&CoordNames::new(&["q"]))),
        dim: 2,
        source_names: CoordNames::new(&["q", "p"]),
        target_names: CoordNames::new(&["T", "H"]),
        forward: MapRoutine::Numeric(Arc::new(move |pt| fwd.forward(pt))),
        inverse: MapRoutine::Numeric(Arc::new(move |pt| inv.inverse(pt))),
        source_of_target: None,
        domain: "single potential well; excludes p = 0 with V'(q) = 0 and \
                 energies at potential peaks"
            .into(),
    })
}

/// The symbolic time–energy connection for a potential `V(q)`: coefficient
/// expressions over the flat variables `(q, p)` in which the arrival time
/// enters only through the formal symbols `T^(0,k) = ∂ᵏT/∂pᵏ`.
///
/// The coefficients are meant for display and pointwise evaluation (hook
/// the symbols through `EvalEnv::with_opaque`).  The frame rows are valid
/// for differentiating scalars free of the time symbols; plain
/// differentiation does not know the elimination rule that closes position
/// derivatives of `T^(0,k)` over the family.
pub struct TimeEnergyConnection {
    pub connection: SymplecticConnection,
    /// Chain-rule frame expressing d/dT and d/dH in the flat chart.
    pub frame: Frame,
    /// Family of the `T^(0,k)` symbols, for evaluation hooks.
    pub t_family: Arc<OpaqueFamily>,
}

/// Derive the `(T, H)`-chart connection coefficients for a general
/// potential by pushing the flat connection along the chain-rule frame
/// `d/dT = (p/m) d/dq − V' d/dp`, `d/dH = −T_p d/dq + T_q d/dp`.
///
/// Position derivatives of the time symbols are eliminated through the
/// defining relation `(p/m) T_q − V' T_p = 1`, so only the pure momentum
/// derivatives `T^(0,k)` remain and mixed partials commute identically.
pub fn time_energy_connection(v: &ScalarExpr, mass: &BigRational) -> Result<TimeEnergyConnection> {
    use num::Zero;
    if mass.is_zero() || mass < &BigRational::zero() {
        return Err(Error::domain("mass must be positive"));
    }
    if v.variables().iter().any(|&i| i != 0) {
        return Err(Error::domain(
            "the potential must depend on the position variable only",
        ));
    }
    let m = ScalarExpr::big_rational(mass.clone());
    let p = ScalarExpr::var(1);
    let vp = v.differentiate(0)?;
    let t_family = OpaqueFamily::on_variables("T", 2, &[0, 1]);
    let t_p = ScalarExpr::opaque(&t_family, vec![0, 1]);
    // T_q from the defining relation; its momentum derivatives close over
    // the T^(0,k) symbols.
    let t_q = m.clone() / p.clone() * (ScalarExpr::one() + vp.clone() * t_p.clone());

    // momentum derivatives of T_q close over the T^(0,k) symbols, so a
    // small table covers every order this construction can reach
    let mut tq_dp = vec![t_q.clone()];
    for _ in 0..6 {
        tq_dp.push(tq_dp.last().unwrap().differentiate(1)?);
    }
    // one position differentiation, with T^(1,k) rewritten via T_q
    let dq = |e: &ScalarExpr| -> Result<ScalarExpr> {
        let raw = e.differentiate(0)?;
        Ok(raw.replace_opaque(&|r| {
            if r.family.name() != "T" || r.orders[0] == 0 {
                return None;
            }
            // orders are bumped one differentiation at a time, so the
            // position order is exactly 1 here
            debug_assert_eq!(r.orders[0], 1);
            tq_dp.get(r.orders[1] as usize).cloned()
        }))
    };
    let dp = |e: &ScalarExpr| -> Result<ScalarExpr> { e.differentiate(1) };

    // first derivatives of the flat coordinates along the chart frame
    let rows = [
        [
            p.clone() / m.clone(), // dq/dT
            -vp.clone(),           // dp/dT
        ],
        [
            -t_p.clone(), // dq/dH
            t_q.clone(),  // dp/dH
        ],
    ];
    let frame_d = |i: usize, e: &ScalarExpr| -> Result<ScalarExpr> {
        Ok(rows[i][0].clone() * dq(e)? + rows[i][1].clone() * dp(e)?)
    };

    let mut conn = SymplecticConnection::flat(2);
    for i in 0..2 {
        for j in i..2 {
            for k in j..2 {
                // gamma_ijk = (dq/dQ^i) d2p/dQ^j dQ^k - (dp/dQ^i) d2q/dQ^j dQ^k
                let d2p = frame_d(j, &rows[k][1])?;
                let d2q = frame_d(j, &rows[k][0])?;
                let gamma =
                    (rows[i][0].clone() * d2p - rows[i][1].clone() * d2q).simplify();
                conn.set(i, j, k, gamma);
            }
        }
    }
    Ok(TimeEnergyConnection {
        connection: conn,
        frame: Frame::ChainRule {
            inv_jacobian: vec![
                vec![rows[0][0].clone(), rows[0][1].clone()],
                vec![rows[1][0].clone(), rows[1][1].clone()],
            ],
        },
        t_family,
    })
}

/// Look up a chart by registry name: `flat2d`, `oscillatorTH`, `polar4d`,
/// or `timeEnergy:<potential expression in q>` (prefix syntax, mass 1).
pub fn chart_by_name(name: &str) -> Result<ChartMap> {
    match name {
        "flat2d" => Ok(flat_chart_2d()),
        "oscillatorTH" => Ok(oscillator_chart()),
        "polar4d" => Ok(polar_chart_4d()),
        _ => {
            if let Some(pot) = name.strip_prefix("timeEnergy:") {
                let v = parse_expr(pot, &CoordNames::new(&["q"]))?;
                time_energy_chart(&v, 1.0)
            } else {
                Err(Error::domain(format!(
                    "unknown chart `{name}`; known charts: flat2d, oscillatorTH, \
                     polar4d, timeEnergy:<potential in q>"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{expr_compare, Equivalence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn oscillator_potential() -> ScalarExpr {
        ScalarExpr::rational(1, 2) * ScalarExpr::var(0).powi(2)
    }

    #[test]
    fn oscillator_chart_closed_form_points() {
        let chart = oscillator_chart();
        let out = chart.inverse(&[0.0, 2.0]).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15 && out[1].abs() < 1e-15);
        let out = chart.inverse(&[PI / 2.0, 0.5]).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
        assert!(chart.forward(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn oscillator_chart_round_trip() {
        let chart = oscillator_chart();
        let mut rng = ChaCha8Rng::seed_from_u64(0x05C1);
        for _ in 0..1000 {
            let t = rng.gen_range(0.0..2.0 * PI);
            let h = rng.gen_range(0.05..4.0);
            let qp = chart.inverse(&[t, h]).unwrap();
            let th = chart.forward(&qp).unwrap();
            assert!((th[0] - t).abs() < 1e-10, "T: {} vs {t}", th[0]);
            assert!((th[1] - h).abs() < 1e-10, "H: {} vs {h}", th[1]);
        }
    }

    #[test]
    fn oscillator_chart_is_canonical() {
        let chart = oscillator_chart();
        let mut rng = ChaCha8Rng::seed_from_u64(0x05C2);
        for _ in 0..100 {
            let q = rng.gen_range(-2.0..2.0);
            let p = rng.gen_range(0.1..2.0);
            let defect = chart.canonicity_defect(&[q, p]).unwrap();
            assert!(defect < 1e-9, "defect {defect} at ({q}, {p})");
        }
    }

    #[test]
    fn polar_chart_example_point_and_canonicity() {
        let chart = polar_chart_4d();
        let out = chart.forward(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1].abs() < 1e-15);
        assert!(out[2].abs() < 1e-15);
        assert!((out[3] - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0x04D1);
        for _ in 0..100 {
            let pt = [
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ];
            let defect = chart.canonicity_defect(&pt).unwrap();
            assert!(defect < 1e-10, "defect {defect} at {pt:?}");
        }
        assert!(chart.forward(&[0.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn polar_chart_connection_matches_known_table() {
        let conn = polar_chart_4d().connection().unwrap();
        let r = ScalarExpr::var(0);
        let pr = ScalarExpr::var(2);
        let l = ScalarExpr::var(3);
        let want: [([usize; 3], ScalarExpr); 5] = [
            (
                [0, 0, 1],
                ScalarExpr::int(2) * l.clone() / r.clone().powi(2),
            ),
            ([0, 1, 1], -pr),
            ([0, 1, 3], -(ScalarExpr::one() / r.clone())),
            ([1, 1, 1], ScalarExpr::int(-2) * l),
            ([1, 1, 2], r),
        ];
        for (ijk, expr) in &want {
            assert_eq!(
                expr_compare(&conn.get(ijk[0], ijk[1], ijk[2]), expr),
                Equivalence::Equal,
                "gamma_{ijk:?}"
            );
        }
        // every other independent component vanishes
        let listed: Vec<[usize; 3]> = want.iter().map(|(ijk, _)| *ijk).collect();
        for (ijk, value) in conn.entries() {
            assert!(
                listed.contains(ijk) || value.is_zero(),
                "unexpected gamma_{ijk:?} = {value}"
            );
        }
    }

    #[test]
    fn time_energy_matches_oscillator_closed_form() {
        let chart = time_energy_chart(&oscillator_potential(), 1.0).unwrap();
        let reference = oscillator_chart();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7E01);
        for _ in 0..1000 {
            let t = rng.gen_range(0.0..2.0 * PI);
            let h = rng.gen_range(0.1..3.0);
            let qp = reference.inverse(&[t, h]).unwrap();
            if qp[1].abs() < 1e-3 {
                continue; // numeric branch selection is ill-conditioned at p = 0
            }
            let th = chart.forward(&qp).unwrap();
            assert!((th[0] - t).abs() < 1e-8, "T {} vs {t} at {qp:?}", th[0]);
            assert!((th[1] - h).abs() < 1e-12, "H {} vs {h}", th[1]);
        }
    }

    #[test]
    fn time_energy_turning_point_and_quartic() {
        // at the right turning point the arrival time is zero
        let chart = time_energy_chart(&oscillator_potential(), 1.0).unwrap();
        let th = chart.forward(&[2.0, 0.0]).unwrap();
        assert!(th[0].abs() < 1e-12 && (th[1] - 2.0).abs() < 1e-14);
        let quartic = ScalarExpr::var(0).powi(4);
        let chart = time_energy_chart(&quartic, 1.0).unwrap();
        let e: f64 = 1.3;
        let th = chart.forward(&[e.powf(0.25), 0.0]).unwrap();
        assert!(th[0].abs() < 1e-12, "T at turning point: {}", th[0]);
        // round trip through the numeric inverse
        let mut rng = ChaCha8Rng::seed_from_u64(0x7E02);
        for _ in 0..25 {
            let q = rng.gen_range(-0.8..0.8);
            let p = rng.gen_range(0.2..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let th = chart.forward(&[q, p]).unwrap();
            let qp = chart.inverse(&th).unwrap();
            assert!(
                (qp[0] - q).abs() < 1e-9 && (qp[1] - p).abs() < 1e-8,
                "round trip ({q}, {p}) -> {th:?} -> {qp:?}"
            );
        }
    }

    #[test]
    fn time_energy_area_derivative_identity() {
        // T equals the energy derivative of the area swept between the
        // trajectory and the position axis
        let v_expr = oscillator_potential() + ScalarExpr::rational(1, 4) * ScalarExpr::var(0).powi(4);
        let chart = time_energy_chart(&v_expr, 1.0).unwrap();
        let map = TimeEnergyMap::new(&v_expr, 1.0).unwrap();
        for (q, p) in [(0.3, -1.1), (-0.5, -0.7), (0.1, -1.6)] {
            let e = p * p / 2.0 + map.v_at(q).unwrap();
            let t = chart.forward(&[q, p]).unwrap()[0];
            let area = |energy: f64| -> f64 {
                let (_ql, qr) = map.turning_points(q, energy).unwrap();
                // lower branch from the right turning point to q
                numeric::integrate(
                    |s| {
                        let z = qr - s * s;
                        let rad = 2.0 * (energy - map.v_at(z).unwrap());
                        2.0 * s * rad.max(0.0).sqrt()
                    },
                    0.0,
                    (qr - q).sqrt(),
                    1e-12,
                    1e-13,
                )
                .unwrap()
            };
            let h = 1e-4 * (1.0 + e);
            let fd = (area(e + h) - area(e - h)) / (2.0 * h);
            assert!(
                ((fd - t) / t).abs() < 1e-5,
                "area derivative {fd} vs time {t}"
            );
        }
    }

    #[test]
    fn time_energy_flow_pde_holds() {
        // (dT/dq)(dH/dp) - (dT/dp)(dH/dq) = 1 by finite differences
        let v_expr = oscillator_potential() + ScalarExpr::rational(1, 4) * ScalarExpr::var(0).powi(4);
        let vp = v_expr.differentiate(0).unwrap();
        let chart = time_energy_chart(&v_expr, 1.0).unwrap();
        for (q, p) in [(0.4, -1.2), (-0.3, -0.9), (0.2, 1.3), (-0.6, 0.8)] {
            let t_of = |qq: f64, pp: f64| chart.forward(&[qq, pp]).unwrap()[0];
            let hq = numeric::fd_step(q);
            let hp = numeric::fd_step(p);
            let t_q = (t_of(q - 2.0 * hq, p) - 8.0 * t_of(q - hq, p) + 8.0 * t_of(q + hq, p)
                - t_of(q + 2.0 * hq, p))
                / (12.0 * hq);
            let t_p = (t_of(q, p - 2.0 * hp) - 8.0 * t_of(q, p - hp) + 8.0 * t_of(q, p + hp)
                - t_of(q, p + 2.0 * hp))
                / (12.0 * hp);
            let bracket = t_q * p - t_p * vp.evaluate_at(&[q, 0.0], 1.0).unwrap();
            assert!(
                (bracket - 1.0).abs() < 1e-5,
                "PDE defect {} at ({q}, {p})",
                bracket - 1.0
            );
        }
    }

    #[test]
    fn time_energy_peak_energies_are_rejected() {
        // double well with a peak at the origin
        let q = ScalarExpr::var(0);
        let v_expr = q.clone().powi(4) - q.powi(2);
        let chart = time_energy_chart(&v_expr, 1.0).unwrap();
        // energy above the peak: a single well, fine
        assert!(chart.forward(&[0.0, 2.0]).is_ok());
        // separatrix energy: the flow from the left well edge takes forever
        // to reach the peak
        let err = chart.forward(&[-1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("infinite"), "{err}");
        // stationary start
        assert!(chart.forward(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn general_connection_reduces_to_oscillator_table() {
        let te = time_energy_connection(&oscillator_potential(), &BigRational::from_integer(1.into()))
            .unwrap();
        let q = ScalarExpr::var(0);
        let p = ScalarExpr::var(1);
        let two_h = q.clone().powi(2) + p.clone().powi(2);
        // closed-form oscillator time symbols: T_p = -q/(2H), T_pp = 2pq/(2H)^2
        let subst = |e: &ScalarExpr| -> ScalarExpr {
            e.replace_opaque(&|r| {
                if r.family.name() != "T" {
                    return None;
                }
                match (r.orders[0], r.orders[1]) {
                    (0, 1) => Some(-(q.clone() / two_h.clone())),
                    (0, 2) => {
                        Some(ScalarExpr::int(2) * p.clone() * q.clone() / two_h.clone().powi(2))
                    }
                    _ => None,
                }
            })
            .simplify()
        };
        // targets: the (T,H) table pulled back through H = (q^2+p^2)/2
        let cases = [
            ([0usize, 0, 0], -two_h.clone()),
            ([0, 0, 1], ScalarExpr::zero()),
            ([0, 1, 1], -(ScalarExpr::one() / two_h.clone())),
            ([1, 1, 1], ScalarExpr::zero()),
        ];
        for (ijk, want) in &cases {
            let got = subst(&te.connection.get(ijk[0], ijk[1], ijk[2]));
            assert_eq!(
                expr_compare(&got, want),
                Equivalence::Equal,
                "gamma_{ijk:?}: got {got}"
            );
        }
    }

    #[test]
    fn general_connection_matches_printed_formulas() {
        let v_expr = ScalarExpr::var(0).powi(4);
        let te =
            time_energy_connection(&v_expr, &BigRational::from_integer(1.into())).unwrap();
        let p = ScalarExpr::var(1);
        let vp = v_expr.differentiate(0).unwrap();
        let vpp = vp.differentiate(0).unwrap();
        let t_p = ScalarExpr::opaque(&te.t_family, vec![0, 1]);
        let t_pp = ScalarExpr::opaque(&te.t_family, vec![0, 2]);
        let g111 = -(p.clone().powi(2) * vpp) - vp.clone().powi(2);
        let g112 =
            (vp.clone() - g111.clone() * t_p.clone()) / p.clone();
        let g122 = -((ScalarExpr::one()
            + t_p.clone() * (vp.clone() + p.clone() * g112.clone()))
            / p.clone().powi(2));
        let g222 = t_pp / p.clone().powi(2)
            + t_p.clone() / p.clone().powi(3)
                * (ScalarExpr::one() + t_p * vp - p.powi(2) * g122.clone());
        let cases = [
            ([0usize, 0, 0], g111),
            ([0, 0, 1], g112),
            ([0, 1, 1], g122),
            ([1, 1, 1], g222),
        ];
        for (ijk, want) in &cases {
            let got = te.connection.get(ijk[0], ijk[1], ijk[2]);
            assert_eq!(
                expr_compare(&got, want),
                Equivalence::Equal,
                "gamma_{ijk:?}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn general_connection_against_numeric_pushforward() {
        // independent route: finite differences of the numeric inverse map
        let v_expr = oscillator_potential() + ScalarExpr::rational(1, 4) * ScalarExpr::var(0).powi(4);
        let mass = 1.0;
        let te = time_energy_connection(
            &v_expr,
            &BigRational::from_integer(1.into()),
        )
        .unwrap();
        let chart = time_energy_chart(&v_expr, mass).unwrap();
        let (q, p) = (0.35, -1.2);
        let th = chart.forward(&[q, p]).unwrap();
        // numeric first and second derivatives of (q, p) with respect to (T, H)
        let h_t = 1e-3;
        let h_h = 1e-3;
        let steps = [h_t, h_h];
        let inv = |t: f64, h: f64| chart.inverse(&[t, h]).unwrap();
        let d1 = |comp: usize, wrt: usize| -> f64 {
            let mut lo = th.clone();
            let mut hi = th.clone();
            lo[wrt] -= steps[wrt];
            hi[wrt] += steps[wrt];
            (inv(hi[0], hi[1])[comp] - inv(lo[0], lo[1])[comp]) / (2.0 * steps[wrt])
        };
        let d2 = |comp: usize, a: usize, b: usize| -> f64 {
            if a == b {
                let mut lo = th.clone();
                let mut hi = th.clone();
                lo[a] -= steps[a];
                hi[a] += steps[a];
                (inv(hi[0], hi[1])[comp] - 2.0 * inv(th[0], th[1])[comp]
                    + inv(lo[0], lo[1])[comp])
                    / (steps[a] * steps[a])
            } else {
                let f = |da: f64, db: f64| {
                    let mut pt = th.clone();
                    pt[a] += da;
                    pt[b] += db;
                    inv(pt[0], pt[1])[comp]
                };
                (f(steps[a], steps[b]) - f(steps[a], -steps[b]) - f(-steps[a], steps[b])
                    + f(-steps[a], -steps[b]))
                    / (4.0 * steps[a] * steps[b])
            }
        };
        // time symbols at the point, from finite differences of forward T
        let t_of = |qq: f64, pp: f64| chart.forward(&[qq, pp]).unwrap()[0];
        let hp = 1e-4;
        let t_p_val = (t_of(q, p + hp) - t_of(q, p - hp)) / (2.0 * hp);
        let hp2 = 1e-3;
        let t_pp_val =
            (t_of(q, p + hp2) - 2.0 * t_of(q, p) + t_of(q, p - hp2)) / (hp2 * hp2);
        let point = [q, p];
        let env_eval = |e: &ScalarExpr| -> f64 {
            let hook = |name: &str, orders: &[u32], _pt: &[f64]| -> Option<f64> {
                if name != "T" {
                    return None;
                }
                match (orders[0], orders[1]) {
                    (0, 1) => Some(t_p_val),
                    (0, 2) => Some(t_pp_val),
                    _ => None,
                }
            };
            let env = crate::expr::EvalEnv::with_opaque(&point, 1.0, &hook);
            e.evaluate(&env).unwrap()
        };
        for (i, j, k) in [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)] {
            let numeric_gamma = d1(0, i) * d2(1, j, k) - d1(1, i) * d2(0, j, k);
            let symbolic_gamma = env_eval(&te.connection.get(i, j, k));
            let scale = symbolic_gamma.abs().max(1.0);
            assert!(
                ((numeric_gamma - symbolic_gamma) / scale).abs() < 2e-3,
                "gamma_{}{}{}: numeric {numeric_gamma}, symbolic {symbolic_gamma}",
                i + 1,
                j + 1,
                k + 1
            );
        }
    }

    #[test]
    fn registry_resolves_and_rejects() {
        assert_eq!(chart_by_name("flat2d").unwrap().dim(), 2);
        assert_eq!(chart_by_name("polar4d").unwrap().dim(), 4);
        let chart = chart_by_name("timeEnergy:(* 1/2 (^ q 2))").unwrap();
        let th = chart.forward(&[1.0, -1.0]).unwrap();
        assert!((th[1] - 1.0).abs() < 1e-14);
        assert!(chart_by_name("nope").is_err());
        assert!(chart_by_name("timeEnergy:(+ q").is_err());
    }
}
