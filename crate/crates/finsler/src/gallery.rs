//! Constructors for the concrete metric families: the round sphere, the
//! phase-parametrized quadric family on spheres, and Hilbert metrics on
//! convex bodies, together with the Newton cross-oracle and the
//! reversibility probe.
//!
//! Sphere-based metrics live on gnomonic charts: a chart point `x ∈ ℝ^m`
//! represents the unit vector `v(x) = (e₀ + xⁱeᵢ)/‖e₀ + xⁱeᵢ‖` for an
//! orthonormal frame of `ℝ^{m+1}`. Geodesics of the quadric metrics are
//! great-circle paths of the sphere of rays, so a full closed geodesic
//! always leaves any single gnomonic chart. Closure and planarity tests
//! therefore use [`integrate_sphere_geodesic`], which advances the embedded
//! state `(v, w)` by taking each Runge–Kutta step in a fresh chart centered
//! at the current position; chart transitions are exact, so the integrator
//! retains its fourth-order accuracy while the state never approaches a
//! chart boundary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dual::{CScalar, Scalar};
use crate::error::{Error, Result};
use crate::metric::{MetricDef, MetricOracle};
use crate::spray::rk4_step;

/// Phase vector of a quadric metric.
///
/// Phases must satisfy `0 ≤ p₁ ≤ … ≤ p_last < π`; the all-zero vector is the
/// round sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadricSpec {
    pub p: Vec<f64>,
}

impl QuadricSpec {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParameter(
                "phase vector must have at least one entry".into(),
            ));
        }
        let mut prev = 0.0f64;
        for (i, &pi) in p.iter().enumerate() {
            if !pi.is_finite() || pi < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "phase p[{i}] = {pi} must be a finite value >= 0"
                )));
            }
            if pi < prev {
                return Err(Error::InvalidParameter(format!(
                    "phases must be sorted ascending: p[{i}] = {pi} < p[{}] = {prev}",
                    i - 1
                )));
            }
            if pi >= std::f64::consts::PI {
                return Err(Error::InvalidParameter(format!(
                    "phase p[{i}] = {pi} must be < pi"
                )));
            }
            prev = pi;
        }
        Ok(QuadricSpec { p })
    }

    /// Chart dimension of the induced metric (one less than the ambient).
    pub fn chart_dim(&self) -> usize {
        self.p.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.p.len() + 1
    }

    pub fn is_round(&self) -> bool {
        self.p.iter().all(|&v| v == 0.0)
    }
}

/// Gnomonic-style chart of the sphere of rays.
///
/// Stores an orthonormal frame `(e₀, …, e_{m})` of the ambient space; the
/// chart covers the open hemisphere around `e₀`.
#[derive(Clone, Debug)]
pub struct SphereChart {
    /// Rows are the frame vectors; `frame[0]` is the chart center.
    pub frame: Vec<Vec<f64>>,
}

impl SphereChart {
    pub fn standard(ambient_dim: usize) -> Self {
        let frame = (0..ambient_dim)
            .map(|i| {
                let mut e = vec![0.0; ambient_dim];
                e[i] = 1.0;
                e
            })
            .collect();
        SphereChart { frame }
    }

    /// Completes `center` (unit) to an orthonormal frame with `e₀ = center`.
    pub fn centered_at(center: &[f64]) -> Self {
        let dim = center.len();
        let mut frame: Vec<Vec<f64>> = vec![center.to_vec()];
        for cand in 0..dim {
            if frame.len() == dim {
                break;
            }
            let mut r = vec![0.0; dim];
            r[cand] = 1.0;
            for f in &frame {
                let dot: f64 = (0..dim).map(|i| r[i] * f[i]).sum();
                for i in 0..dim {
                    r[i] -= dot * f[i];
                }
            }
            let norm: f64 = (0..dim).map(|i| r[i] * r[i]).sum::<f64>().sqrt();
            if norm > 1e-4 {
                for c in r.iter_mut() {
                    *c /= norm;
                }
                frame.push(r);
            }
        }
        assert_eq!(frame.len(), dim, "frame completion failed");
        SphereChart { frame }
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.len()
    }

    pub fn chart_dim(&self) -> usize {
        self.frame.len() - 1
    }

    /// Unit representative of the chart point; `point([0,…]) = e₀`.
    pub fn point(&self, x: &[f64]) -> Vec<f64> {
        let raw = self.raw_point::<f64>(x);
        let n: f64 = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
        raw.into_iter().map(|c| c / n).collect()
    }

    fn raw_point<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let dim = self.ambient_dim();
        let mut v: Vec<S> = (0..dim).map(|a| S::lift(self.frame[0][a])).collect();
        for (i, xi) in x.iter().enumerate() {
            for a in 0..dim {
                v[a] = v[a] + *xi * S::lift(self.frame[i + 1][a]);
            }
        }
        v
    }

    /// Differential of the chart map applied to a chart tangent `u`.
    pub fn tangent(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.point_and_tangent::<f64>(x, u).1
    }

    /// `(v(x), dv(x)·u)` in generic scalar arithmetic.
    pub fn point_and_tangent<S: Scalar>(&self, x: &[S], u: &[S]) -> (Vec<S>, Vec<S>) {
        let dim = self.ambient_dim();
        let raw = self.raw_point(x);
        let norm2 = raw.iter().fold(S::lift(0.0), |acc, &c| acc + c * c);
        let norm = norm2.sqrt();
        let v: Vec<S> = raw.iter().map(|&c| c / norm).collect();

        let mut cap_u: Vec<S> = vec![S::lift(0.0); dim];
        for (i, ui) in u.iter().enumerate() {
            for a in 0..dim {
                cap_u[a] = cap_u[a] + *ui * S::lift(self.frame[i + 1][a]);
            }
        }
        let vdotu = (0..dim).fold(S::lift(0.0), |acc, a| acc + v[a] * cap_u[a]);
        let w: Vec<S> = (0..dim).map(|a| (cap_u[a] - vdotu * v[a]) / norm).collect();
        (v, w)
    }

    /// Homogeneous embedding used by planarity tests.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.point(x)
    }

    /// Chart coordinates of a unit vector in the `e₀` hemisphere.
    pub fn chart_coords(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dim = self.ambient_dim();
        let c0: f64 = (0..dim).map(|a| v[a] * self.frame[0][a]).sum();
        if c0 <= 1e-12 {
            return Err(Error::OutsideDomain);
        }
        Ok((1..dim)
            .map(|i| (0..dim).map(|a| v[a] * self.frame[i][a]).sum::<f64>() / c0)
            .collect())
    }
}

/// Sphere-level quadric metric: evaluates `F(v, w)` for a unit vector `v`
/// and tangent `w ⊥ v` from the membership equation of the quadric.
#[derive(Clone, Debug)]
pub struct QuadricSphereMetric {
    spec: QuadricSpec,
    /// Unit-modulus diagonal entries, `diag[0] = 1`.
    diag: Vec<(f64, f64)>,
}

impl QuadricSphereMetric {
    pub fn new(spec: QuadricSpec) -> Self {
        let mut diag = vec![(1.0, 0.0)];
        diag.extend(spec.p.iter().map(|&p| (p.cos(), p.sin())));
        QuadricSphereMetric { spec, diag }
    }

    pub fn spec(&self) -> &QuadricSpec {
        &self.spec
    }

    fn quadratic_coefficients<S: Scalar>(
        &self,
        v: &[S],
        y: &[S],
    ) -> (CScalar<S>, CScalar<S>, CScalar<S>) {
        let zero = CScalar::real(S::lift(0.0));
        let mut alpha = zero;
        let mut beta = zero;
        let mut gamma = zero;
        for a in 0..self.diag.len() {
            let d = CScalar::new(S::lift(self.diag[a].0), S::lift(self.diag[a].1));
            alpha = alpha + d.scale(v[a] * v[a]);
            beta = beta + d.scale(v[a] * y[a]);
            gamma = gamma + d.scale(y[a] * y[a]);
        }
        (alpha, beta, gamma)
    }

    /// `F(v, y)`; `y` need not be normalized. Solves
    /// `α ζ² + 2i β ζ − γ = 0` and keeps the root with positive real part,
    /// refining by a complex Newton iteration if the closed-form selection is
    /// ambiguous.
    pub fn f_sphere<S: Scalar>(&self, v: &[S], y: &[S]) -> Result<S> {
        if v.len() != self.diag.len() || y.len() != self.diag.len() {
            return Err(Error::InvalidParameter(format!(
                "ambient dimension mismatch: expected {}, got v: {}, y: {}",
                self.diag.len(),
                v.len(),
                y.len()
            )));
        }
        let norm2 = y.iter().fold(S::lift(0.0), |acc, &c| acc + c * c);
        if norm2.val() <= 0.0 {
            return Err(Error::ZeroVector);
        }
        let norm = norm2.sqrt();
        let yhat: Vec<S> = y.iter().map(|&c| c / norm).collect();

        let (alpha, beta, gamma) = self.quadratic_coefficients(v, &yhat);
        // ζ = (−iβ ± sqrt(αγ − β²)) / α
        let disc = alpha * gamma - beta * beta;
        let sq = disc.sqrt();
        let minus_i_beta = -beta.mul_i();
        let r1 = (minus_i_beta + sq) / alpha;
        let r2 = (minus_i_beta - sq) / alpha;

        let threshold = 1e-12;
        let pos1 = r1.re.val() > threshold;
        let pos2 = r2.re.val() > threshold;
        let root = match (pos1, pos2) {
            (true, false) => r1,
            (false, true) => r2,
            _ => self.newton_root(alpha, beta, gamma, pos1 as usize + pos2 as usize)?,
        };
        Ok(root.re * norm)
    }

    /// Complex Newton on the membership quadratic, started from the unit
    /// root of the round case. Used only when the closed-form branch test is
    /// inconclusive.
    fn newton_root<S: Scalar>(
        &self,
        alpha: CScalar<S>,
        beta: CScalar<S>,
        gamma: CScalar<S>,
        candidates: usize,
    ) -> Result<CScalar<S>> {
        let mut z = CScalar::real(S::lift(1.0));
        let mut history = Vec::new();
        for _ in 0..50 {
            let phi = alpha * z * z + (beta * z).mul_i().scale(S::lift(2.0)) - gamma;
            let dphi = (alpha * z).scale(S::lift(2.0)) + beta.mul_i().scale(S::lift(2.0));
            let res = phi.norm_sqr().val().sqrt();
            history.push(res);
            if res < 1e-14 {
                if z.re.val() > 1e-12 {
                    return Ok(z);
                }
                return Err(Error::BranchAmbiguity {
                    roots_with_positive_re: candidates,
                });
            }
            z = z - phi / dphi;
        }
        Err(Error::NoConvergence {
            iterations: 50,
            history,
        })
    }
}

/// A sphere metric transported to a gnomonic chart.
#[derive(Clone)]
pub struct ChartQuadricMetric {
    metric: QuadricSphereMetric,
    chart: SphereChart,
    name: String,
}

impl MetricDef for ChartQuadricMetric {
    fn dim(&self) -> usize {
        self.chart.chart_dim()
    }
    fn name(&self) -> String {
        self.name.clone()
    }
    fn claims_reversible(&self) -> bool {
        self.metric.spec.is_round()
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().map(|c| c * c).sum::<f64>() < 16.0
    }
    fn f_squared<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S> {
        let (v, w) = self.chart.point_and_tangent(x, y);
        let f = self.metric.f_sphere(&v, &w)?;
        Ok(f * f)
    }
}

/// Round-sphere metric in the gnomonic chart, written in closed form.
/// Kept separate from the zero-phase quadric so the two can be compared.
#[derive(Clone, Debug)]
pub struct RoundSphereMetric {
    dim: usize,
}

impl MetricDef for RoundSphereMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "round-sphere".into()
    }
    fn claims_reversible(&self) -> bool {
        true
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().map(|c| c * c).sum::<f64>() < 16.0
    }
    fn f_squared<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S> {
        let one = S::lift(1.0);
        let x2 = x.iter().fold(S::lift(0.0), |a, &c| a + c * c);
        let y2 = y.iter().fold(S::lift(0.0), |a, &c| a + c * c);
        let xy = x
            .iter()
            .zip(y.iter())
            .fold(S::lift(0.0), |a, (&xi, &yi)| a + xi * yi);
        let denom = (one + x2) * (one + x2);
        Ok((y2 * (one + x2) - xy * xy) / denom)
    }
}

/// Euclidean norm on `ℝ^m`; the flat control case.
#[derive(Clone, Debug)]
pub struct FlatMetric {
    dim: usize,
}

impl MetricDef for FlatMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "flat".into()
    }
    fn claims_reversible(&self) -> bool {
        true
    }
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
    fn f_squared<S: Scalar>(&self, _x: &[S], y: &[S]) -> Result<S> {
        Ok(y.iter().fold(S::lift(0.0), |a, &c| a + c * c))
    }
}

/// Round metric of curvature one on the gnomonic chart of `S^{n+1}`.
pub fn make_round_sphere(n: usize) -> Result<MetricOracle> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    Ok(MetricOracle::from_def(RoundSphereMetric { dim: n + 1 }))
}

/// Quadric metric on the gnomonic chart, with the standard frame.
pub fn make_quadric_metric(spec: QuadricSpec) -> MetricOracle {
    let name = format!(
        "quadric[{}]",
        spec.p
            .iter()
            .map(|p| format!("{p}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    let chart = SphereChart::standard(spec.ambient_dim());
    MetricOracle::from_def(ChartQuadricMetric {
        metric: QuadricSphereMetric::new(spec),
        chart,
        name,
    })
}

/// Flat Euclidean oracle.
pub fn make_flat_euclidean(dim: usize) -> MetricOracle {
    MetricOracle::from_def(FlatMetric { dim })
}

/// Independent Newton oracle for the quadric metric on the sphere.
///
/// Solves the two real membership equations for `w = a·y + b·v` by damped
/// Newton and returns `F = 1/a`. At zero phases `(a, b) = (1/|y|, 0)` solves
/// the system exactly; the root is then tracked by continuation as the
/// phases scale up to the requested vector, which keeps the iteration on
/// the `a > 0` branch even for strongly asymmetric flags. This oracle shares
/// no code path with the closed-form root selection above, which is the
/// point: the two must agree.
pub fn quadric_f_newton(spec: &QuadricSpec, v: &[f64], y: &[f64]) -> Result<f64> {
    let vnorm: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (vnorm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "base vector must be unit: |v| = {vnorm}"
        )));
    }
    let ynorm2: f64 = y.iter().map(|c| c * c).sum();
    if ynorm2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let vdoty: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
    if vdoty.abs() > 1e-8 * ynorm2.sqrt() {
        return Err(Error::InvalidParameter(
            "tangent must be orthogonal to the base vector".into(),
        ));
    }

    let coefficients = |t: f64| {
        let scaled = QuadricSpec {
            p: spec.p.iter().map(|&pi| t * pi).collect(),
        };
        QuadricSphereMetric::new(scaled).quadratic_coefficients::<f64>(v, y)
    };

    // Damped Newton for the membership residual at fixed phase scale t.
    let solve_at = |t: f64, start: (f64, f64), history: &mut Vec<f64>| -> Option<(f64, f64)> {
        let (alpha, beta, gamma) = coefficients(t);
        let residual = |a: f64, b: f64| -> CScalar<f64> {
            // (v + i(ay + bv))ᵀ D (v + i(ay + bv))
            let wdw_re = a * a * gamma.re + 2.0 * a * b * beta.re + b * b * alpha.re;
            let wdw_im = a * a * gamma.im + 2.0 * a * b * beta.im + b * b * alpha.im;
            let vdw_re = a * beta.re + b * alpha.re;
            let vdw_im = a * beta.im + b * alpha.im;
            CScalar::new(
                alpha.re - wdw_re - 2.0 * vdw_im,
                alpha.im - wdw_im + 2.0 * vdw_re,
            )
        };
        let (mut a, mut b) = start;
        for _ in 0..50 {
            let r = residual(a, b);
            let rn = r.norm_sqr().sqrt();
            history.push(rn);
            // Tolerance relative to the magnitudes actually summed in the
            // residual; near-degenerate flags have a ≫ 1 and the rounding
            // floor grows like a².
            let term_scale = alpha.norm_sqr().sqrt() * (1.0 + b * b)
                + 2.0 * a.abs() * beta.norm_sqr().sqrt() * (1.0 + b.abs())
                + a * a * gamma.norm_sqr().sqrt()
                + 1.0;
            if rn < 1e-12 * term_scale {
                return if a > 0.0 { Some((a, b)) } else { None };
            }
            let sa = CScalar::new(
                -2.0 * (a * gamma.re + b * beta.re) - 2.0 * beta.im,
                -2.0 * (a * gamma.im + b * beta.im) + 2.0 * beta.re,
            );
            let sb = CScalar::new(
                -2.0 * (a * beta.re + b * alpha.re) - 2.0 * alpha.im,
                -2.0 * (a * beta.im + b * alpha.im) + 2.0 * alpha.re,
            );
            let det = sa.re * sb.im - sb.re * sa.im;
            if det.abs() < 1e-300 {
                return None;
            }
            let da = (-r.re * sb.im + sb.re * r.im) / det;
            let db = (-sa.re * r.im + r.re * sa.im) / det;

            let mut lambda = 1.0f64;
            let mut accepted = false;
            while lambda >= 1e-6 {
                let rn_new = residual(a + lambda * da, b + lambda * db).norm_sqr().sqrt();
                if rn_new <= (1.0 - 1e-4 * lambda) * rn {
                    a += lambda * da;
                    b += lambda * db;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        None
    };

    let mut history = Vec::new();
    let mut state = (1.0 / ynorm2.sqrt(), 0.0);
    let mut t = 0.0f64;
    let mut dt = 1.0f64;
    while t < 1.0 {
        let target = (t + dt).min(1.0);
        match solve_at(target, state, &mut history) {
            Some(next) => {
                state = next;
                t = target;
                dt = (dt * 2.0).min(1.0);
            }
            None => {
                dt *= 0.5;
                if dt < 1.0 / 131_072.0 {
                    return Err(Error::NoConvergence {
                        iterations: history.len(),
                        history,
                    });
                }
            }
        }
    }
    Ok(1.0 / state.0)
}

/// Closed-form quadric `F` on the sphere; the fast route that
/// [`quadric_f_newton`] cross-checks.
pub fn quadric_f_closed(spec: &QuadricSpec, v: &[f64], y: &[f64]) -> Result<f64> {
    QuadricSphereMetric::new(spec.clone()).f_sphere::<f64>(v, y)
}

/// Convex bodies available for Hilbert metrics.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvexBodySpec {
    /// Unit ball in `ℝ^dim`.
    Ball { dim: usize },
    /// `x₁⁴ + x₂⁴ < 1` in the plane.
    Superellipse,
}

impl ConvexBodySpec {
    pub fn dim(&self) -> usize {
        match self {
            ConvexBodySpec::Ball { dim } => *dim,
            ConvexBodySpec::Superellipse => 2,
        }
    }

    /// Defining function, negative inside.
    pub fn phi<S: Scalar>(&self, z: &[S]) -> S {
        match self {
            ConvexBodySpec::Ball { .. } => z.iter().fold(S::lift(-1.0), |a, &c| a + c * c),
            ConvexBodySpec::Superellipse => z[0].powi(4) + z[1].powi(4) - S::lift(1.0),
        }
    }

    /// `d/dt φ(x + t y)`.
    fn dphi_dt<S: Scalar>(&self, x: &[S], y: &[S], t: S) -> S {
        match self {
            ConvexBodySpec::Ball { .. } => {
                let mut acc = S::lift(0.0);
                for i in 0..x.len() {
                    acc = acc + (x[i] + t * y[i]) * y[i];
                }
                acc + acc
            }
            ConvexBodySpec::Superellipse => {
                let mut acc = S::lift(0.0);
                for i in 0..2 {
                    let z = x[i] + t * y[i];
                    acc = acc + z.powi(3) * y[i];
                }
                acc * S::lift(4.0)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.phi::<f64>(x) < 0.0
    }

    /// Per-axis half-width of a box containing the body; rejection samplers
    /// draw from it.
    pub fn bounding_box_half_width(&self) -> f64 {
        match self {
            ConvexBodySpec::Ball { .. } => 1.0,
            ConvexBodySpec::Superellipse => 1.0,
        }
    }
}

/// Hilbert metric: `F(x, y) = ½ (1/t₊ + 1/t₋)` where `t±` are the chord
/// parameters `φ(x ± t y) = 0`.
#[derive(Clone, Debug)]
pub struct HilbertMetric {
    body: ConvexBodySpec,
}

impl HilbertMetric {
    /// Positive chord root along `+y`, solved at the value level by bracketed
    /// bisection and a Newton polish, then refined in generic arithmetic so
    /// the jet components satisfy the implicit equation.
    fn chord<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S> {
        let xv: Vec<f64> = x.iter().map(|c| c.val()).collect();
        let yv: Vec<f64> = y.iter().map(|c| c.val()).collect();
        let psi = |t: f64| -> f64 {
            let z: Vec<f64> = (0..xv.len()).map(|i| xv[i] + t * yv[i]).collect();
            self.body.phi::<f64>(&z)
        };
        if psi(0.0) >= 0.0 {
            return Err(Error::OutsideBody);
        }

        // Geometric bracket growth from t = 1.
        let mut hi = 1.0f64;
        let mut grow = 0;
        while psi(hi) < 0.0 {
            hi *= 2.0;
            grow += 1;
            if grow > 200 {
                return Err(Error::NoConvergence {
                    iterations: grow,
                    history: vec![psi(hi)],
                });
            }
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if psi(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..4 {
            let z: Vec<f64> = (0..xv.len()).map(|i| xv[i] + t * yv[i]).collect();
            let d = self.body.dphi_dt::<f64>(&xv, &yv, t);
            if d.abs() < 1e-300 {
                break;
            }
            t -= self.body.phi::<f64>(&z) / d;
        }

        // Refine in S arithmetic: three Newton steps from the converged
        // value-level root propagate the jet through the implicit equation.
        let mut ts = S::lift(t);
        for _ in 0..3 {
            let z: Vec<S> = (0..x.len()).map(|i| x[i] + ts * y[i]).collect();
            let val = self.body.phi::<S>(&z);
            let der = self.body.dphi_dt::<S>(x, y, ts);
            ts = ts - val / der;
        }
        if ts.val() <= 0.0 || !ts.val().is_finite() {
            return Err(Error::NoConvergence {
                iterations: 3,
                history: vec![ts.val()],
            });
        }
        Ok(ts)
    }
}

impl MetricDef for HilbertMetric {
    fn dim(&self) -> usize {
        self.body.dim()
    }
    fn name(&self) -> String {
        match self.body {
            ConvexBodySpec::Ball { dim } => format!("hilbert-ball{dim}"),
            ConvexBodySpec::Superellipse => "hilbert-superellipse".into(),
        }
    }
    fn claims_reversible(&self) -> bool {
        // Central symmetry of both builtin bodies makes the metric symmetric.
        true
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        self.body.contains(x)
    }
    fn f_squared<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S> {
        let tp = self.chord(x, y)?;
        let ym: Vec<S> = y.iter().map(|&c| -c).collect();
        let tm = self.chord(x, &ym)?;
        let one = S::lift(1.0);
        let f = (one / tp + one / tm) * S::lift(0.5);
        Ok(f * f)
    }
}

/// Hilbert metric oracle on a builtin convex body.
pub fn make_hilbert_metric(body: ConvexBodySpec) -> MetricOracle {
    MetricOracle::from_def(HilbertMetric { body })
}

/// Maximum relative asymmetry `|F(x, −y) − F(x, y)| / F(x, y)` over seeded
/// samples. Riemannian and centrally symmetric metrics score at rounding
/// level; the generic quadric metrics do not.
pub fn reversibility_defect(oracle: &MetricOracle, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = oracle.dim();
    let normal = StandardNormal;
    let mut worst = 0.0f64;
    let mut produced = 0usize;
    let mut attempts = 0usize;
    while produced < samples {
        attempts += 1;
        if attempts > samples * 1000 {
            return Err(Error::InvalidParameter(
                "sampler failed to find points in the oracle domain".into(),
            ));
        }
        let x: Vec<f64> = (0..m)
            .map(|_| {
                let g: f64 = normal.sample(&mut rng);
                0.5 * g
            })
            .collect();
        if !oracle.in_domain(&x) {
            continue;
        }
        let y: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
        if y.iter().all(|c| c.abs() < 1e-12) {
            continue;
        }
        let yneg: Vec<f64> = y.iter().map(|c| -c).collect();
        let f = oracle.eval_f(&x, &y)?;
        let fneg = oracle.eval_f(&x, &yneg)?;
        worst = worst.max((fneg - f).abs() / f);
        produced += 1;
    }
    Ok(worst)
}

/// One sample of a geodesic advanced in the sphere embedding.
#[derive(Clone, Debug)]
pub struct SphereSample {
    pub s: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Geodesic of a sphere-based metric carried in embedded coordinates.
#[derive(Clone, Debug)]
pub struct SphereTrajectory {
    pub samples: Vec<SphereSample>,
    pub step: f64,
    pub unit_speed_drift: f64,
}

impl SphereTrajectory {
    /// `max(‖v_N − v_0‖, ‖w_N − w_0‖)`: distance of the final state from the
    /// initial one.
    pub fn closure_defect(&self) -> f64 {
        let first = &self.samples[0];
        let last = self.samples.last().unwrap();
        let dv: f64 = first
            .v
            .iter()
            .zip(&last.v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dw: f64 = first
            .w
            .iter()
            .zip(&last.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        dv.max(dw)
    }

    /// Planarity defect of the embedded position cloud.
    pub fn planarity_defect(&self) -> Result<f64> {
        let cloud: Vec<Vec<f64>> = self.samples.iter().map(|s| s.v.clone()).collect();
        crate::spray::planarity_defect_of_cloud(&cloud)
    }
}

/// Normalizes `(v, w)` to the constraint set: `v` unit, `w ⊥ v`,
/// `F(v, w) = 1`.
pub fn normalize_sphere_state(
    spec: &QuadricSpec,
    v: &[f64],
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let metric = QuadricSphereMetric::new(spec.clone());
    let vn: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if vn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let v: Vec<f64> = v.iter().map(|c| c / vn).collect();
    let dot: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let mut w: Vec<f64> = (0..w.len()).map(|i| w[i] - dot * v[i]).collect();
    let f = metric.f_sphere::<f64>(&v, &w)?;
    for c in w.iter_mut() {
        *c /= f;
    }
    Ok((v, w))
}

/// Integrates a quadric-metric geodesic for the given arclength in the
/// sphere embedding.
///
/// Each step is a single chart RK4 step taken in a gnomonic chart recentered
/// at the current position, so positions stay at the center of a chart for
/// the whole run and the closed geodesics of these metrics can be followed
/// around their full period.
pub fn integrate_sphere_geodesic(
    spec: &QuadricSpec,
    v0: &[f64],
    w0: &[f64],
    length: f64,
    step: f64,
) -> Result<SphereTrajectory> {
    if !(step > 0.0 && step <= length) {
        return Err(Error::InvalidParameter(format!(
            "step must lie in (0, length]; got step {step}, length {length}"
        )));
    }
    let metric = QuadricSphereMetric::new(spec.clone());
    let f0 = metric.f_sphere::<f64>(v0, w0)?;
    if (f0 - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnitSpeed { f: f0 });
    }

    let mut v = v0.to_vec();
    let mut w = w0.to_vec();
    // A uniform step adjusted so the run covers `length` exactly.
    let n_steps = (length / step).round().max(1.0) as usize;
    let step = length / n_steps as f64;
    let mut samples = Vec::with_capacity(n_steps + 1);
    samples.push(SphereSample {
        s: 0.0,
        v: v.clone(),
        w: w.clone(),
    });
    let mut drift = 0.0f64;

    for k in 0..n_steps {
        let chart = SphereChart::centered_at(&v);
        let oracle = MetricOracle::from_def(ChartQuadricMetric {
            metric: metric.clone(),
            chart: chart.clone(),
            name: "recenter".into(),
        });
        let m = chart.chart_dim();
        let x0 = vec![0.0; m];
        // At the chart center dv(0) sends e_i to the frame vector e_i, so the
        // chart components of w are plain frame projections.
        let u0: Vec<f64> = (1..=m)
            .map(|i| {
                (0..chart.ambient_dim())
                    .map(|a| w[a] * chart.frame[i][a])
                    .sum()
            })
            .collect();
        let (x1, u1) = rk4_step(&oracle, &x0, &u0, step)?;
        v = chart.point(&x1);
        let wt = chart.tangent(&x1, &u1);
        let dot: f64 = v.iter().zip(&wt).map(|(a, b)| a * b).sum();
        w = (0..wt.len()).map(|i| wt[i] - dot * v[i]).collect();

        let f = metric.f_sphere::<f64>(&v, &w)?;
        drift = drift.max((f - 1.0).abs());
        samples.push(SphereSample {
            s: (k + 1) as f64 * step,
            v: v.clone(),
            w: w.clone(),
        });
    }
    if drift > 1e-3 {
        return Err(Error::StepTooLarge { drift });
    }
    Ok(SphereTrajectory {
        samples,
        step,
        unit_speed_drift: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    #[test]
    fn quadric_spec_validation() {
        assert!(QuadricSpec::new(vec![0.4, 0.9]).is_ok());
        assert!(QuadricSpec::new(vec![0.9, 0.4]).is_err());
        assert!(QuadricSpec::new(vec![0.4, 3.2]).is_err());
        assert!(QuadricSpec::new(vec![-0.1, 0.4]).is_err());
    }

    #[test]
    fn round_sphere_at_origin_is_euclidean() {
        let o = make_round_sphere(1).unwrap();
        let f = o.eval_f(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(f, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_phase_quadric_equals_round_sphere() {
        let o_quadric = make_quadric_metric(QuadricSpec::new(vec![0.0, 0.0]).unwrap());
        let o_round = make_round_sphere(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
            let fq = o_quadric.eval_f(&x, &y).unwrap();
            let fr = o_round.eval_f(&x, &y).unwrap();
            assert_relative_eq!(fq, fr, max_relative = 1e-12);
        }
    }

    #[test]
    fn quadric_axis_flag_value() {
        // v = e0, y = e1: the membership quadratic degenerates to
        // ζ² = e^{i p₁}, so F = cos(p₁/2).
        let spec = QuadricSpec::new(vec![0.4, 0.9]).unwrap();
        let v = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let f = quadric_f_closed(&spec, &v, &y).unwrap();
        assert_relative_eq!(f, (0.2f64).cos(), max_relative = 1e-12);
        let fn_newton = quadric_f_newton(&spec, &v, &y).unwrap();
        assert_relative_eq!(f, fn_newton, max_relative = 1e-12);
    }

    #[test]
    fn newton_and_closed_form_agree_on_random_flags() {
        let spec = QuadricSpec::new(vec![0.4, 0.9]).unwrap();
        let dim = spec.ambient_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: f64 = v_raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 0.1 {
                continue;
            }
            let v: Vec<f64> = v_raw.iter().map(|c| c / n).collect();
            let y_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&y_raw).map(|(a, b)| a * b).sum();
            let y: Vec<f64> = (0..dim).map(|i| y_raw[i] - dot * v[i]).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < 1e-4 {
                continue;
            }
            let fc = quadric_f_closed(&spec, &v, &y).unwrap();
            let fnewt = quadric_f_newton(&spec, &v, &y).unwrap();
            assert_relative_eq!(fc, fnewt, max_relative = 1e-9);
        }
    }

    #[test]
    fn newton_oracle_survives_phases_near_the_open_bound() {
        let spec = QuadricSpec::new(vec![0.0, 0.3, std::f64::consts::PI - 1e-3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let v_raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: f64 = v_raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 0.3 {
                continue;
            }
            let v: Vec<f64> = v_raw.iter().map(|c| c / n).collect();
            let y_raw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&y_raw).map(|(a, b)| a * b).sum();
            let y: Vec<f64> = (0..4).map(|i| y_raw[i] - dot * v[i]).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < 1e-2 {
                continue;
            }
            assert!(quadric_f_newton(&spec, &v, &y).is_ok());
        }
    }

    #[test]
    fn hilbert_ball_center_is_euclidean() {
        let o = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
        let y = [0.3, -0.4];
        let f = o.eval_f(&[0.0, 0.0], &y).unwrap();
        assert_relative_eq!(f, 0.5, max_relative = 1e-11);
    }

    #[test]
    fn hilbert_ball_matches_the_klein_model() {
        // Independent closed form for the unit ball:
        // F² = ((x·y)² + |y|²(1 − |x|²)) / (1 − |x|²)².
        let o = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-0.6..0.6)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < 1e-2 {
                continue;
            }
            let x2: f64 = x.iter().map(|c| c * c).sum();
            let y2: f64 = y.iter().map(|c| c * c).sum();
            let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let expect = ((xy * xy + y2 * (1.0 - x2)) / ((1.0 - x2) * (1.0 - x2))).sqrt();
            let f = o.eval_f(&x, &y).unwrap();
            assert_relative_eq!(f, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn hilbert_outside_body_is_rejected() {
        let o = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
        assert!(matches!(
            o.eval_f(&[1.5, 0.0], &[1.0, 0.0]),
            Err(Error::OutsideDomain)
        ));
    }

    #[test]
    fn reversibility_separates_the_families() {
        let round = make_round_sphere(1).unwrap();
        assert!(reversibility_defect(&round, 50, 7).unwrap() < 1e-10);

        let ball = make_hilbert_metric(ConvexBodySpec::Ball { dim: 2 });
        assert!(reversibility_defect(&ball, 50, 7).unwrap() < 1e-10);

        let quadric = make_quadric_metric(QuadricSpec::new(vec![0.4, 0.9]).unwrap());
        assert!(reversibility_defect(&quadric, 50, 7).unwrap() > 1e-3);
    }

    #[test]
    fn round_sphere_fundamental_tensor_matches_the_pullback_metric() {
        // Closed form on the gnomonic chart:
        // g = ((1+|x|²)·Id − x xᵀ) / (1+|x|²)².
        let o = make_round_sphere(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0) + 0.2).collect();
            let g = crate::metric::fundamental_tensor(&o, &x, &y).unwrap();
            let x2: f64 = x.iter().map(|c| c * c).sum();
            let denom = (1.0 + x2) * (1.0 + x2);
            for i in 0..2 {
                for j in 0..2 {
                    let expect = ((if i == j { 1.0 + x2 } else { 0.0 }) - x[i] * x[j]) / denom;
                    assert_abs_diff_eq!(g.g[(i, j)], expect, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn cartan_norm_separates_riemannian_from_generic() {
        let round = make_round_sphere(1).unwrap();
        let c = crate::metric::cartan_tensor(&round, &[0.4, -0.3], &[0.8, 0.5]).unwrap();
        assert!(c.norm() < 1e-5, "round-sphere Cartan norm {}", c.norm());

        let quadric = make_quadric_metric(QuadricSpec::new(vec![0.4, 0.9]).unwrap());
        let c = crate::metric::cartan_tensor(&quadric, &[0.3, -0.2], &[0.8, 0.5]).unwrap();
        assert!(c.norm() > 1e-2, "quadric Cartan norm {}", c.norm());
        let defect = c.contraction_defect(&[0.8, 0.5]);
        let ynorm = (0.8f64 * 0.8 + 0.5 * 0.5).sqrt();
        assert!(
            defect < 1e-5 * c.norm() * ynorm,
            "contraction defect {defect}"
        );
    }

    #[test]
    fn hilbert_superellipse_is_convex_at_random_samples() {
        let o = make_hilbert_metric(ConvexBodySpec::Superellipse);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut produced = 0;
        while produced < 100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            if ConvexBodySpec::Superellipse.phi::<f64>(&x) >= -0.1 {
                continue;
            }
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < 1e-2 {
                continue;
            }
            let g = crate::metric::fundamental_tensor(&o, &x, &y).unwrap();
            assert!(g.smallest_eigenvalue > 0.0);
            produced += 1;
        }
    }

    #[test]
    fn mixed_y_derivative_of_round_f2_vanishes_at_origin() {
        let o = make_round_sphere(1).unwrap();
        let f = |p: &[f64]| o.f_squared(&[0.0, 0.0], p);
        let jet = crate::jet::numeric_jet(&crate::jet::JetRequest {
            f: &f,
            point: &[1.0, 0.7],
            multi_index: &[1, 1],
            rel_step: 1e-2,
            levels: 3,
        })
        .unwrap();
        assert_abs_diff_eq!(jet.value, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn distinct_phases_leave_distinct_reversibility_fingerprints() {
        let a = make_quadric_metric(QuadricSpec::new(vec![0.4, 0.9]).unwrap());
        let b = make_quadric_metric(QuadricSpec::new(vec![0.2, 1.3]).unwrap());
        let da = reversibility_defect(&a, 60, 5).unwrap();
        let db = reversibility_defect(&b, 60, 5).unwrap();
        assert!((da - db).abs() > 1e-4, "fingerprints {da} vs {db}");
    }

    #[test]
    fn sphere_geodesics_of_the_round_metric_close_after_two_pi() {
        let spec = QuadricSpec::new(vec![0.0, 0.0]).unwrap();
        let v0 = [1.0, 0.0, 0.0];
        let w0 = [0.0, 0.6, 0.8];
        let (v0, w0) = normalize_sphere_state(&spec, &v0, &w0).unwrap();
        let traj =
            integrate_sphere_geodesic(&spec, &v0, &w0, 2.0 * std::f64::consts::PI, 1e-3).unwrap();
        assert!(
            traj.closure_defect() < 1e-5,
            "closure {}",
            traj.closure_defect()
        );
    }

    #[test]
    fn unit_speed_drift_contracts_at_fourth_order() {
        let spec = QuadricSpec::new(vec![0.4, 0.9]).unwrap();
        let v0 = [1.0, 0.0, 0.0];
        let w0 = [0.0, 1.0, 0.4];
        let (v0, w0) = normalize_sphere_state(&spec, &v0, &w0).unwrap();
        let mut prev: Option<f64> = None;
        for &h in &[4e-2, 2e-2, 1e-2] {
            let traj = integrate_sphere_geodesic(&spec, &v0, &w0, 2.0, h).unwrap();
            let drift = traj.unit_speed_drift;
            if let Some(p) = prev {
                let order = (p / drift).log2();
                assert!(order >= 3.5, "observed order {order} at h = {h}");
            }
            prev = Some(drift);
        }
    }

    #[test]
    fn closed_and_newton_agree_across_the_phase_box() {
        // Random sorted phase vectors in [0, 3]² and random flags.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let mut p: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..3.0)).collect();
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let spec = QuadricSpec::new(p).unwrap();
            let dim = spec.ambient_dim();
            let v_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n: f64 = v_raw.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 0.2 {
                continue;
            }
            let v: Vec<f64> = v_raw.iter().map(|c| c / n).collect();
            let y_raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&y_raw).map(|(a, b)| a * b).sum();
            let y: Vec<f64> = (0..dim).map(|i| y_raw[i] - dot * v[i]).collect();
            if y.iter().map(|c| c * c).sum::<f64>() < 1e-3 {
                continue;
            }
            let fc = quadric_f_closed(&spec, &v, &y).unwrap();
            let fnewt = quadric_f_newton(&spec, &v, &y).unwrap();
            worst = worst.max((fc - fnewt).abs() / fc);
        }
        assert!(worst < 1e-9, "worst relative difference {worst:.3e}");
    }

    #[test]
    fn chart_oracle_agrees_with_the_newton_oracle() {
        // The chart-level norm transported through the gnomonic chart must
        // match the sphere-level Newton solve on the mapped data.
        let spec = QuadricSpec::new(vec![0.4, 0.9]).unwrap();
        let oracle = make_quadric_metric(spec.clone());
        let chart = SphereChart::standard(spec.ambient_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            if u.iter().map(|c| c * c).sum::<f64>() < 1e-2 {
                continue;
            }
            let f_chart = oracle.eval_f(&x, &u).unwrap();
            let (v, w) = chart.point_and_tangent::<f64>(&x, &u);
            let f_newton = quadric_f_newton(&spec, &v, &w).unwrap();
            assert_relative_eq!(f_chart, f_newton, max_relative = 1e-10);
        }
    }

    #[test]
    fn sphere_chart_roundtrip() {
        let chart = SphereChart::standard(3);
        let x = [0.7, -1.2];
        let v = chart.point(&x);
        let back = chart.chart_coords(&v).unwrap();
        assert_abs_diff_eq!(back[0], x[0], epsilon = 1e-13);
        assert_abs_diff_eq!(back[1], x[1], epsilon = 1e-13);
        // tangents are orthogonal to the representative
        let w = chart.tangent(&x, &[0.3, 0.9]);
        let dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-14);
    }
}
