//! Flag curvature and constancy certification.
//!
//! The curvature operator is the spray curvature
//!
//! ```text
//! R^i_k = 2 ∂G^i/∂x^k − y^j ∂²G^i/∂x^j∂y^k
//!         + 2 G^j ∂²G^i/∂y^j∂y^k − ∂G^i/∂y^j ∂G^j/∂y^k,
//! ```
//!
//! and the flag curvature of the flag `(y, V)` is
//! `K = g(RV, V) / (F² g(V,V) − g(y,V)²)`.
//!
//! Jets of the spray are formed by central differences at a relative step of
//! `5e-3` with one Richardson level; this step is deliberately larger than
//! the metric-level default because the spray is itself a composite quantity
//! whose evaluation noise would otherwise dominate second differences.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gallery::ConvexBodySpec;
use crate::metric::{fundamental_tensor, MetricOracle};
use crate::spray::spray_coefficients;

/// Relative step for spray jets.
pub const SPRAY_JET_REL_STEP: f64 = 5e-3;

fn spray_vec(oracle: &MetricOracle, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Ok(spray_coefficients(oracle, x, y)?
        .coeffs
        .iter()
        .cloned()
        .collect())
}

/// Central difference with one Richardson level on a vector-valued function
/// of a scalar parameter.
fn richardson_d1<F>(mut eval: F, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let coarse = {
        let p = eval(h)?;
        let m = eval(-h)?;
        vadd(&p, &m, 1.0 / (2.0 * h), -1.0 / (2.0 * h))
    };
    let fine = {
        let p = eval(h / 2.0)?;
        let m = eval(-h / 2.0)?;
        vadd(&p, &m, 1.0 / h, -1.0 / h)
    };
    Ok(vadd(&fine, &coarse, 4.0 / 3.0, -1.0 / 3.0))
}

/// Mixed second derivative ∂²/∂t∂u with one Richardson level.
fn richardson_d2_mixed<F>(mut eval: F, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<Vec<f64>>,
{
    let mut stencil = |hh: f64| -> Result<Vec<f64>> {
        let pp = eval(hh, hh)?;
        let pm = eval(hh, -hh)?;
        let mp = eval(-hh, hh)?;
        let mm = eval(-hh, -hh)?;
        let num = vadd(
            &vadd(&pp, &pm, 1.0, -1.0),
            &vadd(&mp, &mm, 1.0, -1.0),
            1.0,
            -1.0,
        );
        Ok(num.iter().map(|v| v / (4.0 * hh * hh)).collect())
    };
    let coarse = stencil(h)?;
    let fine = stencil(h / 2.0)?;
    Ok(vadd(&fine, &coarse, 4.0 / 3.0, -1.0 / 3.0))
}

fn vadd(a: &[f64], b: &[f64], ca: f64, cb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

/// Spray curvature endomorphism `R^i_k` at `(x, y)`.
///
/// The flag pole is a null direction: `R y = 0` up to jet noise.
pub fn riemann_endomorphism(oracle: &MetricOracle, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    let m = oracle.dim();
    let xscale = 1.0 + x.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let yscale = 1.0 + y.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let hx = SPRAY_JET_REL_STEP * xscale;
    let hy = SPRAY_JET_REL_STEP * yscale;

    let g0 = spray_vec(oracle, x, y)?;

    // ∂G/∂x^k and ∂G/∂y^k
    let mut dg_dx = vec![vec![0.0; m]; m];
    let mut dg_dy = vec![vec![0.0; m]; m];
    for k in 0..m {
        dg_dx[k] = richardson_d1(
            |t| {
                let mut xs = x.to_vec();
                xs[k] += t;
                spray_vec(oracle, &xs, y)
            },
            hx,
        )?;
        dg_dy[k] = richardson_d1(
            |t| {
                let mut ys = y.to_vec();
                ys[k] += t;
                spray_vec(oracle, x, &ys)
            },
            hy,
        )?;
    }

    // y^j ∂²G^i/∂x^j∂y^k: x moves along y, y moves along e_k.
    let mut xy_mixed = vec![vec![0.0; m]; m];
    for k in 0..m {
        xy_mixed[k] = richardson_d2_mixed(
            |t, u| {
                let xs: Vec<f64> = (0..m).map(|i| x[i] + t * y[i]).collect();
                let mut ys = y.to_vec();
                ys[k] += u;
                spray_vec(oracle, &xs, &ys)
            },
            2.0 * hy,
        )?;
    }

    // G^j ∂²G^i/∂y^j∂y^k: y moves along G and along e_k.
    let gnorm = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut yy_mixed = vec![vec![0.0; m]; m];
    if gnorm > 1e-14 {
        let gdir: Vec<f64> = g0.iter().map(|v| v / gnorm).collect();
        for k in 0..m {
            let along_g = richardson_d2_mixed(
                |t, u| {
                    let mut ys: Vec<f64> = (0..m).map(|i| y[i] + t * gdir[i]).collect();
                    ys[k] += u;
                    spray_vec(oracle, x, &ys)
                },
                2.0 * hy,
            )?;
            yy_mixed[k] = along_g.iter().map(|v| v * gnorm).collect();
        }
    }

    let mut r = DMatrix::zeros(m, m);
    for i in 0..m {
        for k in 0..m {
            let mut val = 2.0 * dg_dx[k][i] - xy_mixed[k][i] + 2.0 * yy_mixed[k][i];
            for j in 0..m {
                val -= dg_dy[j][i] * dg_dy[k][j];
            }
            r[(i, k)] = val;
        }
    }
    Ok(r)
}

/// One sampled flag with its curvature.
#[derive(Clone, Debug, Serialize)]
pub struct FlagSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub k: f64,
}

/// Flag curvature of the flag with pole `y` and transverse edge `V`.
///
/// Invariant under rescaling of `y` and under `V → λV + μy`. The pole is
/// rescaled to Euclidean unit length internally: the formula is unchanged
/// under pole scaling (`g` is 0-homogeneous, `R` is 2-homogeneous, and the
/// denominator carries the matching `F²`), and unit-length poles keep the
/// spray-jet steps well conditioned at every chart point.
pub fn flag_curvature(oracle: &MetricOracle, x: &[f64], y: &[f64], v: &[f64]) -> Result<f64> {
    let ynorm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
    if ynorm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let yhat: Vec<f64> = y.iter().map(|c| c / ynorm).collect();
    let f = oracle.eval_f(x, &yhat)?;

    let g = fundamental_tensor(oracle, x, &yhat)?;
    let r = riemann_endomorphism(oracle, x, &yhat)?;

    let vv = DVector::from_row_slice(v);
    let yv = DVector::from_row_slice(&yhat);
    let g_vv = g.inner(&vv, &vv);
    let g_yv = g.inner(&yv, &vv);
    let denom = f * f * g_vv - g_yv * g_yv;
    if denom < 1e-10 * (f * f * g_vv).abs().max(1e-300) {
        return Err(Error::DegenerateFlag);
    }
    let rv = &r * &vv;
    let num = (vv.transpose() * &g.g * rv)[(0, 0)];
    Ok(num / denom)
}

/// Result of sampling flag curvature over a region.
#[derive(Clone, Debug, Serialize)]
pub struct CfcReport {
    pub c_estimate: f64,
    pub max_abs_dev: f64,
    pub mean_abs_dev: f64,
    pub std_dev: f64,
    pub sample_count: usize,
    pub failures: Vec<String>,
}

/// Supplies base points for flag sampling.
pub trait PointSampler: Send + Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Uniform sampling in a chart ball.
pub struct BallSampler {
    pub dim: usize,
    pub radius: f64,
}

impl PointSampler for BallSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = StandardNormal;
        loop {
            let g: Vec<f64> = (0..self.dim).map(|_| normal.sample(rng)).collect();
            let n: f64 = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n < 1e-9 {
                continue;
            }
            let u: f64 = rng.random_range(0.0f64..1.0);
            let r = self.radius * u.powf(1.0 / self.dim as f64);
            return g.iter().map(|c| c / n * r).collect();
        }
    }
}

/// Rejection sampling inside a convex body with a safety margin.
pub struct BodySampler {
    pub body: ConvexBodySpec,
    pub margin: f64,
}

impl PointSampler for BodySampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let dim = self.body.dim();
        let half = self.body.bounding_box_half_width();
        loop {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-half..half)).collect();
            if self.body.phi::<f64>(&x) < -self.margin {
                return x;
            }
        }
    }
}

/// Draws a flag and evaluates its curvature.
pub fn sample_flag_with_curvature(
    oracle: &MetricOracle,
    sampler: &dyn PointSampler,
    rng: &mut ChaCha8Rng,
) -> Result<FlagSample> {
    let (x, y, v) = sample_flag(oracle, sampler, rng)?;
    let k = flag_curvature(oracle, &x, &y, &v)?;
    Ok(FlagSample { x, y, v, k })
}

/// Draws a flag at a base point: pole normalized to the indicatrix by
/// positive homogeneity, edge drawn Gaussian and projected off the pole.
pub fn sample_flag(
    oracle: &MetricOracle,
    sampler: &dyn PointSampler,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let m = oracle.dim();
    let normal = StandardNormal;
    let x = sampler.sample(rng);
    let y_raw: Vec<f64> = (0..m).map(|_| normal.sample(rng)).collect();
    let f = oracle.eval_f(&x, &y_raw)?;
    let y: Vec<f64> = y_raw.iter().map(|c| c / f).collect();

    let g = fundamental_tensor(oracle, &x, &y)?;
    let yv = DVector::from_row_slice(&y);
    loop {
        let v_raw: Vec<f64> = (0..m).map(|_| normal.sample(rng)).collect();
        let vv = DVector::from_row_slice(&v_raw);
        let coef = g.inner(&yv, &vv) / g.inner(&yv, &yv);
        let v: Vec<f64> = (0..m).map(|i| v_raw[i] - coef * y[i]).collect();
        if v.iter().map(|c| c * c).sum::<f64>().sqrt() > 1e-6 {
            return Ok((x, y, v));
        }
    }
}

/// Samples flags and measures how far the flag curvature is from constant.
///
/// With `c` supplied, deviations are against that constant; otherwise the
/// arithmetic mean of the successful samples is the estimate and deviations
/// are measured against it. Identical seeds give identical reports.
pub fn cfc_certify(
    oracle: &MetricOracle,
    sampler: &dyn PointSampler,
    sample_count: usize,
    seed: u64,
    c: Option<f64>,
) -> Result<CfcReport> {
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let sub_seeds: Vec<u64> = (0..sample_count).map(|_| master.random()).collect();

    let results: Vec<std::result::Result<f64, String>> = sub_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            sample_flag_with_curvature(oracle, sampler, &mut rng)
                .map(|flag| flag.k)
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut ks = Vec::with_capacity(sample_count);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(k) => ks.push(k),
            Err(e) => failures.push(format!("sample {i}: {e}")),
        }
    }
    if ks.is_empty() {
        return Err(Error::InvalidParameter(
            "no flag sample succeeded; see the failure list".into(),
        ));
    }

    let mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let center = c.unwrap_or(mean);
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0f64;
    let mut sum_sq = 0.0f64;
    for &k in &ks {
        let d = (k - center).abs();
        max_abs = max_abs.max(d);
        sum_abs += d;
        sum_sq += (k - mean) * (k - mean);
    }
    Ok(CfcReport {
        c_estimate: if c.is_some() { center } else { mean },
        max_abs_dev: max_abs,
        mean_abs_dev: sum_abs / ks.len() as f64,
        std_dev: (sum_sq / ks.len() as f64).sqrt(),
        sample_count: ks.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{make_flat_euclidean, make_round_sphere};
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_curvature_operator_vanishes() {
        let o = make_flat_euclidean(3);
        let r = riemann_endomorphism(&o, &[0.2, 0.1, -0.4], &[0.9, 0.1, 0.3]).unwrap();
        assert!(r.norm() < 1e-8, "R = {r}");
    }

    #[test]
    fn round_sphere_operator_at_origin() {
        // R = F²(Id − ŷ⊗ŷ) at the chart center: eigenvalues {0, 1, …, 1}
        // for a unit pole.
        let o = make_round_sphere(2).unwrap();
        let y = [0.6, 0.64, 0.48];
        let n: f64 = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        let yu: Vec<f64> = y.iter().map(|c| c / n).collect();
        let r = riemann_endomorphism(&o, &[0.0, 0.0, 0.0], &yu).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                let expect = if i == k { 1.0 } else { 0.0 } - yu[i] * yu[k];
                assert_abs_diff_eq!(r[(i, k)], expect, epsilon = 5e-7);
            }
        }
    }

    #[test]
    fn pole_is_annihilated() {
        let o = make_round_sphere(1).unwrap();
        let x = [0.4, -0.7];
        let y = [0.8, 0.5];
        let f = o.eval_f(&x, &y).unwrap();
        let yu: Vec<f64> = y.iter().map(|c| c / f).collect();
        let r = riemann_endomorphism(&o, &x, &yu).unwrap();
        let ry = &r * DVector::from_row_slice(&yu);
        assert!(ry.norm() <= 1e-4 * r.norm().max(1e-30), "Ry = {ry}");
    }

    #[test]
    fn round_sphere_flags_have_curvature_one() {
        let o = make_round_sphere(1).unwrap();
        let sampler = BallSampler {
            dim: 2,
            radius: 2.0,
        };
        let report = cfc_certify(&o, &sampler, 40, 4, None).unwrap();
        assert!(report.failures.is_empty());
        assert_abs_diff_eq!(report.c_estimate, 1.0, epsilon = 1e-6);
        assert!(report.max_abs_dev < 1e-6, "max dev {}", report.max_abs_dev);
        assert!(report.max_abs_dev >= report.mean_abs_dev);
        assert!(report.mean_abs_dev >= 0.0);
    }

    #[test]
    fn refutation_path_for_wrong_constant() {
        let o = make_flat_euclidean(2);
        let sampler = BallSampler {
            dim: 2,
            radius: 1.0,
        };
        let report = cfc_certify(&o, &sampler, 20, 1, Some(1.0)).unwrap();
        assert!(report.max_abs_dev > 0.999, "dev = {}", report.max_abs_dev);
    }

    #[test]
    fn flag_invariance_under_reparametrization() {
        let o = make_round_sphere(1).unwrap();
        let x = [0.3, 0.2];
        let y = [1.0, -0.4];
        let v = [0.2, 0.9];
        let k0 = flag_curvature(&o, &x, &y, &v).unwrap();
        // V → λV + μy
        let v2: Vec<f64> = (0..2).map(|i| -1.7 * v[i] + 0.8 * y[i]).collect();
        let k1 = flag_curvature(&o, &x, &y, &v2).unwrap();
        // y → λy
        let y2: Vec<f64> = y.iter().map(|c| 2.9 * c).collect();
        let k2 = flag_curvature(&o, &x, &y2, &v).unwrap();
        assert_abs_diff_eq!(k0, k1, epsilon = 1e-5 * k0.abs().max(1.0));
        assert_abs_diff_eq!(k0, k2, epsilon = 1e-5 * k0.abs().max(1.0));
    }

    #[test]
    fn quadric_flags_have_curvature_one() {
        let o = crate::gallery::make_quadric_metric(
            crate::gallery::QuadricSpec::new(vec![0.4, 0.9]).unwrap(),
        );
        let sampler = BallSampler {
            dim: 2,
            radius: 2.0,
        };
        let report = cfc_certify(&o, &sampler, 30, 7, Some(1.0)).unwrap();
        assert!(report.failures.is_empty());
        assert!(report.max_abs_dev < 5e-4, "max dev {}", report.max_abs_dev);
    }

    #[test]
    fn hilbert_ball_flags_have_curvature_minus_one() {
        let o =
            crate::gallery::make_hilbert_metric(crate::gallery::ConvexBodySpec::Ball { dim: 2 });
        let sampler = BodySampler {
            body: crate::gallery::ConvexBodySpec::Ball { dim: 2 },
            margin: 0.2,
        };
        let report = cfc_certify(&o, &sampler, 30, 2, None).unwrap();
        assert!(report.failures.is_empty());
        assert_abs_diff_eq!(report.c_estimate, -1.0, epsilon = 1e-3);
    }

    #[test]
    fn conjugate_points_sit_at_pi_for_unit_curvature() {
        // Two geodesics from the same point with nearby directions refocus
        // at arclength π exactly when the flag curvature is one; the scalar
        // variation equation with K = 1 vanishes there.
        use crate::gallery::{integrate_sphere_geodesic, normalize_sphere_state, QuadricSpec};
        let pi = std::f64::consts::PI;
        let spec = QuadricSpec::new(vec![0.4, 0.9]).unwrap();
        let v0 = [1.0, 0.0, 0.0];
        let w0 = [0.0, 1.0, 0.4];
        let (v0, w0) = normalize_sphere_state(&spec, &v0, &w0).unwrap();
        let mut w1 = w0.clone();
        w1[2] += 1e-4;
        let (v1, w1) = normalize_sphere_state(&spec, &v0, &w1).unwrap();
        let t0 = integrate_sphere_geodesic(&spec, &v0, &w0, pi + 0.1, 1e-3).unwrap();
        let t1 = integrate_sphere_geodesic(&spec, &v1, &w1, pi + 0.1, 1e-3).unwrap();
        let mut best = (0.0f64, f64::INFINITY);
        for (a, b) in t0.samples.iter().zip(&t1.samples) {
            if a.s < pi - 0.1 {
                continue;
            }
            let d: f64 =
                a.v.iter()
                    .zip(&b.v)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
            if d < best.1 {
                best = (a.s, d);
            }
        }
        assert!(
            (best.0 - pi).abs() < 5e-3,
            "conjugate point at {} vs π",
            best.0
        );
    }

    #[test]
    fn degenerate_flag_is_rejected() {
        let o = make_round_sphere(1).unwrap();
        let y = [1.0, 0.0];
        let r = flag_curvature(&o, &[0.0, 0.0], &y, &[2.0, 0.0]);
        assert!(matches!(r, Err(Error::DegenerateFlag)));
    }
}
