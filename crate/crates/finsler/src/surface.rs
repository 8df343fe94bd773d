//! Two-dimensional surface data and the magnetic/Zoll pipeline.
//!
//! A [`SurfaceData`] is a metric `E du² + 2F du dv + G dv²` on a chart with
//! an orientation sign, together with a magnetic 1-form `β`. The central
//! differential relation is `dβ = (1 − K) Ω`: surfaces satisfying it carry a
//! coframing on their unit tangent bundle obeying the structure equations of
//! a constant-flag-curvature geodesic flow, which
//! [`structure_equation_residual`] verifies numerically.
//!
//! Two constructions produce such data:
//! rotational Zoll metrics via [`make_zoll_revolution`] followed by
//! [`zoll_to_cfc_data`], and conformal rescaling via
//! [`conformal_transform`], which preserves the family of β-geodesics.

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

const U_MARGIN: f64 = 0.05;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Step for callable-level central differences on chart functions.
const FIELD_FD_STEP: f64 = 1e-3;

/// A scalar field on the `(u, v)` chart, optionally with analytic partials.
#[derive(Clone)]
pub struct ScalarField {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    du: Option<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
    dv: Option<Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>>,
}

impl ScalarField {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            f: Arc::new(f),
            du: None,
            dv: None,
        }
    }

    pub fn with_partials<Du, Dv>(mut self, du: Du, dv: Dv) -> Self
    where
        Du: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        Dv: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.du = Some(Arc::new(du));
        self.dv = Some(Arc::new(dv));
        self
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::new(move |_, _| c).with_partials(|_, _| 0.0, |_, _| 0.0)
    }

    /// A field depending on `u` only, with its analytic derivative.
    pub fn radial<F, D>(f: F, d: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarField::new(move |u, _| f(u)).with_partials(move |u, _| d(u), |_, _| 0.0)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        (self.f)(u, v)
    }

    fn fd1<G: Fn(f64) -> f64>(g: G) -> f64 {
        // Central difference at three Richardson levels, fixed base step.
        let h = FIELD_FD_STEP;
        let mut d = [0.0f64; 3];
        for (lev, d_item) in d.iter_mut().enumerate() {
            let hh = h / (1 << lev) as f64;
            *d_item = (g(hh) - g(-hh)) / (2.0 * hh);
        }
        let r01 = (4.0 * d[1] - d[0]) / 3.0;
        let r11 = (4.0 * d[2] - d[1]) / 3.0;
        (16.0 * r11 - r01) / 15.0
    }

    pub fn d_u(&self, u: f64, v: f64) -> f64 {
        match &self.du {
            Some(d) => d(u, v),
            None => Self::fd1(|t| (self.f)(u + t, v)),
        }
    }

    pub fn d_v(&self, u: f64, v: f64) -> f64 {
        match &self.dv {
            Some(d) => d(u, v),
            None => Self::fd1(|t| (self.f)(u, v + t)),
        }
    }

    /// Second partials difference the analytic first partial when present.
    pub fn d_uu(&self, u: f64, v: f64) -> f64 {
        match &self.du {
            Some(d) => Self::fd1(|t| d(u + t, v)),
            None => {
                let f = &self.f;
                Self::fd2(|t| f(u + t, v))
            }
        }
    }

    pub fn d_vv(&self, u: f64, v: f64) -> f64 {
        match &self.dv {
            Some(d) => Self::fd1(|t| d(u, v + t)),
            None => {
                let f = &self.f;
                Self::fd2(|t| f(u, v + t))
            }
        }
    }

    pub fn d_uv(&self, u: f64, v: f64) -> f64 {
        match &self.du {
            Some(d) => Self::fd1(|t| d(u, v + t)),
            None => {
                let f = &self.f;
                Self::fd1(|s| Self::fd1(|t| f(u + s, v + t)))
            }
        }
    }

    fn fd2<G: Fn(f64) -> f64>(g: G) -> f64 {
        let h = 10.0 * FIELD_FD_STEP;
        let mut d = [0.0f64; 3];
        for (lev, d_item) in d.iter_mut().enumerate() {
            let hh = h / (1 << lev) as f64;
            *d_item = (g(hh) - 2.0 * g(0.0) + g(-hh)) / (hh * hh);
        }
        let r01 = (4.0 * d[1] - d[0]) / 3.0;
        let r11 = (4.0 * d[2] - d[1]) / 3.0;
        (16.0 * r11 - r01) / 15.0
    }

    /// Pointwise product with propagated analytic partials.
    pub fn product(a: &ScalarField, b: &ScalarField) -> ScalarField {
        let (fa, fb) = (a.f.clone(), b.f.clone());
        let mut out = ScalarField::new(move |u, v| fa(u, v) * fb(u, v));
        if a.du.is_some() && a.dv.is_some() && b.du.is_some() && b.dv.is_some() {
            let (fa, fb) = (a.f.clone(), b.f.clone());
            let (dau, dbu) = (a.du.clone().unwrap(), b.du.clone().unwrap());
            let (fa2, fb2) = (a.f.clone(), b.f.clone());
            let (dav, dbv) = (a.dv.clone().unwrap(), b.dv.clone().unwrap());
            out = out.with_partials(
                move |u, v| dau(u, v) * fb(u, v) + fa(u, v) * dbu(u, v),
                move |u, v| dav(u, v) * fb2(u, v) + fa2(u, v) * dbv(u, v),
            );
        }
        out
    }
}

/// How a surface was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    ZollDerived,
    Conformal,
}

/// Metric, orientation, and magnetic 1-form on a chart
/// `u ∈ (u_min, u_max)`, `v` periodic with period `2π`.
#[derive(Clone)]
pub struct SurfaceData {
    pub u_range: (f64, f64),
    pub e: ScalarField,
    pub f_mix: ScalarField,
    pub g: ScalarField,
    pub beta_u: ScalarField,
    pub beta_v: ScalarField,
    /// `+1` or `−1`; the area form is `orientation · √(EG − F²) du∧dv`.
    pub orientation: f64,
    pub provenance: Provenance,
    /// Analytic Gauss curvature, when the construction knows it.
    pub analytic_gauss: Option<ScalarField>,
}

impl SurfaceData {
    /// Positivity of the metric checked on a coarse grid.
    pub fn validate(&self) -> Result<()> {
        let n = 48;
        for i in 0..n {
            for j in 0..n {
                let u = self.u_range.0
                    + (i as f64 + 0.5) * (self.u_range.1 - self.u_range.0) / n as f64;
                let v = (j as f64 + 0.5) * TWO_PI / n as f64;
                let e = self.e.eval(u, v);
                let g = self.g.eval(u, v);
                let f = self.f_mix.eval(u, v);
                if !(e > 0.0 && g > 0.0 && e * g - f * f > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "metric not positive definite at (u, v) = ({u:.4}, {v:.4})"
                    )));
                }
            }
        }
        if self.orientation != 1.0 && self.orientation != -1.0 {
            return Err(Error::InvalidParameter(
                "orientation must be +1 or -1".into(),
            ));
        }
        Ok(())
    }

    pub fn in_domain(&self, u: f64) -> bool {
        u > self.u_range.0 && u < self.u_range.1
    }

    /// Oriented area density `σ √(EG − F²)`.
    pub fn area_density(&self, u: f64, v: f64) -> f64 {
        let e = self.e.eval(u, v);
        let g = self.g.eval(u, v);
        let f = self.f_mix.eval(u, v);
        self.orientation * (e * g - f * f).sqrt()
    }

    /// Hodge star of the 1-form `a_u du + a_v dv` in this metric and
    /// orientation.
    pub fn star_one_form(&self, u: f64, v: f64, a_u: f64, a_v: f64) -> (f64, f64) {
        let e = self.e.eval(u, v);
        let g = self.g.eval(u, v);
        let f = self.f_mix.eval(u, v);
        let det = e * g - f * f;
        let s = self.orientation * det.sqrt();
        let inv11 = g / det;
        let inv12 = -f / det;
        let inv22 = e / det;
        let b_u = -s * (a_u * inv12 + a_v * inv22);
        let b_v = s * (a_u * inv11 + a_v * inv12);
        (b_u, b_v)
    }

    /// Flips the orientation and negates `β`. The β-geodesics of the result
    /// coincide with those of the original.
    pub fn orientation_flipped_with_negated_beta(&self) -> SurfaceData {
        let bu = self.beta_u.clone();
        let bv = self.beta_v.clone();
        SurfaceData {
            u_range: self.u_range,
            e: self.e.clone(),
            f_mix: self.f_mix.clone(),
            g: self.g.clone(),
            beta_u: ScalarField::new(move |u, v| -bu.eval(u, v)),
            beta_v: ScalarField::new(move |u, v| -bv.eval(u, v)),
            orientation: -self.orientation,
            provenance: self.provenance,
            analytic_gauss: self.analytic_gauss.clone(),
        }
    }

    /// Same data with a replacement magnetic form; for negative controls.
    pub fn with_beta(&self, beta_u: ScalarField, beta_v: ScalarField) -> SurfaceData {
        let mut out = self.clone();
        out.beta_u = beta_u;
        out.beta_v = beta_v;
        out
    }
}

/// Gauss curvature at a point: the analytic field when the construction
/// supplies one, otherwise the finite-difference evaluation.
pub fn gauss_curvature(data: &SurfaceData, u: f64, v: f64) -> f64 {
    match &data.analytic_gauss {
        Some(k) => k.eval(u, v),
        None => gauss_curvature_fd(data, u, v),
    }
}

/// Gauss curvature from the metric components alone (Brioschi formula).
/// Always differences the metric callables, so it cross-checks any analytic
/// curvature a constructor claims.
pub fn gauss_curvature_fd(data: &SurfaceData, u: f64, v: f64) -> f64 {
    let e = data.e.eval(u, v);
    let g = data.g.eval(u, v);
    let f = data.f_mix.eval(u, v);

    let e_u = data.e.d_u(u, v);
    let e_v = data.e.d_v(u, v);
    let g_u = data.g.d_u(u, v);
    let g_v = data.g.d_v(u, v);
    let f_u = data.f_mix.d_u(u, v);
    let f_v = data.f_mix.d_v(u, v);

    let e_vv = data.e.d_vv(u, v);
    let g_uu = data.g.d_uu(u, v);
    let f_uv = data.f_mix.d_uv(u, v);

    let det3 = |m: [[f64; 3]; 3]| -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };

    let m1 = [
        [-0.5 * e_vv + f_uv - 0.5 * g_uu, 0.5 * e_u, f_u - 0.5 * e_v],
        [f_v - 0.5 * g_u, e, f],
        [0.5 * g_v, f, g],
    ];
    let m2 = [
        [0.0, 0.5 * e_v, 0.5 * g_u],
        [0.5 * e_v, e, f],
        [0.5 * g_u, f, g],
    ];
    let det = e * g - f * f;
    (det3(m1) - det3(m2)) / (det * det)
}

/// Odd profile function `h` on `[−1, 1]` with `h(±1) = 0` and `|h| < 1`,
/// carried with its first two derivatives.
#[derive(Clone)]
pub struct OddProfile {
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dh: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    d2h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl OddProfile {
    /// Profile from an arbitrary callable; derivatives are numerical.
    pub fn from_fn<F>(h: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let h = Arc::new(h);
        let h1 = h.clone();
        let h2 = h.clone();
        OddProfile {
            h: h.clone(),
            dh: Arc::new(move |t| ScalarField::fd1(|s| h1(t + s))),
            d2h: Arc::new(move |t| ScalarField::fd2(|s| h2(t + s))),
        }
    }

    /// `h(t) = (1 − t²) q(t)` with `q(t) = Σ coeffs[j] t^{2j+1}`.
    ///
    /// The factor and the odd powers enforce `h(±1) = 0` and oddness by
    /// construction; derivatives are exact polynomial arithmetic.
    pub fn odd_poly(coeffs: &[f64]) -> Self {
        // dense coefficients of q, then h = q − t²·q
        let mut hc = vec![0.0f64; 2 * coeffs.len() + 4];
        for (j, &c) in coeffs.iter().enumerate() {
            hc[2 * j + 1] += c;
            hc[2 * j + 3] -= c;
        }
        let d1: Vec<f64> = hc
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        let d2: Vec<f64> = d1
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        let horner = |c: Vec<f64>| move |t: f64| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck);
        OddProfile {
            h: Arc::new(horner(hc)),
            dh: Arc::new(horner(d1)),
            d2h: Arc::new(horner(d2)),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.h)(t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (self.dh)(t)
    }

    pub fn deriv2(&self, t: f64) -> f64 {
        (self.d2h)(t)
    }

    /// Oddness, boundary zeros, and the `|h| < 1` bound, checked by sampling.
    pub fn check(&self) -> Result<()> {
        let n = 201;
        for i in 0..=n {
            let t = -1.0 + 2.0 * i as f64 / n as f64;
            let h = self.eval(t);
            if h.abs() >= 1.0 {
                return Err(Error::InvalidProfile(format!(
                    "|h({t:.3})| = {} must be < 1",
                    h.abs()
                )));
            }
            if (h + self.eval(-t)).abs() > 1e-10 {
                return Err(Error::InvalidProfile(format!(
                    "profile is not odd at t = {t:.3}"
                )));
            }
        }
        if self.eval(1.0).abs() > 1e-10 || self.eval(-1.0).abs() > 1e-10 {
            return Err(Error::InvalidProfile(
                "profile must vanish at t = ±1".into(),
            ));
        }
        Ok(())
    }
}

/// Rotational metric `(1 + h(cos u))² du² + sin²u dv²` on the chart
/// `u ∈ (0.05, π − 0.05)`, with the analytic Gauss curvature
/// `K(u) = (1 + h − t h′) / (1 + h)³` at `t = cos u`.
///
/// For admissible profiles every geodesic closes after arclength `2π`.
pub fn make_zoll_revolution(profile: OddProfile) -> Result<SurfaceData> {
    profile.check()?;
    let p_e = profile.clone();
    let p_ed = profile.clone();
    let e = ScalarField::radial(
        move |u| {
            let f = 1.0 + p_e.eval(u.cos());
            f * f
        },
        move |u| {
            let t = u.cos();
            let f = 1.0 + p_ed.eval(t);
            2.0 * f * (-u.sin()) * p_ed.deriv(t)
        },
    );
    let g = ScalarField::radial(|u| u.sin() * u.sin(), |u| 2.0 * u.sin() * u.cos());
    let p_k = profile.clone();
    let p_kd = profile.clone();
    let analytic_gauss = ScalarField::radial(
        move |u| zoll_gauss(&p_k, u),
        move |u| {
            // dK/du = −sin u · d/dt[(1 + h − t h′)(1 + h)^{-3}]
            let t = u.cos();
            let h = p_kd.eval(t);
            let dh = p_kd.deriv(t);
            let d2h = p_kd.deriv2(t);
            let f = 1.0 + h;
            let ddt = (-t * d2h * f - 3.0 * dh * (f - t * dh)) / (f * f * f * f);
            -u.sin() * ddt
        },
    );
    let data = SurfaceData {
        u_range: (U_MARGIN, std::f64::consts::PI - U_MARGIN),
        e,
        f_mix: ScalarField::constant(0.0),
        g,
        beta_u: ScalarField::constant(0.0),
        beta_v: ScalarField::constant(0.0),
        orientation: 1.0,
        provenance: Provenance::Raw,
        analytic_gauss: Some(analytic_gauss),
    };
    data.validate()?;
    Ok(data)
}

fn zoll_gauss(p: &OddProfile, u: f64) -> f64 {
    let t = u.cos();
    let f = 1.0 + p.eval(t);
    (1.0 + p.eval(t) - t * p.deriv(t)) / (f * f * f)
}

/// The round sphere as surface data: `du² + sin²u dv²`, `β = 0`, `K ≡ 1`.
pub fn make_round_sphere_surface() -> SurfaceData {
    make_zoll_revolution(OddProfile::odd_poly(&[])).expect("round profile is valid")
}

/// Rescales the data by the Gauss curvature: `(K dσ², K Ω, *d log √K)`.
/// Requires `K > 0` on the chart.
///
/// Applied to a Zoll metric, the β-geodesics of the output trace the same
/// paths as the geodesics of the input, and the output satisfies the
/// magnetic equation `dβ = (1 − K̄) Ω̄`.
pub fn zoll_to_cfc_data(data: &SurfaceData) -> Result<SurfaceData> {
    let n = 64;
    for i in 0..=n {
        for j in 0..n {
            let u = data.u_range.0 + i as f64 * (data.u_range.1 - data.u_range.0) / n as f64;
            let v = j as f64 * TWO_PI / n as f64;
            let k = gauss_curvature(data, u, v);
            if !(k > 0.0) {
                return Err(Error::NonPositiveCurvature { u, v, k });
            }
        }
    }

    let k_field = match &data.analytic_gauss {
        Some(k) => k.clone(),
        None => {
            let d = data.clone();
            ScalarField::new(move |u, v| gauss_curvature_fd(&d, u, v))
        }
    };

    let e = ScalarField::product(&k_field, &data.e);
    let f_mix = ScalarField::product(&k_field, &data.f_mix);
    let g = ScalarField::product(&k_field, &data.g);

    // β = *d(log √K) = ½ *(dK / K); the star is taken in the input metric,
    // where it agrees with the star of the rescaled one on 1-forms.
    let base = data.clone();
    let kf = k_field.clone();
    let beta_u = ScalarField::new({
        let base = base.clone();
        let kf = kf.clone();
        move |u, v| {
            let k = kf.eval(u, v);
            let (bu, _) = base.star_one_form(u, v, 0.5 * kf.d_u(u, v) / k, 0.5 * kf.d_v(u, v) / k);
            bu
        }
    });
    let beta_v = ScalarField::new({
        move |u, v| {
            let k = kf.eval(u, v);
            let (_, bv) = base.star_one_form(u, v, 0.5 * kf.d_u(u, v) / k, 0.5 * kf.d_v(u, v) / k);
            bv
        }
    });

    Ok(SurfaceData {
        u_range: data.u_range,
        e,
        f_mix,
        g,
        beta_u,
        beta_v,
        orientation: data.orientation,
        provenance: Provenance::ZollDerived,
        analytic_gauss: None,
    })
}

/// Conformal change `(L dσ², L Ω, β + *d log √L)` for positive `L`.
/// β-geodesics are unchanged as point sets.
pub fn conformal_transform(data: &SurfaceData, l: ScalarField) -> Result<SurfaceData> {
    let n = 48;
    for i in 0..=n {
        for j in 0..n {
            let u = data.u_range.0 + i as f64 * (data.u_range.1 - data.u_range.0) / n as f64;
            let v = j as f64 * TWO_PI / n as f64;
            let val = l.eval(u, v);
            if !(val > 0.0) {
                return Err(Error::NonPositiveConformalFactor { u, v, l: val });
            }
        }
    }

    let e = ScalarField::product(&l, &data.e);
    let f_mix = ScalarField::product(&l, &data.f_mix);
    let g = ScalarField::product(&l, &data.g);

    let star_term = {
        let base = data.clone();
        let l = l.clone();
        move |u: f64, v: f64| -> (f64, f64) {
            let lv = l.eval(u, v);
            base.star_one_form(u, v, 0.5 * l.d_u(u, v) / lv, 0.5 * l.d_v(u, v) / lv)
        }
    };
    let bu = data.beta_u.clone();
    let bv = data.beta_v.clone();
    let st1 = star_term.clone();
    let beta_u = ScalarField::new(move |u, v| bu.eval(u, v) + st1(u, v).0);
    let st2 = star_term;
    let beta_v = ScalarField::new(move |u, v| bv.eval(u, v) + st2(u, v).1);

    Ok(SurfaceData {
        u_range: data.u_range,
        e,
        f_mix,
        g,
        beta_u,
        beta_v,
        orientation: data.orientation,
        provenance: Provenance::Conformal,
        analytic_gauss: None,
    })
}

/// Max over an interior grid of `|dβ − (1 − K) Ω|` measured against `Ω`.
pub fn magnetic_residual(data: &SurfaceData, grid_n: usize) -> Result<f64> {
    if grid_n < 16 {
        return Err(Error::InvalidParameter("grid must be at least 16".into()));
    }
    let du = (data.u_range.1 - data.u_range.0) / grid_n as f64;
    let rows: Vec<usize> = (0..grid_n).collect();
    let worst = rows
        .par_iter()
        .map(|&i| {
            let u = data.u_range.0 + (i as f64 + 0.5) * du;
            let mut w: f64 = 0.0;
            for j in 0..grid_n {
                let v = (j as f64 + 0.5) * TWO_PI / grid_n as f64;
                let curl = data.beta_v.d_u(u, v) - data.beta_u.d_v(u, v);
                let k = gauss_curvature(data, u, v);
                let omega = data.area_density(u, v);
                w = w.max((curl / omega - (1.0 - k)).abs());
            }
            w
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Max over an interior grid of `|d(*β)|` measured against `Ω`.
pub fn costar_residual(data: &SurfaceData, grid_n: usize) -> Result<f64> {
    if grid_n < 16 {
        return Err(Error::InvalidParameter("grid must be at least 16".into()));
    }
    let star_u = {
        let d = data.clone();
        move |u: f64, v: f64| {
            d.star_one_form(u, v, d.beta_u.eval(u, v), d.beta_v.eval(u, v))
                .0
        }
    };
    let star_v = {
        let d = data.clone();
        move |u: f64, v: f64| {
            d.star_one_form(u, v, d.beta_u.eval(u, v), d.beta_v.eval(u, v))
                .1
        }
    };
    let du = (data.u_range.1 - data.u_range.0) / grid_n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..grid_n {
        let u = data.u_range.0 + (i as f64 + 0.5) * du;
        for j in 0..grid_n {
            let v = (j as f64 + 0.5) * TWO_PI / grid_n as f64;
            let curl =
                ScalarField::fd1(|t| star_v(u + t, v)) - ScalarField::fd1(|t| star_u(u, v + t));
            let omega = data.area_density(u, v);
            worst = worst.max((curl / omega).abs());
        }
    }
    Ok(worst)
}

/// One sample of a β-geodesic: arclength, position, heading angle against
/// the orthonormal frame.
#[derive(Clone, Debug)]
pub struct MagneticSample {
    pub s: f64,
    pub u: f64,
    pub v: f64,
    pub chi: f64,
}

/// A unit-speed β-geodesic on a surface chart.
#[derive(Clone, Debug)]
pub struct MagneticTrajectory {
    pub samples: Vec<MagneticSample>,
    pub step: f64,
    pub truncated: bool,
    pub provenance: Provenance,
}

/// Orthonormal frame data at a point: coframe rows `(a b; c d)` with
/// `e¹ = a du + b dv`, `e² = c du + d dv`, and the dual frame columns.
struct FramePoint {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    /// connection form η₁₂ = p du + q dv
    p: f64,
    q: f64,
}

impl SurfaceData {
    /// Positively oriented orthonormal coframe `e¹ = √E du + (F/√E) dv`,
    /// `e² = σ W dv`, and the Levi-Civita connection form solved from the
    /// structure equations `de¹ = −η₁₂∧e²`, `de² = η₁₂∧e¹`.
    fn frame_point(&self, u: f64, v: f64) -> FramePoint {
        let e = self.e.eval(u, v);
        let f = self.f_mix.eval(u, v);
        let g = self.g.eval(u, v);
        let se = e.sqrt();
        let w = (g - f * f / e).sqrt();
        let a = se;
        let b = f / se;
        let c = 0.0;
        let d = self.orientation * w;

        // da = (∂u b − ∂v a), db = (∂u d − ∂v c) as du∧dv coefficients
        let e_u = self.e.d_u(u, v);
        let e_v = self.e.d_v(u, v);
        let f_u = self.f_mix.d_u(u, v);
        let g_u = self.g.d_u(u, v);
        let b_u = (f_u * se - f * (0.5 * e_u / se)) / e;
        let a_v = 0.5 * e_v / se;
        let w_u = 0.5 * (g_u - (2.0 * f * f_u * e - f * f * e_u) / (e * e)) / w;
        let da = b_u - a_v;
        let db = self.orientation * w_u;

        // da = −(p d − q c);  db = p b − q a
        let p = -da / d;
        let q = (p * b - db) / a;
        FramePoint { a, b, c, d, p, q }
    }
}

/// Integrates the curve whose geodesic curvature equals `β` along it,
/// as a first-order system in `(u, v, χ)` at exact unit speed.
pub fn integrate_beta_geodesic(
    data: &SurfaceData,
    start: (f64, f64),
    heading: f64,
    length: f64,
    step: f64,
) -> Result<MagneticTrajectory> {
    if !(step > 0.0 && step <= length) {
        return Err(Error::InvalidParameter(format!(
            "step must lie in (0, length]; got step {step}, length {length}"
        )));
    }
    if !data.in_domain(start.0) {
        return Err(Error::OutsideDomain);
    }

    let rhs = |u: f64, v: f64, chi: f64| -> [f64; 3] {
        let fp = data.frame_point(u, v);
        // dual frame: e₁ = (1/a, 0) [since c = 0], e₂ = (−b/(a d), 1/d)
        let e1 = [1.0 / fp.a, 0.0];
        let e2 = [-fp.b / (fp.a * fp.d), 1.0 / fp.d];
        let (cs, sn) = (chi.cos(), chi.sin());
        let t = [cs * e1[0] + sn * e2[0], cs * e1[1] + sn * e2[1]];
        let beta_t = data.beta_u.eval(u, v) * t[0] + data.beta_v.eval(u, v) * t[1];
        let conn_t = fp.p * t[0] + fp.q * t[1];
        [t[0], t[1], beta_t + conn_t]
    };

    // A uniform step adjusted so the run covers `length` exactly.
    let n_steps = (length / step).round().max(1.0) as usize;
    let step = length / n_steps as f64;
    let mut state = [start.0, start.1, heading];
    let mut samples = Vec::with_capacity(n_steps + 1);
    samples.push(MagneticSample {
        s: 0.0,
        u: state[0],
        v: state[1],
        chi: state[2],
    });
    let mut truncated = false;

    for k in 0..n_steps {
        let h = step;
        let k1 = rhs(state[0], state[1], state[2]);
        let s2 = [
            state[0] + 0.5 * h * k1[0],
            state[1] + 0.5 * h * k1[1],
            state[2] + 0.5 * h * k1[2],
        ];
        if !data.in_domain(s2[0]) {
            truncated = true;
            break;
        }
        let k2 = rhs(s2[0], s2[1], s2[2]);
        let s3 = [
            state[0] + 0.5 * h * k2[0],
            state[1] + 0.5 * h * k2[1],
            state[2] + 0.5 * h * k2[2],
        ];
        if !data.in_domain(s3[0]) {
            truncated = true;
            break;
        }
        let k3 = rhs(s3[0], s3[1], s3[2]);
        let s4 = [
            state[0] + h * k3[0],
            state[1] + h * k3[1],
            state[2] + h * k3[2],
        ];
        if !data.in_domain(s4[0]) {
            truncated = true;
            break;
        }
        let k4 = rhs(s4[0], s4[1], s4[2]);
        for i in 0..3 {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !data.in_domain(state[0]) {
            truncated = true;
            break;
        }
        samples.push(MagneticSample {
            s: (k + 1) as f64 * h,
            u: state[0],
            v: state[1],
            chi: state[2],
        });
    }

    Ok(MagneticTrajectory {
        samples,
        step,
        truncated,
        provenance: data.provenance,
    })
}

/// State-space closure defect `max(|Δu|, |Δv mod 2π|, |Δχ mod 2π|)` between
/// the first and last sample.
pub fn magnetic_closure_defect(traj: &MagneticTrajectory) -> f64 {
    let a = &traj.samples[0];
    let b = traj.samples.last().unwrap();
    let wrap = |d: f64| {
        let mut r = d % TWO_PI;
        if r > std::f64::consts::PI {
            r -= TWO_PI;
        }
        if r < -std::f64::consts::PI {
            r += TWO_PI;
        }
        r
    };
    (a.u - b.u)
        .abs()
        .max(wrap(a.v - b.v).abs())
        .max(wrap(a.chi - b.chi).abs())
}

fn wrap_pi(d: f64) -> f64 {
    let mut r = d % TWO_PI;
    if r > std::f64::consts::PI {
        r -= TWO_PI;
    }
    if r < -std::f64::consts::PI {
        r += TWO_PI;
    }
    r
}

fn chart_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let du = a.0 - b.0;
    let dv = wrap_pi(a.1 - b.1);
    (du * du + dv * dv).sqrt()
}

/// Resamples the `(u, v)` polyline at equal chart arclength spacing.
fn resample(traj: &MagneticTrajectory, spacing: f64) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.u, s.v)).collect();
    if pts.len() < 2 {
        return pts;
    }
    let mut cum = vec![0.0f64];
    for w in pts.windows(2) {
        let d = chart_dist(w[0], w[1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let n = (total / spacing).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0usize;
    for k in 0..=n {
        let s = k as f64 * spacing;
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let denom = (cum[seg + 1] - cum[seg]).max(1e-300);
        let t = (s - cum[seg]) / denom;
        let u = pts[seg].0 + t * (pts[seg + 1].0 - pts[seg].0);
        let v = pts[seg].1 + t * wrap_pi(pts[seg + 1].1 - pts[seg].1);
        out.push((u, v));
    }
    out
}

/// Distance from a point to a polyline segment, with the `v`-period folded
/// into the segment's frame first.
fn point_segment_dist(p: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> f64 {
    let shift = ((p.1 - q1.1) / TWO_PI).round() * TWO_PI;
    let pv = p.1 - shift;
    let (dx, dy) = (q2.0 - q1.0, q2.1 - q1.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - q1.0) * dx + (pv - q1.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = q1.0 + t * dx;
    let cy = q1.1 + t * dy;
    let du = p.0 - cx;
    let dv = pv - cy;
    (du * du + dv * dv).sqrt()
}

/// Symmetric Hausdorff distance between the point sets of two trajectories.
///
/// Both polylines are resampled at `1e-3` chart arclength; each resampled
/// point is then measured against the nearest segment of the other polyline,
/// so the result is not floored by the relative phase of the two sample
/// grids.
pub fn trajectory_hausdorff(a: &MagneticTrajectory, b: &MagneticTrajectory) -> f64 {
    let pa = resample(a, 1e-3);
    let pb = resample(b, 1e-3);
    let one_sided = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
        from.par_iter()
            .map(|&p| {
                if to.len() < 2 {
                    return chart_dist(p, to[0]);
                }
                to.windows(2)
                    .map(|w| point_segment_dist(p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .reduce(|| 0.0, f64::max)
    };
    one_sided(&pa, &pb).max(one_sided(&pb, &pa))
}

/// Coframing of the oriented orthonormal frame bundle over the surface,
/// in coordinates `(u, v, φ)`.
///
/// `η₁ = cos φ e¹ − sin φ e²`, `η₂ = sin φ e¹ + cos φ e²`,
/// `η₁₂ = dφ + (Levi-Civita form)`, and the curvature-one coframing
/// `ω₀ = −η₁₂ + I η₂ − J η₁`, `ω₁ = η₂`, `θ₀₁ = η₁`, with `I`, `J` read off
/// pointwise from the magnetic form in the rotated frame.
pub struct FrameBundleCoframe {
    data: SurfaceData,
    /// Perturbation added to the scalar `I` readout; zero in normal use,
    /// nonzero only in negative-control tests.
    pub i_offset: f64,
}

/// Coefficients of a 1-form in the coordinate coframe `(du, dv, dφ)`.
pub type FormCoeffs = [f64; 3];

impl FrameBundleCoframe {
    pub fn u_range(&self) -> (f64, f64) {
        self.data.u_range
    }

    fn rotated(&self, u: f64, v: f64, phi: f64) -> (FormCoeffs, FormCoeffs, FormCoeffs) {
        let fp = self.data.frame_point(u, v);
        let (cs, sn) = (phi.cos(), phi.sin());
        let eta1 = [cs * fp.a - sn * fp.c, cs * fp.b - sn * fp.d, 0.0];
        let eta2 = [sn * fp.a + cs * fp.c, sn * fp.b + cs * fp.d, 0.0];
        let eta12 = [fp.p, fp.q, 1.0];
        (eta1, eta2, eta12)
    }

    pub fn eta1(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        self.rotated(u, v, phi).0
    }

    pub fn eta2(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        self.rotated(u, v, phi).1
    }

    pub fn eta12(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        self.rotated(u, v, phi).2
    }

    /// `(I, J)` at a frame point: `β = −I η₂ + J η₁` there.
    pub fn scalars(&self, u: f64, v: f64, phi: f64) -> (f64, f64) {
        let fp = self.data.frame_point(u, v);
        // dual frame of (e¹, e²): e₁ = (1/a, 0), e₂ = (−b/(ad), 1/d)
        let e1 = [1.0 / fp.a, 0.0];
        let e2 = [-fp.b / (fp.a * fp.d), 1.0 / fp.d];
        let (cs, sn) = (phi.cos(), phi.sin());
        // frame dual to the rotated coframe
        let f1 = [cs * e1[0] - sn * e2[0], cs * e1[1] - sn * e2[1]];
        let f2 = [sn * e1[0] + cs * e2[0], sn * e1[1] + cs * e2[1]];
        let bu = self.data.beta_u.eval(u, v);
        let bv = self.data.beta_v.eval(u, v);
        let beta_f1 = bu * f1[0] + bv * f1[1];
        let beta_f2 = bu * f2[0] + bv * f2[1];
        (-beta_f2 + self.i_offset, beta_f1)
    }

    pub fn omega0(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        let (eta1, eta2, eta12) = self.rotated(u, v, phi);
        let fp = self.data.frame_point(u, v);
        let e1 = [1.0 / fp.a, 0.0];
        let e2 = [-fp.b / (fp.a * fp.d), 1.0 / fp.d];
        let (cs, sn) = (phi.cos(), phi.sin());
        let f1 = [cs * e1[0] - sn * e2[0], cs * e1[1] - sn * e2[1]];
        let f2 = [sn * e1[0] + cs * e2[0], sn * e1[1] + cs * e2[1]];
        let bu = self.data.beta_u.eval(u, v);
        let bv = self.data.beta_v.eval(u, v);
        let i = -(bu * f2[0] + bv * f2[1]);
        let j = bu * f1[0] + bv * f1[1];
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = -eta12[k] + i * eta2[k] - j * eta1[k];
        }
        out
    }

    pub fn omega1(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        self.eta2(u, v, phi)
    }

    pub fn theta01(&self, u: f64, v: f64, phi: f64) -> FormCoeffs {
        self.eta1(u, v, phi)
    }
}

/// Builds the frame-bundle coframe over data satisfying the magnetic
/// equation (checked on a 64² grid at tolerance `1e-4`).
pub fn build_cfc_coframe(data: &SurfaceData) -> Result<FrameBundleCoframe> {
    let residual = magnetic_residual(data, 64)?;
    if residual >= 1e-4 {
        return Err(Error::MagneticEquationViolated {
            residual,
            limit: 1e-4,
        });
    }
    // Nondegeneracy of η₁∧η₂∧η₁₂ at a few points.
    let cof = FrameBundleCoframe {
        data: data.clone(),
        i_offset: 0.0,
    };
    for &(u, v, phi) in &[(0.9f64, 0.3, 0.1), (1.8, 2.0, 2.5), (2.4, 5.0, 4.0)] {
        let u = u.clamp(data.u_range.0 + 0.1, data.u_range.1 - 0.1);
        let (a, b, c) = cof.rotated(u, v, phi);
        let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]);
        if det.abs() < 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "coframe degenerate at (u, v, φ) = ({u}, {v}, {phi})"
            )));
        }
    }
    Ok(cof)
}

/// 7-point interior stencil, sixth order, for first derivatives.
const STENCIL7: [f64; 7] = [
    -1.0 / 60.0,
    3.0 / 20.0,
    -3.0 / 4.0,
    0.0,
    3.0 / 4.0,
    -3.0 / 20.0,
    1.0 / 60.0,
];

/// Residuals of the three structure equations on a `(u, v, φ)` grid.
///
/// Coefficient arrays of the coframe are tabulated on the grid and
/// differentiated with grid-spacing stencils (sixth order in the interior,
/// periodic wrap in `v` and `φ`, margins excluded in `u`), so the returned
/// maxima contract under grid refinement exactly when the structure
/// equations hold on the nose.
pub fn structure_equation_residual(cof: &FrameBundleCoframe, grid_n: usize) -> Result<[f64; 3]> {
    if grid_n < 16 {
        return Err(Error::InvalidParameter("grid must be at least 16".into()));
    }
    let n = grid_n;
    let (u0, u1) = cof.u_range();
    let hu = (u1 - u0) / n as f64;
    let hv = TWO_PI / n as f64;
    let hp = TWO_PI / n as f64;

    // Plane i holds, for each (v, φ), the 12 coefficients of
    // ω₀, ω₁, θ₀₁ and the combined form ω₀ − Iω₁ + Jθ₀₁.
    let plane = |i: usize| -> Vec<[f64; 12]> {
        let u = u0 + i as f64 * hu;
        (0..n * n)
            .into_par_iter()
            .map(|jk| {
                let j = jk / n;
                let k = jk % n;
                let v = j as f64 * hv;
                let phi = k as f64 * hp;
                let w0 = cof.omega0(u, v, phi);
                let w1 = cof.omega1(u, v, phi);
                let t01 = cof.theta01(u, v, phi);
                let (i_s, j_s) = cof.scalars(u, v, phi);
                let mut row = [0.0f64; 12];
                for c in 0..3 {
                    row[c] = w0[c];
                    row[3 + c] = w1[c];
                    row[6 + c] = t01[c];
                    row[9 + c] = w0[c] - i_s * w1[c] + j_s * t01[c];
                }
                row
            })
            .collect()
    };

    let idx = |j: usize, k: usize| j * n + k;
    let wrap = |x: i64| ((x % n as i64 + n as i64) % n as i64) as usize;

    let mut ring: VecDeque<Vec<[f64; 12]>> = VecDeque::new();
    for i in 0..7.min(n + 1) {
        ring.push_back(plane(i));
    }

    let mut worst = [0.0f64; 3];
    for center in 3..=(n - 3) {
        // ring holds planes center-3 ..= center+3
        let first_plane = center - 3;
        let get = |di: i64, j: usize, k: usize, comp: usize| -> f64 {
            let plane_idx = (center as i64 + di - first_plane as i64) as usize;
            ring[plane_idx][idx(j, k)][comp]
        };

        for j in 0..n {
            for k in 0..n {
                // derivatives of the 9 differentiated components
                // d[form][comp][direction]: direction 0 = u, 1 = v, 2 = φ
                let mut der = [[[0.0f64; 3]; 3]; 3];
                for form in 0..3 {
                    for comp in 0..3 {
                        let c = form * 3 + comp;
                        let mut su = 0.0;
                        let mut sv = 0.0;
                        let mut sp = 0.0;
                        for (t, &wgt) in STENCIL7.iter().enumerate() {
                            let o = t as i64 - 3;
                            su += wgt * get(o, j, k, c);
                            sv += wgt * ring[3][idx(wrap(j as i64 + o), k)][c];
                            sp += wgt * ring[3][idx(j, wrap(k as i64 + o))][c];
                        }
                        der[form][comp] = [su / hu, sv / hv, sp / hp];
                    }
                }
                let here = &ring[3][idx(j, k)];
                let form_at = |f: usize| [here[f * 3], here[f * 3 + 1], here[f * 3 + 2]];
                let w1 = form_at(1);
                let t01 = form_at(2);
                let comb = form_at(3);

                // d(P du + Q dv + R dφ) components: [uv, uφ, vφ]
                let dform = |f: usize| -> [f64; 3] {
                    [
                        der[f][1][0] - der[f][0][1],
                        der[f][2][0] - der[f][0][2],
                        der[f][2][1] - der[f][1][2],
                    ]
                };
                let wedge = |a: [f64; 3], b: [f64; 3]| -> [f64; 3] {
                    [
                        a[0] * b[1] - a[1] * b[0],
                        a[0] * b[2] - a[2] * b[0],
                        a[1] * b[2] - a[2] * b[1],
                    ]
                };

                let r1 = {
                    let d = dform(0);
                    let w = wedge(t01, w1);
                    [d[0] + w[0], d[1] + w[1], d[2] + w[2]]
                };
                let r2 = {
                    let d = dform(1);
                    let w = wedge(comb, t01);
                    [d[0] + w[0], d[1] + w[1], d[2] + w[2]]
                };
                let r3 = {
                    let d = dform(2);
                    let w = wedge(comb, w1);
                    [d[0] - w[0], d[1] - w[1], d[2] - w[2]]
                };
                for c in 0..3 {
                    worst[0] = worst[0].max(r1[c].abs());
                    worst[1] = worst[1].max(r2[c].abs());
                    worst[2] = worst[2].max(r3[c].abs());
                }
            }
        }

        if center + 4 <= n {
            ring.pop_front();
            ring.push_back(plane(center + 4));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_sphere_gauss_curvature_is_one() {
        let s = make_round_sphere_surface();
        for &(u, v) in &[(0.4, 0.0), (1.5, 2.0), (2.6, 5.0)] {
            assert_abs_diff_eq!(gauss_curvature(&s, u, v), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(gauss_curvature_fd(&s, u, v), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn flat_patch_gauss_curvature_vanishes() {
        let s = SurfaceData {
            u_range: (0.05, 3.0),
            e: ScalarField::constant(1.0),
            f_mix: ScalarField::constant(0.0),
            g: ScalarField::constant(1.0),
            beta_u: ScalarField::constant(0.0),
            beta_v: ScalarField::constant(0.0),
            orientation: 1.0,
            provenance: Provenance::Raw,
            analytic_gauss: None,
        };
        assert_abs_diff_eq!(gauss_curvature_fd(&s, 1.0, 1.0), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn zoll_analytic_curvature_matches_brioschi() {
        let profile = OddProfile::odd_poly(&[0.2]);
        let s = make_zoll_revolution(profile).unwrap();
        for &u in &[0.5, 1.0, 1.6, 2.2, 2.9] {
            let ka = gauss_curvature(&s, u, 1.0);
            let kf = gauss_curvature_fd(&s, u, 1.0);
            assert_abs_diff_eq!(ka, kf, epsilon = 1e-6);
        }
    }

    #[test]
    fn profile_validation_rejects_nonvanishing_ends() {
        // h(t) = 0.2 t does not vanish at ±1.
        let bad = OddProfile::from_fn(|t| 0.2 * t);
        assert!(matches!(
            make_zoll_revolution(bad),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn zero_profile_round_trip_is_identity() {
        let s = make_round_sphere_surface();
        let derived = zoll_to_cfc_data(&s).unwrap();
        for &(u, v) in &[(0.7, 0.2), (2.0, 3.3)] {
            assert_abs_diff_eq!(derived.e.eval(u, v), s.e.eval(u, v), epsilon = 1e-12);
            assert_abs_diff_eq!(derived.g.eval(u, v), s.g.eval(u, v), epsilon = 1e-12);
            assert_abs_diff_eq!(derived.beta_v.eval(u, v), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(derived.beta_u.eval(u, v), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conformal_identity_and_constant_scaling() {
        let s = make_round_sphere_surface();
        let id = conformal_transform(&s, ScalarField::constant(1.0)).unwrap();
        let scaled = conformal_transform(&s, ScalarField::constant(4.0)).unwrap();
        let (u, v) = (1.2, 0.7);
        assert_abs_diff_eq!(id.e.eval(u, v), s.e.eval(u, v), epsilon = 1e-13);
        assert_abs_diff_eq!(id.beta_v.eval(u, v), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(scaled.e.eval(u, v), 4.0 * s.e.eval(u, v), epsilon = 1e-12);
        assert_abs_diff_eq!(scaled.g.eval(u, v), 4.0 * s.g.eval(u, v), epsilon = 1e-12);
        // d log √L = 0 for constant L, so β is unchanged.
        assert_abs_diff_eq!(scaled.beta_u.eval(u, v), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(scaled.beta_v.eval(u, v), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn nonpositive_conformal_factor_is_rejected() {
        let s = make_round_sphere_surface();
        let l = ScalarField::new(|u, _| u - 1.0);
        assert!(matches!(
            conformal_transform(&s, l),
            Err(Error::NonPositiveConformalFactor { .. })
        ));
    }

    #[test]
    fn round_sphere_magnetic_residual_is_tiny() {
        let s = make_round_sphere_surface();
        assert!(magnetic_residual(&s, 32).unwrap() < 1e-10);
    }

    #[test]
    fn closed_but_wrong_beta_still_fails_when_it_breaks_the_equation() {
        // A v-dependent 1-form that is not closed: β = 0.1·u dv, so
        // dβ = 0.1 du∧dv while (1 − K) Ω = 0 on the round sphere.
        let s = make_round_sphere_surface();
        let bad = s.with_beta(
            ScalarField::constant(0.0),
            ScalarField::new(|u, _| 0.1 * u).with_partials(|_, _| 0.1, |_, _| 0.0),
        );
        assert!(magnetic_residual(&bad, 32).unwrap() > 1e-3);
    }

    #[test]
    fn great_circles_close_on_the_round_sphere() {
        let s = make_round_sphere_surface();
        let traj =
            integrate_beta_geodesic(&s, (std::f64::consts::FRAC_PI_2, 0.0), 0.7, TWO_PI, 1e-3)
                .unwrap();
        assert!(!traj.truncated);
        assert!(magnetic_closure_defect(&traj) < 1e-6);
    }

    #[test]
    fn zoll_geodesics_close_after_two_pi() {
        let s = make_zoll_revolution(OddProfile::odd_poly(&[0.2])).unwrap();
        let traj =
            integrate_beta_geodesic(&s, (std::f64::consts::FRAC_PI_2, 0.0), 0.7, TWO_PI, 1e-3)
                .unwrap();
        assert!(!traj.truncated);
        let defect = magnetic_closure_defect(&traj);
        assert!(defect < 1e-4, "closure defect {defect}");
    }

    #[test]
    fn derived_magnetic_form_is_rotationally_invariant() {
        let s = make_zoll_revolution(OddProfile::odd_poly(&[0.35])).unwrap();
        let derived = zoll_to_cfc_data(&s).unwrap();
        let u = 1.1;
        let b0 = derived.beta_v.eval(u, 0.3);
        for &v in &[1.0, 2.5, 4.0, 6.0] {
            assert_abs_diff_eq!(derived.beta_v.eval(u, v), b0, epsilon = 1e-10);
            assert_abs_diff_eq!(derived.beta_u.eval(u, v), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derived_magnetic_residual_is_small() {
        let s = make_zoll_revolution(OddProfile::odd_poly(&[0.2])).unwrap();
        let derived = zoll_to_cfc_data(&s).unwrap();
        assert!(magnetic_residual(&derived, 64).unwrap() < 1e-5);
    }

    #[test]
    fn derived_costar_is_closed() {
        let s = make_zoll_revolution(OddProfile::odd_poly(&[0.2])).unwrap();
        let derived = zoll_to_cfc_data(&s).unwrap();
        assert!(costar_residual(&derived, 32).unwrap() < 1e-9);
    }

    #[test]
    fn round_sphere_structure_residuals_at_grid_64() {
        let s = make_round_sphere_surface();
        let cof = build_cfc_coframe(&s).unwrap();
        let r = structure_equation_residual(&cof, 64).unwrap();
        for (i, &ri) in r.iter().enumerate() {
            assert!(ri < 1e-8, "residual {i} = {ri:.3e}");
        }
    }

    #[test]
    fn conformal_transform_preserves_beta_geodesics() {
        // L equal to the Gauss curvature of a rotational metric, applied to
        // the round sphere: the transformed magnetic geodesics trace the
        // same great circles.
        let round = make_round_sphere_surface();
        let zoll = make_zoll_revolution(OddProfile::odd_poly(&[0.2])).unwrap();
        let k0 = zoll.analytic_gauss.clone().unwrap();
        let conf = conformal_transform(&round, k0).unwrap();
        let base = integrate_beta_geodesic(&round, (1.2, 0.3), 0.4, TWO_PI, 1e-3).unwrap();
        let transformed = integrate_beta_geodesic(&conf, (1.2, 0.3), 0.4, 8.0, 1e-3).unwrap();
        let d = trajectory_hausdorff(&base, &transformed);
        assert!(d < 1e-5, "hausdorff {d}");
    }

    #[test]
    fn clairaut_invariant_is_conserved() {
        let s = make_round_sphere_surface();
        let traj = integrate_beta_geodesic(&s, (1.2, 0.0), 1.0, 3.0, 1e-3).unwrap();
        let first = &traj.samples[0];
        let c0 = first.u.sin() * first.chi.sin();
        for sample in traj.samples.iter().step_by(200) {
            assert_abs_diff_eq!(sample.u.sin() * sample.chi.sin(), c0, epsilon = 1e-9);
        }
    }

    #[test]
    fn orientation_involution_preserves_trajectories() {
        let profile = OddProfile::odd_poly(&[0.2]);
        let zoll = make_zoll_revolution(profile).unwrap();
        let data = zoll_to_cfc_data(&zoll).unwrap();
        let flipped = data.orientation_flipped_with_negated_beta();
        let a = integrate_beta_geodesic(&data, (1.3, 0.2), 0.5, 4.0, 1e-3).unwrap();
        let b = integrate_beta_geodesic(&flipped, (1.3, 0.2), -0.5, 4.0, 1e-3).unwrap();
        // Same starting direction: cos χ e₁ + sin χ e₂ = cos(−χ) e₁ + sin(−χ)(−e₂).
        let d = trajectory_hausdorff(&a, &b);
        assert!(d < 1e-5, "hausdorff {d}");
    }

    #[test]
    fn scalar_rotation_law() {
        let profile = OddProfile::odd_poly(&[0.25]);
        let data = zoll_to_cfc_data(&make_zoll_revolution(profile).unwrap()).unwrap();
        let cof = build_cfc_coframe(&data).unwrap();
        for &(u, v, phi) in &[(0.9, 0.4, 0.3), (2.0, 1.0, 2.2), (1.4, 4.4, 5.0)] {
            let (i0, j0) = cof.scalars(u, v, phi);
            let (i1, j1) = cof.scalars(u, v, phi + std::f64::consts::FRAC_PI_2);
            assert_abs_diff_eq!(i1, -j0, epsilon = 1e-10);
            assert_abs_diff_eq!(j1, i0, epsilon = 1e-10);
        }
    }

    #[test]
    fn round_sphere_coframe_matches_frame_forms() {
        // With β = 0: ω₀ = −η₁₂, ω₁ = η₂, θ₀₁ = η₁.
        let s = make_round_sphere_surface();
        let cof = build_cfc_coframe(&s).unwrap();
        let (u, v, phi) = (1.1, 0.8, 0.6);
        let w0 = cof.omega0(u, v, phi);
        let e12 = cof.eta12(u, v, phi);
        for c in 0..3 {
            assert_abs_diff_eq!(w0[c], -e12[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn structure_residual_detects_scalar_perturbation() {
        let s = make_round_sphere_surface();
        let mut cof = build_cfc_coframe(&s).unwrap();
        let clean = structure_equation_residual(&cof, 24).unwrap();
        cof.i_offset = 0.01;
        let dirty = structure_equation_residual(&cof, 24).unwrap();
        assert!(dirty[1] > 1e-3, "perturbed second residual {}", dirty[1]);
        assert!(clean[1] < 1e-4, "clean second residual {}", clean[1]);
    }
}
