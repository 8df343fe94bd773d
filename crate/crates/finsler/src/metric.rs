//! Metric oracles and the pointwise invariants derived from them.
//!
//! An oracle evaluates a positively 1-homogeneous norm `F(x, y)` on a single
//! coordinate chart. Everything downstream (the fundamental tensor, the
//! Cartan tensor, sprays, curvature) is obtained from jets of `F²`.
//!
//! Two differentiation routes exist. Oracles built by the gallery
//! constructors evaluate `F²` in [`Dual2`] arithmetic and therefore supply
//! analytic first and second derivatives in any direction of the `(x, y)`
//! slots. Oracles wrapped from plain callables fall back to the
//! central-difference engine in [`crate::jet`] with a relative step of `1e-2`
//! and three Richardson levels. Third derivatives (the Cartan tensor) always
//! difference the best available Hessian once.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dual::{Dual2, Scalar};
use crate::error::{Error, Result};
use crate::jet::{numeric_jet, JetRequest};

/// Default relative step for the finite-difference fallback.
pub const FD_REL_STEP: f64 = 1e-2;
/// Default Richardson levels for the finite-difference fallback.
pub const FD_LEVELS: usize = 3;
/// Default floor on the smallest eigenvalue of the fundamental tensor.
pub const CONVEXITY_FLOOR: f64 = 1e-8;

/// A 2-jet of `F²` along two directions of the combined `(x, y)` slots.
#[derive(Clone, Copy, Debug)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

/// Implemented by concrete metric families. The generic scalar parameter
/// lets one formula serve both plain evaluation and jet propagation.
pub trait MetricDef: Send + Sync + 'static {
    fn dim(&self) -> usize;
    fn name(&self) -> String;
    /// Whether the family claims `F(x, -y) = F(x, y)`. This is a claim to be
    /// probed, not an assumption the numerics rely on.
    fn claims_reversible(&self) -> bool;
    fn in_domain(&self, x: &[f64]) -> bool;
    fn f_squared<S: Scalar>(&self, x: &[S], y: &[S]) -> Result<S>;
}

/// Object-safe evaluation surface backing [`MetricOracle`].
trait ErasedMetric: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> String;
    fn claims_reversible(&self) -> bool;
    fn in_domain(&self, x: &[f64]) -> bool;
    fn f2(&self, x: &[f64], y: &[f64]) -> Result<f64>;
    fn has_analytic_jets(&self) -> bool;
    fn f2_jet2(
        &self,
        x: &[f64],
        y: &[f64],
        dx1: &[f64],
        dy1: &[f64],
        dx2: &[f64],
        dy2: &[f64],
    ) -> Result<Jet2>;
}

impl<T: MetricDef> ErasedMetric for T {
    fn dim(&self) -> usize {
        MetricDef::dim(self)
    }
    fn name(&self) -> String {
        MetricDef::name(self)
    }
    fn claims_reversible(&self) -> bool {
        MetricDef::claims_reversible(self)
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        MetricDef::in_domain(self, x)
    }
    fn f2(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.f_squared::<f64>(x, y)
    }
    fn has_analytic_jets(&self) -> bool {
        true
    }
    fn f2_jet2(
        &self,
        x: &[f64],
        y: &[f64],
        dx1: &[f64],
        dy1: &[f64],
        dx2: &[f64],
        dy2: &[f64],
    ) -> Result<Jet2> {
        let xs: Vec<Dual2> = (0..x.len())
            .map(|i| Dual2::seeded(x[i], dx1[i], dx2[i]))
            .collect();
        let ys: Vec<Dual2> = (0..y.len())
            .map(|i| Dual2::seeded(y[i], dy1[i], dy2[i]))
            .collect();
        let r = self.f_squared::<Dual2>(&xs, &ys)?;
        Ok(Jet2 {
            value: r.v,
            d1: r.d1,
            d2: r.d2,
            d12: r.d12,
        })
    }
}

/// Metric supplied as a plain `f64` callable; jets fall back to central
/// differences.
struct ClosureMetric<D, F> {
    dim: usize,
    name: String,
    reversible: bool,
    domain: D,
    f: F,
}

impl<D, F> ErasedMetric for ClosureMetric<D, F>
where
    D: Fn(&[f64]) -> bool + Send + Sync,
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        self.name.clone()
    }
    fn claims_reversible(&self) -> bool {
        self.reversible
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        (self.domain)(x)
    }
    fn f2(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let f = (self.f)(x, y);
        Ok(f * f)
    }
    fn has_analytic_jets(&self) -> bool {
        false
    }
    fn f2_jet2(
        &self,
        x: &[f64],
        y: &[f64],
        dx1: &[f64],
        dy1: &[f64],
        dx2: &[f64],
        dy2: &[f64],
    ) -> Result<Jet2> {
        // Difference F² along the two requested directions of (x, y).
        let m = self.dim;
        let base: Vec<f64> = [0.0, 0.0].to_vec();
        let eval = |t: &[f64]| -> Result<f64> {
            let xs: Vec<f64> = (0..m)
                .map(|i| x[i] + t[0] * dx1[i] + t[1] * dx2[i])
                .collect();
            let ys: Vec<f64> = (0..m)
                .map(|i| y[i] + t[0] * dy1[i] + t[1] * dy2[i])
                .collect();
            if !(self.domain)(&xs) {
                return Err(Error::OutsideDomain);
            }
            self.f2(&xs, &ys)
        };
        let value = eval(&base)?;
        let d1 = numeric_jet(&JetRequest {
            f: &eval,
            point: &base,
            multi_index: &[1, 0],
            rel_step: FD_REL_STEP,
            levels: FD_LEVELS,
        })?
        .value;
        let d2 = numeric_jet(&JetRequest {
            f: &eval,
            point: &base,
            multi_index: &[0, 1],
            rel_step: FD_REL_STEP,
            levels: FD_LEVELS,
        })?
        .value;
        let d12 = numeric_jet(&JetRequest {
            f: &eval,
            point: &base,
            multi_index: &[1, 1],
            rel_step: FD_REL_STEP,
            levels: FD_LEVELS,
        })?
        .value;
        Ok(Jet2 { value, d1, d2, d12 })
    }
}

/// Shareable handle to a metric on a chart.
///
/// Oracles are immutable after construction; clones share the definition and
/// may be evaluated from many threads at once.
#[derive(Clone)]
pub struct MetricOracle {
    inner: Arc<dyn ErasedMetric>,
}

impl std::fmt::Debug for MetricOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricOracle")
            .field("name", &self.inner.name())
            .field("dim", &self.inner.dim())
            .finish()
    }
}

impl MetricOracle {
    pub fn from_def<T: MetricDef>(def: T) -> Self {
        MetricOracle {
            inner: Arc::new(def),
        }
    }

    /// Wraps a plain `F(x, y)` callable. All derivatives will be formed by
    /// central differences.
    pub fn from_fn<D, F>(dim: usize, name: &str, reversible: bool, domain: D, f: F) -> Self
    where
        D: Fn(&[f64]) -> bool + Send + Sync + 'static,
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        MetricOracle {
            inner: Arc::new(ClosureMetric {
                dim,
                name: name.to_string(),
                reversible,
                domain,
                f,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn name(&self) -> String {
        self.inner.name()
    }

    pub fn claims_reversible(&self) -> bool {
        self.inner.claims_reversible()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|c| c.is_finite()) && self.inner.in_domain(x)
    }

    pub fn has_analytic_jets(&self) -> bool {
        self.inner.has_analytic_jets()
    }

    fn check_args(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if !self.in_domain(x) {
            return Err(Error::OutsideDomain);
        }
        if y.len() != self.dim() || y.iter().all(|c| c.abs() == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(())
    }

    /// `F(x, y)`, positive for `y ≠ 0`.
    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_args(x, y)?;
        let f2 = self.inner.f2(x, y)?;
        if !(f2 > 0.0) || !f2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "oracle '{}' returned non-positive F² = {f2}",
                self.name()
            )));
        }
        Ok(f2.sqrt())
    }

    /// `F²(x, y)` without the positivity check, for internal jets.
    pub fn f_squared(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.inner.f2(x, y)
    }

    /// 2-jet of `F²` along two directions of the combined `(x, y)` slots.
    pub fn f_squared_jet2(
        &self,
        x: &[f64],
        y: &[f64],
        dx1: &[f64],
        dy1: &[f64],
        dx2: &[f64],
        dy2: &[f64],
    ) -> Result<Jet2> {
        self.inner.f2_jet2(x, y, dx1, dy1, dx2, dy2)
    }

    /// Gradient of `F²` in the `y` slot.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let m = self.dim();
        let zero = vec![0.0; m];
        let mut g = DVector::zeros(m);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let jet = self.f_squared_jet2(x, y, &zero, &e, &zero, &zero)?;
            g[i] = jet.d1;
        }
        Ok(g)
    }

    /// Gradient of `F²` in the `x` slot.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let m = self.dim();
        let zero = vec![0.0; m];
        let mut g = DVector::zeros(m);
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            let jet = self.f_squared_jet2(x, y, &e, &zero, &zero, &zero)?;
            g[i] = jet.d1;
        }
        Ok(g)
    }

    /// Hessian of `F²` in the `y` slot.
    pub fn hess_yy(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let zero = vec![0.0; m];
        let mut h = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut ei = vec![0.0; m];
                ei[i] = 1.0;
                let mut ej = vec![0.0; m];
                ej[j] = 1.0;
                let jet = self.f_squared_jet2(x, y, &zero, &ei, &zero, &ej)?;
                h[(i, j)] = jet.d12;
                h[(j, i)] = jet.d12;
            }
        }
        Ok(h)
    }

    /// `y^k ∂²F²/∂x^k∂y^l` for each `l`: the x-directional derivative along
    /// `y` of the y-gradient of `F²`.
    pub fn hess_xy_contracted(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let m = self.dim();
        let zero = vec![0.0; m];
        let mut out = DVector::zeros(m);
        for l in 0..m {
            let mut el = vec![0.0; m];
            el[l] = 1.0;
            // direction 1: move x along y; direction 2: move y along e_l
            let jet = self.f_squared_jet2(x, y, y, &zero, &zero, &el)?;
            out[l] = jet.d12;
        }
        Ok(out)
    }
}

/// The osculating quadratic form `g` at `(x, y)`.
#[derive(Clone, Debug)]
pub struct FundamentalTensor {
    pub g: DMatrix<f64>,
    pub smallest_eigenvalue: f64,
}

impl FundamentalTensor {
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a.transpose() * &self.g * b)[(0, 0)]
    }
}

/// Fundamental tensor `g_ij = ½ ∂²F²/∂y^i∂y^j` with the default convexity
/// floor.
pub fn fundamental_tensor(
    oracle: &MetricOracle,
    x: &[f64],
    y: &[f64],
) -> Result<FundamentalTensor> {
    fundamental_tensor_with_floor(oracle, x, y, CONVEXITY_FLOOR)
}

pub fn fundamental_tensor_with_floor(
    oracle: &MetricOracle,
    x: &[f64],
    y: &[f64],
    floor: f64,
) -> Result<FundamentalTensor> {
    oracle.check_args(x, y)?;
    let g = oracle.hess_yy(x, y)? * 0.5;
    let sym = nalgebra::SymmetricEigen::new(g.clone());
    let lambda_min = sym
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lambda_min <= floor {
        return Err(Error::NotConvex { lambda_min, floor });
    }
    Ok(FundamentalTensor {
        g,
        smallest_eigenvalue: lambda_min,
    })
}

/// Fully symmetric Cartan tensor value `C_ijk = ¼ ∂³F²/∂y^i∂y^j∂y^k`.
#[derive(Clone, Debug)]
pub struct CartanTensorValue {
    pub dim: usize,
    /// Row-major `dim³` entries.
    pub c: Vec<f64>,
}

impl CartanTensorValue {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max_{i,j} |C_ijk y^k|`, the homogeneity contraction defect.
    pub fn contraction_defect(&self, y: &[f64]) -> f64 {
        let m = self.dim;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += self.get(i, j, k) * y[k];
                }
                worst = worst.max(acc.abs());
            }
        }
        worst
    }
}

/// Cartan tensor at `(x, y)`, formed by differencing the Hessian of `F²`
/// once along each coordinate direction (with Richardson extrapolation).
pub fn cartan_tensor(oracle: &MetricOracle, x: &[f64], y: &[f64]) -> Result<CartanTensorValue> {
    oracle.check_args(x, y)?;
    let m = oracle.dim();
    let scale = 1.0 + y.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let h0 = FD_REL_STEP * scale;

    // d/dt Hess_yy(x, y + t e_k) via central differences at three Richardson
    // levels; each Hessian entry is already analytic or extrapolated.
    let hess_at = |yk: &[f64]| oracle.hess_yy(x, yk);
    let mut c = vec![0.0f64; m * m * m];
    for k in 0..m {
        let mut levels: Vec<DMatrix<f64>> = Vec::new();
        for lev in 0..FD_LEVELS {
            let h = h0 / (1 << lev) as f64;
            let mut yp = y.to_vec();
            yp[k] += h;
            let mut ym = y.to_vec();
            ym[k] -= h;
            let d = (hess_at(&yp)? - hess_at(&ym)?) / (2.0 * h);
            levels.push(d);
        }
        // Richardson on the matrix sequence.
        let mut table = levels;
        for j in 1..table.len() {
            for i in (j..table.len()).rev() {
                let factor = 4.0f64.powi(j as i32);
                table[i] = (table[i].clone() * factor - table[i - 1].clone()) / (factor - 1.0);
            }
        }
        let third = table.last().unwrap();
        for i in 0..m {
            for j in 0..m {
                c[(i * m + j) * m + k] = 0.25 * third[(i, j)];
            }
        }
    }

    // Symmetrize over index permutations; the raw values differ only by
    // differencing noise.
    let mut sym = vec![0.0f64; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let mut acc = 0.0;
                for perm in [
                    (i, j, k),
                    (i, k, j),
                    (j, i, k),
                    (j, k, i),
                    (k, i, j),
                    (k, j, i),
                ] {
                    acc += c[(perm.0 * m + perm.1) * m + perm.2];
                }
                sym[(i * m + j) * m + k] = acc / 6.0;
            }
        }
    }
    Ok(CartanTensorValue { dim: m, c: sym })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn euclidean(dim: usize) -> MetricOracle {
        MetricOracle::from_fn(
            dim,
            "euclidean-closure",
            true,
            |_| true,
            |_, y| y.iter().map(|c| c * c).sum::<f64>().sqrt(),
        )
    }

    #[test]
    fn euclidean_fundamental_tensor_is_identity() {
        let o = euclidean(3);
        let t = fundamental_tensor(&o, &[0.1, 0.2, -0.3], &[0.4, -1.0, 0.7]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(t.g[(i, j)], expect, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn zero_vector_is_rejected() {
        let o = euclidean(2);
        assert!(matches!(
            o.eval_f(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn euler_identity_closure_path() {
        let o = euclidean(2);
        let x = [0.3, -0.1];
        let y = [1.2, 0.5];
        let g = fundamental_tensor(&o, &x, &y).unwrap();
        let yv = DVector::from_row_slice(&y);
        let f = o.eval_f(&x, &y).unwrap();
        assert_relative_eq!(g.inner(&yv, &yv), f * f, max_relative = 1e-6);
    }

    #[test]
    fn cartan_tensor_of_quadratic_norm_vanishes() {
        let o = euclidean(2);
        let c = cartan_tensor(&o, &[0.0, 0.0], &[0.8, 0.6]).unwrap();
        assert!(c.norm() < 1e-5, "norm = {}", c.norm());
    }
}
