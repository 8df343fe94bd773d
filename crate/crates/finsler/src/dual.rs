//! Second-order forward differentials.
//!
//! [`Dual2`] carries a value together with first derivatives along two fixed
//! directions and the mixed second derivative. Evaluating a formula in
//! `Dual2` arithmetic therefore produces the exact 2-jet of the formula along
//! those directions, up to rounding. Metric constructors use this to expose
//! analytic derivatives of `F²` without writing out chain rules by hand.
//!
//! [`CDual`] is a complex number with `Dual2` components, used by formulas
//! that pass through complex intermediates before taking a real part.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value, two directional derivatives, and the mixed second derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl Dual2 {
    pub const fn constant(v: f64) -> Self {
        Dual2 {
            v,
            d1: 0.0,
            d2: 0.0,
            d12: 0.0,
        }
    }

    /// A variable entering with the given rates along the two directions.
    pub const fn seeded(v: f64, d1: f64, d2: f64) -> Self {
        Dual2 {
            v,
            d1,
            d2,
            d12: 0.0,
        }
    }

    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Dual2 {
            v: f,
            d1: df * self.d1,
            d2: df * self.d2,
            d12: df * self.d12 + d2f * self.d1 * self.d2,
        }
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }

    pub fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos(), -self.v.sin())
    }

    pub fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin(), -self.v.cos())
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn recip(self) -> Self {
        let iv = 1.0 / self.v;
        self.chain(iv, -iv * iv, 2.0 * iv * iv * iv)
    }

    pub fn powi(self, n: i32) -> Self {
        match n {
            0 => Dual2::constant(1.0),
            n if n < 0 => self.powi(-n).recip(),
            _ => {
                let mut acc = self;
                for _ in 1..n {
                    acc = acc * self;
                }
                acc
            }
        }
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d12: self.d12 + o.d12,
        }
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
            d12: self.d12 - o.d12,
        }
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + self.v * o.d2,
            d12: self.d12 * o.v + self.d1 * o.d2 + self.d2 * o.d1 + self.v * o.d12,
        }
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Dual2) -> Dual2 {
        self * o.recip()
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        Dual2 {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
            d12: -self.d12,
        }
    }
}

/// Arithmetic shared by `f64` and [`Dual2`], so oracle formulas can be
/// written once and evaluated either plainly or with an attached 2-jet.
///
/// The `val` accessor exposes the value part for branching (root selection,
/// convergence tests); branches must be locally constant in the inputs for
/// the propagated derivatives to be meaningful.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn lift(c: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    fn lift(c: f64) -> Self {
        c
    }
    fn val(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Scalar for Dual2 {
    fn lift(c: f64) -> Self {
        Dual2::constant(c)
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        Dual2::sqrt(self)
    }
    fn sin(self) -> Self {
        Dual2::sin(self)
    }
    fn cos(self) -> Self {
        Dual2::cos(self)
    }
    fn powi(self, n: i32) -> Self {
        Dual2::powi(self, n)
    }
}

/// Complex number with [`Scalar`] components.
#[derive(Clone, Copy, Debug)]
pub struct CScalar<S> {
    pub re: S,
    pub im: S,
}

pub type CDual = CScalar<Dual2>;

impl<S: Scalar> CScalar<S> {
    pub fn new(re: S, im: S) -> Self {
        CScalar { re, im }
    }

    pub fn real(re: S) -> Self {
        CScalar {
            re,
            im: S::lift(0.0),
        }
    }

    pub fn from_polar_angle(phase: f64) -> Self {
        CScalar {
            re: S::lift(phase.cos()),
            im: S::lift(phase.sin()),
        }
    }

    pub fn norm_sqr(self) -> S {
        self.re * self.re + self.im * self.im
    }

    pub fn scale(self, s: S) -> Self {
        CScalar {
            re: self.re * s,
            im: self.im * s,
        }
    }

    /// i * self
    pub fn mul_i(self) -> Self {
        CScalar {
            re: -self.im,
            im: self.re,
        }
    }

    /// Principal square root, branch cut on the negative real axis.
    ///
    /// Computed from the half-angle identities with the stable split on the
    /// sign of the real part, so no inverse trigonometry is required and the
    /// jet components remain exact away from the cut.
    pub fn sqrt(self) -> Self {
        let h = self.norm_sqr().sqrt();
        let half = S::lift(0.5);
        if self.re.val() >= 0.0 {
            let u = ((h + self.re) * half).sqrt();
            let v = self.im / (u + u);
            CScalar { re: u, im: v }
        } else {
            let t = ((h - self.re) * half).sqrt();
            let v = if self.im.val() >= 0.0 { t } else { -t };
            let u = self.im / (v + v);
            CScalar { re: u, im: v }
        }
    }
}

impl<S: Scalar> Add for CScalar<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        CScalar {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl<S: Scalar> Sub for CScalar<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        CScalar {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl<S: Scalar> Mul for CScalar<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        CScalar {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl<S: Scalar> Div for CScalar<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let d = o.norm_sqr();
        CScalar {
            re: (self.re * o.re + self.im * o.im) / d,
            im: (self.im * o.re - self.re * o.im) / d,
        }
    }
}

impl<S: Scalar> Neg for CScalar<S> {
    type Output = Self;
    fn neg(self) -> Self {
        CScalar {
            re: -self.re,
            im: -self.im,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn f_test<S: Scalar>(x: S, y: S) -> S {
        // x² sin(y) + sqrt(x + 2y) + x³y²
        x * x * y.sin() + (x + y + y).sqrt() + x.powi(3) * y.powi(2)
    }

    #[test]
    fn jet_matches_hand_derivatives() {
        let (x0, y0) = (0.7, 0.3);
        let x = Dual2::seeded(x0, 1.0, 0.0);
        let y = Dual2::seeded(y0, 0.0, 1.0);
        let r = f_test(x, y);

        let f = |x: f64, y: f64| x * x * y.sin() + (x + 2.0 * y).sqrt() + x.powi(3) * y * y;
        assert_relative_eq!(r.v, f(x0, y0), max_relative = 1e-14);

        // ∂x
        let dx = 2.0 * x0 * y0.sin() + 0.5 / (x0 + 2.0 * y0).sqrt() + 3.0 * x0 * x0 * y0 * y0;
        assert_relative_eq!(r.d1, dx, max_relative = 1e-13);
        // ∂y
        let dy = x0 * x0 * y0.cos() + 1.0 / (x0 + 2.0 * y0).sqrt() + 2.0 * x0.powi(3) * y0;
        assert_relative_eq!(r.d2, dy, max_relative = 1e-13);
        // ∂x∂y
        let dxy = 2.0 * x0 * y0.cos() - 0.5 / (x0 + 2.0 * y0).powf(1.5) + 6.0 * x0 * x0 * y0;
        assert_relative_eq!(r.d12, dxy, max_relative = 1e-13);
    }

    #[test]
    fn second_derivative_along_one_direction() {
        // Seed the same direction in both slots: d12 is the plain second derivative.
        let x = Dual2::seeded(1.3, 1.0, 1.0);
        let r = x.powi(4);
        assert_relative_eq!(r.d12, 12.0 * 1.3f64.powi(2), max_relative = 1e-14);
    }

    #[test]
    fn complex_sqrt_branches_agree_on_axis() {
        for &(re, im) in &[(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (0.0, 3.0)] {
            let z: CScalar<f64> = CScalar::new(re, im);
            let w = z.sqrt();
            let back = w * w;
            assert_relative_eq!(back.re, re, epsilon = 1e-12);
            assert_relative_eq!(back.im, im, epsilon = 1e-12);
            assert!(w.re >= 0.0 || (w.re.abs() < 1e-15 && w.im >= 0.0));
        }
    }

    #[test]
    fn complex_sqrt_jet() {
        // d/dt sqrt(t + i) at t = 0.5 against finite differences.
        let eval = |t: f64| {
            let z: CScalar<f64> = CScalar::new(t, 1.0);
            z.sqrt()
        };
        let t = Dual2::seeded(0.5, 1.0, 0.0);
        let z = CScalar::new(t, Dual2::constant(1.0));
        let w = z.sqrt();
        let h = 1e-6;
        let fd_re = (eval(0.5 + h).re - eval(0.5 - h).re) / (2.0 * h);
        let fd_im = (eval(0.5 + h).im - eval(0.5 - h).im) / (2.0 * h);
        assert_relative_eq!(w.re.d1, fd_re, epsilon = 1e-9);
        assert_relative_eq!(w.im.d1, fd_im, epsilon = 1e-9);
    }
}
