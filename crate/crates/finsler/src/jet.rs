//! Central-difference jets with Richardson extrapolation.
//!
//! This is the fallback differentiation path for oracles supplied as plain
//! callables, and the engine behind the third-order jets that no analytic
//! path provides directly. Mixed partials up to total order three are formed
//! as tensor products of one-dimensional central stencils; the whole stencil
//! is then re-evaluated at halved steps and extrapolated.

use crate::error::{Error, Result};

/// A request for one partial derivative of a scalar callable.
pub struct JetRequest<'a> {
    /// Target function; an `Err` from it is treated as a stencil point
    /// falling outside the callable's domain.
    pub f: &'a dyn Fn(&[f64]) -> Result<f64>,
    /// Base point.
    pub point: &'a [f64],
    /// Derivative order per coordinate; the total order must be ≤ 3.
    pub multi_index: &'a [usize],
    /// Relative step; the absolute base step is `rel_step * (1 + |point|_∞)`.
    pub rel_step: f64,
    /// Richardson levels (≥ 1); each level halves the step.
    pub levels: usize,
}

/// A derivative value with an a-posteriori error estimate from the last
/// extrapolation correction.
#[derive(Clone, Copy, Debug)]
pub struct JetValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// One-dimensional central stencils, offsets in units of `h`.
fn stencil_1d(order: usize) -> (&'static [f64], &'static [f64]) {
    match order {
        0 => (&[0.0], &[1.0]),
        1 => (&[-1.0, 1.0], &[-0.5, 0.5]),
        2 => (&[-1.0, 0.0, 1.0], &[1.0, -2.0, 1.0]),
        3 => (&[-2.0, -1.0, 1.0, 2.0], &[-0.5, 1.0, -1.0, 0.5]),
        _ => unreachable!("orders above 3 are rejected earlier"),
    }
}

fn eval_stencil(req: &JetRequest, h: f64) -> Result<f64> {
    let dims: Vec<usize> = (0..req.point.len())
        .filter(|&i| req.multi_index[i] > 0)
        .collect();
    let mut acc = 0.0;
    let mut point = req.point.to_vec();

    // Walk the tensor product of the per-axis stencils.
    let per_axis: Vec<(&[f64], &[f64])> = dims
        .iter()
        .map(|&i| stencil_1d(req.multi_index[i]))
        .collect();
    let mut idx = vec![0usize; dims.len()];
    loop {
        let mut weight = 1.0;
        for (k, &i) in dims.iter().enumerate() {
            let (offsets, weights) = per_axis[k];
            point[i] = req.point[i] + offsets[idx[k]] * h;
            weight *= weights[idx[k]];
        }
        let v = (req.f)(&point).map_err(|e| Error::StencilOutsideDomain(e.to_string()))?;
        acc += weight * v;

        // advance the multi-counter
        let mut k = 0;
        loop {
            if k == dims.len() {
                let scale: f64 = dims
                    .iter()
                    .map(|&i| h.powi(req.multi_index[i] as i32))
                    .product();
                return Ok(acc / scale);
            }
            idx[k] += 1;
            if idx[k] < per_axis[k].0.len() {
                break;
            }
            idx[k] = 0;
            point[dims[k]] = req.point[dims[k]];
            k += 1;
        }
    }
}

/// Central-difference derivative with Richardson extrapolation.
///
/// Returns [`Error::NoisyDerivative`] when the extrapolation corrections stop
/// contracting while still being significant, which indicates the step has
/// reached the rounding floor for the requested order.
pub fn numeric_jet(req: &JetRequest) -> Result<JetValue> {
    let order: usize = req.multi_index.iter().sum();
    if order == 0 {
        let value = (req.f)(req.point)?;
        return Ok(JetValue {
            value,
            error_estimate: 0.0,
        });
    }
    if order > 3 {
        return Err(Error::InvalidParameter(format!(
            "jet order {order} exceeds the supported maximum 3"
        )));
    }
    if req.multi_index.len() != req.point.len() {
        return Err(Error::InvalidParameter(
            "multi-index length must match the point dimension".into(),
        ));
    }

    let scale = 1.0 + req.point.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    let h0 = req.rel_step * scale;
    let floor = f64::EPSILON.powf(1.0 / (order as f64 + 1.0)) * scale * 1e-2;
    if h0 <= floor {
        return Err(Error::StepTooSmall {
            step: h0,
            floor,
            order,
        });
    }

    let levels = req.levels.max(1);
    // Richardson table over step halving; the scheme is O(h²) at base order.
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels);
    for lev in 0..levels {
        let h = h0 / (1 << lev) as f64;
        let d = eval_stencil(req, h)?;
        let mut row = vec![d];
        for j in 1..=lev {
            let factor = 4.0f64.powi(j as i32);
            let extrap = (factor * row[j - 1] - table[lev - 1][j - 1]) / (factor - 1.0);
            row.push(extrap);
        }
        table.push(row);
    }

    let best = *table[levels - 1].last().unwrap();
    if levels == 1 {
        return Ok(JetValue {
            value: best,
            error_estimate: f64::NAN,
        });
    }
    let prev = *table[levels - 2].last().unwrap();
    let last_corr = (best - prev).abs();
    if levels >= 3 {
        let prev2 = *table[levels - 3].last().unwrap();
        let prev_corr = (prev - prev2).abs();
        let noise_floor = 1e-9 * (1.0 + best.abs());
        if last_corr > 4.0 * prev_corr && last_corr > noise_floor {
            return Err(Error::NoisyDerivative {
                last: last_corr,
                previous: prev_corr,
            });
        }
    }
    Ok(JetValue {
        value: best,
        error_estimate: last_corr,
    })
}

/// Convenience wrapper for a first derivative along one coordinate.
pub fn partial(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    point: &[f64],
    axis: usize,
    rel_step: f64,
    levels: usize,
) -> Result<JetValue> {
    let mut mi = vec![0usize; point.len()];
    mi[axis] = 1;
    numeric_jet(&JetRequest {
        f,
        point,
        multi_index: &mi,
        rel_step,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubic_first_derivative_is_sharp() {
        let f = |p: &[f64]| Ok(p[0] * p[0] * p[0]);
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[2.0],
            multi_index: &[1],
            rel_step: 1e-2,
            levels: 3,
        })
        .unwrap();
        assert_abs_diff_eq!(r.value, 12.0, epsilon = 1e-9);
    }

    #[test]
    fn mixed_second_of_separable_function_vanishes() {
        // ∂²/∂x∂y of x² + y² is zero.
        let f = |p: &[f64]| Ok(p[0] * p[0] + p[1] * p[1]);
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[0.0, 0.0],
            multi_index: &[1, 1],
            rel_step: 1e-2,
            levels: 3,
        })
        .unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn third_derivative_of_sine() {
        let f = |p: &[f64]| Ok(p[0].sin());
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[0.0],
            multi_index: &[3],
            rel_step: 1e-2,
            levels: 3,
        })
        .unwrap();
        assert_abs_diff_eq!(r.value, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn triple_mixed_partial() {
        // ∂³/∂x∂y∂z of x y z e^x = (1 + x) e^x at x.
        let f = |p: &[f64]| Ok(p[0] * p[1] * p[2] * p[0].exp());
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[0.4, -0.3, 0.9],
            multi_index: &[1, 1, 1],
            rel_step: 1e-2,
            levels: 3,
        })
        .unwrap();
        assert_abs_diff_eq!(r.value, (1.0 + 0.4) * 0.4f64.exp(), epsilon = 1e-7);
    }

    #[test]
    fn stencil_escape_is_reported() {
        let f = |p: &[f64]| {
            if p[0].abs() > 1.0 {
                Err(Error::OutsideDomain)
            } else {
                Ok(p[0])
            }
        };
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[0.999],
            multi_index: &[1],
            rel_step: 1e-2,
            levels: 2,
        });
        assert!(matches!(r, Err(Error::StencilOutsideDomain(_))));
    }

    #[test]
    fn tiny_step_is_rejected() {
        let f = |p: &[f64]| Ok(p[0]);
        let r = numeric_jet(&JetRequest {
            f: &f,
            point: &[1.0],
            multi_index: &[3],
            rel_step: 1e-9,
            levels: 2,
        });
        assert!(matches!(r, Err(Error::StepTooSmall { .. })));
    }
}
