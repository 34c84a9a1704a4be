//! Bracketed level finding for monotone demand curves.

use crate::error::{Error, Result};

pub(crate) const MAX_ITER: usize = 200;

/// Smallest `x >= 0` with `f(x) <= target`, for `f` non-increasing and
/// continuous wherever finite. `hint` is an initial upper bracket; it is
/// doubled until feasible. The returned point always satisfies
/// `f(x) <= target`.
///
/// Illinois steps with a bisection fallback. Iterates until the bracket
/// collapses to float resolution or the residual is at rounding level;
/// `tol` is the relative bracket width accepted if the iteration cap hits.
pub(crate) fn smallest_level<F>(f: F, target: f64, hint: f64, tol: f64, what: &'static str) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let g0 = f(0.0) - target;
    if g0 <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = if hint.is_finite() && hint > 0.0 { hint } else { 1.0 };
    let mut ghi = f(hi) - target;
    let mut grow = 0;
    while ghi > 0.0 {
        hi *= 2.0;
        ghi = f(hi) - target;
        grow += 1;
        if grow > 2000 || !hi.is_finite() {
            return Err(Error::NonConvergence { what, iterations: grow });
        }
    }
    let abs_tol = 8.0 * f64::EPSILON * (1.0 + target.abs());
    let mut lo = 0.0;
    let mut glo = g0;
    // Illinois-weighted copies of the endpoint residuals.
    let (mut wlo, mut whi) = (glo, ghi);
    let mut last = 0i8;
    let mut width = hi - lo;
    for it in 0..MAX_ITER {
        if -ghi <= abs_tol || hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(hi);
        }
        let force_bisect = it % 3 == 2 && hi - lo > 0.5 * width;
        if it % 3 == 2 {
            width = hi - lo;
        }
        let mut x = if wlo.is_finite() && !force_bisect {
            hi - whi * (hi - lo) / (whi - wlo)
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
            if !(x > lo && x < hi) {
                return Ok(hi);
            }
        }
        let gx = f(x) - target;
        if gx > 0.0 {
            lo = x;
            glo = gx;
            wlo = gx;
            if last == -1 {
                whi *= 0.5;
            }
            last = -1;
        } else {
            hi = x;
            ghi = gx;
            whi = gx;
            if last == 1 {
                wlo *= 0.5;
            }
            last = 1;
        }
    }
    let _ = glo;
    if hi - lo <= tol * (1.0 + hi) {
        Ok(hi)
    } else {
        Err(Error::NonConvergence { what, iterations: MAX_ITER })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_when_feasible_at_origin() {
        let x = smallest_level(|l| 5.0 / (1.0 + l), 10.0, 1.0, 1e-10, "t").unwrap();
        assert_eq!(x, 0.0);
    }

    #[test]
    fn matches_closed_form() {
        // 15/(1+l) + 20/(2+l) = 20
        let x = smallest_level(|l| 15.0 / (1.0 + l) + 20.0 / (2.0 + l), 20.0, 0.1, 1e-10, "t").unwrap();
        let a: f64 = 20.0;
        let b: f64 = 60.0 - 35.0;
        let c = 40.0 - 50.0;
        let exact = (-b + ((b * b) - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!((x - exact).abs() < 1e-13, "{x} vs {exact}");
    }

    #[test]
    fn handles_infinite_demand_at_zero() {
        let x = smallest_level(|l| if l == 0.0 { f64::INFINITY } else { 3.0 / l }, 1.5, 1.0, 1e-10, "t").unwrap();
        assert!((x - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kinked_demand() {
        let f = |l: f64| (4.0 / (0.5 + l) - 1.0).max(0.0) + (9.0 / (3.0 + l) - 1.0).max(0.0);
        let x = smallest_level(f, 1.0, 1.0, 1e-10, "t").unwrap();
        assert!((f(x) - 1.0).abs() < 1e-12);
    }
}
