//! One-dimensional stencils applied lane-wise to n-dimensional arrays.
//!
//! Every operator here is second-order accurate: central differences in the
//! interior and second-order one-sided formulas at the two ends of a lane.

use ndarray::{ArrayD, ArrayView1, ArrayViewD, Axis, Zip};

pub(crate) fn d1_lane(u: ArrayView1<f64>, h: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
}

pub(crate) fn d2_lane(u: ArrayView1<f64>, h: f64, out: &mut [f64]) {
    let n = u.len();
    let h2 = h * h;
    out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
    }
    out[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2;
}

fn lanewise(
    a: ArrayViewD<f64>,
    axis: usize,
    h: f64,
    f: fn(ArrayView1<f64>, f64, &mut [f64]),
) -> ArrayD<f64> {
    let mut out = ArrayD::zeros(a.raw_dim());
    let n = a.len_of(Axis(axis));
    let mut buf = vec![0.0; n];
    Zip::from(out.lanes_mut(Axis(axis)))
        .and(a.lanes(Axis(axis)))
        .for_each(|mut o, u| {
            f(u, h, &mut buf);
            for (dst, src) in o.iter_mut().zip(&buf) {
                *dst = *src;
            }
        });
    out
}

/// First derivative along `axis`.
pub(crate) fn d1(a: ArrayViewD<f64>, axis: usize, h: f64) -> ArrayD<f64> {
    lanewise(a, axis, h, d1_lane)
}

/// Second derivative along `axis`.
pub(crate) fn d2(a: ArrayViewD<f64>, axis: usize, h: f64) -> ArrayD<f64> {
    lanewise(a, axis, h, d2_lane)
}

pub(crate) fn trapz_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// Tensor-product trapezoidal rule over every axis of `a`.
pub(crate) fn integrate(a: ArrayViewD<f64>, spacings: &[f64]) -> f64 {
    debug_assert_eq!(a.ndim(), spacings.len());
    if a.ndim() == 0 {
        return a.iter().next().copied().unwrap_or(0.0);
    }
    let mut cur = a.to_owned();
    for axis in (0..spacings.len()).rev() {
        let w = trapz_weights(cur.len_of(Axis(axis)), spacings[axis]);
        cur = cur.map_axis(Axis(axis), |lane| {
            lane.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>()
        });
    }
    cur.iter().next().copied().unwrap_or(0.0)
}

/// Cumulative trapezoid along `axis`, anchored to zero at index `anchor`.
///
/// Values at indices below the anchor are the negated integrals from the
/// node up to the anchor, so the result is `∫_{x_anchor}^{x_j}` in both
/// directions.
pub(crate) fn cumulative_from(a: ArrayViewD<f64>, axis: usize, h: f64, anchor: usize) -> ArrayD<f64> {
    let mut out = ArrayD::zeros(a.raw_dim());
    Zip::from(out.lanes_mut(Axis(axis)))
        .and(a.lanes(Axis(axis)))
        .for_each(|mut o, u| {
            let n = u.len();
            o[anchor] = 0.0;
            for j in anchor + 1..n {
                o[j] = o[j - 1] + 0.5 * h * (u[j - 1] + u[j]);
            }
            for j in (0..anchor).rev() {
                o[j] = o[j + 1] - 0.5 * h * (u[j] + u[j + 1]);
            }
        });
    out
}

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[0]` and `upper[n-1]` are ignored. The right-hand side is
/// overwritten by the solution.
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = if n > 1 { upper[0] / beta } else { 0.0 };
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / beta;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, IxDyn};

    fn line(n: usize, h: f64, f: impl Fn(f64) -> f64) -> ArrayD<f64> {
        Array1::from_iter((0..n).map(|i| f(i as f64 * h))).into_dyn()
    }

    #[test]
    fn one_sided_stencils_are_exact_on_quadratics() {
        let h = 0.1;
        let u = line(7, h, |x| 3.0 * x * x - x + 2.0);
        let du = d1(u.view(), 0, h);
        let ddu = d2(u.view(), 0, h);
        for i in 0..7 {
            let x = i as f64 * h;
            assert!((du[IxDyn(&[i])] - (6.0 * x - 1.0)).abs() < 1e-12);
            assert!((ddu[IxDyn(&[i])] - 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cumulative_is_anchored() {
        let h = 0.25;
        let u = line(9, h, |_| 1.0);
        let c = cumulative_from(u.view(), 0, h, 4);
        for j in 0..9 {
            assert!((c[IxDyn(&[j])] - (j as f64 - 4.0) * h).abs() < 1e-14);
        }
    }

    #[test]
    fn thomas_solves_small_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let mut rhs = vec![1.0, 0.0, 1.0];
        thomas(&[0.0, -1.0, -1.0], &[2.0, 2.0, 2.0], &[-1.0, -1.0, 0.0], &mut rhs);
        for x in rhs {
            assert!((x - 1.0).abs() < 1e-14);
        }
    }
}
