//! Bounded scalar minimization: Brent's method (parabolic interpolation with
//! a golden-section fallback) on a closed interval.

const GOLDEN: f64 = 0.381_966_011_250_105;

/// Minimizes `f` on `[lo, hi]` and returns the abscissa of the minimum.
///
/// The usual Brent trade-off applies: superlinear on smooth unimodal
/// objectives, never worse than golden-section bisection otherwise.
pub fn minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> f64 {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let eps = f64::EPSILON.sqrt();

    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;

    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + eps;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }

        let mut use_golden = true;
        if e.abs() > tol1 {
            // Parabola through (x, fx), (w, fw), (v, fv).
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);

        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u >= x {
                b = u;
            } else {
                a = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_minimum_interior() {
        let x = minimize(|x| (x - 0.37).powi(2), 0.0, 1.0, 1e-12, 200);
        assert_abs_diff_eq!(x, 0.37, epsilon = 1e-9);
    }

    #[test]
    fn minimum_pinned_to_boundary() {
        let x = minimize(|x| -x, 0.0, 1.0, 1e-12, 200);
        assert!(x > 1.0 - 1e-6);
        let x = minimize(|x| x, 0.0, 1.0, 1e-12, 200);
        assert!(x < 1e-6);
    }

    #[test]
    fn non_smooth_objective() {
        let x = minimize(|x: f64| (x - 0.2).abs(), -1.0, 1.0, 1e-12, 300);
        assert_abs_diff_eq!(x, 0.2, epsilon = 1e-8);
    }
}
