//! Derivative-free scalar minimization on a bracket (Brent's method:
//! golden-section steps with parabolic interpolation).

const GOLDEN: f64 = 0.381_966_011_250_105_1; // (3 − √5)/2

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` on `[a, b]` to absolute tolerance `tol` in `x`.
/// Non-finite function values are treated as `+∞`.
pub fn brent_minimize(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_iter: usize) -> ScalarMin {
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for iter in 0..max_iter {
        let mid = 0.5 * (a + b);
        let tol1 = tol * 0.5 + 1e-15 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            return ScalarMin {
                x,
                fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) && q != 0.0 {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u);
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
            if u < x {
                a = u;
            } else {
                b = u;
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
    ScalarMin {
        x,
        fx,
        iterations: max_iter,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let r = brent_minimize(|x| (x - 1.234).powi(2) + 3.0, -5.0, 5.0, 1e-10, 200);
        assert!(r.converged);
        // the offset limits resolution in x to about √ε
        assert!((r.x - 1.234).abs() < 1e-7);
        assert!((r.fx - 3.0).abs() < 1e-14);
    }

    #[test]
    fn minimum_at_boundary() {
        let r = brent_minimize(|x| x, 2.0, 3.0, 1e-10, 200);
        assert!((r.x - 2.0).abs() < 1e-8);
    }

    #[test]
    fn non_smooth_and_infinite_regions() {
        let r = brent_minimize(
            |x| if x < 0.0 { f64::NAN } else { (x - 0.5).abs() },
            -1.0,
            2.0,
            1e-10,
            500,
        );
        assert!((r.x - 0.5).abs() < 1e-8);
    }
}
