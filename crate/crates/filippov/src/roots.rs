//! Scalar root finding: bracket scanning, Brent's method and a safeguarded
//! Newton iteration.

use crate::error::{Error, Result};

/// Brent's method on `[a, b]` given the end values. Stops when the bracket
/// is narrower than `xtol` or `|f| <= ftol`.
pub fn brent_with<F>(mut f: F, a: f64, fa: f64, b: f64, fb: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NoBracket(format!("root in [{a}, {b}]")));
    }
    let (mut a, mut fa, mut b, mut fb) = (a, fa, b, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Err(Error::NoConvergence(format!("Brent iteration near {b}")))
}

/// Brent's method, evaluating the end values itself.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    brent_with(f, a, fa, b, fb, xtol, 0.0)
}

/// Newton's method kept inside the bracket `[a, b]`, falling back to
/// bisection whenever a step would leave it. `f` returns value and slope.
pub fn newton_safe<F>(mut f: F, a: f64, b: f64, xtol: f64, ftol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (fa, _) = f(a)?;
    let (fb, _) = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoBracket(format!("root in [{a}, {b}]")));
    }
    let (mut lo, mut hi) = if fa < 0.0 { (a, b) } else { (b, a) };
    let mut x = 0.5 * (a + b);
    let mut dx_old = (b - a).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = f(x)?;
    for _ in 0..200 {
        if fx.abs() <= ftol {
            return Ok(x);
        }
        let newton_leaves = ((x - hi) * dfx - fx) * ((x - lo) * dfx - fx) > 0.0;
        if newton_leaves || (2.0 * fx).abs() > (dx_old * dfx).abs() {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        } else {
            dx_old = dx;
            dx = fx / dfx;
            x -= dx;
        }
        if dx.abs() < xtol {
            return Ok(x);
        }
        let (v, dv) = f(x)?;
        fx = v;
        dfx = dv;
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    Err(Error::NoConvergence(format!("safeguarded Newton near {x}")))
}

/// A sign change of a sampled function between two grid points.
#[derive(Clone, Copy, Debug)]
pub struct Bracket {
    pub a: f64,
    pub fa: f64,
    pub b: f64,
    pub fb: f64,
}

/// Samples `f` on `n + 1` equispaced points of `[lo, hi]` and returns the
/// sample values together with every sign change.
pub fn scan<F>(mut f: F, lo: f64, hi: f64, n: usize) -> Result<(Vec<(f64, f64)>, Vec<Bracket>)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut samples = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        samples.push((x, f(x)?));
    }
    let brackets = samples
        .windows(2)
        .filter(|w| w[0].1.signum() != w[1].1.signum() || w[1].1 == 0.0)
        .filter(|w| w[0].1 != 0.0)
        .map(|w| Bracket { a: w[0].0, fa: w[0].1, b: w[1].0, fb: w[1].1 })
        .collect();
    Ok((samples, brackets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0 * x - 5.0), 2.0, 3.0, 1e-14).unwrap();
        assert!((r - 2.094_551_481_542_327).abs() < 1e-13);
    }

    #[test]
    fn brent_rejects_missing_bracket() {
        assert!(matches!(brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12), Err(Error::NoBracket(_))));
    }

    #[test]
    fn newton_safe_on_steep_function() {
        let r = newton_safe(|x| Ok((x.exp() - 10.0, x.exp())), 0.0, 5.0, 1e-15, 0.0).unwrap();
        assert!((r - 10f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn scan_finds_all_sign_changes() {
        let (_, br) = scan(|x| Ok((x - 0.25) * (x - 0.5) * (x - 0.8)), 0.0, 1.0, 20).unwrap();
        assert_eq!(br.len(), 3);
    }
}
