//! Bracketed scalar root finding for monotone functions.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct RootOptions {
    /// Stop once the bracket is narrower than this.
    pub x_tol: f64,
    /// Stop once `|f| <= f_tol`.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { x_tol: 1e-12, f_tol: 1e-12, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Widens `[lo, hi]` geometrically about its centre until `f` changes sign.
///
/// Returns the bracket and the function values at its ends.
pub fn expand_bracket<F>(f: &mut F, lo: f64, hi: f64, max_expand: usize) -> Result<(f64, f64, f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (lo, hi);
    let (mut flo, mut fhi) = (f(lo)?, f(hi)?);
    for _ in 0..max_expand {
        if flo == 0.0 || fhi == 0.0 || (flo < 0.0) != (fhi < 0.0) {
            return Ok((lo, hi, flo, fhi));
        }
        let mid = 0.5 * (lo + hi);
        let half = hi - lo;
        lo = mid - half;
        hi = mid + half;
        flo = f(lo)?;
        fhi = f(hi)?;
    }
    if flo == 0.0 || fhi == 0.0 || (flo < 0.0) != (fhi < 0.0) {
        return Ok((lo, hi, flo, fhi));
    }
    Err(Error::Bracket(format!(
        "no sign change on [{lo:e}, {hi:e}] (f = {flo:e}, {fhi:e})"
    )))
}

/// Brent's method on a sign-changing bracket, falling back to bisection
/// whenever interpolation does not shrink the bracket fast enough.
pub fn brent<F>(f: &mut F, a: f64, b: f64, fa: f64, fb: f64, opts: RootOptions) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(Root { x: a, fx: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: 0.0, iterations: 0 });
    }
    if (fa < 0.0) == (fb < 0.0) {
        return Err(Error::Bracket(format!("f({a}) = {fa:e} and f({b}) = {fb:e} share a sign")));
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=opts.max_iter {
        if (fb < 0.0) == (fc < 0.0) {
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
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.x_tol;
        let m = 0.5 * (c - b);
        if fb.abs() <= opts.f_tol || m.abs() <= tol || fb == 0.0 {
            return Ok(Root { x: b, fx: fb, iterations: iter });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::Solver(format!(
        "root search did not converge in {} iterations (x = {b}, f = {fb:e})",
        opts.max_iter
    )))
}

/// Finds the root of an increasing or decreasing `f`, starting from `[lo, hi]`.
pub fn solve<F>(mut f: F, lo: f64, hi: f64, opts: RootOptions) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (a, b, fa, fb) = expand_bracket(&mut f, lo, hi, 60)?;
    brent(&mut f, a, b, fa, fb, opts)
}
