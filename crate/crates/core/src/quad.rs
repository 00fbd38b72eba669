//! Scalar quadrature helpers: adaptive Simpson and Stieltjes sums against a
//! survival function.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -adaptive_simpson(f, b, a, tol);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Stieltjes sum of `∫_(a,b] h dμ` where `μ` is described by its survival
/// function `G(t) = μ(t, ∞)` and an explicit list of `(location, mass)` atoms.
/// The continuous part is handled by midpoint sums over `n` subdivisions; the
/// atoms inside `(a, b]` are added exactly.
pub fn stieltjes_against_survival<H, G>(
    h: &H,
    survival: &G,
    a: f64,
    b: f64,
    n: usize,
    atoms: &[(f64, f64)],
) -> f64
where
    H: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let du = (b - a) / n as f64;
    let mut acc = 0.0;
    let mut g_left = survival(a);
    for k in 0..n {
        let u0 = a + k as f64 * du;
        let u1 = if k + 1 == n { b } else { u0 + du };
        let g_right = survival(u1);
        let mut mass = g_left - g_right;
        // Atom mass inside the bin is paid at the atom location, not the midpoint.
        for &(t, w) in atoms {
            if t > u0 && t <= u1 {
                mass -= w;
                acc += h(t) * w;
            }
        }
        if mass > 0.0 {
            acc += h(0.5 * (u0 + u1)) * mass;
        }
        g_left = g_right;
    }
    acc
}
