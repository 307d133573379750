//! Dense complex linear algebra: Hermitian eigendecomposition, unitary
//! logarithms, SU(2) parameter extraction, and small real solvers.
//!
//! Everything here is deterministic: identical inputs produce bit-identical
//! outputs, which the reporting layer relies on.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::zeros((a.ncols(), a.nrows()));
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[(j, i)] = a[(i, j)].conj();
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest absolute entrywise difference between two equal-shaped matrices.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut m = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        m = m.max((x - y).norm());
    }
    m
}

/// Largest absolute deviation from the identity of `a† a`.
pub fn unitarity_error(a: &Array2<C64>) -> f64 {
    let g = dagger(a).dot(a);
    let n = g.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            m = m.max((g[(i, j)] - target).norm());
        }
    }
    m
}

/// Largest absolute deviation from hermiticity, `max |a - a†|`.
pub fn hermiticity_error(a: &Array2<C64>) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvector columns, so that `a v_k = w_k v_k`. Uses Householder
/// tridiagonalization followed by implicit-shift QL with accumulated
/// transforms.
pub fn eigh(a: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "eigh needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let herm = hermiticity_error(a);
    let scale = max_abs(a).max(1.0);
    if herm > 1e-9 * scale {
        return Err(Error::MatrixCheck(format!(
            "eigh input deviates from Hermitian by {herm:.3e}"
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }

    let mut m = a.clone();
    let mut q = Array2::<C64>::eye(n);

    // Householder reduction to Hermitian tridiagonal form, accumulating q so
    // that a = q t q†.
    for k in 0..n.saturating_sub(2) {
        let mut xnorm2 = 0.0f64;
        for i in k + 1..n {
            xnorm2 += m[(i, k)].norm_sqr();
        }
        let mut tail2 = 0.0f64;
        for i in k + 2..n {
            tail2 += m[(i, k)].norm_sqr();
        }
        if tail2 <= f64::EPSILON * f64::EPSILON * scale * scale {
            continue;
        }
        let xnorm = xnorm2.sqrt();
        let x0 = m[(k + 1, k)];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * xnorm;

        let len = n - k - 1;
        let mut v = vec![C64::new(0.0, 0.0); len];
        v[0] = x0 - alpha;
        for i in 1..len {
            v[i] = m[(k + 1 + i, k)];
        }
        let vnorm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 <= f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // Eliminated column and its Hermitian mirror.
        m[(k + 1, k)] = alpha;
        m[(k, k + 1)] = alpha.conj();
        for i in k + 2..n {
            m[(i, k)] = C64::new(0.0, 0.0);
            m[(k, i)] = C64::new(0.0, 0.0);
        }

        // Rank-two update of the trailing block.
        let mut p = vec![C64::new(0.0, 0.0); len];
        for i in 0..len {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..len {
                acc += m[(k + 1 + i, k + 1 + j)] * v[j];
            }
            p[i] = acc * beta;
        }
        let mut vdp = C64::new(0.0, 0.0);
        for i in 0..len {
            vdp += v[i].conj() * p[i];
        }
        let kappa = vdp * (beta / 2.0);
        let w: Vec<C64> = (0..len).map(|i| p[i] - kappa * v[i]).collect();
        for i in 0..len {
            for j in 0..len {
                let upd = v[i] * w[j].conj() + w[i] * v[j].conj();
                m[(k + 1 + i, k + 1 + j)] -= upd;
            }
        }

        // q <- q h with h = 1 - beta v v† acting on rows k+1..n.
        for r in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..len {
                s += q[(r, k + 1 + j)] * v[j];
            }
            let s = s * beta;
            for j in 0..len {
                q[(r, k + 1 + j)] -= s * v[j].conj();
            }
        }
    }

    // Chase subdiagonal phases into q so the tridiagonal matrix is real.
    let mut d: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    let mut e = vec![0.0f64; n];
    let mut u = vec![C64::new(1.0, 0.0); n];
    for i in 0..n - 1 {
        let sub = m[(i + 1, i)];
        let mag = sub.norm();
        e[i] = mag;
        u[i + 1] = if mag > 0.0 { u[i] * (sub / mag) } else { u[i] };
    }
    for c in 0..n {
        for r in 0..n {
            q[(r, c)] *= u[c];
        }
    }

    tql2(&mut d, &mut e, &mut q)?;

    // Ascending eigenvalue order with deterministic ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).unwrap().then(x.cmp(&y)));
    let vals = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vecs = Array2::<C64>::zeros((n, n));
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, c)] = q[(r, i)];
        }
    }
    Ok((vals, vecs))
}

/// Implicit-shift QL sweeps on a real symmetric tridiagonal matrix, with
/// rotations accumulated into the complex column matrix `z`.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut Array2<C64>) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    let rows = z.nrows();
    // The deflation test needs an absolute floor alongside the relative one:
    // in a cluster of near-zero eigenvalues the neighbor magnitudes vanish,
    // and off-diagonals of rounding size would otherwise never deflate.
    let mut floor = 0.0f64;
    for l in 0..n {
        floor = floor.max(f64::EPSILON * (d[l].abs() + e[l].abs()));
        let mut iter = 0;
        loop {
            let mut mm = l;
            while mm + 1 < n {
                let dd = d[mm].abs() + d[mm + 1].abs();
                if e[mm].abs() <= f64::EPSILON * dd + floor {
                    break;
                }
                mm += 1;
            }
            if mm == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence(
                    "eigensolver exceeded its QL sweep budget".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let denom = g + if g >= 0.0 { r } else { -r };
            g = d[mm] - d[l] + e[l] / denom;
            let mut s = 1.0f64;
            let mut c = 1.0f64;
            let mut p = 0.0f64;
            let mut underflow = false;
            for i in (l..mm).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[mm] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..rows {
                    let zf = z[(k, i + 1)];
                    z[(k, i + 1)] = z[(k, i)] * s + zf * c;
                    z[(k, i)] = z[(k, i)] * c - zf * s;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[mm] = 0.0;
        }
    }
    Ok(())
}

/// Matrix exponential `exp(-i s h)` of a Hermitian matrix `h`.
pub fn expm_i_hermitian(h: &Array2<C64>, s: f64) -> Result<Array2<C64>> {
    let (w, v) = eigh(h)?;
    let n = h.nrows();
    let mut out = Array2::<C64>::zeros((n, n));
    for k in 0..n {
        let ph = C64::from_polar(1.0, -s * w[k]);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += v[(i, k)] * ph * v[(j, k)].conj();
            }
        }
    }
    Ok(out)
}

/// Principal logarithm data of a unitary matrix.
#[derive(Debug, Clone)]
pub struct UnitaryLog {
    /// Hermitian generator `g` with `u = exp(-i g)`.
    pub generator: Array2<C64>,
    /// Eigenphases of `g`, each in `(-pi, pi]`, in the solver's order.
    pub eigenphases: Vec<f64>,
}

/// Principal logarithm of a unitary: Hermitian `g` with `u = exp(-i g)` and
/// all eigenphases in `(-pi, pi]`.
///
/// Diagonalizes a Hermitian mixture of `u + u†` and `(u - u†)/i`; the mixing
/// weight is retried if an accidental eigenvalue collision leaves `u`
/// undiagonalized.
pub fn log_unitary(u: &Array2<C64>) -> Result<UnitaryLog> {
    let n = u.nrows();
    if u.ncols() != n || n == 0 {
        return Err(Error::InvalidInput("log_unitary needs a square matrix".into()));
    }
    let uerr = unitarity_error(u);
    if uerr > 1e-8 {
        return Err(Error::MatrixCheck(format!(
            "log_unitary input deviates from unitary by {uerr:.3e}"
        )));
    }
    let ud = dagger(u);
    for gamma in [0.618_033_988_749_894_9, 0.381_966_011_250_105_1, 0.236_067_977_499_789_7] {
        let mut mix = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let sym = (u[(i, j)] + ud[(i, j)]) * 0.5;
                let asym = (u[(i, j)] - ud[(i, j)]) / C64::new(0.0, 2.0);
                mix[(i, j)] = sym + asym * gamma;
            }
        }
        let (_, v) = eigh(&mix)?;
        let diag = dagger(&v).dot(u).dot(&v);
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off.max(diag[(i, j)].norm());
                }
            }
        }
        if off > 1e-7 {
            continue;
        }
        let mut phases = vec![0.0f64; n];
        for k in 0..n {
            let lam = diag[(k, k)];
            phases[k] = -(lam.arg());
        }
        let mut g = Array2::<C64>::zeros((n, n));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] += v[(i, k)] * C64::new(phases[k], 0.0) * v[(j, k)].conj();
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                let h = (g[(i, j)] + g[(j, i)].conj()) * 0.5;
                g[(i, j)] = h;
                g[(j, i)] = h.conj();
            }
            g[(i, i)] = C64::new(g[(i, i)].re, 0.0);
        }
        return Ok(UnitaryLog { generator: g, eigenphases: phases });
    }
    Err(Error::NoConvergence(
        "log_unitary could not separate coinciding eigenphases".into(),
    ))
}

/// Pauli-axis decomposition of a 2x2 unitary,
/// `u = exp(-i (phi I + x X + y Y + z Z) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Su2Log {
    /// Global-phase coefficient, from the determinant, in `(-pi, pi]`.
    pub phi: f64,
    /// Coefficients of X, Y, Z; their norm is the rotation angle in `[0, pi]`.
    pub xyz: [f64; 3],
}

/// Closed-form logarithm of a 2x2 unitary in Pauli coordinates.
pub fn su2_log(u: &Array2<C64>) -> Result<Su2Log> {
    if u.nrows() != 2 || u.ncols() != 2 {
        return Err(Error::InvalidInput("su2_log needs a 2x2 matrix".into()));
    }
    let uerr = unitarity_error(u);
    if uerr > 1e-8 {
        return Err(Error::MatrixCheck(format!(
            "su2_log input deviates from unitary by {uerr:.3e}"
        )));
    }
    let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
    let phi = -det.arg();
    let fix = C64::from_polar(1.0, phi / 2.0);
    let s = u.mapv(|z| z * fix);

    // s = cos(h) - i sin(h) n.sigma with h in [0, pi].
    let cos_h = ((s[(0, 0)] + s[(1, 1)]) * 0.5).re;
    let sx = (C64::new(0.0, 1.0) * (s[(0, 1)] + s[(1, 0)]) * 0.5).re;
    let sy = ((s[(1, 0)] - s[(0, 1)]) * 0.5).re;
    let sz = (C64::new(0.0, 1.0) * (s[(0, 0)] - s[(1, 1)]) * 0.5).re;
    let sin_h = (sx * sx + sy * sy + sz * sz).sqrt();
    let h = sin_h.atan2(cos_h);
    let xyz = if sin_h < 1e-12 {
        [2.0 * sx, 2.0 * sy, 2.0 * sz]
    } else {
        let f = 2.0 * h / sin_h;
        [f * sx, f * sy, f * sz]
    };
    Ok(Su2Log { phi, xyz })
}

/// Closed-form 2x2 unitary `exp(-i (phi I + x X + y Y + z Z) / 2)`.
pub fn su2_exp(phi: f64, xyz: [f64; 3]) -> Array2<C64> {
    let [x, y, z] = xyz;
    let h = (x * x + y * y + z * z).sqrt() / 2.0;
    let (snc, cs) = if h < 1e-30 { (0.5, 1.0) } else { ((h.sin()) / (2.0 * h), h.cos()) };
    let g = C64::from_polar(1.0, -phi / 2.0);
    let mi = C64::new(0.0, -1.0);
    let mut u = Array2::<C64>::zeros((2, 2));
    u[(0, 0)] = g * (C64::new(cs, 0.0) + mi * snc * C64::new(z, 0.0));
    u[(1, 1)] = g * (C64::new(cs, 0.0) - mi * snc * C64::new(z, 0.0));
    u[(0, 1)] = g * mi * snc * C64::new(x, -y);
    u[(1, 0)] = g * mi * snc * C64::new(x, y);
    u
}

/// Gaussian elimination with partial pivoting for small real systems.
pub fn solve_real(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::InvalidInput("solve_real shape mismatch".into()));
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    let scale = a.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1.0);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() < 1e-12 * scale {
            return Err(Error::IllPosed("solve_real pivot underflow".into()));
        }
        if piv != col {
            for c in 0..n {
                m.swap((col, c), (piv, c));
            }
            rhs.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let sub = f * m[(col, c)];
                m[(r, c)] -= sub;
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = Array1::<f64>::zeros(n);
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in r + 1..n {
            acc -= m[(r, c)] * x[c];
        }
        x[r] = acc / m[(r, r)];
    }
    Ok(x)
}

/// Nearest rotation matrix (orthogonal Procrustes with determinant +1) to a
/// real 3x3 matrix, plus the Frobenius residual `|e - r|_F` and the smallest
/// singular value of `e`.
pub fn nearest_rotation_3x3(e: &Array2<f64>) -> Result<(Array2<f64>, f64, f64)> {
    if e.nrows() != 3 || e.ncols() != 3 {
        return Err(Error::InvalidInput("nearest_rotation_3x3 needs 3x3".into()));
    }
    let ec = e.mapv(|x| C64::new(x, 0.0));
    let gram = dagger(&ec).dot(&ec);
    let (w, v) = eigh(&gram)?;
    let sig: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
    let smax = sig[2].max(f64::MIN_POSITIVE);
    if sig[0] < 1e-9 * smax {
        return Err(Error::IllPosed(
            "nearest_rotation_3x3 input is numerically rank deficient".into(),
        ));
    }
    let vr = v.mapv(|z| z.re);
    // u = e v sigma^-1 gives the left singular vectors.
    let mut u = Array2::<f64>::zeros((3, 3));
    for c in 0..3 {
        for r in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += e[(r, k)] * vr[(k, c)];
            }
            u[(r, c)] = acc / sig[c];
        }
    }
    let mut r = u.dot(&vr.t());
    let det = det3(&r);
    if det < 0.0 {
        // Flip the direction with the smallest singular value (column 0).
        let mut uf = u.clone();
        for row in 0..3 {
            uf[(row, 0)] = -uf[(row, 0)];
        }
        r = uf.dot(&vr.t());
    }
    let mut resid2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = e[(i, j)] - r[(i, j)];
            resid2 += d * d;
        }
    }
    Ok((r, resid2.sqrt(), sig[0]))
}

fn det3(a: &Array2<f64>) -> f64 {
    a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
        - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
        + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
}

/// Axis-angle vector of a 3x3 rotation matrix, with angle in `[0, pi]`.
pub fn rotation_log(r: &Array2<f64>) -> Result<[f64; 3]> {
    if r.nrows() != 3 || r.ncols() != 3 {
        return Err(Error::InvalidInput("rotation_log needs 3x3".into()));
    }
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let cos_t = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    let ax = [
        (r[(2, 1)] - r[(1, 2)]) / 2.0,
        (r[(0, 2)] - r[(2, 0)]) / 2.0,
        (r[(1, 0)] - r[(0, 1)]) / 2.0,
    ];
    let sin_t = (ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]).sqrt().min(1.0);
    let theta = sin_t.atan2(cos_t);
    if sin_t > 1e-7 {
        let f = theta / sin_t;
        return Ok([f * ax[0], f * ax[1], f * ax[2]]);
    }
    if cos_t > 0.0 {
        // Near the identity the antisymmetric part is already the log.
        return Ok(ax);
    }
    // Near a half turn, recover the axis from (r + 1)/2 = n n^T.
    let b = [
        ((r[(0, 0)] + 1.0) / 2.0).max(0.0),
        ((r[(1, 1)] + 1.0) / 2.0).max(0.0),
        ((r[(2, 2)] + 1.0) / 2.0).max(0.0),
    ];
    let j = if b[0] >= b[1] && b[0] >= b[2] { 0 } else if b[1] >= b[2] { 1 } else { 2 };
    let nj = b[j].sqrt();
    let mut n = [0.0f64; 3];
    for i in 0..3 {
        n[i] = if i == j { nj } else { (r[(i, j)] + r[(j, i)]) / (4.0 * nj) };
    }
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let mut n = [n[0] / norm, n[1] / norm, n[2] / norm];
    let lead = (0..3).find(|&i| n[i].abs() > 1e-9).unwrap_or(0);
    if n[lead] < 0.0 {
        for x in n.iter_mut() {
            *x = -*x;
        }
    }
    Ok([theta * n[0], theta * n[1], theta * n[2]])
}
