//! Eigenvalues of small dense non-symmetric matrices.
//!
//! Householder reduction to upper Hessenberg form followed by the Francis
//! double-shift QR iteration. Only eigenvalues are produced; no Schur vectors
//! are accumulated.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// Largest dimension accepted by [`eigenvalues`].
pub const MAX_DIM: usize = 16;

/// Returns all eigenvalues of `m`, complex conjugate pairs adjacent.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "eigenvalues (square matrix)",
            expected: n,
            actual: m.ncols(),
        });
    }
    if n > MAX_DIM {
        return Err(Error::Numerical(format!(
            "eigensolver limited to {MAX_DIM}x{MAX_DIM}, got {n}x{n}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    match n {
        0 => Ok(Vec::new()),
        1 => Ok(vec![Complex::new(m[(0, 0)], 0.0)]),
        2 => Ok(eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]).to_vec()),
        _ => {
            let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
            hessenberg(&mut a);
            francis_qr(&mut a, 100 * n * n)
        }
    }
}

/// Closed form for a 2x2 block `[[a, b], [c, d]]`.
fn eig2(a: f64, b: f64, c: f64, d: f64) -> [Complex<f64>; 2] {
    let half_tr = 0.5 * (a + d);
    let p = 0.5 * (a - d);
    let disc = p * p + b * c;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // avoid cancellation: compute the larger-magnitude root first
        let big = if half_tr >= 0.0 { half_tr + root } else { half_tr - root };
        let det = a * d - b * c;
        let small = if big != 0.0 { det / big } else { half_tr - root.copysign(half_tr) };
        [Complex::new(big, 0.0), Complex::new(small, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex::new(half_tr, im), Complex::new(half_tr, -im)]
    }
}

fn hessenberg(h: &mut [Vec<f64>]) {
    let n = h.len();
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let f: f64 = (m..=high).rev().map(|i| ort[i] * h[i][j]).sum::<f64>() / hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut() {
            let f: f64 = (m..=high).rev().map(|j| ort[j] * row[j]).sum::<f64>() / hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        h[m][m - 1] = scale * g;
    }
    for i in 2..n {
        for j in 0..i - 1 {
            h[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroys `a`).
fn francis_qr(a: &mut [Vec<f64>], budget: usize) -> Result<Vec<Complex<f64>>> {
    let n = a.len();
    let mut out = vec![Complex::new(0.0, 0.0); n];
    let mut anorm = 0.0;
    for (i, row) in a.iter().enumerate() {
        for v in &row[i.saturating_sub(1)..] {
            anorm += v.abs();
        }
    }

    let mut total_iters = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w, mut s);

    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // single small subdiagonal element
            let mut l = nu;
            while l >= 1 {
                s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nu][nu];
            if l == nu {
                out[nu] = Complex::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            y = a[nu - 1][nu - 1];
            w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    let hi = x + z;
                    let lo = if z != 0.0 { x - w / z } else { hi };
                    out[nu - 1] = Complex::new(hi, 0.0);
                    out[nu] = Complex::new(lo, 0.0);
                } else {
                    out[nu - 1] = Complex::new(x + p, z);
                    out[nu] = Complex::new(x + p, -z);
                }
                nn -= 2;
                break;
            }

            if total_iters >= budget {
                return Err(Error::Numerical(format!(
                    "QR iteration did not converge within {budget} iterations"
                )));
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_iters += 1;

            let mut m = nu - 2;
            loop {
                z = a[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }

            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = nu.min(k + 3);
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        p = x * row[k] + y * row[k + 1];
                        if k != nu - 1 {
                            p += z * row[k + 2];
                            row[k + 2] -= p * r;
                        }
                        row[k + 1] -= p * q;
                        row[k] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    if out.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numerical("eigenvalue iteration produced non-finite values".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let ev = sorted(eigenvalues(&m).unwrap());
        assert_eq!(ev, vec![Complex::new(2.0, 0.0), Complex::new(3.0, 0.0)]);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let ev = sorted(eigenvalues(&m).unwrap());
        assert_eq!(ev, vec![Complex::new(0.0, -1.0), Complex::new(0.0, 1.0)]);
    }

    #[test]
    fn companion_matrix_roots() {
        // (x-1)(x-2)(x-3)(x-4)
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[10.0, -35.0, 50.0, -24.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        );
        let ev = sorted(eigenvalues(&m).unwrap());
        for (k, e) in ev.iter().enumerate() {
            assert!((e.re - (k + 1) as f64).abs() < 1e-9, "{e}");
            assert!(e.im.abs() < 1e-9);
        }
    }

    #[test]
    fn block_rotation_in_3d() {
        // rotation about z by 0.7 rad scaled by 0.9, plus a real 0.5 mode
        let (c, s) = (0.7f64.cos() * 0.9, 0.7f64.sin() * 0.9);
        let m = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.5]);
        let ev = eigenvalues(&m).unwrap();
        let max_im = ev.iter().map(|e| e.im.abs()).fold(0.0, f64::max);
        assert!((max_im - s).abs() < 1e-12);
        assert!(ev.iter().any(|e| (e.re - 0.5).abs() < 1e-12 && e.im == 0.0));
    }

    #[test]
    fn residual_is_small_for_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 3..=8 {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            for mu in eigenvalues(&m).unwrap() {
                // smallest singular value of (M - mu I) is ~0
                let shifted = m.map(|v| Complex::new(v, 0.0))
                    - DMatrix::<Complex<f64>>::identity(n, n) * mu;
                let sv = shifted.singular_values();
                assert!(sv.min() < 1e-8 * (1.0 + mu.norm()), "n={n} mu={mu} sv={}", sv.min());
            }
        }
    }

    #[test]
    fn rejects_non_square_and_oversized() {
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
        assert!(eigenvalues(&DMatrix::identity(17, 17)).is_err());
        let mut m = DMatrix::identity(3, 3);
        m[(1, 1)] = f64::NAN;
        assert!(eigenvalues(&m).is_err());
    }
}
