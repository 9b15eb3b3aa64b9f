//! Dense complex linear algebra for the small `M x M` matrices that appear
//! per time-frequency bin. Matrices are row-major slices of length `m * m`.

use num_complex::Complex64;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

pub fn identity(m: usize) -> Vec<C> {
    let mut out = vec![ZERO; m * m];
    for i in 0..m {
        out[i * m + i] = C::new(1.0, 0.0);
    }
    out
}

pub fn trace(a: &[C], m: usize) -> C {
    (0..m).map(|i| a[i * m + i]).sum()
}

pub fn frobenius(a: &[C]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn adjoint(a: &[C], m: usize) -> Vec<C> {
    let mut out = vec![ZERO; m * m];
    for i in 0..m {
        for j in 0..m {
            out[j * m + i] = a[i * m + j].conj();
        }
    }
    out
}

pub fn matmul(a: &[C], b: &[C], m: usize) -> Vec<C> {
    let mut out = vec![ZERO; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            for j in 0..m {
                out[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    out
}

pub fn matvec(a: &[C], x: &[C], m: usize) -> Vec<C> {
    (0..m)
        .map(|i| (0..m).map(|j| a[i * m + j] * x[j]).sum())
        .collect()
}

/// `x^H y`.
pub fn dotc(x: &[C], y: &[C]) -> C {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &[C], m: usize) -> Vec<C> {
    let mut out = vec![ZERO; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = (a[i * m + j] + a[j * m + i].conj()) * 0.5;
        }
    }
    out
}

/// Solves `A X = B` for `X` (`B` is `m x ncols`, row-major) by Gaussian
/// elimination with partial pivoting. Returns `None` when a pivot falls below
/// `1e-13` times the largest entry of `A`, or when `A` is zero.
pub fn solve(a: &[C], b: &[C], m: usize, ncols: usize) -> Option<Vec<C>> {
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let mut lu = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&r, &s| lu[r * m + col].norm().total_cmp(&lu[s * m + col].norm()))
            .expect("non-empty range");
        if lu[pivot * m + col].norm() <= 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for j in 0..m {
                lu.swap(col * m + j, pivot * m + j);
            }
            for j in 0..ncols {
                x.swap(col * ncols + j, pivot * ncols + j);
            }
        }
        let inv = lu[col * m + col].inv();
        for r in col + 1..m {
            let f = lu[r * m + col] * inv;
            if f == ZERO {
                continue;
            }
            for j in col..m {
                let v = lu[col * m + j];
                lu[r * m + j] -= f * v;
            }
            for j in 0..ncols {
                let v = x[col * ncols + j];
                x[r * ncols + j] -= f * v;
            }
        }
    }
    for col in (0..m).rev() {
        let inv = lu[col * m + col].inv();
        for j in 0..ncols {
            let mut acc = x[col * ncols + j];
            for k in col + 1..m {
                acc -= lu[col * m + k] * x[k * ncols + j];
            }
            x[col * ncols + j] = acc * inv;
        }
    }
    Some(x)
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky(a: &[C], m: usize) -> Option<Vec<C>> {
    let mut l = vec![ZERO; m * m];
    for j in 0..m {
        let mut d = a[j * m + j].re;
        for k in 0..j {
            d -= l[j * m + k].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[j * m + j] = C::new(djj, 0.0);
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k].conj();
            }
            l[i * m + j] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L y = b` with `L` lower triangular.
fn forward_subst(l: &[C], b: &[C], m: usize) -> Vec<C> {
    let mut y = vec![ZERO; m];
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    y
}

/// Solves `L^H x = y` with `L` lower triangular.
fn backward_subst_adjoint(l: &[C], y: &[C], m: usize) -> Vec<C> {
    let mut x = vec![ZERO; m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s -= l[k * m + i].conj() * x[k];
        }
        x[i] = s / l[i * m + i].conj();
    }
    x
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector of `values[k]`.
    pub vectors: Vec<Vec<C>>,
}

impl HermitianEigen {
    /// `V diag(f(values)) V^H`.
    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> Vec<C> {
        let m = self.values.len();
        let mut out = vec![ZERO; m * m];
        for (lam, v) in self.values.iter().zip(&self.vectors) {
            let g = f(*lam);
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] += v[i] * v[j].conj() * g;
                }
            }
        }
        out
    }
}

/// Cyclic complex Jacobi eigensolver. Only the Hermitian part of `a` is used.
pub fn hermitian_eigen(a: &[C], m: usize) -> HermitianEigen {
    let mut h = hermitian_part(a, m);
    let mut v = identity(m);
    let norm = frobenius(&h);

    for _sweep in 0..64 {
        let off: f64 = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| h[i * m + j].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-16 * norm || off == 0.0 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = h[p * m + q];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let u = apq / mag;
                let (app, aqq) = (h[p * m + p].re, h[q * m + q].re);
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // J = diag(1, conj(u)) * [[c, s], [-s, c]] on the (p, q) plane.
                let jpp = C::new(c, 0.0);
                let jpq = C::new(s, 0.0);
                let jqp = u.conj() * (-s);
                let jqq = u.conj() * c;

                for k in 0..m {
                    let (akp, akq) = (h[k * m + p], h[k * m + q]);
                    h[k * m + p] = akp * jpp + akq * jqp;
                    h[k * m + q] = akp * jpq + akq * jqq;
                }
                for k in 0..m {
                    let (apk, aqk) = (h[p * m + k], h[q * m + k]);
                    h[p * m + k] = jpp.conj() * apk + jqp.conj() * aqk;
                    h[q * m + k] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                h[p * m + q] = ZERO;
                h[q * m + p] = ZERO;
                h[p * m + p].im = 0.0;
                h[q * m + q].im = 0.0;
                for k in 0..m {
                    let (vkp, vkq) = (v[k * m + p], v[k * m + q]);
                    v[k * m + p] = vkp * jpp + vkq * jqp;
                    v[k * m + q] = vkp * jpq + vkq * jqq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| h[i * m + i].re.total_cmp(&h[j * m + j].re));
    HermitianEigen {
        values: order.iter().map(|&k| h[k * m + k].re).collect(),
        vectors: order
            .iter()
            .map(|&k| (0..m).map(|i| v[i * m + k]).collect())
            .collect(),
    }
}

/// Largest eigenpair of the Hermitian-definite pencil `(A, B)`, i.e.
/// `A w = lambda B w`, via Cholesky whitening of `B`. `B` must be positive
/// definite; the returned `w` is unnormalized (`w^H B w = 1`).
pub fn principal_generalized_eigen(a: &[C], b: &[C], m: usize) -> Option<(f64, Vec<C>)> {
    let l = cholesky(&hermitian_part(b, m), m)?;
    let a = hermitian_part(a, m);
    // Y = L^{-1} A, column by column.
    let mut y = vec![ZERO; m * m];
    for j in 0..m {
        let col: Vec<C> = (0..m).map(|i| a[i * m + j]).collect();
        let sol = forward_subst(&l, &col, m);
        for i in 0..m {
            y[i * m + j] = sol[i];
        }
    }
    // C = L^{-1} A L^{-H} = L^{-1} Y^H because A is Hermitian.
    let yh = adjoint(&y, m);
    let mut whitened = vec![ZERO; m * m];
    for j in 0..m {
        let col: Vec<C> = (0..m).map(|i| yh[i * m + j]).collect();
        let sol = forward_subst(&l, &col, m);
        for i in 0..m {
            whitened[i * m + j] = sol[i];
        }
    }
    let eig = hermitian_eigen(&whitened, m);
    let lam = *eig.values.last()?;
    let v = eig.vectors.last()?;
    let w = backward_subst_adjoint(&l, v, m);
    if w.iter().all(|x| x.is_finite()) && lam.is_finite() {
        Some((lam, w))
    } else {
        None
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    pub fn random_matrix(rng: &mut impl Rng, m: usize) -> Vec<C> {
        (0..m * m)
            .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    /// `G G^H + shift I`, Hermitian PSD (PD when `shift > 0`).
    pub fn random_psd(rng: &mut impl Rng, m: usize, shift: f64) -> Vec<C> {
        let g = random_matrix(rng, m);
        let mut out = matmul(&g, &adjoint(&g, m), m);
        for i in 0..m {
            out[i * m + i] += shift;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &[C], b: &[C]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn solve_recovers_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in 1..=5 {
            let a = random_matrix(&mut rng, m);
            let x = random_matrix(&mut rng, m);
            let b = matmul(&a, &x, m);
            let got = solve(&a, &b, m, m).unwrap();
            assert!(max_diff(&got, &x) < 1e-9, "m={m}");
        }
    }

    #[test]
    fn solve_flags_singular() {
        let a = vec![C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(2.0, 0.0), C::new(4.0, 0.0)];
        assert!(solve(&a, &identity(2), 2, 2).is_none());
        assert!(solve(&[ZERO; 4], &identity(2), 2, 2).is_none());
    }

    #[test]
    fn jacobi_decomposes_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in 1..=6 {
            let a = hermitian_part(&random_matrix(&mut rng, m), m);
            let eig = hermitian_eigen(&a, m);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            for (lam, v) in eig.values.iter().zip(&eig.vectors) {
                let av = matvec(&a, v, m);
                let r: f64 = av
                    .iter()
                    .zip(v)
                    .map(|(x, y)| (x - y * *lam).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(r < 1e-12 * frobenius(&a).max(1.0));
                assert!((dotc(v, v).re - 1.0).abs() < 1e-12);
            }
            assert!(max_diff(&eig.reconstruct(|l| l), &a) < 1e-12);
        }
    }

    #[test]
    fn cholesky_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_psd(&mut rng, 4, 0.5);
        let l = cholesky(&a, 4).unwrap();
        assert!(max_diff(&matmul(&l, &adjoint(&l, 4), 4), &a) < 1e-12);
        let mut neg = identity(2);
        neg[3] = C::new(-1.0, 0.0);
        assert!(cholesky(&neg, 2).is_none());
    }

    #[test]
    fn generalized_diagonal_case() {
        let a = vec![C::new(4.0, 0.0), ZERO, ZERO, C::new(1.0, 0.0)];
        let (lam, w) = principal_generalized_eigen(&a, &identity(2), 2).unwrap();
        assert!((lam - 4.0).abs() < 1e-14);
        assert!((w[0].norm() - 1.0).abs() < 1e-14 && w[1].norm() < 1e-14);
    }
}
