//! Full symmetric eigendecomposition by Householder tridiagonalization
//! followed by implicit-shift QL iterations.
//!
//! The routines follow the classic EISPACK `tred2`/`tql2` pair. Matrices here
//! are at most a few hundred rows, so a dense O(n^3) solver is the right tool.

use crate::error::{Error, Result};

const MAX_QL_SWEEPS: usize = 60;

/// Dense symmetric matrix, row-major. The constructor symmetrizes its input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseSymMatrix {
    pub fn new(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
        Ok(DenseSymMatrix { n, data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 }).expect("finite")
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Eigenvalues in ascending order with matching unit-norm eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    n: usize,
    k: usize,
    /// `n x k` row-major; column `j` is the eigenvector of `values[j]`.
    vectors: Vec<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.k + j]).collect()
    }

    /// Row `i` of the `n x k` eigenvector matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.k..(i + 1) * self.k]
    }

    /// `max_j ||A v_j - lambda_j v_j||_2`.
    pub fn max_residual(&self, a: &DenseSymMatrix) -> f64 {
        (0..self.k)
            .map(|j| {
                let v = self.vector(j);
                let av = a.mul_vec(&v);
                av.iter()
                    .zip(&v)
                    .map(|(x, y)| (x - self.values[j] * y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// The `k` smallest eigenpairs of `a`.
///
/// `tol` is the relative threshold below which an off-diagonal element of the
/// tridiagonal form counts as zero; it is floored at machine epsilon.
/// Eigenvectors are sign-normalized so their first nonzero component is
/// positive.
pub fn sym_eigen_smallest(a: &DenseSymMatrix, k: usize, tol: f64) -> Result<EigenPairs> {
    let n = a.order();
    if k == 0 || k > n {
        return Err(Error::OutOfRange {
            requested: k,
            available: n,
        });
    }
    let tol = if tol.is_finite() { tol.max(f64::EPSILON) } else { f64::EPSILON };

    let mut v = a.data.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    ql_implicit(n, &mut v, &mut d, &mut e, tol)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
    order.truncate(k);

    let values = order.iter().map(|&j| d[j]).collect();
    let mut vectors = vec![0.0; n * k];
    for (col, &j) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|i| v[i * n + j])
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for i in 0..n {
            vectors[i * k + col] = sign * v[i * n + j];
        }
    }
    Ok(EigenPairs { values, n, k, vectors })
}

/// All eigenpairs of `a`.
pub fn sym_eigen(a: &DenseSymMatrix, tol: f64) -> Result<EigenPairs> {
    sym_eigen_smallest(a, a.order(), tol)
}

/// Householder reduction to tridiagonal form. On return `v` holds the
/// accumulated orthogonal transform, `d` the diagonal and `e[1..]` the
/// subdiagonal.
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for x in d[..i].iter_mut() {
                *x /= scale;
                h += *x * *x;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for x in e[..i].iter_mut() {
                *x = 0.0;
            }

            for j in 0..i {
                let f = d[j];
                v[at(j, i)] = f;
                let mut g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    if n > 0 {
        v[at(n - 1, n - 1)] = 1.0;
    }
    e[0] = 0.0;
}

/// Implicit-shift QL on the tridiagonal form, accumulating rotations into `v`.
fn ql_implicit(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64], tol: f64) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > tol * tst1 {
            m += 1;
        }

        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::NoConvergence(MAX_QL_SWEEPS));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for x in d[l + 2..].iter_mut() {
                    *x -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= tol * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
