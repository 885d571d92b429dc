//! Dense kernels behind the generalized eigensolver.
//!
//! All routines are sequential with a fixed operation order, so results are
//! bitwise reproducible.

use crate::assembly::SymSparseMatrix;
use crate::error::{Error, Result};

/// Cholesky factor `M = LLᵀ` stored by rows inside the row envelope of `M`.
///
/// Fill-in of a Cholesky factor never leaves the envelope, so row `i` only
/// holds columns `start[i]..=i`.
pub(crate) struct SkylineCholesky {
    n: usize,
    start: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(m: &SymSparseMatrix) -> Result<Self> {
        let n = m.dim();
        let start = m.row_starts();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + i - start[i] + 1);
        }
        let mut values = vec![0.0; offsets[n]];
        for i in 0..n {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    values[offsets[i] + j - start[i]] = v;
                }
            }
        }
        let mut l = SkylineCholesky {
            n,
            start,
            offsets,
            values,
        };
        for i in 0..n {
            for j in l.start[i]..=i {
                let p0 = l.start[i].max(l.start[j]);
                let mut s = l.values[l.offsets[i] + j - l.start[i]];
                let ri = l.offsets[i] + p0 - l.start[i];
                let rj = l.offsets[j] + p0 - l.start[j];
                for p in 0..(j - p0) {
                    s -= l.values[ri + p] * l.values[rj + p];
                }
                if j < i {
                    s /= l.values[l.offsets[j + 1] - 1];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::Assembly(format!(
                            "mass matrix is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    s = s.sqrt();
                }
                l.values[l.offsets[i] + j - l.start[i]] = s;
            }
        }
        Ok(l)
    }

    /// Solves `L x = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            let s0 = self.start[i];
            let mut s = b[i];
            for (p, &l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * b[s0 + p];
            }
            b[i] = s / row[row.len() - 1];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            let xi = b[i] / row[row.len() - 1];
            b[i] = xi;
            let s0 = self.start[i];
            for (p, &l) in row[..row.len() - 1].iter().enumerate() {
                b[s0 + p] -= l * xi;
            }
        }
    }
}

/// Dense `C = L⁻¹ A L⁻ᵀ`, row-major (and symmetric).
pub(crate) fn reduce_to_standard(a: &SymSparseMatrix, l: &SkylineCholesky) -> Vec<f64> {
    let n = a.dim();
    // y column j = L⁻¹ a_j; stored column-major
    let mut y = vec![0.0; n * n];
    for j in 0..n {
        let col = &mut y[j * n..(j + 1) * n];
        let (cols, vals) = a.row(j);
        for (&i, &v) in cols.iter().zip(vals) {
            col[i] = v;
        }
        l.forward(col);
    }
    // C = L⁻¹ (L⁻¹A)ᵀ: column j of C is L⁻¹ applied to row j of Y
    let mut c = vec![0.0; n * n];
    for j in 0..n {
        let col = &mut c[j * n..(j + 1) * n];
        for (i, v) in col.iter_mut().enumerate() {
            *v = y[i * n + j];
        }
        l.forward(col);
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[i * n + j] + c[j * n + i]);
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    c
}

/// Householder reflector `I − β v vᵀ` acting on the trailing indices.
pub(crate) struct Reflector {
    offset: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn apply(&self, z: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let tail = &mut z[self.offset..];
        let s: f64 = self.v.iter().zip(tail.iter()).map(|(v, z)| v * z).sum();
        let s = self.beta * s;
        for (zi, vi) in tail.iter_mut().zip(&self.v) {
            *zi -= s * vi;
        }
    }
}

/// Result of the Householder reduction `C = Q T Qᵀ`.
pub(crate) struct Tridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples `i` and `i + 1`; length `n − 1`.
    pub off: Vec<f64>,
    reflectors: Vec<Reflector>,
}

impl Tridiagonal {
    /// Maps an eigenvector of `T` to one of `C`: `y = H₀ H₁ ⋯ z`.
    pub fn back_transform(&self, z: &mut [f64]) {
        for r in self.reflectors.iter().rev() {
            r.apply(z);
        }
    }
}

fn householder(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
    let x0 = x[0];
    let mut v = x.to_vec();
    v[0] = 1.0;
    if sigma == 0.0 {
        return (v, 0.0, x0);
    }
    let mu = (x0 * x0 + sigma).sqrt();
    let v0 = if x0 <= 0.0 { x0 - mu } else { -sigma / (x0 + mu) };
    let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
    for vi in v[1..].iter_mut() {
        *vi /= v0;
    }
    (v, beta, mu)
}

/// Householder tridiagonalization of a dense symmetric row-major matrix.
/// The input is overwritten.
pub(crate) fn tridiagonalize(c: &mut [f64], n: usize) -> Tridiagonal {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = (k + 1..n).map(|i| c[i * n + k]).collect();
        let (v, beta, mu) = householder(&x);
        diag[k] = c[k * n + k];
        off[k] = mu;
        if beta != 0.0 {
            let m = n - k - 1;
            let base = k + 1;
            for i in 0..m {
                let row = &c[(base + i) * n + base..(base + i + 1) * n];
                p[i] = beta * row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            }
            let kf = 0.5 * beta * p[..m].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..m {
                w[i] = p[i] - kf * v[i];
            }
            for i in 0..m {
                let (vi, wi) = (v[i], w[i]);
                let row = &mut c[(base + i) * n + base..(base + i + 1) * n];
                for ((cij, vj), wj) in row.iter_mut().zip(&v).zip(&w[..m]) {
                    *cij -= vi * wj + wi * vj;
                }
            }
        }
        reflectors.push(Reflector { offset: k + 1, v, beta });
    }
    if n >= 2 {
        diag[n - 2] = c[(n - 2) * n + n - 2];
        off[n - 2] = c[(n - 1) * n + n - 2];
    }
    if n >= 1 {
        diag[n - 1] = c[(n - 1) * n + n - 1];
    }
    Tridiagonal { diag, off, reflectors }
}

/// All eigenvalues of a symmetric tridiagonal matrix by implicit-shift QL,
/// returned ascending.
pub(crate) fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Solver(format!(
                    "QL iteration did not converge for eigenvalue {l}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// LU factorization with partial pivoting of `T − σI`.
struct ShiftedTridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedTridiagonalLu {
    fn new(diag: &[f64], off: &[f64], sigma: f64, tiny: f64) -> Self {
        let n = diag.len();
        let mut dl = off.to_vec();
        let mut du = off.to_vec();
        let mut d: Vec<f64> = diag.iter().map(|x| x - sigma).collect();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        for di in d.iter_mut() {
            if di.abs() < tiny {
                *di = if *di < 0.0 { -tiny } else { tiny };
            }
        }
        ShiftedTridiagonalLu {
            dl,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.dl[i] * b[i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= self.du[i] * b[i + 1];
            }
            if i + 2 < n {
                s -= self.du2[i] * b[i + 2];
            }
            b[i] = s / self.d[i];
        }
    }
}

/// Deterministic start vector for inverse iteration.
fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Eigenvectors of `T` for the given ascending eigenvalues by inverse
/// iteration, re-orthogonalized against earlier vectors whose eigenvalues
/// lie within `1e-3·‖T‖`.
pub(crate) fn inverse_iteration(diag: &[f64], off: &[f64], lambdas: &[f64]) -> Vec<Vec<f64>> {
    let n = diag.len();
    let tnorm = (0..n)
        .map(|i| {
            diag[i].abs() + if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 }
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let ortol = 1e-3 * tnorm;
    let pertol = 10.0 * f64::EPSILON * tnorm;
    let tiny = f64::EPSILON * tnorm;

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(lambdas.len());
    let mut last_shift = f64::NEG_INFINITY;
    for (j, &lambda) in lambdas.iter().enumerate() {
        let mut shift = lambda;
        if shift - last_shift < pertol {
            shift = last_shift + pertol;
        }
        last_shift = shift;
        let window_start = lambdas[..j].partition_point(|&l| lambda - l > ortol);

        let lu = ShiftedTridiagonalLu::new(diag, off, shift, tiny);
        let mut x = start_vector(n, j as u64 + 1);
        normalize(&mut x);
        let mut settled = 0;
        for _ in 0..8 {
            lu.solve(&mut x);
            for prev in &vectors[window_start..j] {
                let r: f64 = prev.iter().zip(&x).map(|(a, b)| a * b).sum();
                for (xi, pi) in x.iter_mut().zip(prev) {
                    *xi -= r * pi;
                }
            }
            let growth = normalize(&mut x);
            if growth * tnorm >= 1e8 {
                settled += 1;
                if settled >= 2 {
                    break;
                }
            }
        }
        vectors.push(x);
    }
    vectors
}

fn normalize(x: &mut [f64]) -> f64 {
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nrm > 0.0 {
        x.iter_mut().for_each(|v| *v /= nrm);
    }
    nrm
}

/// Number of eigenvalues of `(A, M)` strictly below `shift`, from the
/// inertia of `A − shift·M` (Sylvester's law) via an envelope `LDLᵀ`.
pub(crate) fn count_below(a: &SymSparseMatrix, m: &SymSparseMatrix, shift: f64) -> Result<usize> {
    let s = a.add_scaled(m, -shift)?;
    let n = s.dim();
    let start = s.row_starts();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        offsets.push(offsets[i] + i - start[i] + 1);
    }
    // rows of L (unit diagonal) stored in the envelope; diagonal slot holds D
    let mut lv = vec![0.0; offsets[n]];
    for i in 0..n {
        let (cols, vals) = s.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i {
                lv[offsets[i] + j - start[i]] = v;
            }
        }
    }
    let mut negatives = 0;
    let mut work = vec![0.0; n];
    for i in 0..n {
        // work[p] = L_ip D_p for p in start[i]..i
        for j in start[i]..i {
            let p0 = start[i].max(start[j]);
            let mut sum = lv[offsets[i] + j - start[i]];
            for p in p0..j {
                sum -= work[p] * lv[offsets[j] + p - start[j]];
            }
            work[j] = sum;
            let dj = lv[offsets[j + 1] - 1];
            lv[offsets[i] + j - start[i]] = sum / dj;
        }
        let mut di = lv[offsets[i + 1] - 1];
        for j in start[i]..i {
            di -= work[j] * lv[offsets[i] + j - start[i]];
        }
        if di == 0.0 {
            return Err(Error::Solver(format!(
                "shift {shift} is an eigenvalue (zero pivot at {i})"
            )));
        }
        lv[offsets[i + 1] - 1] = di;
        if di < 0.0 {
            negatives += 1;
        }
    }
    Ok(negatives)
}
