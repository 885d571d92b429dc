//! Generalized symmetric eigenproblem `A φ = λ M φ` for the Robin form.
//!
//! The solver is dense and direct: Cholesky-factor `M = LLᵀ` (envelope
//! storage), reduce to the standard problem `L⁻¹AL⁻ᵀ`, tridiagonalize with
//! Householder reflectors, take every eigenvalue from implicit-shift QL,
//! then recover the wanted eigenvectors by inverse iteration and map them
//! back. Indefinite `A` (negative `α`) needs no special handling.

mod dense;

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::assembly::{RobinForm, SymSparseMatrix};
use crate::error::{invalid, Error, Result};

/// Default residual tolerance of [`solve_spectrum`].
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Relative width used to group numerically repeated eigenvalues.
pub const CLUSTER_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Nodal values, normalized so that `φᵀMφ = 1`.
    pub phi: Vec<f64>,
    /// `‖Aφ − λMφ‖₂ / (‖A‖_∞ ‖φ‖₂)`; NaN when loaded from disk and not refreshed.
    pub residual: f64,
}

/// Ascending, M-orthonormal eigenpairs of one Robin form.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub alpha: f64,
    pub pairs: Vec<EigenPair>,
    pub mesh_ref: String,
    pub k_requested: usize,
    pub k_converged: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// The `k` smallest eigenpairs of `(K + αB, M)`.
pub fn solve_spectrum(form: &RobinForm, k: usize) -> Result<Spectrum> {
    solve_spectrum_with(form, k, SolverOptions::default())
}

pub fn solve_spectrum_with(form: &RobinForm, k: usize, opts: SolverOptions) -> Result<Spectrum> {
    let a = form.robin_matrix()?;
    let pairs = solve_generalized(&a, &form.mass, k, opts)?;
    let k_converged = pairs.iter().take_while(|p| p.residual <= opts.tolerance).count();
    Ok(Spectrum {
        alpha: form.alpha,
        pairs,
        mesh_ref: form.mesh_ref.clone(),
        k_requested: k,
        k_converged,
    })
}

/// The `k` smallest eigenpairs of an arbitrary symmetric pencil `(A, M)` with
/// `M` positive definite. Pairs come back ascending, M-orthonormal and
/// sign-normalized.
pub fn solve_generalized(
    a: &SymSparseMatrix,
    m: &SymSparseMatrix,
    k: usize,
    opts: SolverOptions,
) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    if m.dim() != n {
        return Err(invalid(format!("dimension mismatch: A is {n}, M is {}", m.dim())));
    }
    if k == 0 || k > n {
        return Err(invalid(format!(
            "requested {k} eigenpairs of a {n}-dimensional problem"
        )));
    }
    let chol = dense::SkylineCholesky::factor(m)?;
    let mut c = dense::reduce_to_standard(a, &chol);
    let tri = dense::tridiagonalize(&mut c, n);
    drop(c);
    let all = dense::tridiagonal_eigenvalues(&tri.diag, &tri.off)?;
    let lambdas = &all[..k];
    let vectors = dense::inverse_iteration(&tri.diag, &tri.off, lambdas);

    let mut phis: Vec<Vec<f64>> = vectors
        .into_iter()
        .map(|mut z| {
            tri.back_transform(&mut z);
            chol.backward(&mut z);
            z
        })
        .collect();
    m_orthonormalize(&mut phis, m)?;

    let a_norm = a.norm_inf().max(f64::MIN_POSITIVE);
    let mut pairs = Vec::with_capacity(k);
    for (i, (mut phi, &lambda)) in phis.into_iter().zip(lambdas).enumerate() {
        apply_sign_convention(&mut phi, i == 0);
        let residual = residual(a, m, lambda, &phi, a_norm);
        pairs.push(EigenPair { lambda, phi, residual });
    }
    let worst = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    if !(worst <= opts.tolerance) {
        log_residual_warning(worst, opts.tolerance);
    }
    Ok(pairs)
}

fn log_residual_warning(worst: f64, tol: f64) {
    eprintln!("warning: eigenpair residual {worst:e} exceeds tolerance {tol:e}");
}

/// Modified Gram–Schmidt in the M-inner product.
fn m_orthonormalize(phis: &mut [Vec<f64>], m: &SymSparseMatrix) -> Result<()> {
    let mut m_phis: Vec<Vec<f64>> = Vec::with_capacity(phis.len());
    for j in 0..phis.len() {
        let (done, rest) = phis.split_at_mut(j);
        let phi = &mut rest[0];
        for (prev, m_prev) in done.iter().zip(&m_phis) {
            let r: f64 = m_prev.iter().zip(phi.iter()).map(|(a, b)| a * b).sum();
            for (x, p) in phi.iter_mut().zip(prev) {
                *x -= r * p;
            }
        }
        let norm = m.quadratic(phi).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Solver(format!(
                "eigenvector {j} collapsed during orthonormalization"
            )));
        }
        phi.iter_mut().for_each(|x| *x /= norm);
        m_phis.push(m.mul_vec(phi));
    }
    Ok(())
}

/// Largest-magnitude entry positive; the ground state additionally gets a
/// positive nodal mean.
fn apply_sign_convention(phi: &mut [f64], ground: bool) {
    let mut imax = 0;
    for (i, v) in phi.iter().enumerate() {
        if v.abs() > phi[imax].abs() {
            imax = i;
        }
    }
    if phi[imax] < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    if ground && phi.iter().sum::<f64>() < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

fn residual(a: &SymSparseMatrix, m: &SymSparseMatrix, lambda: f64, phi: &[f64], a_norm: f64) -> f64 {
    let ap = a.mul_vec(phi);
    let mp = m.mul_vec(phi);
    let r = ap
        .iter()
        .zip(&mp)
        .map(|(x, y)| (x - lambda * y).powi(2))
        .sum::<f64>()
        .sqrt();
    let pn = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    r / (a_norm * pn)
}

/// Number of eigenvalues of `(A, M)` strictly below `threshold`, counted from
/// the inertia of `A − threshold·M` without solving the eigenproblem.
pub fn count_eigenvalues_below(a: &SymSparseMatrix, m: &SymSparseMatrix, threshold: f64) -> Result<usize> {
    dense::count_below(a, m, threshold)
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    pub fn dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.phi.len())
    }

    /// `λ₂ − λ₁`.
    pub fn eigengap(&self) -> Result<f64> {
        eigengap(self)
    }

    /// Coefficients `cᵢ = φᵢᵀ M u0`.
    pub fn project(&self, mass: &SymSparseMatrix, u0: &[f64]) -> Result<Vec<f64>> {
        project(self, mass, u0)
    }

    /// Index ranges of eigenvalues equal within `1e-9·max(1, |λ|)`.
    pub fn clusters(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut begin = 0;
        for i in 1..=self.pairs.len() {
            let split = i == self.pairs.len() || {
                let (a, b) = (self.pairs[i - 1].lambda, self.pairs[i].lambda);
                (b - a).abs() > CLUSTER_TOL * a.abs().max(1.0)
            };
            if split {
                out.push(begin..i);
                begin = i;
            }
        }
        out
    }

    /// Recomputes residuals against the form the spectrum belongs to.
    pub fn refresh_residuals(&mut self, form: &RobinForm) -> Result<()> {
        let a = form.robin_matrix()?;
        if a.dim() != self.dim() {
            return Err(invalid("spectrum and form dimensions differ"));
        }
        let a_norm = a.norm_inf().max(f64::MIN_POSITIVE);
        for p in &mut self.pairs {
            p.residual = residual(&a, &form.mass, p.lambda, &p.phi, a_norm);
        }
        Ok(())
    }

    /// Text format: `robinspec 1`, `mesh <hash>`, `alpha <α>`, `k <k>`, then
    /// one line per pair with `λ` followed by the nodal vector.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "robinspec 1");
        let _ = writeln!(s, "mesh {}", self.mesh_ref);
        let _ = writeln!(s, "alpha {:.16e}", self.alpha);
        let _ = writeln!(s, "k {}", self.pairs.len());
        for p in &self.pairs {
            let _ = write!(s, "{:.16e}", p.lambda);
            for v in &p.phi {
                let _ = write!(s, " {v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Spectrum> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let last = text.lines().count().max(1);
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(last, format!("unexpected end of file: missing {what}")))
        };
        let (ln, header) = next("header")?;
        if header != "robinspec 1" {
            return Err(Error::parse(ln, format!("expected `robinspec 1`, found `{header}`")));
        }
        let keyed = |(ln, l): (usize, &str), key: &str| -> Result<String> {
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(Error::parse(ln, format!("expected `{key} <value>`, found `{l}`"))),
            }
        };
        let mesh_ref = keyed(next("mesh line")?, "mesh")?;
        let line = next("alpha line")?;
        let alpha: f64 = keyed(line, "alpha")?
            .parse()
            .map_err(|_| Error::parse(line.0, "invalid alpha"))?;
        let line = next("k line")?;
        let k: usize = keyed(line, "k")?
            .parse()
            .map_err(|_| Error::parse(line.0, "invalid k"))?;
        let mut pairs = Vec::with_capacity(k);
        let mut dim = None;
        for _ in 0..k {
            let (ln, l) = next("eigenpair line")?;
            let values: Vec<f64> = l
                .split_whitespace()
                .map(|f| f.parse().map_err(|_| Error::parse(ln, format!("invalid number `{f}`"))))
                .collect::<Result<_>>()?;
            if values.len() < 2 {
                return Err(Error::parse(ln, "eigenpair line needs λ and a nodal vector"));
            }
            if *dim.get_or_insert(values.len() - 1) != values.len() - 1 {
                return Err(Error::parse(ln, "nodal vector length differs from previous lines"));
            }
            pairs.push(EigenPair {
                lambda: values[0],
                phi: values[1..].to_vec(),
                residual: f64::NAN,
            });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln, "trailing content after the last eigenpair"));
        }
        Ok(Spectrum {
            alpha,
            pairs,
            mesh_ref,
            k_requested: k,
            k_converged: k,
        })
    }
}

pub fn write_spectrum(spectrum: &Spectrum, path: &Path) -> Result<()> {
    std::fs::write(path, spectrum.to_text())?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let text = crate::error::read_text(path)?;
    Spectrum::parse(&text).map_err(|e| e.with_path(path))
}

pub fn eigengap(spectrum: &Spectrum) -> Result<f64> {
    if spectrum.pairs.len() < 2 {
        return Err(invalid("eigengap needs at least two eigenpairs"));
    }
    Ok(spectrum.pairs[1].lambda - spectrum.pairs[0].lambda)
}

pub fn project(spectrum: &Spectrum, mass: &SymSparseMatrix, u0: &[f64]) -> Result<Vec<f64>> {
    if u0.len() != mass.dim() || spectrum.dim() != mass.dim() {
        return Err(invalid(format!(
            "dimension mismatch: u0 {}, mass {}, spectrum {}",
            u0.len(),
            mass.dim(),
            spectrum.dim()
        )));
    }
    let mu = mass.mul_vec(u0);
    Ok(spectrum
        .pairs
        .iter()
        .map(|p| p.phi.iter().zip(&mu).map(|(a, b)| a * b).sum())
        .collect())
}
