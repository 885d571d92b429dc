//! Truncated spectral heat kernel `H(x, y, t) = Σ e^{−λᵢt} φᵢ(x) φᵢ(y)`.
//!
//! A [`SpectralKernel`] owns a spectrum together with the mesh it lives on.
//! Evaluation interpolates the nodal eigenvectors with P1 shape functions;
//! propagation uses the `M`-inner product to expand initial data.
//!
//! Truncation is controlled by a tail model: eigenvalues beyond the
//! trusted range are extrapolated from a power-law fit `λᵢ ≈ c·i^β`, and the
//! omitted terms are bounded by `Σ_{i>N} Ĉ e^{−λ̂ᵢ t/2}` with
//! `Ĉ = maxᵢ e^{−λᵢt/2} ‖φᵢ‖∞²`.

use rayon::prelude::*;

use crate::assembly::{self, SymSparseMatrix};
use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, PointLocation};
use crate::spectral::{Spectrum, CLUSTER_TOL};

/// Number of model terms summed past the resolved spectrum before giving up.
const MAX_MODEL_TERMS: usize = 1_000_000;
/// Expansion coefficients below this multiple of `‖u0‖_M` are roundoff.
pub const COEFFICIENT_NOISE: f64 = 1e-13;

/// Power law `λᵢ ≈ c·i^β` (1-based `i`) used to extrapolate the spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeylFit {
    pub c: f64,
    pub beta: f64,
}

impl WeylFit {
    pub fn predict(&self, i: usize) -> f64 {
        self.c * (i as f64).powf(self.beta)
    }

    /// Least-squares fit of `log λᵢ` on `log i` over the positive
    /// eigenvalues in the leading third of `lambdas`, with `c` lowered so
    /// the law never exceeds a fitted eigenvalue. Falls back to `β = 2/m`
    /// when fewer than two usable points exist.
    pub fn fit(lambdas: &[f64], m: usize) -> WeylFit {
        let trusted = if lambdas.len() >= 9 {
            lambdas.len().div_ceil(3)
        } else {
            lambdas.len()
        };
        // roundoff-sized eigenvalues (a Neumann constant mode) carry no growth information
        let floor = CLUSTER_TOL * lambdas.iter().fold(1.0_f64, |m, l| m.max(l.abs()));
        let points: Vec<(f64, f64)> = lambdas[..trusted]
            .iter()
            .enumerate()
            .filter(|(_, l)| **l > floor)
            .map(|(i, l)| (((i + 1) as f64).ln(), l.ln()))
            .collect();
        let fallback_beta = 2.0 / m.max(1) as f64;
        let mut beta = fallback_beta;
        if points.len() >= 2 {
            let n = points.len() as f64;
            let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
            let my = points.iter().map(|p| p.1).sum::<f64>() / n;
            let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let slope = sxy / sxx;
            if slope.is_finite() && slope > 0.0 {
                beta = slope;
            }
        }
        let c = points
            .iter()
            .map(|&(lx, ly)| (ly - beta * lx).exp())
            .fold(f64::INFINITY, f64::min);
        let c = if c.is_finite() && c > 0.0 {
            c
        } else {
            // nothing positive resolved; a unit-scale law keeps the model finite
            1.0
        };
        WeylFit { c, beta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationPolicy {
    AllModes,
    TailBounded(f64),
}

/// Outcome of [`SpectralKernel::truncation_index`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub n: usize,
    pub tail: f64,
    /// The tail target could not be met with the resolved modes.
    pub flagged: bool,
}

/// Nodal field at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Field> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("field value {i} is not finite")));
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(invalid(format!("field time must be finite and ≥ 0, got {time}")));
        }
        Ok(Field { values, time })
    }

    pub fn constant(n: usize, value: f64) -> Result<Field> {
        Field::new(vec![value; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// One value per line, preceded by a `#` header carrying the time.
    pub fn to_text(&self) -> String {
        let mut out = format!("# time = {:e}\n", self.time);
        for v in &self.values {
            out.push_str(&format!("{:.17e}\n", v));
        }
        out
    }

    /// Reads nodal values, one per line. Blank lines and `#` lines are
    /// skipped; on comma-separated lines the last column is used, so CSV
    /// slices written by the CLI can be read back.
    pub fn parse(text: &str) -> Result<Field> {
        let mut values = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let last = line.rsplit(',').next().unwrap_or(line).trim();
            let v: f64 = last
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("expected a number, got {last:?}")))?;
            values.push(v);
        }
        Field::new(values, 0.0).map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::parse(0, msg),
            other => other,
        })
    }
}

/// Heat kernel built from a resolved spectrum.
#[derive(Clone, Debug)]
pub struct SpectralKernel {
    spectrum: Spectrum,
    mesh: Mesh,
    mass: SymSparseMatrix,
    weyl_fit: WeylFit,
    policy: TruncationPolicy,
    sup_norms: Vec<f64>,
}

impl SpectralKernel {
    pub fn new(spectrum: Spectrum, mesh: Mesh) -> Result<SpectralKernel> {
        SpectralKernel::with_policy(spectrum, mesh, TruncationPolicy::AllModes)
    }

    pub fn with_policy(spectrum: Spectrum, mesh: Mesh, policy: TruncationPolicy) -> Result<SpectralKernel> {
        if spectrum.is_empty() {
            return Err(invalid("spectrum has no eigenpairs"));
        }
        if spectrum.dim() != mesh.num_vertices() {
            return Err(invalid(format!(
                "spectrum vectors have length {} but the mesh has {} vertices",
                spectrum.dim(),
                mesh.num_vertices()
            )));
        }
        if !spectrum.mesh_ref.is_empty() && spectrum.mesh_ref != mesh.hash_id() {
            return Err(invalid(format!(
                "spectrum was computed on mesh {} but mesh {} was supplied",
                spectrum.mesh_ref,
                mesh.hash_id()
            )));
        }
        if let TruncationPolicy::TailBounded(eps) = policy {
            if !(eps > 0.0) {
                return Err(invalid(format!("tail tolerance must be positive, got {eps}")));
            }
        }
        let mass = assembly::mass(&mesh)?;
        let weyl_fit = WeylFit::fit(&spectrum.lambdas(), mesh.dim());
        let sup_norms = spectrum
            .pairs
            .iter()
            .map(|p| p.phi.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .collect();
        Ok(SpectralKernel {
            spectrum,
            mesh,
            mass,
            weyl_fit,
            policy,
            sup_norms,
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mass(&self) -> &SymSparseMatrix {
        &self.mass
    }

    /// Spatial dimension of the underlying mesh.
    pub fn m(&self) -> usize {
        self.mesh.dim()
    }

    pub fn weyl_fit(&self) -> WeylFit {
        self.weyl_fit
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    pub fn num_modes(&self) -> usize {
        self.spectrum.len()
    }

    /// Nodal sup norms `‖φᵢ‖∞`.
    pub fn sup_norms(&self) -> &[f64] {
        &self.sup_norms
    }

    /// Smallest time at which the resolved modes capture the kernel:
    /// `2/λ_max`, infinite when no positive eigenvalue is resolved.
    pub fn t_min(&self) -> f64 {
        let top = self.spectrum.pairs.last().map_or(0.0, |p| p.lambda);
        if top > 0.0 {
            2.0 / top
        } else {
            f64::INFINITY
        }
    }

    fn tail_constant(&self, t: f64) -> f64 {
        self.spectrum
            .pairs
            .iter()
            .zip(&self.sup_norms)
            .map(|(p, s)| (-p.lambda * t / 2.0).exp() * s * s)
            .fold(0.0, f64::max)
    }

    /// Modeled tails `tail[N]` for `N = 0..=k`, where `k` is the number of
    /// resolved modes. Within the resolved range the model uses
    /// `min(λᵢ, c·i^β)` so negative or slow modes are never underestimated.
    fn tails(&self, t: f64) -> Vec<f64> {
        let k = self.num_modes();
        let chat = self.tail_constant(t);
        let mut beyond = 0.0;
        for i in (k + 1)..=(k + MAX_MODEL_TERMS) {
            let term = chat * (-self.weyl_fit.predict(i) * t / 2.0).exp();
            beyond += term;
            if term <= 1e-17 * beyond || term == 0.0 {
                break;
            }
            if i == k + MAX_MODEL_TERMS {
                beyond = f64::INFINITY;
            }
        }
        let mut tails = vec![0.0; k + 1];
        tails[k] = beyond;
        for i in (1..=k).rev() {
            let lambda = self.spectrum.pairs[i - 1].lambda.min(self.weyl_fit.predict(i));
            tails[i - 1] = tails[i] + chat * (-lambda * t / 2.0).exp();
        }
        tails
    }

    /// Smallest `N ≥ 1` whose modeled tail is at most `eps`. If even all
    /// resolved modes leave a larger tail, returns them all and flags it.
    pub fn truncation_index(&self, t: f64, eps: f64) -> Result<Truncation> {
        check_time(t)?;
        if !(eps > 0.0) {
            return Err(invalid(format!("tail tolerance must be positive, got {eps}")));
        }
        let tails = self.tails(t);
        let k = self.num_modes();
        match (1..=k).find(|&n| tails[n] <= eps) {
            Some(n) => Ok(Truncation {
                n,
                tail: tails[n],
                flagged: false,
            }),
            None => Ok(Truncation {
                n: k,
                tail: tails[k],
                flagged: true,
            }),
        }
    }

    /// Truncation used by [`eval`](Self::eval) and friends at time `t`.
    pub fn truncation(&self, t: f64) -> Result<Truncation> {
        check_time(t)?;
        match self.policy {
            TruncationPolicy::AllModes => {
                let k = self.num_modes();
                Ok(Truncation {
                    n: k,
                    tail: self.tails(t)[k],
                    flagged: false,
                })
            }
            TruncationPolicy::TailBounded(eps) => self.truncation_index(t, eps),
        }
    }

    pub fn locate(&self, point: &[f64]) -> Result<PointLocation> {
        if point.len() != self.m() {
            return Err(invalid(format!(
                "point has {} coordinates, mesh is {}-dimensional",
                point.len(),
                self.m()
            )));
        }
        self.mesh
            .locate(point)
            .ok_or_else(|| invalid(format!("point {point:?} lies outside the mesh")))
    }

    /// Interpolated eigenfunction values `φᵢ(x)` for the first `n` modes.
    pub fn modes_at(&self, loc: &PointLocation, n: usize) -> Vec<f64> {
        self.spectrum.pairs[..n]
            .iter()
            .map(|p| loc.interpolate(&p.phi))
            .collect()
    }

    /// `H(x, y, t)` truncated per the kernel's policy.
    pub fn eval(&self, x: &[f64], y: &[f64], t: f64) -> Result<f64> {
        let n = self.truncation(t)?.n;
        let px = self.modes_at(&self.locate(x)?, n);
        let py = self.modes_at(&self.locate(y)?, n);
        Ok(self.sum_products(&px, &py, t))
    }

    /// Kernel sum with `e^{−λt}` applied to the symmetric product
    /// `φ(x)·φ(y)`, so swapping the arguments is bitwise neutral.
    fn sum_products(&self, px: &[f64], py: &[f64], t: f64) -> f64 {
        self.spectrum
            .pairs
            .iter()
            .zip(px.iter().zip(py))
            .map(|(p, (a, b))| (-p.lambda * t).exp() * (a * b))
            .sum()
    }

    /// Nodal values `H(vⱼ, y, t)` for every mesh vertex `vⱼ`.
    pub fn slice(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.truncation(t)?.n;
        let py = self.modes_at(&self.locate(y)?, n);
        Ok((0..self.mesh.num_vertices())
            .into_par_iter()
            .map(|j| {
                let px: Vec<f64> = self.spectrum.pairs[..n].iter().map(|p| p.phi[j]).collect();
                self.sum_products(&px, &py, t)
            })
            .collect())
    }

    /// Kernel at a pair of mesh vertices, no interpolation needed.
    pub fn eval_nodes(&self, a: usize, b: usize, t: f64) -> Result<f64> {
        let nv = self.mesh.num_vertices();
        if a >= nv || b >= nv {
            return Err(invalid(format!("vertex index out of range (mesh has {nv})")));
        }
        let n = self.truncation(t)?.n;
        let pa: Vec<f64> = self.spectrum.pairs[..n].iter().map(|p| p.phi[a]).collect();
        let pb: Vec<f64> = self.spectrum.pairs[..n].iter().map(|p| p.phi[b]).collect();
        Ok(self.sum_products(&pa, &pb, t))
    }

    /// Expansion coefficients `cᵢ = φᵢᵀ M u0`.
    pub fn coefficients(&self, u0: &[f64]) -> Result<Vec<f64>> {
        if u0.len() != self.mesh.num_vertices() {
            return Err(invalid(format!(
                "field has {} values, mesh has {} vertices",
                u0.len(),
                self.mesh.num_vertices()
            )));
        }
        let mu = self.mass.mul_vec(u0);
        // coefficients at the rounding level of ‖u0‖_M are zeroed so that
        // decaying modes are not swamped by noise in slower ones
        let noise = COEFFICIENT_NOISE * u0.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>().abs().sqrt();
        Ok(self
            .spectrum
            .pairs
            .iter()
            .map(|p| p.phi.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>())
            .map(|c| if c.abs() <= noise { 0.0 } else { c })
            .collect())
    }

    /// `u(t) = Σ e^{−λᵢt} cᵢ φᵢ`. At `t = 0` every resolved mode is used,
    /// which gives the projection of `u0` onto the resolved subspace.
    pub fn propagate(&self, u0: &Field, t: f64) -> Result<Field> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("time must be finite and ≥ 0, got {t}")));
        }
        let coeffs = self.coefficients(&u0.values)?;
        let n = if t == 0.0 {
            self.num_modes()
        } else {
            self.truncation(t)?.n
        };
        let mut values = vec![0.0; u0.len()];
        for (p, c) in self.spectrum.pairs[..n].iter().zip(&coeffs) {
            let w = (-p.lambda * t).exp() * c;
            for (v, phi) in values.iter_mut().zip(&p.phi) {
                *v += w * phi;
            }
        }
        Field::new(values, u0.time + t)
    }

    /// Gram matrix `G = Φᵀ M Φ` of the stored eigenvectors.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let mphi: Vec<Vec<f64>> = self.spectrum.pairs.iter().map(|p| self.mass.mul_vec(&p.phi)).collect();
        self.spectrum
            .pairs
            .iter()
            .map(|p| {
                mphi.iter()
                    .map(|mq| p.phi.iter().zip(mq).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    }

    /// Largest discrepancy between `H(t+s)` and the composition
    /// `∫ H(·, z, t) H(z, ·, s) dz` over a fixed set of vertex pairs,
    /// relative to `max(1, |H(t+s)|)` at that pair.
    pub fn semigroup_compose(&self, t: f64, s: f64) -> Result<f64> {
        check_time(t)?;
        check_time(s)?;
        let g = self.gram();
        let samples = sample_vertices(self.mesh.num_vertices(), 12);
        let mut worst = 0.0_f64;
        for &a in &samples {
            for &b in &samples {
                let ea: Vec<f64> = self
                    .spectrum
                    .pairs
                    .iter()
                    .map(|p| (-p.lambda * t).exp() * p.phi[a])
                    .collect();
                let eb: Vec<f64> = self
                    .spectrum
                    .pairs
                    .iter()
                    .map(|p| (-p.lambda * s).exp() * p.phi[b])
                    .collect();
                let composed: f64 = g
                    .iter()
                    .zip(&ea)
                    .map(|(row, x)| x * row.iter().zip(&eb).map(|(gij, y)| gij * y).sum::<f64>())
                    .sum();
                let direct: f64 = self
                    .spectrum
                    .pairs
                    .iter()
                    .map(|p| (-p.lambda * (t + s)).exp() * (p.phi[a] * p.phi[b]))
                    .sum();
                worst = worst.max((composed - direct).abs() / direct.abs().max(1.0));
            }
        }
        Ok(worst)
    }

    /// `Σ_{i≤N} e^{−λᵢt}`.
    pub fn trace(&self, t: f64) -> Result<f64> {
        let n = self.truncation(t)?.n;
        Ok(self.spectrum.pairs[..n].iter().map(|p| (-p.lambda * t).exp()).sum())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("time must be positive and finite, got {t}")))
    }
}

/// Up to `count` vertex indices spread evenly over `0..n`.
pub fn sample_vertices(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = (0..count).map(|i| i * (n - 1) / (count - 1)).collect();
    out.dedup();
    out
}
