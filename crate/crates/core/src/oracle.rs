//! Exact Robin spectra and heat kernels on the interval and the rectangle.
//!
//! On `[0, L]` the boundary condition reads `φ'(0) = αφ(0)` and
//! `φ'(L) = −αφ(L)`. Eigenfunctions come in three families:
//!
//! * `λ = μ² > 0` with `(α² − μ²) sin(μL) + 2αμ cos(μL) = 0`;
//! * `λ = 0`, present iff `α = 0` or `α = −2/L`;
//! * `λ = −κ² < 0` (only `α < 0`) with
//!   `(κ² + α²) sinh(κL) + 2ακ cosh(κL) = 0`.
//!
//! The problem is symmetric about `L/2`, so every mode is even or odd there
//! and is stored in centred form: `cos`/`sin`, `cosh`/`sinh` or `1`/`s` of
//! `s = x − L/2`. This avoids the cancellation of the one-sided form
//! `cosh(κx) + (α/κ) sinh(κx)` near `x = L` when `κL` is large.
//!
//! Roots are bracketed on a fixed grid and refined by bisection. The
//! rectangle spectrum is the sorted set of pairwise sums of two interval
//! spectra.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{invalid, Error, Result};

/// Relative width at which bisection stops.
pub const ROOT_RTOL: f64 = 1e-13;
/// Bracketing samples per period `π/L` for positive roots.
const SAMPLES_PER_PERIOD: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Negative,
    Zero,
    Positive,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Negative => "negative",
            ModeKind::Zero => "zero",
            ModeKind::Positive => "positive",
        })
    }
}

impl ModeKind {
    pub fn of(lambda: f64) -> ModeKind {
        if lambda < 0.0 {
            ModeKind::Negative
        } else if lambda == 0.0 {
            ModeKind::Zero
        } else {
            ModeKind::Positive
        }
    }
}

/// A Robin problem on `[0, L]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval1D {
    pub length: f64,
    pub alpha: f64,
}

impl Interval1D {
    pub fn new(length: f64, alpha: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(invalid(format!("interval length must be positive, got {length}")));
        }
        if !alpha.is_finite() {
            return Err(invalid(format!("Robin parameter must be finite, got {alpha}")));
        }
        Ok(Interval1D { length, alpha })
    }

    /// Positive-family characteristic function `(α² − μ²) sin(μL) + 2αμ cos(μL)`.
    pub fn positive_characteristic(&self, mu: f64) -> f64 {
        let (a, l) = (self.alpha, self.length);
        (a * a - mu * mu) * (mu * l).sin() + 2.0 * a * mu * (mu * l).cos()
    }

    /// Negative-family characteristic function divided by `cosh(κL)`:
    /// `(κ² + α²) tanh(κL) + 2ακ` (same sign, no overflow).
    pub fn negative_characteristic(&self, kappa: f64) -> f64 {
        let (a, l) = (self.alpha, self.length);
        (kappa * kappa + a * a) * (kappa * l).tanh() + 2.0 * a * kappa
    }
}

/// One exact eigenmode, `L²`-normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactMode {
    pub lambda: f64,
    pub kind: ModeKind,
    /// `μ` (positive), `κ` (negative) or 0 (zero mode).
    pub rate: f64,
    /// Odd about the midpoint (`sin`, `sinh` or linear) rather than even.
    pub odd: bool,
    /// Midpoint `L/2` of the interval.
    pub centre: f64,
    /// Signed normalization factor; the sign makes `φ(0) > 0` (or `φ'(0) > 0`
    /// when `φ(0) = 0`).
    pub norm: f64,
}

impl ExactMode {
    fn shape(&self, s: f64) -> (f64, f64) {
        let r = self.rate;
        match (self.kind, self.odd) {
            (ModeKind::Positive, false) => ((r * s).cos(), -r * (r * s).sin()),
            (ModeKind::Positive, true) => ((r * s).sin(), r * (r * s).cos()),
            (ModeKind::Negative, false) => ((r * s).cosh(), r * (r * s).sinh()),
            (ModeKind::Negative, true) => ((r * s).sinh(), r * (r * s).cosh()),
            (ModeKind::Zero, false) => (1.0, 0.0),
            (ModeKind::Zero, true) => (s, 1.0),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.norm * self.shape(x - self.centre).0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.norm * self.shape(x - self.centre).1
    }

    /// Upper bound on `sup |φ|` over the interval.
    pub fn sup_bound(&self) -> f64 {
        match self.kind {
            ModeKind::Positive => self.norm.abs(),
            _ => self.eval(0.0).abs(),
        }
    }

    fn signed(mut self) -> ExactMode {
        let (v, d) = self.shape(-self.centre);
        if v < 0.0 || (v == 0.0 && d < 0.0) {
            self.norm = -self.norm;
        }
        self
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= ROOT_RTOL * mid.abs() || mid == lo || mid == hi {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `f(μ)/μ` with the removable singularity at 0 filled in.
fn scaled_positive_characteristic(problem: &Interval1D, mu: f64) -> f64 {
    let (a, l) = (problem.alpha, problem.length);
    let sinc = if mu == 0.0 { l } else { (mu * l).sin() / mu };
    (a * a - mu * mu) * sinc + 2.0 * a * (mu * l).cos()
}

fn positive_roots(problem: &Interval1D, count: usize) -> Result<Vec<f64>> {
    let h = PI / (problem.length * SAMPLES_PER_PERIOD as f64);
    let f = |mu: f64| scaled_positive_characteristic(problem, mu);
    let mut roots = Vec::with_capacity(count);
    // grid points (i + ½)h never coincide with the Neumann roots jπ/L;
    // a vanishing f(0)/0 is the zero mode, handled separately
    let (mut prev_mu, mut prev) = match f(0.0) {
        v if v == 0.0 || has_zero_mode(problem) => (0.5 * h, f(0.5 * h)),
        v => (0.0, v),
    };
    let max_steps = (count + 4) * SAMPLES_PER_PERIOD * 4;
    for i in 1..=max_steps {
        if roots.len() == count {
            return Ok(roots);
        }
        let mu = (i as f64 + 0.5) * h;
        let cur = f(mu);
        if cur == 0.0 {
            roots.push(mu);
        } else if prev != 0.0 && (cur < 0.0) != (prev < 0.0) {
            roots.push(bisect(f, prev_mu, mu));
        }
        prev = cur;
        prev_mu = mu;
    }
    if roots.len() == count {
        return Ok(roots);
    }
    Err(Error::Oracle(format!(
        "found only {} of {count} positive roots for L = {}, α = {} up to μ = {}",
        roots.len(),
        problem.length,
        problem.alpha,
        prev_mu
    )))
}

/// Negative modes split into even and odd parts about the midpoint:
/// `κ tanh(κL/2) = |α|` always has one root, `κ coth(κL/2) = |α|` has one
/// iff `|α| > 2/L`. Both sides are increasing in `κ`, so bisection on a
/// sign-definite bracket is robust even when the two roots nearly coincide.
fn negative_roots(problem: &Interval1D) -> Vec<(f64, bool)> {
    if problem.alpha >= 0.0 {
        return Vec::new();
    }
    let a = problem.alpha.abs();
    let half = 0.5 * problem.length;
    let upper = a + 1.0 / half;
    let even = |k: f64| k * (k * half).tanh() - a;
    let mut roots = vec![(bisect(even, 0.0, upper), false)];
    if !has_zero_mode(problem) && a * half > 1.0 {
        let odd = |k: f64| {
            if k == 0.0 {
                1.0 / half - a
            } else {
                k / (k * half).tanh() - a
            }
        };
        roots.push((bisect(odd, 0.0, a), true));
    }
    roots
}

/// `x − sin x` without cancellation for small `x`.
fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        x - x.sin()
    }
}

/// `sinh x − x` without cancellation for small `x`.
fn sinh_minus_x(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0 * (1.0 + x2 / 72.0)))
    } else {
        x.sinh() - x
    }
}

fn positive_mode(problem: &Interval1D, mu: f64) -> ExactMode {
    let (a, l) = (problem.alpha, problem.length);
    let half = 0.5 * l;
    // boundary residual at x = 0 of the even and odd candidates
    let (sn, cs) = (mu * half).sin_cos();
    let even_res = (mu * sn - a * cs).abs();
    let odd_res = (mu * cs + a * sn).abs();
    let odd = odd_res < even_res;
    let integral = if odd {
        x_minus_sin(mu * l) / (2.0 * mu)
    } else {
        (mu * l + (mu * l).sin()) / (2.0 * mu)
    };
    ExactMode {
        lambda: mu * mu,
        kind: ModeKind::Positive,
        rate: mu,
        odd,
        centre: half,
        norm: 1.0 / integral.sqrt(),
    }
    .signed()
}

fn negative_mode(problem: &Interval1D, kappa: f64, odd: bool) -> ExactMode {
    let l = problem.length;
    let integral = if odd {
        sinh_minus_x(kappa * l) / (2.0 * kappa)
    } else {
        ((kappa * l).sinh() + kappa * l) / (2.0 * kappa)
    };
    ExactMode {
        lambda: -kappa * kappa,
        kind: ModeKind::Negative,
        rate: kappa,
        odd,
        centre: 0.5 * l,
        norm: 1.0 / integral.sqrt(),
    }
    .signed()
}

/// `φ = 1` for `α = 0`; `φ = x − L/2` for `α = −2/L`.
fn zero_mode(problem: &Interval1D) -> ExactMode {
    let l = problem.length;
    let odd = problem.alpha != 0.0;
    let integral = if odd { l * l * l / 12.0 } else { l };
    ExactMode {
        lambda: 0.0,
        kind: ModeKind::Zero,
        rate: 0.0,
        odd,
        centre: 0.5 * l,
        norm: 1.0 / integral.sqrt(),
    }
    .signed()
}

/// Whether `λ = 0` is an eigenvalue: `α = 0` or `α = −2/L`.
pub fn has_zero_mode(problem: &Interval1D) -> bool {
    let a = problem.alpha;
    a == 0.0 || (a * problem.length + 2.0).abs() <= 1e-14 * a.abs().max(1.0)
}

/// The `k` smallest exact Robin eigenmodes of `[0, L]`, ascending.
pub fn interval_spectrum(length: f64, alpha: f64, k: usize) -> Result<Vec<ExactMode>> {
    let problem = Interval1D::new(length, alpha)?;
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut modes: Vec<ExactMode> = negative_roots(&problem)
        .into_iter()
        .map(|(kappa, odd)| negative_mode(&problem, kappa, odd))
        .collect();
    if has_zero_mode(&problem) {
        modes.push(zero_mode(&problem));
    }
    let positives = k.saturating_sub(modes.len());
    if positives > 0 {
        for mu in positive_roots(&problem, positives)? {
            modes.push(positive_mode(&problem, mu));
        }
    }
    modes.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    modes.truncate(k);
    Ok(modes)
}

/// Eigenvalue of the rectangle `[0, lx] × [0, ly]` with its mode indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectangleMode {
    pub lambda: f64,
    /// 0-based indices into the x and y interval spectra.
    pub ix: usize,
    pub iy: usize,
}

/// The `k` smallest eigenvalues `λᵢ(lx) + λⱼ(ly)` of the rectangle.
pub fn rectangle_spectrum(lx: f64, ly: f64, alpha: f64, k: usize) -> Result<Vec<RectangleMode>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    // the k smallest sums only involve the k smallest of each factor
    let xs = interval_spectrum(lx, alpha, k)?;
    let ys = interval_spectrum(ly, alpha, k)?;
    let mut all: Vec<RectangleMode> = xs
        .iter()
        .enumerate()
        .flat_map(|(ix, x)| {
            ys.iter().enumerate().map(move |(iy, y)| RectangleMode {
                lambda: x.lambda + y.lambda,
                ix,
                iy,
            })
        })
        .collect();
    all.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.ix.cmp(&b.ix)));
    all.truncate(k);
    Ok(all)
}

/// Truncated exact kernel value with a tail estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    /// Bound on the omitted terms `Σ_{i>N} e^{−λᵢt} |φᵢ(x)φᵢ(y)|`.
    pub tail: f64,
}

/// `Σ_{i≤N} e^{−λᵢt} φᵢ(x) φᵢ(y)` on `[0, L]`.
pub fn interval_kernel(length: f64, alpha: f64, x: f64, y: f64, t: f64, n: usize) -> Result<KernelValue> {
    let modes = interval_spectrum(length, alpha, n.max(1))?;
    interval_kernel_from(&modes, length, x, y, t)
}

/// As [`interval_kernel`] with precomputed modes (all of them are used).
pub fn interval_kernel_from(modes: &[ExactMode], length: f64, x: f64, y: f64, t: f64) -> Result<KernelValue> {
    if !(t > 0.0) {
        return Err(invalid(format!("time must be positive, got {t}")));
    }
    for p in [x, y] {
        if !(0.0..=length).contains(&p) {
            return Err(invalid(format!("point {p} outside [0, {length}]")));
        }
    }
    let value = modes
        .iter()
        .map(|m| (-m.lambda * t).exp() * (m.eval(x) * m.eval(y)))
        .sum();
    Ok(KernelValue {
        value,
        tail: interval_tail(modes, length, t),
    })
}

/// Damping-style tail estimate: beyond the last computed mode the roots
/// advance by at least one period `π/L`, and every positive mode satisfies
/// `|φ| ≤ S` with `S` the sup bound of the last mode (amplitudes decrease
/// toward `√(2/L)`), so the tail is at most `S'² Σ_j e^{−(μ_N + jπ/L)² t}`.
fn interval_tail(modes: &[ExactMode], length: f64, t: f64) -> f64 {
    let Some(last) = modes.last() else { return f64::INFINITY };
    let sup = modes
        .iter()
        .rev()
        .take(2)
        .map(|m| m.sup_bound())
        .fold((2.0 / length).sqrt(), f64::max);
    let mu_last = if last.lambda > 0.0 { last.lambda.sqrt() } else { 0.0 };
    let mut tail = 0.0;
    for j in 1.. {
        let mu = mu_last + j as f64 * PI / length;
        let term = (-mu * mu * t).exp();
        tail += term;
        if term < 1e-30 * tail.max(f64::MIN_POSITIVE) || j > 100_000 {
            break;
        }
    }
    sup * sup * tail
}
