//! Basis systems for functional data.
//!
//! Each variable of a multivariate functional sample is expanded in a fixed
//! basis on a closed interval. A [`BasisSystem`] bundles the basis family,
//! its domain and dimension together with two derived matrices that the rest
//! of the crate relies on:
//!
//! * the Gram matrix `G` with entries `∫ φ_i(t) φ_j(t) dt`, and
//! * the roughness penalty `P` with entries `∫ φ_i''(t) φ_j''(t) dt`.
//!
//! B-spline matrices are integrated with per-span Gauss–Legendre rules that
//! are exact for the piecewise-polynomial integrands; the trigonometric
//! families (Fourier, sine, half-wave sine) use closed-form integrals, so all
//! stored matrices are exact up to rounding. [`MultiBasis`] stacks one system
//! per variable and assembles the block-diagonal `G` and `D_α` used by the
//! penalized eigenproblem.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid domain [{lower}, {upper}]: bounds must be finite with lower < upper")]
    InvalidInterval { lower: f64, upper: f64 },
    #[error("{family} basis needs at least {needed} function(s), got {got}")]
    TooFewBasisFunctions {
        family: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("B-spline order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("Fourier period must be finite and positive, got {0}")]
    InvalidPeriod(f64),
    #[error("point {point} lies outside the basis domain [{lower}, {upper}]")]
    PointOutsideDomain { point: f64, lower: f64, upper: f64 },
    #[error("a multivariate basis needs at least one variable")]
    EmptyMultiBasis,
    #[error("expected {expected} penalty weight(s), one per variable, got {got}")]
    AlphaLength { expected: usize, got: usize },
    #[error("penalty weight for variable {variable} must be finite and nonnegative, got {value}")]
    AlphaValue { variable: usize, value: f64 },
    #[error("Simpson rule needs an odd number of points >= 3, got {0}")]
    InvalidSimpsonPoints(usize),
}

/// Closed interval `[lower, upper]` on which a basis lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self, BasisError> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(BasisError::InvalidInterval { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower && t <= self.upper
    }

    /// `n` equally spaced points from `lower` to `upper` inclusive.
    pub fn equispaced(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![self.lower];
        }
        let h = self.length() / (n - 1) as f64;
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    self.upper
                } else {
                    self.lower + h * k as f64
                }
            })
            .collect()
    }
}

/// Basis family. The B-spline variant uses equally spaced interior knots
/// with order-fold replicated boundary knots; the trigonometric variants are
/// parametrized by the domain alone (Fourier additionally by its period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisKind {
    BSpline { order: usize },
    Fourier { period: f64 },
    /// `√(2/L)·sin(mπ(t−a)/L)`, m = 1..dim; orthonormal on the domain.
    Sine,
    /// `√(2/L)·sin((2m−1)π(t−a)/(2L))`, m = 1..dim; orthonormal on the domain.
    HalfWaveSine,
}

impl BasisKind {
    fn family_name(&self) -> &'static str {
        match self {
            BasisKind::BSpline { .. } => "B-spline",
            BasisKind::Fourier { .. } => "Fourier",
            BasisKind::Sine => "sine",
            BasisKind::HalfWaveSine => "half-wave sine",
        }
    }
}

/// A univariate basis with its exact Gram and second-derivative penalty.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    kind: BasisKind,
    domain: Interval,
    dim: usize,
    /// Clamped knot vector (B-spline only; empty otherwise).
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl PartialEq for BasisSystem {
    /// Structural identity: family, domain and dimension. The matrices are
    /// deterministic functions of these.
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.domain == other.domain && self.dim == other.dim
    }
}

impl BasisSystem {
    pub fn new(kind: BasisKind, domain: Interval, dim: usize) -> Result<Self, BasisError> {
        let family = kind.family_name();
        if dim == 0 {
            return Err(BasisError::TooFewBasisFunctions {
                family,
                needed: 1,
                got: 0,
            });
        }
        let knots = match kind {
            BasisKind::BSpline { order } => {
                if order < 2 {
                    return Err(BasisError::InvalidOrder(order));
                }
                if dim < order {
                    return Err(BasisError::TooFewBasisFunctions {
                        family,
                        needed: order,
                        got: dim,
                    });
                }
                clamped_knots(domain, dim, order)
            }
            BasisKind::Fourier { period } => {
                if !period.is_finite() || period <= 0.0 {
                    return Err(BasisError::InvalidPeriod(period));
                }
                Vec::new()
            }
            BasisKind::Sine | BasisKind::HalfWaveSine => Vec::new(),
        };
        let (gram, penalty) = match kind {
            BasisKind::BSpline { order } => bspline_matrices(&knots, order, dim),
            _ => {
                let family = TrigFamily::build(&kind, domain, dim);
                (family.gram(), family.penalty())
            }
        };
        Ok(Self {
            kind,
            domain,
            dim,
            knots,
            gram,
            penalty,
        })
    }

    pub fn bspline(domain: Interval, dim: usize, order: usize) -> Result<Self, BasisError> {
        Self::new(BasisKind::BSpline { order }, domain, dim)
    }

    /// Fourier basis with period equal to the domain length, making the
    /// system orthonormal: constant, then sin/cos pairs of rising frequency.
    pub fn fourier(domain: Interval, dim: usize) -> Result<Self, BasisError> {
        Self::new(
            BasisKind::Fourier {
                period: domain.length(),
            },
            domain,
            dim,
        )
    }

    pub fn sine(domain: Interval, dim: usize) -> Result<Self, BasisError> {
        Self::new(BasisKind::Sine, domain, dim)
    }

    pub fn half_wave_sine(domain: Interval, dim: usize) -> Result<Self, BasisError> {
        Self::new(BasisKind::HalfWaveSine, domain, dim)
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Knot vector of a B-spline system; empty for the trigonometric families.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Basis functions evaluated at `points`: row k holds `φ_1..φ_d` at
    /// `points[k]`. Points outside the domain are an error.
    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        self.eval_deriv(points, 0)
    }

    /// `deriv`-th derivatives of all basis functions at `points`.
    pub fn eval_deriv(&self, points: &[f64], deriv: usize) -> Result<DMatrix<f64>, BasisError> {
        for &t in points {
            if !t.is_finite() || !self.domain.contains(t) {
                return Err(BasisError::PointOutsideDomain {
                    point: t,
                    lower: self.domain.lower,
                    upper: self.domain.upper,
                });
            }
        }
        let mut out = DMatrix::zeros(points.len(), self.dim);
        match self.kind {
            BasisKind::BSpline { order } => {
                for (row, &t) in points.iter().enumerate() {
                    let span = find_span(&self.knots, order, self.dim, t);
                    let ders = ders_basis_funs(&self.knots, order, span, t, deriv);
                    for (local, value) in ders[deriv].iter().enumerate() {
                        out[(row, span + 1 - order + local)] = *value;
                    }
                }
            }
            _ => {
                let family = TrigFamily::build(&self.kind, self.domain, self.dim);
                for (row, &t) in points.iter().enumerate() {
                    let u = t - self.domain.lower;
                    for (col, term) in family.terms.iter().enumerate() {
                        out[(row, col)] = term.eval_deriv(u, family.base, deriv);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Recompute the Gram matrix from scratch (used to audit stored copies).
    pub fn recompute_gram(&self) -> DMatrix<f64> {
        Self::new(self.kind.clone(), self.domain, self.dim)
            .expect("parameters were validated at construction")
            .gram
    }

    /// Recompute the penalty matrix from scratch.
    pub fn recompute_penalty(&self) -> DMatrix<f64> {
        Self::new(self.kind.clone(), self.domain, self.dim)
            .expect("parameters were validated at construction")
            .penalty
    }
}

/// One basis per variable, with the cached block-diagonal Gram matrix.
#[derive(Debug, Clone)]
pub struct MultiBasis {
    systems: Vec<BasisSystem>,
    offsets: Vec<usize>,
    gram: DMatrix<f64>,
}

impl PartialEq for MultiBasis {
    fn eq(&self, other: &Self) -> bool {
        self.systems == other.systems
    }
}

impl MultiBasis {
    pub fn new(systems: Vec<BasisSystem>) -> Result<Self, BasisError> {
        if systems.is_empty() {
            return Err(BasisError::EmptyMultiBasis);
        }
        let mut offsets = Vec::with_capacity(systems.len() + 1);
        offsets.push(0);
        for sys in &systems {
            offsets.push(offsets.last().unwrap() + sys.dim());
        }
        let total = *offsets.last().unwrap();
        let mut gram = DMatrix::zeros(total, total);
        for (j, sys) in systems.iter().enumerate() {
            gram.view_mut((offsets[j], offsets[j]), (sys.dim(), sys.dim()))
                .copy_from(sys.gram());
        }
        Ok(Self {
            systems,
            offsets,
            gram,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.systems.len()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn systems(&self) -> &[BasisSystem] {
        &self.systems
    }

    pub fn system(&self, variable: usize) -> &BasisSystem {
        &self.systems[variable]
    }

    /// Column range of variable `j` inside stacked coefficient vectors.
    pub fn block(&self, variable: usize) -> std::ops::Range<usize> {
        self.offsets[variable]..self.offsets[variable + 1]
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Block-diagonal Gram matrix `G = diag(G_1, …, G_p)`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Block-diagonal penalty `D_α = diag(α_1 P_1, …, α_p P_p)`.
    pub fn penalty(&self, alpha: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        if alpha.len() != self.n_vars() {
            return Err(BasisError::AlphaLength {
                expected: self.n_vars(),
                got: alpha.len(),
            });
        }
        for (j, &a) in alpha.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(BasisError::AlphaValue {
                    variable: j,
                    value: a,
                });
            }
        }
        let total = self.total_dim();
        let mut out = DMatrix::zeros(total, total);
        for (j, sys) in self.systems.iter().enumerate() {
            let d = sys.dim();
            let mut block = out.view_mut((self.offsets[j], self.offsets[j]), (d, d));
            block.copy_from(sys.penalty());
            block *= alpha[j];
        }
        Ok(out)
    }

    /// `G + D_α`, the right-hand matrix of the penalized eigenproblem.
    pub fn gram_plus_penalty(&self, alpha: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        let mut out = self.penalty(alpha)?;
        out += &self.gram;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// B-splines (de Boor recursion, NURBS-book derivative algorithm)
// ---------------------------------------------------------------------------

/// Clamped knot vector: `order`-fold boundary knots with `dim - order`
/// equally spaced interior knots.
fn clamped_knots(domain: Interval, dim: usize, order: usize) -> Vec<f64> {
    let n_interior = dim - order;
    let mut knots = Vec::with_capacity(dim + order);
    knots.extend(std::iter::repeat(domain.lower).take(order));
    let step = domain.length() / (n_interior + 1) as f64;
    for i in 1..=n_interior {
        knots.push(domain.lower + step * i as f64);
    }
    knots.extend(std::iter::repeat(domain.upper).take(order));
    knots
}

/// Index `mu` with `knots[mu] <= t < knots[mu+1]`; the right domain end maps
/// to the last nonempty span so evaluation at `upper` is well defined.
fn find_span(knots: &[f64], order: usize, dim: usize, t: f64) -> usize {
    if t >= knots[dim] {
        return dim - 1;
    }
    if t <= knots[order - 1] {
        return order - 1;
    }
    let mut lo = order - 1;
    let mut hi = dim;
    let mut mid = (lo + hi) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// Nonzero basis functions and derivatives at `t` (algorithm A2.3 of the
/// NURBS book). `ders[k][j]` is the k-th derivative of basis function
/// `span - order + 1 + j`; derivatives beyond the polynomial degree are zero.
fn ders_basis_funs(
    knots: &[f64],
    order: usize,
    span: usize,
    t: f64,
    n_der: usize,
) -> Vec<Vec<f64>> {
    let p = order - 1;
    let mut ndu = vec![vec![0.0; order]; order];
    ndu[0][0] = 1.0;
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; order]; n_der + 1];
    ders[0][..order].copy_from_slice(&ndu.iter().map(|row| row[p]).collect::<Vec<_>>());
    let max_der = n_der.min(p);
    let mut a = vec![vec![0.0; order]; 2];
    for r in 0..=p {
        let mut s1 = 0;
        let mut s2 = 1;
        a[0].iter_mut().for_each(|x| *x = 0.0);
        a[1].iter_mut().for_each(|x| *x = 0.0);
        a[0][0] = 1.0;
        for k in 1..=max_der {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = (p - k) as isize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=max_der {
        for value in ders[k].iter_mut() {
            *value *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// Gram and penalty of a clamped B-spline basis, integrated span by span
/// with a Gauss–Legendre rule of `order + 1` nodes — exact for the
/// degree-`2(order-1)` polynomial integrands. Only the upper triangle is
/// accumulated; the mirror makes both matrices symmetric to the bit.
fn bspline_matrices(knots: &[f64], order: usize, dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nodes, weights) = gauss_legendre(order + 1);
    let mut gram = DMatrix::zeros(dim, dim);
    let mut penalty = DMatrix::zeros(dim, dim);
    for span in (order - 1)..dim {
        let (a, b) = (knots[span], knots[span + 1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            let ders = ders_basis_funs(knots, order, span, t, 2);
            let wq = w * half;
            for lj in 0..order {
                let gj = span + 1 - order + lj;
                for li in 0..=lj {
                    let gi = span + 1 - order + li;
                    gram[(gi, gj)] += wq * ders[0][li] * ders[0][lj];
                    penalty[(gi, gj)] += wq * ders[2][li] * ders[2][lj];
                }
            }
        }
    }
    for j in 0..dim {
        for i in 0..j {
            gram[(j, i)] = gram[(i, j)];
            penalty[(j, i)] = penalty[(i, j)];
        }
    }
    (gram, penalty)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d) = legendre_with_deriv(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let deriv = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, deriv)
}

// ---------------------------------------------------------------------------
// Trigonometric families with closed-form integrals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum TrigShape {
    Const,
    Sin,
    Cos,
}

/// One basis function `amp · shape(mult · base · u)` in the shifted variable
/// `u = t − lower`. Frequencies are integer multiples of a family-wide base
/// so that sums and differences of frequencies stay exact.
#[derive(Debug, Clone, Copy)]
struct TrigTerm {
    shape: TrigShape,
    mult: i64,
    amp: f64,
}

impl TrigTerm {
    fn eval_deriv(&self, u: f64, base: f64, deriv: usize) -> f64 {
        let omega = self.mult as f64 * base;
        match self.shape {
            TrigShape::Const => {
                if deriv == 0 {
                    self.amp
                } else {
                    0.0
                }
            }
            TrigShape::Sin | TrigShape::Cos => {
                // Derivatives cycle through ±sin/±cos with a factor ω each.
                let phase = match self.shape {
                    TrigShape::Sin => deriv % 4,
                    _ => (deriv + 1) % 4,
                };
                let angle = omega * u;
                let value = match phase {
                    0 => angle.sin(),
                    1 => angle.cos(),
                    2 => -angle.sin(),
                    _ => -angle.cos(),
                };
                self.amp * omega.powi(deriv as i32) * value
            }
        }
    }

    /// Second derivative as a term of the same family (`sin'' = −ω² sin`).
    fn second_derivative(&self) -> TrigTerm {
        match self.shape {
            TrigShape::Const => TrigTerm {
                shape: TrigShape::Const,
                mult: 0,
                amp: 0.0,
            },
            _ => {
                let omega = self.mult as f64;
                TrigTerm {
                    shape: self.shape,
                    mult: self.mult,
                    // The base factor is applied by the integral routines,
                    // which multiply amplitudes and track `base` separately.
                    amp: -self.amp * omega * omega,
                }
            }
        }
    }
}

struct TrigFamily {
    /// Base angular frequency ω₀; every term uses an integer multiple.
    base: f64,
    /// `ω₀·L` expressed in quarter turns, when that is exact. Lets the
    /// integrals evaluate `sin/cos(k·ω₀·L)` from a four-entry table so that
    /// orthogonality holds to the bit for the orthonormal families.
    quarters: Option<i64>,
    length: f64,
    terms: Vec<TrigTerm>,
}

impl TrigFamily {
    fn build(kind: &BasisKind, domain: Interval, dim: usize) -> Self {
        let length = domain.length();
        match kind {
            BasisKind::Fourier { period } => {
                let base = 2.0 * std::f64::consts::PI / period;
                // Constant, then sin/cos pairs of rising frequency.
                let mut terms = Vec::with_capacity(dim);
                terms.push(TrigTerm {
                    shape: TrigShape::Const,
                    mult: 0,
                    amp: 1.0 / period.sqrt(),
                });
                let amp = (2.0 / period).sqrt();
                let mut harmonic = 1i64;
                while terms.len() < dim {
                    terms.push(TrigTerm {
                        shape: TrigShape::Sin,
                        mult: harmonic,
                        amp,
                    });
                    if terms.len() < dim {
                        terms.push(TrigTerm {
                            shape: TrigShape::Cos,
                            mult: harmonic,
                            amp,
                        });
                    }
                    harmonic += 1;
                }
                let quarters = if *period == length { Some(4) } else { None };
                Self {
                    base,
                    quarters,
                    length,
                    terms,
                }
            }
            BasisKind::Sine => {
                let base = std::f64::consts::PI / length;
                let amp = (2.0 / length).sqrt();
                let terms = (1..=dim as i64)
                    .map(|m| TrigTerm {
                        shape: TrigShape::Sin,
                        mult: m,
                        amp,
                    })
                    .collect();
                Self {
                    base,
                    quarters: Some(2),
                    length,
                    terms,
                }
            }
            BasisKind::HalfWaveSine => {
                let base = std::f64::consts::PI / (2.0 * length);
                let amp = (2.0 / length).sqrt();
                let terms = (1..=dim as i64)
                    .map(|m| TrigTerm {
                        shape: TrigShape::Sin,
                        mult: 2 * m - 1,
                        amp,
                    })
                    .collect();
                Self {
                    base,
                    quarters: Some(1),
                    length,
                    terms,
                }
            }
            BasisKind::BSpline { .. } => unreachable!("B-splines are not a trigonometric family"),
        }
    }

    fn sin_at_end(&self, mult: i64) -> f64 {
        match self.quarters {
            Some(q) => [0.0, 1.0, 0.0, -1.0][(mult * q).rem_euclid(4) as usize],
            None => (mult as f64 * self.base * self.length).sin(),
        }
    }

    fn cos_at_end(&self, mult: i64) -> f64 {
        match self.quarters {
            Some(q) => [1.0, 0.0, -1.0, 0.0][(mult * q).rem_euclid(4) as usize],
            None => (mult as f64 * self.base * self.length).cos(),
        }
    }

    /// `∫₀^L cos(k·ω₀·u) du`.
    fn int_cos(&self, mult: i64) -> f64 {
        if mult == 0 {
            self.length
        } else {
            self.sin_at_end(mult) / (mult as f64 * self.base)
        }
    }

    /// `∫₀^L sin(k·ω₀·u) du`.
    fn int_sin(&self, mult: i64) -> f64 {
        if mult == 0 {
            0.0
        } else {
            (1.0 - self.cos_at_end(mult)) / (mult as f64 * self.base)
        }
    }

    /// `∫₀^L f·g du` by product-to-sum identities.
    fn pair_integral(&self, f: &TrigTerm, g: &TrigTerm) -> f64 {
        let scale = f.amp * g.amp;
        if scale == 0.0 {
            return 0.0;
        }
        scale
            * match (f.shape, g.shape) {
                (TrigShape::Const, TrigShape::Const) => self.length,
                (TrigShape::Const, TrigShape::Sin) | (TrigShape::Sin, TrigShape::Const) => {
                    self.int_sin(if f.shape == TrigShape::Sin {
                        f.mult
                    } else {
                        g.mult
                    })
                }
                (TrigShape::Const, TrigShape::Cos) | (TrigShape::Cos, TrigShape::Const) => {
                    self.int_cos(if f.shape == TrigShape::Cos {
                        f.mult
                    } else {
                        g.mult
                    })
                }
                (TrigShape::Sin, TrigShape::Sin) => {
                    0.5 * (self.int_cos(f.mult - g.mult) - self.int_cos(f.mult + g.mult))
                }
                (TrigShape::Cos, TrigShape::Cos) => {
                    0.5 * (self.int_cos(f.mult - g.mult) + self.int_cos(f.mult + g.mult))
                }
                (TrigShape::Sin, TrigShape::Cos) => {
                    0.5 * (self.int_sin(f.mult + g.mult) + self.int_sin(f.mult - g.mult))
                }
                (TrigShape::Cos, TrigShape::Sin) => {
                    0.5 * (self.int_sin(f.mult + g.mult) + self.int_sin(g.mult - f.mult))
                }
            }
    }

    fn gram(&self) -> DMatrix<f64> {
        self.matrix_of(|term| *term)
    }

    fn penalty(&self) -> DMatrix<f64> {
        // sin''/cos'' stay in the family with amplitude −(k·ω₀)²·amp; the
        // base² factor missing from `second_derivative` enters here once per
        // factor of the product.
        let base4 = self.base.powi(4);
        let mut out = self.matrix_of(|term| term.second_derivative());
        out *= base4;
        out
    }

    fn matrix_of(&self, map: impl Fn(&TrigTerm) -> TrigTerm) -> DMatrix<f64> {
        let d = self.terms.len();
        let mapped: Vec<TrigTerm> = self.terms.iter().map(map).collect();
        let mut out = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let value = self.pair_integral(&mapped[i], &mapped[j]);
                out[(i, j)] = value;
                out[(j, i)] = value;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Composite Simpson rule (shared by the metric and experiment modules)
// ---------------------------------------------------------------------------

/// Points and weights of the composite Simpson rule with `n_points` nodes
/// (odd, at least 3) on `interval`.
pub fn simpson_rule(interval: Interval, n_points: usize) -> Result<(Vec<f64>, Vec<f64>), BasisError> {
    if n_points < 3 || n_points % 2 == 0 {
        return Err(BasisError::InvalidSimpsonPoints(n_points));
    }
    let points = interval.equispaced(n_points);
    let h = interval.length() / (n_points - 1) as f64;
    let mut weights = vec![0.0; n_points];
    for (k, w) in weights.iter_mut().enumerate() {
        *w = if k == 0 || k + 1 == n_points {
            h / 3.0
        } else if k % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
    }
    Ok((points, weights))
}
