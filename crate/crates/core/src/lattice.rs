//! Periodic boxes standing in for Z^d, fields on them, the discrete
//! Laplacian, the rate-one random walk semigroup and the Green's function.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{Role, StreamKey};
use crate::stats::{McEstimate, Moments, DEFAULT_LEVEL};

pub const MAX_DIM: usize = 4;

/// A d-dimensional torus of side `L`, sites linearized in row-major order.
#[derive(Clone)]
pub struct Geometry {
    dim: usize,
    side: usize,
    sites: usize,
    neighbors: Arc<[usize]>,
}

impl fmt::Debug for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Geometry")
            .field("dim", &self.dim)
            .field("side", &self.side)
            .finish()
    }
}

impl PartialEq for Geometry {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.side == other.side
    }
}

impl Eq for Geometry {}

pub fn make_geometry(dim: usize, side: usize) -> Result<Geometry> {
    Geometry::new(dim, side)
}

impl Geometry {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::config(format!(
                "dimension {dim} outside supported range 1..={MAX_DIM}"
            )));
        }
        if side == 0 {
            return Err(Error::config("side length must be at least 1"));
        }
        let sites = side
            .checked_pow(dim as u32)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::config(format!("box {side}^{dim} is too large")))?;
        let degree = 2 * dim;
        let mut neighbors = vec![0usize; sites * degree];
        let mut coords = vec![0usize; dim];
        for site in 0..sites {
            // row-major: the last coordinate varies fastest
            let mut rest = site;
            for k in (0..dim).rev() {
                coords[k] = rest % side;
                rest /= side;
            }
            for axis in 0..dim {
                let stride = side.pow((dim - 1 - axis) as u32);
                let c = coords[axis];
                let up = (c + 1) % side;
                let down = (c + side - 1) % side;
                let base = site - c * stride;
                neighbors[site * degree + 2 * axis] = base + up * stride;
                neighbors[site * degree + 2 * axis + 1] = base + down * stride;
            }
        }
        Ok(Self {
            dim,
            side,
            sites,
            neighbors: neighbors.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn site_count(&self) -> usize {
        self.sites
    }

    /// Number of neighbor slots per site, 2d. Slots may repeat when L <= 2.
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    #[inline]
    pub fn neighbors(&self, site: usize) -> &[usize] {
        let k = self.degree();
        &self.neighbors[site * k..(site + 1) * k]
    }

    pub fn origin(&self) -> usize {
        0
    }

    /// Site index of integer coordinates, wrapped onto the torus.
    pub fn index(&self, coords: &[i64]) -> Result<usize> {
        if coords.len() != self.dim {
            return Err(Error::config(format!(
                "expected {} coordinates, got {}",
                self.dim,
                coords.len()
            )));
        }
        let side = self.side as i64;
        Ok(coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(side) as usize))
    }

    /// Coordinates of a site, each in `0..L`.
    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dim];
        let mut rest = site;
        for k in (0..self.dim).rev() {
            out[k] = (rest % self.side) as i64;
            rest /= self.side;
        }
        out
    }

    /// The site `sign * e_axis`.
    pub fn unit(&self, axis: usize, sign: i64) -> Result<usize> {
        if axis >= self.dim {
            return Err(Error::config(format!("axis {axis} out of range")));
        }
        let mut c = vec![0i64; self.dim];
        c[axis] = sign;
        self.index(&c)
    }
}

/// Real values indexed by the sites of a geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    geometry: Geometry,
    values: Vec<f64>,
}

impl Field {
    pub fn new(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.site_count() {
            return Err(Error::config(format!(
                "field has {} values for {} sites",
                values.len(),
                geometry.site_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite field value at site {i}")));
        }
        Ok(Self { geometry, values })
    }

    /// Like [`Field::new`] but also rejects negative values.
    pub fn nonnegative(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        let f = Self::new(geometry, values)?;
        f.require_nonnegative()?;
        Ok(f)
    }

    pub(crate) fn from_raw(geometry: Geometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.site_count());
        Self { geometry, values }
    }

    pub fn zeros(geometry: &Geometry) -> Self {
        Self::constant(geometry, 0.0)
    }

    pub fn constant(geometry: &Geometry, value: f64) -> Self {
        Self {
            geometry: geometry.clone(),
            values: vec![value; geometry.site_count()],
        }
    }

    pub fn point(geometry: &Geometry, site: usize, mass: f64) -> Self {
        let mut f = Self::zeros(geometry);
        f.values[site] = mass;
        f
    }

    /// Sum of point masses placed at integer coordinates (wrapped).
    pub fn from_sites(geometry: &Geometry, sites: &[(Vec<i64>, f64)]) -> Result<Self> {
        let mut f = Self::zeros(geometry);
        for (coords, mass) in sites {
            let i = geometry.index(coords)?;
            f.values[i] += mass;
        }
        Self::new(f.geometry, f.values)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, site: usize) -> f64 {
        self.values[site]
    }

    pub fn require_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(i) => Err(Error::config(format!(
                "field is negative ({}) at site {i}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// ⟨φ, 1⟩
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    /// ⟨|φ|, 1⟩
    pub fn abs_total(&self) -> f64 {
        let abs: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        pairwise_sum(&abs)
    }

    pub fn dot(&self, other: &Field) -> f64 {
        assert_eq!(self.geometry, other.geometry, "fields on different geometries");
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        pairwise_sum(&prod)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            geometry: self.geometry.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.geometry, other.geometry, "fields on different geometries");
        Field {
            geometry: self.geometry.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.sub(other).max_abs()
    }
}

pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Neighbor average (1/2d) Σ_{j~i} φ(j), the one-step transition operator.
#[inline]
pub(crate) fn average_into(geometry: &Geometry, src: &[f64], dst: &mut [f64]) {
    let degree = geometry.degree();
    let inv = 1.0 / degree as f64;
    if degree == 2 {
        let n = src.len();
        if n == 1 {
            dst[0] = src[0];
            return;
        }
        dst[0] = 0.5 * (src[1] + src[n - 1]);
        for i in 1..n - 1 {
            dst[i] = 0.5 * (src[i - 1] + src[i + 1]);
        }
        dst[n - 1] = 0.5 * (src[n - 2] + src[0]);
        return;
    }
    for (i, out) in dst.iter_mut().enumerate() {
        let s: f64 = geometry.neighbors(i).iter().map(|&j| src[j]).sum();
        *out = s * inv;
    }
}

pub(crate) fn laplacian_into(geometry: &Geometry, src: &[f64], dst: &mut [f64]) {
    let inv = 1.0 / geometry.degree() as f64;
    for (i, out) in dst.iter_mut().enumerate() {
        let x = src[i];
        let s: f64 = geometry.neighbors(i).iter().map(|&j| src[j] - x).sum();
        *out = s * inv;
    }
}

/// Δφ(i) = (1/2d) Σ_{j~i} (φ(j) − φ(i)).
pub fn laplacian(phi: &Field) -> Field {
    let mut out = vec![0.0; phi.values.len()];
    laplacian_into(&phi.geometry, &phi.values, &mut out);
    Field::from_raw(phi.geometry.clone(), out)
}

/// A polynomial Σ_n w_n Pⁿ in the one-step operator P with nonnegative
/// weights summing to one.
///
/// [`HeatPropagator::series`] uses Poisson(t) weights and represents the
/// rate-one walk semigroup P_t; [`HeatPropagator::euler`] uses `[1 − dt, dt]`,
/// the explicit Euler step I + dt·Δ. Both preserve mass, constants and
/// nonnegativity.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatPropagator {
    weights: Vec<f64>,
    time: f64,
    tail_mass: f64,
}

impl HeatPropagator {
    pub fn series(t: f64, tol: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::config(format!("time must be finite and >= 0, got {t}")));
        }
        if !(tol > 0.0) {
            return Err(Error::config(format!("tolerance must be positive, got {tol}")));
        }
        let (mut weights, tail_mass) = poisson_weights(t, tol);
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            weights,
            time: t,
            tail_mass,
        })
    }

    pub fn euler(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::config(format!(
                "explicit heat step needs 0 < dt <= 1, got {dt}"
            )));
        }
        Ok(Self {
            weights: vec![1.0 - dt, dt],
            time: dt,
            tail_mass: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Poisson mass dropped by truncation (zero for the Euler step).
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// `dst = Σ w_n Pⁿ src` by Horner's scheme; `scratch` is resized as needed.
    pub fn apply_into(
        &self,
        geometry: &Geometry,
        src: &[f64],
        dst: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let k = self.weights.len() - 1;
        scratch.resize(src.len(), 0.0);
        let wk = self.weights[k];
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = wk * s);
        for n in (0..k).rev() {
            average_into(geometry, dst, scratch);
            let w = self.weights[n];
            dst.iter_mut()
                .zip(scratch.iter())
                .zip(src)
                .for_each(|((d, &p), &s)| *d = p + w * s);
        }
    }

    pub fn apply(&self, phi: &Field) -> Field {
        let mut out = vec![0.0; phi.values.len()];
        let mut scratch = Vec::new();
        self.apply_into(&phi.geometry, &phi.values, &mut out, &mut scratch);
        Field::from_raw(phi.geometry.clone(), out)
    }
}

/// Poisson(t) probabilities 0..=K, with K past the mean and the remaining
/// tail mass below `tol`. Returns the weights and a bound on the tail.
fn poisson_weights(t: f64, tol: f64) -> (Vec<f64>, f64) {
    if t == 0.0 {
        return (vec![1.0], 0.0);
    }
    let ln_t = t.ln();
    let mut ln_w = -t;
    let mut weights = vec![ln_w.exp()];
    let mut n = 0u64;
    loop {
        n += 1;
        ln_w += ln_t - (n as f64).ln();
        let w = ln_w.exp();
        weights.push(w);
        let next = (n + 1) as f64;
        if next > t {
            // w_{n+k} <= w_n r^k with r = t/(n+1) < 1
            let r = t / next;
            let tail = w * r / (1.0 - r);
            if tail < tol {
                return (weights, tail);
            }
        }
    }
}

/// P_tφ by the truncated Poisson series e^{−t} Σ (tⁿ/n!) Pⁿφ.
pub fn heat_semigroup_apply(phi: &Field, t: f64, tol: f64) -> Result<Field> {
    Ok(HeatPropagator::series(t, tol)?.apply(phi))
}

/// P_tφ by ⌈t/dt⌉ explicit Euler steps of equal length.
///
/// Differs from the series by at most about `0.3·dt·max|φ|` for t ≥ dt
/// (first order in dt, uniform in t).
pub fn heat_euler_apply(phi: &Field, t: f64, dt: f64) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(Error::config(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(phi.clone());
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let step = HeatPropagator::euler(t / steps as f64)?;
    let mut cur = phi.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut scratch = Vec::new();
    for _ in 0..steps {
        step.apply_into(&phi.geometry, &cur, &mut next, &mut scratch);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Field::from_raw(phi.geometry.clone(), cur))
}

/// g(0,0) together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenValue {
    pub dim: usize,
    pub value: f64,
    /// Σ_{n ≤ N} pⁿ(0,0)
    pub partial_sum: f64,
    /// local-CLT estimate of Σ_{n > N} pⁿ(0,0)
    pub tail_estimate: f64,
    pub truncation: usize,
    /// |value(N) − value(N/2)|
    pub error_estimate: f64,
}

const GREEN_MIN_TRUNCATION: usize = 1 << 10;
const GREEN_MAX_TRUNCATION: usize = 1 << 16;

/// Green's function at the origin, g(0,0) = Σ_n pⁿ(0,0).
pub fn green_origin(dim: usize, tail_tol: f64) -> Result<f64> {
    Ok(green_origin_detailed(dim, tail_tol)?.value)
}

pub fn green_origin_detailed(dim: usize, tail_tol: f64) -> Result<GreenValue> {
    if dim <= 2 {
        return Err(Error::RecurrentWalk { dim });
    }
    if dim > MAX_DIM {
        return Err(Error::config(format!("dimension {dim} unsupported")));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::config("tail tolerance must be positive"));
    }
    let mut n = GREEN_MIN_TRUNCATION;
    let probs = return_probabilities(dim, GREEN_MIN_TRUNCATION);
    let mut prev = corrected_green(dim, &probs, n / 2);
    loop {
        let probs = return_probabilities(dim, n);
        let cur = corrected_green(dim, &probs, n);
        let err = (cur.value - prev.value).abs();
        if err <= tail_tol || n >= GREEN_MAX_TRUNCATION {
            if err > tail_tol {
                return Err(Error::config(format!(
                    "green series did not reach tolerance {tail_tol:e} (error {err:e})"
                )));
            }
            return Ok(GreenValue {
                error_estimate: err,
                ..cur
            });
        }
        prev = cur;
        n *= 2;
    }
}

fn corrected_green(dim: usize, probs: &[f64], truncation: usize) -> GreenValue {
    let partial_sum = pairwise_sum(&probs[..=truncation]);
    let tail_estimate = local_clt_tail(dim, truncation);
    GreenValue {
        dim,
        value: partial_sum + tail_estimate,
        partial_sum,
        tail_estimate,
        truncation,
        error_estimate: f64::NAN,
    }
}

/// Σ_{2m > n} 2(d/(4πm))^{d/2}, the leading-order local CLT for p^{2m}(0,0),
/// summed by the midpoint rule: Σ_{m > M} m^{−s} ≈ (M + ½)^{1−s}/(s − 1).
fn local_clt_tail(dim: usize, n: usize) -> f64 {
    let s = dim as f64 / 2.0;
    let c = 2.0 * (dim as f64 / (4.0 * std::f64::consts::PI)).powf(s);
    let m = (n / 2) as f64;
    c * (m + 0.5).powf(1.0 - s) / (s - 1.0)
}

/// Partial sums Σ_{n ≤ k} pⁿ(0,0) for k = 0..=n_max. Nondecreasing.
pub fn green_partial_sums(dim: usize, n_max: usize) -> Result<Vec<f64>> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::config(format!("dimension {dim} unsupported")));
    }
    let probs = return_probabilities(dim, n_max);
    let mut acc = 0.0;
    Ok(probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect())
}

/// pⁿ(0,0) for the discrete-time simple random walk on Z^d, n = 0..=n_max.
///
/// Each step moves along the first axis with probability 1/d, so
/// p_d(n) = Σ_j Bin(n, j; 1/d) p_1(j) p_{d−1}(n − j).
pub fn return_probabilities(dim: usize, n_max: usize) -> Vec<f64> {
    let ln_fact = ln_factorials(n_max);
    let one_d: Vec<f64> = (0..=n_max)
        .map(|m| {
            if m % 2 == 1 {
                0.0
            } else {
                (ln_fact[m] - 2.0 * ln_fact[m / 2] - m as f64 * std::f64::consts::LN_2).exp()
            }
        })
        .collect();
    let mut probs = one_d.clone();
    for d in 2..=dim {
        let ln_p = (1.0 / d as f64).ln();
        let ln_q = ((d - 1) as f64 / d as f64).ln();
        let lower = probs;
        probs = (0..=n_max)
            .map(|n| {
                if n % 2 == 1 {
                    return 0.0;
                }
                // binomial mass beyond 12 standard deviations is below 1e-30
                let p = 1.0 / d as f64;
                let mean = n as f64 * p;
                let sd = (n as f64 * p * (1.0 - p)).sqrt();
                let lo = ((mean - 12.0 * sd).floor().max(0.0) as usize) & !1;
                let hi = ((mean + 12.0 * sd).ceil() as usize).min(n);
                let mut s = 0.0;
                for j in (lo..=hi).step_by(2) {
                    let ln_w = ln_fact[n] - ln_fact[j] - ln_fact[n - j]
                        + j as f64 * ln_p
                        + (n - j) as f64 * ln_q;
                    if ln_w < -700.0 {
                        continue;
                    }
                    s += ln_w.exp() * one_d[j] * lower[n - j];
                }
                s
            })
            .collect();
    }
    probs
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// b₂ = 2 / g(0,0), the second-moment threshold of the parabolic Anderson model.
pub fn b2(dim: usize) -> Result<f64> {
    Ok(2.0 / green_origin(dim, DEFAULT_GREEN_TOL)?)
}

pub const DEFAULT_GREEN_TOL: f64 = 1e-7;

/// Monte Carlo estimate of the expected number of visits to the origin.
///
/// Conditional (Rao–Blackwellized) occupation estimator: the n = 0 visit is
/// certain; for later visits a time 2k is drawn with heavy-tailed probability
/// q(k) = k^{−1/2} − (k+1)^{−1/2}, the 2k steps are allocated to the axes by a
/// multinomial draw conditioned on every axis receiving an even count, and
/// the estimator is P(all even)·Π_j r(m_j)/q(k), with r(m) the exact 1-d
/// return probability after m steps. Unbiased for the full series; no
/// truncation.
pub fn green_origin_mc(dim: usize, samples: u64, seed: u64) -> Result<McEstimate> {
    if dim <= 2 {
        return Err(Error::RecurrentWalk { dim });
    }
    if samples < 2 {
        return Err(Error::config("need at least two samples"));
    }
    let mut rng = StreamKey::new(seed, 0, Role::Oracle).rng();
    let mut moments = Moments::new();
    let mut alloc = vec![0f64; dim];
    for _ in 0..samples {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let k = (1.0 / (u * u)).floor().max(1.0);
        let q = k.powf(-0.5) * -(-0.5 * (1.0 / k).ln_1p()).exp_m1();
        let n = 2.0 * k;
        loop {
            let mut left = n;
            for (axis, slot) in alloc.iter_mut().enumerate() {
                let remaining_axes = (dim - axis) as f64;
                let m = if axis + 1 == dim {
                    left
                } else {
                    sample_binomial(&mut rng, left, 1.0 / remaining_axes)
                };
                *slot = m;
                left -= m;
            }
            if alloc.iter().all(|m| m % 2.0 == 0.0) {
                break;
            }
        }
        let weight: f64 = alloc.iter().map(|&m| one_d_return(m)).product();
        moments.push(1.0 + even_allocation_probability(dim, n) * weight / q);
    }
    Ok(McEstimate::from_moments(&moments, DEFAULT_LEVEL).with_seeds(seed, 0))
}

fn sample_binomial<R: Rng>(rng: &mut R, n: f64, p: f64) -> f64 {
    if n < 1e15 {
        Binomial::new(n as u64, p)
            .expect("valid binomial")
            .sample(rng) as f64
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (n * p + z * (n * p * (1.0 - p)).sqrt()).round().clamp(0.0, n)
    }
}

/// P(every axis count is even) for Multinomial(n; 1/d, …, 1/d) with n even:
/// 2^{−d} Σ_{s ∈ {±1}^d} ((Σ s)/d)^n.
fn even_allocation_probability(dim: usize, n: f64) -> f64 {
    let total: f64 = (0..(1u32 << dim))
        .map(|mask| {
            let s: i32 = (0..dim).map(|b| if mask >> b & 1 == 1 { 1 } else { -1 }).sum();
            (s as f64 / dim as f64).abs().powf(n)
        })
        .sum();
    total / (1u64 << dim) as f64
}

/// C(m, m/2)/2^m for even m, 0 otherwise.
fn one_d_return(m: f64) -> f64 {
    if m % 2.0 != 0.0 {
        return 0.0;
    }
    if m == 0.0 {
        return 1.0;
    }
    if m < 1e6 {
        (ln_gamma(m + 1.0) - 2.0 * ln_gamma(m / 2.0 + 1.0) - m * std::f64::consts::LN_2).exp()
    } else {
        let k = m / 2.0;
        (1.0 / (std::f64::consts::PI * k)).sqrt() * (1.0 - 1.0 / (8.0 * k) + 1.0 / (128.0 * k * k))
    }
}
