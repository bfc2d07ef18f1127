//! Time stepping for the symbiotic branching model
//!
//! ```text
//! du(i) = Δu(i) dt + √(b u(i) v(i)) dB¹(i)
//! dv(i) = Δv(i) dt + √(b u(i) v(i)) dB²(i),   d⟨B¹(i), B²(i)⟩ = ρ dt
//! ```
//!
//! its bounded torus variant (diffusion amplitude multiplied by
//! √((1 − u/N)(1 − v/N))), and the parabolic Anderson model
//! dw(i) = Δw(i) dt + √b w(i) dW(i).
//!
//! Each step applies the heat drift to the whole field, then adds the noise
//! site by site in index order. The drift is the exact propagator P_dt by
//! default ([`Drift::Exact`]) or the explicit Euler step I + dt·Δ
//! ([`Drift::Euler`]); both are convex combinations of neighbor averages and
//! keep fields inside [0, N]. Noise amplitudes are evaluated at the state
//! before the step.
//!
//! For |ρ| = 1 both fields share one increment per site, truncated so that
//! both stay inside their state space. For ρ = 1 this leaves v − u untouched
//! by the noise, and for ρ = −1 it leaves u + v untouched.
//!
//! Truncation at 0 feeds mass into sites whose value is small against the
//! noise scale, so truncated paths do not die out. [`Scheme::SplitStep`] with
//! ρ = 1 avoids this: with m = min(u, v) and M = max(u, v) after the drift,
//! m follows the Feller transition of dm = √(b·M·m) dW over one step (a
//! Poisson mixture of Gamma laws, absorbed at 0) and the same increment is
//! added to M.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, Geometry, HeatPropagator};
use crate::rng::{GaussianStream, NoiseSource, Role, StreamKey};

/// Series truncation of the exact drift propagator.
const DRIFT_TOL: f64 = 1e-17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Euler–Maruyama with truncation at the state-space boundary.
    #[default]
    TruncatedEuler,
    /// Heat substep plus a noise substep sampled exactly in law: the
    /// geometric substep for the parabolic Anderson model, and for the SBM
    /// with ρ = 1 the Feller transition of the smaller field with the larger
    /// one frozen over the step.
    SplitStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Drift {
    #[default]
    Exact,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmParams {
    pub b: f64,
    pub rho: f64,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub drift: Drift,
    pub bound_n: Option<f64>,
}

impl SbmParams {
    pub fn new(b: f64, rho: f64, dt: f64, horizon: f64) -> Result<Self> {
        let p = Self {
            b,
            rho,
            dt,
            horizon,
            scheme: Scheme::TruncatedEuler,
            drift: Drift::Exact,
            bound_n: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_bound(mut self, n: f64) -> Result<Self> {
        self.bound_n = Some(n);
        self.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::config(format!("branching rate must be >= 0, got {}", self.b)));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::config(format!("correlation must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::config(format!("dt must lie in (0, 1], got {}", self.dt)));
        }
        if self.horizon > 0.0 && self.dt > self.horizon {
            return Err(Error::config(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            )));
        }
        if let Some(n) = self.bound_n {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::config(format!("bound N must be positive, got {n}")));
            }
        }
        Ok(())
    }

    /// Number of steps; the horizon is split into equal steps of length ≤ dt.
    pub fn steps(&self) -> u64 {
        if self.horizon == 0.0 {
            return 0;
        }
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    /// Length of each step actually taken.
    pub fn step_length(&self) -> f64 {
        match self.steps() {
            0 => self.dt,
            k => self.horizon / k as f64,
        }
    }

    /// Step index nearest to time t.
    pub fn snap(&self, t: f64) -> Result<u64> {
        let h = self.step_length();
        let slack = 1e-9 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::config(format!(
                "record time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(((t / h).round() as u64).min(self.steps()))
    }

    fn propagator(&self) -> Result<HeatPropagator> {
        match self.drift {
            Drift::Exact => HeatPropagator::series(self.step_length(), DRIFT_TOL),
            Drift::Euler => HeatPropagator::euler(self.step_length()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SbmState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

impl SbmState {
    pub fn new(u: Field, v: Field) -> Result<Self> {
        if u.geometry() != v.geometry() {
            return Err(Error::config("u and v live on different geometries"));
        }
        u.require_nonnegative()?;
        v.require_nonnegative()?;
        Ok(Self { t: 0.0, u, v })
    }

    pub fn geometry(&self) -> &Geometry {
        self.u.geometry()
    }

    /// η = v − u.
    pub fn eta(&self) -> Field {
        self.v.sub(&self.u)
    }

    /// min(u, v) sitewise.
    pub fn min_process(&self) -> Field {
        self.u.zip_with(&self.v, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PamState {
    pub t: f64,
    pub w: Field,
}

impl PamState {
    pub fn new(w: Field) -> Result<Self> {
        w.require_nonnegative()?;
        Ok(Self { t: 0.0, w })
    }
}

/// Recorded snapshots of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    /// step index of each snapshot
    pub steps: Vec<u64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }
}

fn blowup(site: usize, step: u64, detail: &str) -> Error {
    Error::NumericalBlowup {
        site,
        step,
        detail: detail.to_string(),
    }
}

/// Advances an SBM state one step at a time with reusable buffers.
pub struct SbmStepper {
    params: SbmParams,
    prop: HeatPropagator,
    h: f64,
    sqrt_h: f64,
    scratch: Vec<f64>,
    u_drift: Vec<f64>,
    v_drift: Vec<f64>,
    step: u64,
}

impl SbmStepper {
    pub fn new(params: &SbmParams) -> Result<Self> {
        params.validate()?;
        if params.scheme == Scheme::SplitStep && (params.rho != 1.0 || params.bound_n.is_some()) {
            return Err(Error::config(
                "the split-step SBM scheme needs rho = 1 and no bound N",
            ));
        }
        let h = params.step_length();
        Ok(Self {
            params: *params,
            prop: params.propagator()?,
            h,
            sqrt_h: h.sqrt(),
            scratch: Vec::new(),
            u_drift: Vec::new(),
            v_drift: Vec::new(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, state: &mut SbmState, noise: &mut impl NoiseSource) -> Result<()> {
        let n = state.u.values().len();
        let geom = state.u.geometry().clone();
        self.u_drift.resize(n, 0.0);
        self.v_drift.resize(n, 0.0);
        self.prop
            .apply_into(&geom, state.u.values(), &mut self.u_drift, &mut self.scratch);
        self.prop
            .apply_into(&geom, state.v.values(), &mut self.v_drift, &mut self.scratch);

        let SbmParams { b, rho, bound_n, scheme, .. } = self.params;
        let exact = scheme == Scheme::SplitStep;
        let cap = bound_n.unwrap_or(f64::INFINITY);
        let perp = (1.0 - rho * rho).max(0.0).sqrt();
        let u = state.u.values_mut();
        let v = state.v.values_mut();
        for i in 0..n {
            let (u0, v0) = (u[i].max(0.0), v[i].max(0.0));
            let mut var = b * u0 * v0;
            if let Some(big) = bound_n {
                var *= ((1.0 - u0 / big) * (1.0 - v0 / big)).clamp(0.0, 1.0);
            }
            let amp = var.sqrt() * self.sqrt_h;
            let (ud, vd) = (self.u_drift[i], self.v_drift[i]);
            if exact {
                let (lo, hi) = (ud.min(vd), ud.max(vd));
                let inc = noise.feller(lo, 0.5 * b * hi * self.h) - lo;
                u[i] = ud + inc;
                v[i] = vd + inc;
                if !u[i].is_finite() || !v[i].is_finite() {
                    return Err(blowup(i, self.step, "non-finite population value"));
                }
                continue;
            }
            let xi = noise.standard_normal();
            if rho == 1.0 {
                let inc = (amp * xi).max(-ud.min(vd)).min(cap - ud.max(vd));
                u[i] = ud + inc;
                v[i] = vd + inc;
            } else if rho == -1.0 {
                let inc = (amp * xi).max(-ud).max(vd - cap).min(vd).min(cap - ud);
                u[i] = ud + inc;
                v[i] = vd - inc;
            } else {
                let xi_perp = noise.standard_normal();
                u[i] = (ud + amp * xi).clamp(0.0, cap);
                v[i] = (vd + amp * (rho * xi + perp * xi_perp)).clamp(0.0, cap);
            }
            if !u[i].is_finite() || !v[i].is_finite() {
                return Err(blowup(i, self.step, "non-finite population value"));
            }
        }
        self.step += 1;
        state.t = self.step as f64 * self.h;
        Ok(())
    }
}

/// One step of the SBM from `state`.
pub fn step_sbm(
    state: &SbmState,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
) -> Result<SbmState> {
    let mut next = state.clone();
    let mut stepper = SbmStepper::new(params)?;
    stepper.step(&mut next, noise)?;
    next.t = state.t + stepper.h;
    Ok(next)
}

fn record_steps(params: &SbmParams, record_times: &[f64]) -> Result<Vec<u64>> {
    let steps = record_times
        .iter()
        .map(|&t| params.snap(t))
        .collect::<Result<Vec<_>>>()?;
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("record times must be nondecreasing"));
    }
    Ok(steps)
}

/// Runs to the last record time, calling `observe` after every step
/// (and once for the initial state) with the step index and state.
pub fn run_sbm(
    u0: &Field,
    v0: &Field,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
    last_step: u64,
    mut observe: impl FnMut(u64, &SbmState),
) -> Result<SbmState> {
    let mut state = SbmState::new(u0.clone(), v0.clone())?;
    let mut stepper = SbmStepper::new(params)?;
    observe(0, &state);
    while stepper.steps_taken() < last_step {
        stepper.step(&mut state, noise)?;
        observe(stepper.steps_taken(), &state);
    }
    Ok(state)
}

/// SBM snapshots at `record_times`, each snapped to the nearest step.
pub fn simulate_sbm_with_noise(
    u0: &Field,
    v0: &Field,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
    record_times: &[f64],
) -> Result<Trajectory<SbmState>> {
    let steps = record_steps(params, record_times)?;
    let last = steps.last().copied().unwrap_or(0);
    let mut states = Vec::with_capacity(steps.len());
    let mut next = 0;
    run_sbm(u0, v0, params, noise, last, |k, s| {
        while next < steps.len() && steps[next] == k {
            states.push(s.clone());
            next += 1;
        }
    })?;
    Ok(Trajectory { steps, states })
}

/// SBM snapshots driven by the primary stream of replica 0 for `seed`.
pub fn simulate_sbm(
    u0: &Field,
    v0: &Field,
    params: &SbmParams,
    seed: u64,
    record_times: &[f64],
) -> Result<Trajectory<SbmState>> {
    let mut noise = StreamKey::new(seed, 0, Role::Primary).gaussian();
    simulate_sbm_with_noise(u0, v0, params, &mut noise, record_times)
}

/// As [`simulate_sbm`], requiring the bounded variant and initial values in [0, N].
pub fn simulate_sbm_bounded(
    u0: &Field,
    v0: &Field,
    params: &SbmParams,
    seed: u64,
    record_times: &[f64],
) -> Result<Trajectory<SbmState>> {
    let Some(cap) = params.bound_n else {
        return Err(Error::config("bounded simulation needs bound N"));
    };
    for (name, f) in [("u0", u0), ("v0", v0)] {
        if let Some(i) = f.values().iter().position(|&x| x > cap) {
            return Err(Error::config(format!(
                "{name}({i}) = {} exceeds N = {cap}",
                f.get(i)
            )));
        }
    }
    simulate_sbm(u0, v0, params, seed, record_times)
}

/// Advances a PAM state one step at a time.
pub struct PamStepper {
    params: SbmParams,
    prop: HeatPropagator,
    h: f64,
    sqrt_bh: f64,
    scratch: Vec<f64>,
    buf: Vec<f64>,
    step: u64,
}

impl PamStepper {
    pub fn new(params: &SbmParams) -> Result<Self> {
        params.validate()?;
        let h = params.step_length();
        Ok(Self {
            params: *params,
            prop: params.propagator()?,
            h,
            sqrt_bh: (params.b * h).sqrt(),
            scratch: Vec::new(),
            buf: Vec::new(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, state: &mut PamState, noise: &mut impl NoiseSource) -> Result<()> {
        let geom = state.w.geometry().clone();
        let n = state.w.values().len();
        self.buf.resize(n, 0.0);
        match self.params.scheme {
            Scheme::SplitStep => {
                let shift = 0.5 * self.params.b * self.h;
                let w = state.w.values_mut();
                for x in w.iter_mut() {
                    *x *= (self.sqrt_bh * noise.standard_normal() - shift).exp();
                }
                self.buf.copy_from_slice(w);
                self.prop.apply_into(&geom, &self.buf, w, &mut self.scratch);
            }
            Scheme::TruncatedEuler => {
                self.prop
                    .apply_into(&geom, state.w.values(), &mut self.buf, &mut self.scratch);
                let w = state.w.values_mut();
                for (x, &d) in w.iter_mut().zip(&self.buf) {
                    let amp = self.sqrt_bh * x.max(0.0);
                    *x = (d + amp * noise.standard_normal()).max(0.0);
                }
            }
        }
        if let Some(i) = state.w.values().iter().position(|x| !x.is_finite()) {
            return Err(blowup(i, self.step, "non-finite field value"));
        }
        self.step += 1;
        state.t = self.step as f64 * self.h;
        Ok(())
    }
}

pub fn step_pam(
    state: &PamState,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
) -> Result<PamState> {
    let mut next = state.clone();
    let mut stepper = PamStepper::new(params)?;
    stepper.step(&mut next, noise)?;
    next.t = state.t + stepper.h;
    Ok(next)
}

/// Runs the PAM to `last_step`, calling `observe` as in [`run_sbm`].
pub fn run_pam(
    w0: &Field,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
    last_step: u64,
    mut observe: impl FnMut(u64, &PamState),
) -> Result<PamState> {
    let mut state = PamState::new(w0.clone())?;
    let mut stepper = PamStepper::new(params)?;
    observe(0, &state);
    while stepper.steps_taken() < last_step {
        stepper.step(&mut state, noise)?;
        observe(stepper.steps_taken(), &state);
    }
    Ok(state)
}

pub fn simulate_pam_with_noise(
    w0: &Field,
    params: &SbmParams,
    noise: &mut impl NoiseSource,
    record_times: &[f64],
) -> Result<Trajectory<PamState>> {
    let steps = record_steps(params, record_times)?;
    let last = steps.last().copied().unwrap_or(0);
    let mut states = Vec::with_capacity(steps.len());
    let mut next = 0;
    run_pam(w0, params, noise, last, |k, s| {
        while next < steps.len() && steps[next] == k {
            states.push(s.clone());
            next += 1;
        }
    })?;
    Ok(Trajectory { steps, states })
}

pub fn simulate_pam(
    w0: &Field,
    params: &SbmParams,
    seed: u64,
    record_times: &[f64],
) -> Result<Trajectory<PamState>> {
    let mut noise: GaussianStream = StreamKey::new(seed, 0, Role::Primary).gaussian();
    simulate_pam_with_noise(w0, params, &mut noise, record_times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat::solve_heat;
    use crate::rng::ZeroNoise;
    use proptest::prelude::*;

    fn ring(l: usize) -> Geometry {
        Geometry::new(1, l).unwrap()
    }

    fn bumps(g: &Geometry) -> (Field, Field) {
        let u = Field::from_sites(g, &[(vec![0], 2.0), (vec![3], 0.5)]).unwrap();
        let v = Field::from_sites(g, &[(vec![1], 1.0), (vec![-1], 2.0), (vec![0], 0.25)]).unwrap();
        (u, v)
    }

    #[test]
    fn params_validation() {
        assert!(SbmParams::new(1.0, 1.5, 0.01, 1.0).is_err());
        assert!(SbmParams::new(1.0, 0.0, 2.0, 5.0).is_err());
        assert!(SbmParams::new(1.0, 0.0, 0.5, 0.1).is_err());
        assert!(SbmParams::new(-1.0, 0.0, 0.1, 1.0).is_err());
        assert!(SbmParams::new(1.0, 0.0, 0.1, 1.0).unwrap().with_bound(0.0).is_err());
        let p = SbmParams::new(1.0, 0.0, 0.3, 1.0).unwrap();
        assert_eq!(p.steps(), 4);
        assert!((p.step_length() - 0.25).abs() < 1e-15);
        assert_eq!(p.snap(0.6).unwrap(), 2);
        assert!(p.snap(1.5).is_err());
    }

    #[test]
    fn zero_branching_is_heat_step() {
        let g = ring(12);
        let (u, v) = bumps(&g);
        for drift in [Drift::Exact, Drift::Euler] {
            let p = SbmParams::new(0.0, 0.3, 0.01, 1.0).unwrap().with_drift(drift);
            let s = SbmState::new(u.clone(), v.clone()).unwrap();
            let mut noise = StreamKey::new(1, 0, Role::Primary).gaussian();
            let next = step_sbm(&s, &p, &mut noise).unwrap();
            let prop = p.propagator().unwrap();
            assert_eq!(next.u, prop.apply(&u));
            assert_eq!(next.v, prop.apply(&v));
        }
    }

    #[test]
    fn euler_drift_matches_explicit_step() {
        let g = ring(12);
        let (u, _) = bumps(&g);
        let p = SbmParams::new(0.0, 1.0, 0.01, 1.0).unwrap().with_drift(Drift::Euler);
        let s = SbmState::new(u.clone(), u.clone()).unwrap();
        let next = step_sbm(&s, &p, &mut ZeroNoise).unwrap();
        let lap = crate::lattice::laplacian(&u);
        let expected = u.add(&lap.scale(0.01));
        assert!(next.u.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn rho_one_difference_is_deterministic() {
        let g = ring(16);
        let (u, v) = bumps(&g);
        let p = SbmParams::new(2.0, 1.0, 1e-3, 2.0).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0];
        let heat = solve_heat(&v.sub(&u), &grid).unwrap();
        let a = simulate_sbm(&u, &v, &p, 1, &grid).unwrap();
        let b = simulate_sbm(&u, &v, &p, 2, &grid).unwrap();
        for k in 0..grid.len() {
            let (ea, eb) = (a.states[k].eta(), b.states[k].eta());
            assert!(ea.max_abs_diff(&eb) <= 1e-10);
            assert!(ea.max_abs_diff(heat.at(k)) <= 1e-6);
        }
    }

    #[test]
    fn rho_minus_one_conserves_sum() {
        let g = ring(16);
        let u = Field::new(g.clone(), (0..16).map(|i| if i < 8 { 0.8 } else { 0.3 }).collect()).unwrap();
        let v = u.map(|x| 1.0 - x);
        let p = SbmParams::new(1.0, -1.0, 1e-2, 5.0).unwrap();
        let traj = simulate_sbm(&u, &v, &p, 9, &[0.0, 1.0, 2.5, 5.0]).unwrap();
        for s in &traj.states {
            let dev = s.u.add(&s.v).map(|x| x - 1.0).max_abs();
            assert!(dev <= 1e-10, "{dev}");
            assert!(s.u.is_nonnegative() && s.v.is_nonnegative());
        }
    }

    #[test]
    fn reproducible_and_records_initial() {
        let g = ring(10);
        let (u, v) = bumps(&g);
        let p = SbmParams::new(1.0, 0.4, 0.01, 1.0).unwrap();
        let a = simulate_sbm(&u, &v, &p, 5, &[0.0, 0.5, 1.0]).unwrap();
        let b = simulate_sbm(&u, &v, &p, 5, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(a, b);
        let c = simulate_sbm(&u, &v, &p, 6, &[0.0, 0.5, 1.0]).unwrap();
        assert_ne!(a.states[2], c.states[2]);
        let only = simulate_sbm(&u, &v, &p, 5, &[0.0]).unwrap();
        assert_eq!(only.states[0].u, u);
        assert_eq!(only.states[0].v, v);
    }

    #[test]
    fn record_times_snap_to_steps() {
        let g = ring(4);
        let (u, v) = bumps(&g);
        let p = SbmParams::new(1.0, 0.0, 0.1, 1.0).unwrap();
        let t = simulate_sbm(&u, &v, &p, 3, &[0.0, 0.26, 0.26, 1.0]).unwrap();
        assert_eq!(t.steps, vec![0, 3, 3, 10]);
        assert!((t.states[1].t - 0.3).abs() < 1e-12);
        assert!(simulate_sbm(&u, &v, &p, 3, &[0.5, 0.2]).is_err());
    }

    #[test]
    fn pam_absorbs_at_zero() {
        let g = ring(8);
        let p = SbmParams::new(1.0, 1.0, 0.01, 1.0).unwrap().with_scheme(Scheme::SplitStep);
        let t = simulate_pam(&Field::zeros(&g), &p, 1, &[1.0]).unwrap();
        assert_eq!(t.states[0].w.max_abs(), 0.0);
    }

    #[test]
    fn bounded_run_stays_below_cap() {
        let g = ring(8);
        let u = Field::constant(&g, 1.5);
        let v = Field::from_sites(&g, &[(vec![0], 1.9), (vec![4], 1.0)]).unwrap();
        let p = SbmParams::new(5.0, 0.2, 0.01, 2.0).unwrap().with_bound(2.0).unwrap();
        let grid: Vec<f64> = (0..=20).map(|k| 0.1 * k as f64).collect();
        let t = simulate_sbm_bounded(&u, &v, &p, 4, &grid).unwrap();
        for s in &t.states {
            assert!(s.u.values().iter().chain(s.v.values()).all(|&x| (0.0..=2.0).contains(&x)));
        }
        let over = Field::constant(&g, 2.5);
        assert!(simulate_sbm_bounded(&over, &v, &p, 4, &grid).is_err());
        let unbounded = SbmParams::new(5.0, 0.2, 0.01, 2.0).unwrap();
        assert!(simulate_sbm_bounded(&u, &v, &unbounded, 4, &grid).is_err());
    }

    #[test]
    fn equal_initials_stay_equal() {
        let g = ring(8);
        let (u, _) = bumps(&g);
        let p = SbmParams::new(1.0, 1.0, 0.01, 1.0).unwrap().with_bound(10.0).unwrap();
        let t = simulate_sbm_bounded(&u, &u, &p, 8, &[0.5, 1.0]).unwrap();
        for s in &t.states {
            assert_eq!(s.u, s.v);
        }
    }

    #[test]
    fn blowup_is_reported() {
        let g = ring(1);
        let w = Field::constant(&g, 1e300);
        let p = SbmParams::new(1.0, 1.0, 1.0, 50.0).unwrap().with_scheme(Scheme::SplitStep);
        let mut big = BigNoise;
        let r = simulate_pam_with_noise(&w, &p, &mut big, &[50.0]);
        assert!(matches!(r, Err(Error::NumericalBlowup { .. })));
    }

    struct BigNoise;
    impl NoiseSource for BigNoise {
        fn standard_normal(&mut self) -> f64 {
            10.0
        }

        fn feller(&mut self, x: f64, _scale: f64) -> f64 {
            x
        }
    }

    #[test]
    fn split_step_sbm_needs_rho_one() {
        let p = SbmParams::new(1.0, 0.5, 0.01, 1.0).unwrap().with_scheme(Scheme::SplitStep);
        assert!(SbmStepper::new(&p).is_err());
        let bounded = SbmParams::new(1.0, 1.0, 0.01, 1.0)
            .unwrap()
            .with_scheme(Scheme::SplitStep)
            .with_bound(5.0)
            .unwrap();
        assert!(SbmStepper::new(&bounded).is_err());
    }

    #[test]
    fn split_step_sbm_preserves_mean_mass_and_absorbs() {
        let g = ring(4);
        let u = Field::point(&g, 0, 0.5);
        let v = Field::constant(&g, 1.0);
        let p = SbmParams::new(1.0, 1.0, 0.02, 4.0).unwrap().with_scheme(Scheme::SplitStep);
        let n = 4000;
        let finals: Vec<f64> = (0..n)
            .map(|r| {
                let mut noise = StreamKey::new(3, r, Role::Primary).gaussian();
                simulate_sbm_with_noise(&u, &v, &p, &mut noise, &[4.0]).unwrap().states[0]
                    .u
                    .total()
            })
            .collect();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let sd = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * sd / (n as f64).sqrt(), "{mean} ± {sd}");
        assert!(finals.iter().filter(|&&x| x == 0.0).count() > n as usize / 10);
    }

    proptest! {
        #[test]
        fn fields_stay_nonnegative(
            seed in 0u64..1000,
            rho in -1.0f64..=1.0,
            b in 0.0f64..20.0,
            euler in any::<bool>(),
        ) {
            let g = ring(6);
            let (u, v) = bumps(&g);
            let drift = if euler { Drift::Euler } else { Drift::Exact };
            let p = SbmParams::new(b, rho, 0.05, 1.0).unwrap().with_drift(drift);
            let t = simulate_sbm(&u, &v, &p, seed, &[0.25, 0.5, 1.0]).unwrap();
            for s in &t.states {
                prop_assert!(s.u.is_nonnegative() && s.v.is_nonnegative());
            }
            let pam = p.with_scheme(Scheme::TruncatedEuler);
            let w = simulate_pam(&u, &pam, seed, &[1.0]).unwrap();
            prop_assert!(w.states[0].w.is_nonnegative());
        }

        #[test]
        fn split_step_keeps_difference_and_sign(seed in 0u64..1000, b in 0.0f64..20.0) {
            let g = ring(6);
            let (u, v) = bumps(&g);
            let p = SbmParams::new(b, 1.0, 0.05, 1.0).unwrap().with_scheme(Scheme::SplitStep);
            let t = simulate_sbm(&u, &v, &p, seed, &[0.5, 1.0]).unwrap();
            let eta = solve_heat(&v.sub(&u), &[0.0, 0.5, 1.0]).unwrap();
            for (s, e) in t.states.iter().zip(&eta.snapshots[1..]) {
                prop_assert!(s.u.is_nonnegative() && s.v.is_nonnegative());
                prop_assert!(s.eta().max_abs_diff(e) <= 1e-8);
            }
        }
    }
}
