//! Monte Carlo checks of the structural identities of the model.
//!
//! Every experiment draws replica `r` from the streams keyed by
//! `(seed, r, role)`, so results do not depend on scheduling. Pass thresholds
//! are two-sided 3 SE for identities and one-sided 2 SE for inequalities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat::{q_compensator, solve_heat, QTrajectory};
use crate::lattice::Field;
use crate::rng::{Role, StreamKey};
use crate::sde::{run_pam, run_sbm, SbmParams, SbmState, Scheme, Trajectory};
use crate::stats::{combined_se, McEstimate, Moments, DEFAULT_LEVEL};

/// Runs `f(0..replicas)` on the rayon pool and returns results in replica order.
pub fn replicate<T, F>(replicas: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..replicas).into_par_iter().map(f).collect()
}

fn estimate(xs: &[f64], seed: u64) -> McEstimate {
    McEstimate::from_moments(&Moments::from_slice(xs), DEFAULT_LEVEL).with_seeds(seed, 0)
}

fn column<T>(rows: &[T], f: impl Fn(&T) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

/// z-score of `diff` against `se`; differences at the rounding level of
/// quantities of size `scale` count as zero.
fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if diff.abs() <= 1e-12 * scale.abs().max(1.0) {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Streaming total masses, realized quadratic variation of ū, realized
/// covariation of (ū, v̄) and the left-Riemann bracket b∫⟨u, v⟩ ds.
#[derive(Clone, Copy, Debug, Default)]
pub struct MassAccumulator {
    started: bool,
    t: f64,
    u: f64,
    v: f64,
    uv: f64,
    pub realized_qv: f64,
    pub realized_cov: f64,
    pub bracket: f64,
}

impl MassAccumulator {
    pub fn push(&mut self, t: f64, u: &Field, v: &Field, b: f64) {
        let (ub, vb, uv) = (u.total(), v.total(), u.dot(v));
        if self.started {
            let (du, dv) = (ub - self.u, vb - self.v);
            self.realized_qv += du * du;
            self.realized_cov += du * dv;
            self.bracket += b * self.uv * (t - self.t);
        }
        *self = Self {
            started: true,
            t,
            u: ub,
            v: vb,
            uv,
            ..*self
        };
    }

    pub fn u_bar(&self) -> f64 {
        self.u
    }

    pub fn v_bar(&self) -> f64 {
        self.v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TotalMassPath {
    pub times: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub realized_qv: Vec<f64>,
    pub realized_cov: Vec<f64>,
    pub bracket_integral: Vec<f64>,
}

pub fn total_mass_path(traj: &Trajectory<SbmState>, b: f64) -> Result<TotalMassPath> {
    if traj.len() < 2 {
        return Err(Error::config("total mass path needs at least two snapshots"));
    }
    let mut acc = MassAccumulator::default();
    let mut path = TotalMassPath {
        times: Vec::new(),
        u_bar: Vec::new(),
        v_bar: Vec::new(),
        realized_qv: Vec::new(),
        realized_cov: Vec::new(),
        bracket_integral: Vec::new(),
    };
    for s in &traj.states {
        acc.push(s.t, &s.u, &s.v, b);
        path.times.push(s.t);
        path.u_bar.push(acc.u);
        path.v_bar.push(acc.v);
        path.realized_qv.push(acc.realized_qv);
        path.realized_cov.push(acc.realized_cov);
        path.bracket_integral.push(acc.bracket);
    }
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct MartingaleReport {
    pub u0_bar: f64,
    pub u_bar: McEstimate,
    pub v_bar: McEstimate,
    pub z_u: f64,
    pub z_v: f64,
    pub realized_qv: McEstimate,
    pub bracket: McEstimate,
    /// |mean QV − mean bracket| / mean bracket
    pub qv_gap: f64,
    /// max over replicas of |cov − QV| / max(QV, tiny); zero-noise check for ρ = 1
    pub cov_qv_mismatch: f64,
    pub gap_tolerance: f64,
    pub pass: bool,
}

/// Martingale property of ū, v̄ and the bracket identity [ū]_t = b∫⟨u, v⟩ds,
/// observed every `stride` steps.
pub fn martingale_test(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    replicas: u64,
    seed: u64,
    stride: u64,
) -> Result<MartingaleReport> {
    if replicas < 2 {
        return Err(Error::config("martingale test needs at least two replicas"));
    }
    let stride = stride.max(1);
    let steps = params.steps();
    let h = params.step_length();
    let runs = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut acc = MassAccumulator::default();
        run_sbm(u0, v0, params, &mut noise, steps, |k, s| {
            if k % stride == 0 || k == steps {
                acc.push(k as f64 * h, &s.u, &s.v, params.b);
            }
        })?;
        Ok(acc)
    })?;
    let u_bar = estimate(&column(&runs, |a| a.u), seed);
    let v_bar = estimate(&column(&runs, |a| a.v), seed);
    let qv = estimate(&column(&runs, |a| a.realized_qv), seed);
    let bracket = estimate(&column(&runs, |a| a.bracket), seed);
    let u0_bar = u0.total();
    let z_u = z_score(u_bar.mean - u0_bar, u_bar.std_error, u0_bar);
    let z_v = z_score(v_bar.mean - v0.total(), v_bar.std_error, v0.total());
    let qv_gap = if bracket.mean > 0.0 {
        (qv.mean - bracket.mean).abs() / bracket.mean
    } else {
        qv.mean.abs()
    };
    let cov_qv_mismatch = runs
        .iter()
        .map(|a| (a.realized_cov - a.realized_qv).abs() / a.realized_qv.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let gap_tolerance = 0.1f64.max(10.0 * params.dt * params.b);
    let pass = z_u.abs() <= 3.0 && z_v.abs() <= 3.0 && qv_gap <= gap_tolerance;
    Ok(MartingaleReport {
        u0_bar,
        u_bar,
        v_bar,
        z_u,
        z_v,
        realized_qv: qv,
        bracket,
        qv_gap,
        cov_qv_mismatch,
        gap_tolerance,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LaplacePair {
    pub lambda: f64,
    /// E[exp(−λ⟨w̃_t, θ1⟩)], w̃ started from φ
    pub dual: McEstimate,
    /// E[exp(−λ⟨φ, w_t⟩)], w started from θ1
    pub primal: McEstimate,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfDualityReport {
    pub pairs: Vec<LaplacePair>,
    pub pass: bool,
}

/// Self-duality ⟨w̃_t, θ1⟩ = ⟨φ, w_t⟩ in law, tested through Laplace
/// transforms at each λ with independent primal and dual runs.
pub fn self_duality_test(
    params: &SbmParams,
    theta: f64,
    phi: &Field,
    lambdas: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<SelfDualityReport> {
    if !(theta > 0.0) {
        return Err(Error::config(format!("theta must be positive, got {theta}")));
    }
    if replicas < 2 {
        return Err(Error::config("self-duality test needs at least two replicas"));
    }
    let flat = Field::constant(phi.geometry(), theta);
    let steps = params.steps();
    let samples = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let w = run_pam(&flat, params, &mut noise, steps, |_, _| {})?;
        let mut noise = StreamKey::new(seed, r, Role::Dual).gaussian();
        let wt = run_pam(phi, params, &mut noise, steps, |_, _| {})?;
        Ok((theta * wt.w.total(), phi.dot(&w.w)))
    })?;
    let pairs: Vec<LaplacePair> = lambdas
        .iter()
        .map(|&lambda| {
            let dual = estimate(&column(&samples, |s| (-lambda * s.0).exp()), seed);
            let primal = estimate(&column(&samples, |s| (-lambda * s.1).exp()), seed);
            let z = z_score(dual.mean - primal.mean, combined_se(&dual, &primal), 1.0);
            LaplacePair {
                lambda,
                dual,
                primal,
                z,
            }
        })
        .collect();
    let pass = pairs.iter().all(|p| p.z.abs() <= 3.0);
    Ok(SelfDualityReport { pairs, pass })
}

/// Nonnegative nondecreasing convex test functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexTest {
    Square,
    /// exp(x / (4 x₀)) with x₀ the initial total mass
    ExpScaled,
}

impl ConvexTest {
    pub fn eval(self, x: f64, x0: f64) -> f64 {
        match self {
            ConvexTest::Square => x * x,
            ConvexTest::ExpScaled => (x / (4.0 * x0)).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConvexTest::Square => "square",
            ConvexTest::ExpScaled => "exp_scaled",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonPoint {
    pub t: f64,
    pub test: ConvexTest,
    /// E[Φ(ū_t + v̄_t)] for the ρ = 1 model
    pub sbm: McEstimate,
    /// E[Φ(w̄_t)] for the PAM from u₀ + v₀
    pub pam: McEstimate,
    /// (sbm − pam) / combined SE
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub points: Vec<ComparisonPoint>,
    pub pass: bool,
}

/// One-sided comparison E[Φ(ū_t + v̄_t)] ≤ E[Φ(w̄_t)] for each t in `times`
/// and each test function; the two sides use independent streams.
pub fn comparison_test(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    tests: &[ConvexTest],
    times: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<ComparisonReport> {
    if replicas < 2 {
        return Err(Error::config("comparison test needs at least two replicas"));
    }
    let params = SbmParams { rho: 1.0, ..*params };
    let record = times.iter().map(|&t| params.snap(t)).collect::<Result<Vec<_>>>()?;
    let last = record.iter().copied().max().unwrap_or(0);
    let w0 = u0.add(v0);
    let x0 = w0.total();
    let totals = replicate(replicas, |r| {
        let mut sbm = vec![0.0; record.len()];
        let mut pam = vec![0.0; record.len()];
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        run_sbm(u0, v0, &params, &mut noise, last, |k, s| {
            for (slot, &rk) in sbm.iter_mut().zip(&record) {
                if rk == k {
                    *slot = s.u.total() + s.v.total();
                }
            }
        })?;
        let mut noise = StreamKey::new(seed, r, Role::Reference).gaussian();
        run_pam(&w0, &params, &mut noise, last, |k, s| {
            for (slot, &rk) in pam.iter_mut().zip(&record) {
                if rk == k {
                    *slot = s.w.total();
                }
            }
        })?;
        Ok((sbm, pam))
    })?;
    let mut points = Vec::new();
    for &test in tests {
        for (j, &t) in times.iter().enumerate() {
            let sbm = estimate(&column(&totals, |o| test.eval(o.0[j], x0)), seed);
            let pam = estimate(&column(&totals, |o| test.eval(o.1[j], x0)), seed);
            let diff = sbm.mean - pam.mean;
            let se = combined_se(&sbm, &pam);
            let z = z_score(diff, se, pam.mean);
            points.push(ComparisonPoint {
                t,
                test,
                pass: diff <= 2.0 * se + 1e-12 * pam.mean.abs(),
                sbm,
                pam,
                z,
            });
        }
    }
    let pass = points.iter().all(|p| p.pass);
    Ok(ComparisonReport { points, pass })
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// |u − (min(u, v) + (v − u)⁻)| evaluated without rounding: (v − u)⁻ is
/// carried as an unevaluated sum of two doubles.
fn exact_min_residual(u: f64, v: f64) -> f64 {
    if u <= v {
        return u - u;
    }
    let (hi, lo) = two_sum(u, -v);
    let (s, e) = two_sum(v, hi);
    ((u - s) - (e + lo)).abs()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MinDecompositionReport {
    pub snapshots: usize,
    /// max |u − (w + η⁻)| in exact arithmetic
    pub identity_violation: f64,
    /// the same residual with η⁻ rounded to a double
    pub rounded_identity_violation: f64,
    /// max (w² − uv)⁺
    pub product_violation: f64,
    pub pass: bool,
}

impl MinDecompositionReport {
    fn absorb(&mut self, s: &SbmState) {
        for (&u, &v) in s.u.values().iter().zip(s.v.values()) {
            let w = u.min(v);
            let eta_minus = (u - v).max(0.0);
            self.identity_violation = self.identity_violation.max(exact_min_residual(u, v));
            self.rounded_identity_violation =
                self.rounded_identity_violation.max((u - (w + eta_minus)).abs());
            self.product_violation = self.product_violation.max(w * w - u * v);
        }
        self.snapshots += 1;
        self.pass = self.identity_violation == 0.0 && self.product_violation <= 0.0;
    }
}

/// u = min(u, v) + (v − u)⁻ and min(u, v)² ≤ uv at every site of every snapshot.
pub fn min_decomposition_check(traj: &Trajectory<SbmState>) -> MinDecompositionReport {
    let mut rep = MinDecompositionReport {
        pass: true,
        ..Default::default()
    };
    for s in &traj.states {
        rep.absorb(s);
    }
    rep
}

#[derive(Clone, Debug, Serialize)]
pub struct Rho1Report {
    pub replicas: u64,
    pub min_decomposition: MinDecompositionReport,
    /// max over replicas, snapshots and sites of |(v − u) − ζ_{v₀−u₀}|
    pub eta_heat_deviation: f64,
    /// max over snapshots and sites of the spread of v − u across replicas
    pub eta_cross_seed_spread: f64,
    pub eta_tolerance: f64,
    pub pass: bool,
}

/// Structural identities of the ρ = 1 model on `replicas` runs recorded at
/// `record_times`.
pub fn rho1_identities(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    record_times: &[f64],
    replicas: u64,
    seed: u64,
    eta_tolerance: f64,
) -> Result<Rho1Report> {
    let params = SbmParams { rho: 1.0, ..*params };
    let record = record_times
        .iter()
        .map(|&t| params.snap(t))
        .collect::<Result<Vec<_>>>()?;
    let grid: Vec<f64> = {
        let h = params.step_length();
        let mut g: Vec<f64> = record.iter().map(|&k| k as f64 * h).collect();
        g.insert(0, 0.0);
        g.dedup();
        g
    };
    let heat = solve_heat(&v0.sub(u0), &grid)?;
    let reference = |k: u64| {
        let t = k as f64 * params.step_length();
        let j = grid.iter().position(|&g| g == t).expect("grid holds every record time");
        heat.at(j)
    };
    let last = record.iter().copied().max().unwrap_or(0);
    let runs = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut rep = MinDecompositionReport {
            pass: true,
            ..Default::default()
        };
        let mut etas = Vec::with_capacity(record.len());
        let mut dev = 0.0f64;
        run_sbm(u0, v0, &params, &mut noise, last, |k, s| {
            if record.contains(&k) {
                rep.absorb(s);
                let eta = s.eta();
                dev = dev.max(eta.max_abs_diff(reference(k)));
                etas.push(eta);
            }
        })?;
        Ok((rep, dev, etas))
    })?;
    let mut min_decomposition = MinDecompositionReport {
        pass: true,
        ..Default::default()
    };
    let mut eta_heat_deviation = 0.0f64;
    let mut spread = 0.0f64;
    for (rep, dev, etas) in &runs {
        min_decomposition.snapshots += rep.snapshots;
        min_decomposition.identity_violation =
            min_decomposition.identity_violation.max(rep.identity_violation);
        min_decomposition.rounded_identity_violation = min_decomposition
            .rounded_identity_violation
            .max(rep.rounded_identity_violation);
        min_decomposition.product_violation =
            min_decomposition.product_violation.max(rep.product_violation);
        eta_heat_deviation = eta_heat_deviation.max(*dev);
        for (a, b) in etas.iter().zip(&runs[0].2) {
            spread = spread.max(a.max_abs_diff(b));
        }
    }
    min_decomposition.pass =
        min_decomposition.identity_violation == 0.0 && min_decomposition.product_violation <= 0.0;
    let pass = min_decomposition.pass && eta_heat_deviation <= eta_tolerance;
    Ok(Rho1Report {
        replicas,
        min_decomposition,
        eta_heat_deviation,
        eta_cross_seed_spread: spread,
        eta_tolerance,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SteppingStoneReport {
    pub replicas: u64,
    /// max over replicas, steps and sites of |u + v − 1|
    pub max_sum_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// ρ = −1 from u₀ + v₀ ≡ 1: checks u + v ≡ 1 after every step.
pub fn stepping_stone_check(
    params: &SbmParams,
    u0: &Field,
    replicas: u64,
    seed: u64,
    tolerance: f64,
) -> Result<SteppingStoneReport> {
    if u0.values().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::config("stepping-stone initial frequencies must lie in [0, 1]"));
    }
    let params = SbmParams { rho: -1.0, ..*params };
    let v0 = u0.map(|x| 1.0 - x);
    let steps = params.steps();
    let devs = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut dev = 0.0f64;
        run_sbm(u0, &v0, &params, &mut noise, steps, |_, s| {
            for (&a, &b) in s.u.values().iter().zip(s.v.values()) {
                dev = dev.max((a + b - 1.0).abs());
            }
        })?;
        Ok(dev)
    })?;
    let max_sum_deviation = devs.into_iter().fold(0.0, f64::max);
    Ok(SteppingStoneReport {
        replicas,
        max_sum_deviation,
        tolerance,
        pass: max_sum_deviation <= tolerance,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CoexistencePoint {
    pub t: f64,
    /// P{ū_T > ε and v̄_T > ε}
    pub p_both: McEstimate,
    /// P{ū_T > ε}
    pub p_u: McEstimate,
    pub u_bar: McEstimate,
    pub v_bar: McEstimate,
    /// max over replicas of |(v̄_T − ū_T) − (v̄₀ − ū₀)|
    pub eta_mass_deviation: f64,
}

/// Finite-horizon coexistence proxy along `t_grid`.
pub fn coexistence_estimator(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    t_grid: &[f64],
    eps_mass: f64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<CoexistencePoint>> {
    if !(eps_mass > 0.0) {
        return Err(Error::config("eps_mass must be positive"));
    }
    let record = t_grid.iter().map(|&t| params.snap(t)).collect::<Result<Vec<_>>>()?;
    let last = record.iter().copied().max().unwrap_or(0);
    let eta0 = v0.total() - u0.total();
    let runs = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut out = vec![(0.0, 0.0); record.len()];
        run_sbm(u0, v0, params, &mut noise, last, |k, s| {
            for (slot, &rk) in out.iter_mut().zip(&record) {
                if rk == k {
                    *slot = (s.u.total(), s.v.total());
                }
            }
        })?;
        Ok(out)
    })?;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let at = |o: &Vec<(f64, f64)>| o[j];
            CoexistencePoint {
                t,
                p_both: estimate(
                    &column(&runs, |o| ind(at(o).0 > eps_mass && at(o).1 > eps_mass)),
                    seed,
                ),
                p_u: estimate(&column(&runs, |o| ind(at(o).0 > eps_mass)), seed),
                u_bar: estimate(&column(&runs, |o| at(o).0), seed),
                v_bar: estimate(&column(&runs, |o| at(o).1), seed),
                eta_mass_deviation: runs
                    .iter()
                    .map(|o| ((at(o).1 - at(o).0) - eta0).abs())
                    .fold(0.0, f64::max),
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityPoint {
    pub t: f64,
    /// E[exp(−⟨w_{T*}, w̃_{T−T*}⟩)]
    pub paired: McEstimate,
    /// E[exp(−θ w̄_T)]
    pub direct: McEstimate,
    pub gap: f64,
    /// θ(q̄(T) − q̄(T*))
    pub bound: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    pub q_limit: f64,
    pub t_star: f64,
    pub q_at_t_star: f64,
    pub points: Vec<DualityPoint>,
    /// grid times at or before T*, which carry no inequality
    pub skipped: Vec<f64>,
    pub pass: bool,
    #[serde(skip)]
    pub compensator: QTrajectory,
}

/// The bound E[exp(−⟨w_{T*}, w̃_{T−T*}⟩)] − E[exp(−θ w̄_T)] ≤ θ(q̄(T) − q̄(T*))
/// with w = min(u, v) for the ρ = 1 model and w̃ an independent PAM from θ1.
///
/// T* is the first time on the compensator grid with q̄^∞ − q̄(t) ≤ eps,
/// where q̄^∞ = ⟨(v₀ − u₀)⁻, 1⟩. The compensator grid is `heat_points`
/// geometric points on [heat_first, max T] merged with `t_grid`.
#[allow(clippy::too_many_arguments)]
pub fn duality_functional_experiment(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    theta: f64,
    t_grid: &[f64],
    eps: f64,
    heat_points: usize,
    replicas: u64,
    seed: u64,
) -> Result<DualityReport> {
    if u0.total() > v0.total() {
        return Err(Error::config(
            "duality functional needs <u0,1> <= <v0,1>; swap the populations",
        ));
    }
    if !(theta > 0.0) || !(eps > 0.0) {
        return Err(Error::config("theta and eps must be positive"));
    }
    let params = SbmParams { rho: 1.0, ..*params };
    let h = params.step_length();
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let mut grid = crate::heat::geometric_grid(h.min(t_max / 100.0).max(1e-6), t_max, heat_points.max(2));
    grid.extend(t_grid.iter().map(|&t| params.snap(t).map(|k| k as f64 * h)).collect::<Result<Vec<_>>>()?);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let q = q_compensator(&v0.sub(u0), &grid)?;
    let q_limit = q.limit;
    let (star_idx, _) = q
        .settle_time(eps)
        .ok_or_else(|| Error::config(format!("q does not settle within eps = {eps} by t = {t_max}")))?;
    // snap T* onto the simulation step grid
    let star_step = params.snap(grid[star_idx])?;
    let t_star = star_step as f64 * h;
    let q_at = |t: f64| {
        let j = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(j, _)| j)
            .unwrap_or(0);
        q.total[j]
    };
    let q_star = q_at(t_star);

    let (active, skipped): (Vec<f64>, Vec<f64>) = t_grid.iter().partition(|&&t| t > t_star + 0.5 * h);
    let record: Vec<u64> = active.iter().map(|&t| params.snap(t)).collect::<Result<_>>()?;
    let last = record.iter().copied().max().unwrap_or(star_step);
    let pam_params = params.with_scheme(Scheme::SplitStep);
    let geometry = u0.geometry().clone();
    let flat = Field::constant(&geometry, theta);
    let pam_record: Vec<u64> = record.iter().map(|&k| k - star_step).collect();
    let pam_last = pam_record.iter().copied().max().unwrap_or(0);

    let samples = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut w_star = None;
        let mut direct = vec![0.0; record.len()];
        run_sbm(u0, v0, &params, &mut noise, last.max(star_step), |k, s| {
            if k == star_step {
                w_star = Some(s.min_process());
            }
            for (slot, &rk) in direct.iter_mut().zip(&record) {
                if rk == k {
                    *slot = (-theta * s.min_process().total()).exp();
                }
            }
        })?;
        let w_star = w_star.expect("T* lies on the step grid");
        let mut paired = vec![0.0; record.len()];
        let mut noise = StreamKey::new(seed, r, Role::Dual).gaussian();
        run_pam(&flat, &pam_params, &mut noise, pam_last, |k, s| {
            for (slot, &rk) in paired.iter_mut().zip(&pam_record) {
                if rk == k {
                    *slot = (-w_star.dot(&s.w)).exp();
                }
            }
        })?;
        Ok((paired, direct))
    })?;

    let points: Vec<DualityPoint> = active
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let paired = estimate(&column(&samples, |s| s.0[j]), seed);
            let direct = estimate(&column(&samples, |s| s.1[j]), seed);
            let gap = paired.mean - direct.mean;
            let bound = theta * (q_at(record[j] as f64 * h) - q_star);
            let se = combined_se(&paired, &direct);
            DualityPoint {
                t,
                pass: gap <= bound + 3.0 * se,
                paired,
                direct,
                gap,
                bound,
                se,
            }
        })
        .collect();
    let pass = points.iter().all(|p| p.pass);
    Ok(DualityReport {
        q_limit,
        t_star,
        q_at_t_star: q_star,
        points,
        skipped,
        pass,
        compensator: q,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailPoint {
    pub t: f64,
    pub cutoff: f64,
    /// E[ū_T 1{ū_T > K}]
    pub tail: McEstimate,
}

/// Tail contributions E[ū_T 1{ū_T > K}] on the grid of (T, K).
#[allow(clippy::too_many_arguments)]
pub fn uniform_integrability_probe(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    t_grid: &[f64],
    cutoffs: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    let runs = coexistence_totals(params, u0, v0, t_grid, replicas, seed)?;
    let mut out = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        for &k in cutoffs {
            let xs = column(&runs, |o| if o[j] > k { o[j] } else { 0.0 });
            out.push(TailPoint {
                t,
                cutoff: k,
                tail: estimate(&xs, seed),
            });
        }
    }
    Ok(out)
}

fn coexistence_totals(
    params: &SbmParams,
    u0: &Field,
    v0: &Field,
    t_grid: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let record = t_grid.iter().map(|&t| params.snap(t)).collect::<Result<Vec<_>>>()?;
    let last = record.iter().copied().max().unwrap_or(0);
    replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut out = vec![0.0; record.len()];
        run_sbm(u0, v0, params, &mut noise, last, |k, s| {
            for (slot, &rk) in out.iter_mut().zip(&record) {
                if rk == k {
                    *slot = s.u.total();
                }
            }
        })?;
        Ok(out)
    })
}

/// E[w_T(0)²] along `t_grid` for the PAM from the flat profile θ.
pub fn pam_second_moment_trend(
    params: &SbmParams,
    geometry: &crate::lattice::Geometry,
    theta: f64,
    t_grid: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<(f64, McEstimate)>> {
    let record = t_grid.iter().map(|&t| params.snap(t)).collect::<Result<Vec<_>>>()?;
    let last = record.iter().copied().max().unwrap_or(0);
    let flat = Field::constant(geometry, theta);
    let origin = geometry.origin();
    let runs = replicate(replicas, |r| {
        let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
        let mut out = vec![0.0; record.len()];
        run_pam(&flat, params, &mut noise, last, |k, s| {
            for (slot, &rk) in out.iter_mut().zip(&record) {
                if rk == k {
                    *slot = s.w.get(origin).powi(2);
                }
            }
        })?;
        Ok(out)
    })?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, estimate(&column(&runs, |o| o[j]), seed)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub name: String,
    pub mean: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub n: u64,
}

/// Experiment outcome in the JSON report schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub estimates: Vec<EstimateEntry>,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(experiment: &str, params: serde_json::Value, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            params,
            seed,
            estimates: Vec::new(),
            pass: true,
            notes: Vec::new(),
        }
    }

    pub fn estimate(&mut self, name: impl Into<String>, e: &McEstimate) -> &mut Self {
        self.estimates.push(EstimateEntry {
            name: name.into(),
            mean: e.mean,
            se: e.std_error,
            ci: [e.ci_low, e.ci_high],
            n: e.n_replicas,
        });
        self
    }

    /// A value without sampling error.
    pub fn value(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.estimate(name, &McEstimate::exact(v))
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    /// Records a named check; the report passes only if every check does.
    pub fn check(&mut self, name: &str, ok: bool) -> &mut Self {
        self.notes.push(format!("{name}: {}", if ok { "pass" } else { "FAIL" }));
        self.pass &= ok;
        self
    }

    pub fn get(&self, name: &str) -> Option<&EstimateEntry> {
        self.estimates.iter().find(|e| e.name == name)
    }
}
