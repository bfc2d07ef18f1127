//! The deterministic discrete heat equation dζ = Δζ dt, its sign
//! decomposition ζ = ζ⁺ − ζ⁻, and the compensator q that turns ζ⁻ into a
//! sub-solution:
//!
//! ```text
//! q(t,i) = −ζ⁺(t,i) + ζ⁺(0,i) + ∫₀ᵗ Δζ⁺(s,i) ds
//! ζ⁻(t,i) = f⁻(i) + ∫₀ᵗ Δζ⁻(s,i) ds − q(t,i)
//! ```

use crate::error::{Error, Result};
use crate::lattice::{laplacian_into, Field, Geometry, HeatPropagator};

/// Series truncation used for every exact heat step in this module.
const SERIES_TOL: f64 = 1e-16;

#[derive(Clone, Debug)]
pub struct HeatSolution {
    pub geometry: Geometry,
    pub times: Vec<f64>,
    /// ζ_f(t, ·) for each grid time
    pub snapshots: Vec<Field>,
    pub initial: Field,
}

impl HeatSolution {
    pub fn at(&self, k: usize) -> &Field {
        &self.snapshots[k]
    }

    pub fn mass(&self) -> f64 {
        self.initial.total()
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    let Some(&first) = grid.first() else {
        return Err(Error::config("time grid is empty"));
    };
    if first != 0.0 {
        return Err(Error::config(format!("time grid must start at 0, starts at {first}")));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::config("time grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("time grid must be strictly increasing"));
    }
    Ok(())
}

/// ζ_f on the grid, each snapshot propagated from the previous one by the
/// series semigroup.
pub fn solve_heat(f: &Field, grid: &[f64]) -> Result<HeatSolution> {
    validate_grid(grid)?;
    let mut snapshots = Vec::with_capacity(grid.len());
    snapshots.push(f.clone());
    for w in grid.windows(2) {
        let prev = snapshots.last().expect("nonempty");
        let next = HeatPropagator::series(w[1] - w[0], SERIES_TOL)?.apply(prev);
        snapshots.push(next);
    }
    Ok(HeatSolution {
        geometry: f.geometry().clone(),
        times: grid.to_vec(),
        snapshots,
        initial: f.clone(),
    })
}

/// ζ_f on the grid by explicit Euler stepping with step at most `dt`.
pub fn solve_heat_euler(f: &Field, grid: &[f64], dt: f64) -> Result<HeatSolution> {
    validate_grid(grid)?;
    let mut snapshots = vec![f.clone()];
    for w in grid.windows(2) {
        let prev = snapshots.last().expect("nonempty");
        let next = crate::lattice::heat_euler_apply(prev, w[1] - w[0], dt)?;
        snapshots.push(next);
    }
    Ok(HeatSolution {
        geometry: f.geometry().clone(),
        times: grid.to_vec(),
        snapshots,
        initial: f.clone(),
    })
}

/// (z⁺, z⁻) with z = z⁺ − z⁻.
pub fn sign_decompose(z: &Field) -> (Field, Field) {
    (z.map(|v| v.max(0.0)), z.map(|v| (-v).max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureOptions {
    /// Target trapezoid error per step and site.
    pub local_tol: f64,
    /// Bound on the compensator identity residual over the whole horizon.
    pub residual_tol: f64,
    pub max_step: f64,
    /// Bisection depth cap at sign changes.
    pub max_depth: u32,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            local_tol: 1e-10,
            residual_tol: 1e-6,
            max_step: 0.05,
            max_depth: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QTrajectory {
    pub geometry: Geometry,
    pub times: Vec<f64>,
    /// q_f(t, ·) per grid time
    pub q: Vec<Field>,
    /// q̄(t) = ⟨q_f(t), 1⟩
    pub total: Vec<f64>,
    /// ⟨ζ⁻(t), 1⟩ per grid time
    pub negative_mass: Vec<f64>,
    /// ⟨f⁻, 1⟩, the limit of q̄
    pub limit: f64,
    /// worst violation, over grid times and sites, of the ζ⁻ identity or of
    /// the defining formula for q
    pub max_residual: f64,
    /// worst decrease of q(·, i) between consecutive grid times
    pub max_decrease: f64,
    pub steps: usize,
    pub refinements: usize,
}

impl QTrajectory {
    /// First grid time with q̄^∞ − q̄(t) ≤ eps.
    pub fn settle_time(&self, eps: f64) -> Option<(usize, f64)> {
        self.total
            .iter()
            .position(|&q| self.limit - q <= eps)
            .map(|k| (k, self.times[k]))
    }
}

pub fn q_compensator(f: &Field, grid: &[f64]) -> Result<QTrajectory> {
    q_compensator_with(f, grid, &QuadratureOptions::default())
}

struct QState {
    t: f64,
    zeta: Vec<f64>,
    lap_plus: Vec<f64>,
    lap_minus: Vec<f64>,
    int_plus: Vec<f64>,
    int_minus: Vec<f64>,
    q: Vec<f64>,
}

struct QIntegrator<'a> {
    geometry: &'a Geometry,
    f_plus: Vec<f64>,
    opts: QuadratureOptions,
    scratch: Vec<f64>,
    max_decrease: f64,
    steps: usize,
    refinements: usize,
}

impl QIntegrator<'_> {
    fn laps(&self, zeta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let plus: Vec<f64> = zeta.iter().map(|v| v.max(0.0)).collect();
        let minus: Vec<f64> = zeta.iter().map(|v| (-v).max(0.0)).collect();
        let mut lp = vec![0.0; zeta.len()];
        let mut lm = vec![0.0; zeta.len()];
        laplacian_into(self.geometry, &plus, &mut lp);
        laplacian_into(self.geometry, &minus, &mut lm);
        (lp, lm)
    }

    /// ∂ₜq(i) on an interval where ζ(·, i) has sign `sign`: the neighbor
    /// average of ζ⁻ where ζ(i) > 0 and of ζ⁺ where ζ(i) < 0.
    fn rate(&self, zeta: &[f64], i: usize, sign: f64) -> f64 {
        let nb = self.geometry.neighbors(i);
        let inv = 1.0 / nb.len() as f64;
        if sign > 0.0 {
            nb.iter().map(|&j| (-zeta[j]).max(0.0)).sum::<f64>() * inv
        } else if sign < 0.0 {
            nb.iter().map(|&j| zeta[j].max(0.0)).sum::<f64>() * inv
        } else {
            0.0
        }
    }

    /// Sign of ζ(·, i) on the open interval between two states.
    fn interval_sign(&self, a: &[f64], b: &[f64], lap_a: &[f64], i: usize) -> f64 {
        if a[i] != 0.0 {
            a[i].signum()
        } else if b[i] != 0.0 {
            b[i].signum()
        } else if lap_a[i] != 0.0 {
            lap_a[i].signum()
        } else {
            0.0
        }
    }

    fn q_def(&self, s: &QState, i: usize) -> f64 {
        -s.zeta[i].max(0.0) + self.f_plus[i] + s.int_plus[i]
    }

    /// Step size from the trapezoid error bound h³/12 · sup|∂²Δζ⁺| ≤ h³/6 · max|Δ²ζ|.
    fn step_size(&self, zeta: &[f64]) -> f64 {
        let n = zeta.len();
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        laplacian_into(self.geometry, zeta, &mut d1);
        laplacian_into(self.geometry, &d1, &mut d2);
        let m = d2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m == 0.0 {
            return self.opts.max_step;
        }
        (6.0 * self.opts.local_tol / m).cbrt().min(self.opts.max_step)
    }

    fn advance(&mut self, s: &mut QState, h: f64, depth: u32) -> Result<()> {
        let prop = HeatPropagator::series(h, SERIES_TOL)?;
        let mut next = vec![0.0; s.zeta.len()];
        prop.apply_into(self.geometry, &s.zeta, &mut next, &mut self.scratch);
        // A sign change misattributes at most h times the local scale of the
        // rates and Laplacians; bisect until that is below the local tolerance.
        let kink = (0..next.len()).any(|i| {
            let (a, b) = (s.zeta[i], next[i]);
            if !((a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)) {
                return false;
            }
            let scale = self
                .geometry
                .neighbors(i)
                .iter()
                .fold(a.abs().max(b.abs()), |m, &j| m.max(s.zeta[j].abs()).max(next[j].abs()));
            h * scale > self.opts.local_tol
        });
        if kink && depth < self.opts.max_depth {
            self.refinements += 1;
            self.advance(s, h / 2.0, depth + 1)?;
            return self.advance(s, h / 2.0, depth + 1);
        }
        let n = next.len();
        let mut lap_a = vec![0.0; n];
        laplacian_into(self.geometry, &s.zeta, &mut lap_a);
        let (lp, lm) = self.laps(&next);
        for i in 0..n {
            let sign = self.interval_sign(&s.zeta, &next, &lap_a, i);
            let dq = 0.5 * h * (self.rate(&s.zeta, i, sign) + self.rate(&next, i, sign));
            s.q[i] += dq;
            s.int_plus[i] += 0.5 * h * (s.lap_plus[i] + lp[i]);
            s.int_minus[i] += 0.5 * h * (s.lap_minus[i] + lm[i]);
        }
        s.zeta = next;
        s.lap_plus = lp;
        s.lap_minus = lm;
        s.t += h;
        self.steps += 1;
        Ok(())
    }
}

/// The compensator q_f on the grid.
///
/// On every interval where ζ(·, i) keeps its sign, the defining relation
/// reduces to ∂ₜq(i) = avg_{j~i} ζ⁻(j) (ζ(i) > 0) or avg_{j~i} ζ⁺(j)
/// (ζ(i) < 0), so q is integrated from that nonnegative rate with adaptive
/// trapezoid steps, bisecting wherever some site changes sign within a step.
/// Both the defining formula `−ζ⁺ + f⁺ + ∫Δζ⁺` and the identity for ζ⁻ are
/// checked against the result at every grid time; a gap above
/// `opts.residual_tol` fails with [`Error::Quadrature`].
pub fn q_compensator_with(
    f: &Field,
    grid: &[f64],
    opts: &QuadratureOptions,
) -> Result<QTrajectory> {
    validate_grid(grid)?;
    let geometry = f.geometry();
    let (f_plus, f_minus) = sign_decompose(f);
    let mut integ = QIntegrator {
        geometry,
        f_plus: f_plus.values().to_vec(),
        opts: *opts,
        scratch: Vec::new(),
        max_decrease: 0.0,
        steps: 0,
        refinements: 0,
    };
    let zeta = f.values().to_vec();
    let (lap_plus, lap_minus) = integ.laps(&zeta);
    let n = zeta.len();
    let mut state = QState {
        t: 0.0,
        zeta,
        lap_plus,
        lap_minus,
        int_plus: vec![0.0; n],
        int_minus: vec![0.0; n],
        q: vec![0.0; n],
    };

    let mut q = vec![Field::zeros(geometry)];
    let mut total = vec![0.0];
    let mut negative_mass = vec![f_minus.total()];
    let mut max_residual = 0.0f64;

    for &target in &grid[1..] {
        while state.t < target {
            let mut h = integ.step_size(&state.zeta);
            let remaining = target - state.t;
            if h >= remaining || remaining - h < 1e-12 * target.max(1.0) {
                h = remaining;
            }
            integ.advance(&mut state, h, 0)?;
        }
        state.t = target;
        for i in 0..n {
            let zeta_minus = (-state.zeta[i]).max(0.0);
            let identity = (zeta_minus - f_minus.get(i) - state.int_minus[i] + state.q[i]).abs();
            let definition = (state.q[i] - integ.q_def(&state, i)).abs();
            let residual = identity.max(definition);
            if residual > opts.residual_tol {
                return Err(Error::Quadrature {
                    site: i,
                    time: target,
                    residual,
                    tolerance: opts.residual_tol,
                });
            }
            max_residual = max_residual.max(residual);
        }
        let qf = Field::from_raw(geometry.clone(), state.q.clone());
        if let Some(prev) = q.last() {
            let drop = prev
                .values()
                .iter()
                .zip(qf.values())
                .fold(0.0f64, |m, (a, b)| m.max(a - b));
            integ.max_decrease = integ.max_decrease.max(drop);
        }
        total.push(qf.total());
        q.push(qf);
        let zf = Field::from_raw(geometry.clone(), state.zeta.clone());
        negative_mass.push(sign_decompose(&zf).1.total());
    }

    Ok(QTrajectory {
        geometry: geometry.clone(),
        times: grid.to_vec(),
        q,
        total,
        negative_mass,
        limit: f_minus.total(),
        max_residual,
        max_decrease: integ.max_decrease,
        steps: integ.steps,
        refinements: integ.refinements,
    })
}

/// ⟨|ζ_f(t) − ζ^M(t)|, 1⟩ where ζ^M starts from M·1_{origin}, M = ⟨f, 1⟩.
///
/// `f` is expected to be centered at the origin of the torus.
pub fn l1_distance_to_point_source(f: &Field, t: f64) -> Result<f64> {
    let mass = f.total();
    let mut g = f.clone();
    g.values_mut()[f.geometry().origin()] -= mass;
    // linearity: ζ_f − ζ^M = ζ_{f − M·1_0}
    let evolved = HeatPropagator::series(t, SERIES_TOL)?.apply(&g);
    Ok(evolved.abs_total())
}

/// t ↦ ⟨ζ_f⁻(t), 1⟩ on the grid.
pub fn negative_mass_path(f: &Field, grid: &[f64]) -> Result<Vec<f64>> {
    let sol = solve_heat(f, grid)?;
    Ok(sol
        .snapshots
        .iter()
        .map(|z| sign_decompose(z).1.total())
        .collect())
}

/// t ↦ ⟨ζ_f⁺(t), 1⟩ on the grid.
pub fn positive_mass_path(f: &Field, grid: &[f64]) -> Result<Vec<f64>> {
    let sol = solve_heat(f, grid)?;
    Ok(sol
        .snapshots
        .iter()
        .map(|z| sign_decompose(z).0.total())
        .collect())
}

/// 0, then `count` geometrically spaced times from `first` to `last`.
pub fn geometric_grid(first: f64, last: f64, count: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if count == 1 {
        grid.push(last);
        return grid;
    }
    let ratio = (last / first).powf(1.0 / (count - 1) as f64);
    grid.extend((0..count).map(|k| {
        if k + 1 == count {
            last
        } else {
            first * ratio.powi(k as i32)
        }
    }));
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::heat_semigroup_apply;
    use proptest::prelude::*;

    fn line(l: usize) -> Geometry {
        Geometry::new(1, l).unwrap()
    }

    fn dipole(g: &Geometry) -> Field {
        Field::from_sites(g, &[(vec![0], 2.0), (vec![1], -1.0)]).unwrap()
    }

    #[test]
    fn grid_validation() {
        let f = Field::zeros(&line(4));
        assert!(solve_heat(&f, &[]).is_err());
        assert!(solve_heat(&f, &[0.5, 1.0]).is_err());
        assert!(solve_heat(&f, &[0.0, 1.0, 1.0]).is_err());
        assert!(q_compensator(&f, &[]).is_err());
    }

    #[test]
    fn zero_and_constant_initial_data() {
        let g = Geometry::new(2, 5).unwrap();
        let grid = [0.0, 0.5, 3.0];
        let z = solve_heat(&Field::zeros(&g), &grid).unwrap();
        assert!(z.snapshots.iter().all(|s| s.max_abs() == 0.0));
        let c = solve_heat(&Field::constant(&g, 2.5), &grid).unwrap();
        assert!(c.snapshots.iter().all(|s| s.values().iter().all(|v| (v - 2.5).abs() < 1e-13)));
    }

    #[test]
    fn snapshots_match_semigroup_and_conserve_mass() {
        let g = line(40);
        let f = dipole(&g);
        let grid = [0.0, 0.3, 1.0, 4.0, 9.5];
        let sol = solve_heat(&f, &grid).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let direct = heat_semigroup_apply(&f, t, 1e-15).unwrap();
            assert!(sol.at(k).max_abs_diff(&direct) < 1e-8);
            assert!((sol.at(k).total() - f.total()).abs() <= 1e-8 * f.abs_total());
        }
        let euler = solve_heat_euler(&f, &grid, 1e-3).unwrap();
        for k in 0..grid.len() {
            assert!(euler.at(k).max_abs_diff(sol.at(k)) < 0.3 * 1e-3 * f.max_abs());
        }
    }

    #[test]
    fn sign_decomposition() {
        let g = line(6);
        let z = Field::new(g.clone(), vec![1.0, -2.0, 0.0, 3.5, -0.25, 0.0]).unwrap();
        let (p, m) = sign_decompose(&z);
        assert_eq!(p.sub(&m), z);
        assert!(p.values().iter().zip(m.values()).all(|(a, b)| a * b == 0.0));
        assert!((z.abs_total() - p.total() - m.total()).abs() < 1e-15);
        let (p, m) = sign_decompose(&Field::point(&g, 2, -3.0));
        assert_eq!(p.max_abs(), 0.0);
        assert_eq!(m.get(2), 3.0);
        let pos = Field::constant(&g, 0.4);
        assert_eq!(sign_decompose(&pos), (pos.clone(), Field::zeros(&g)));
    }

    #[test]
    fn compensator_vanishes_for_nonnegative_data() {
        let g = line(16);
        let f = Field::from_sites(&g, &[(vec![0], 1.0), (vec![3], 2.0)]).unwrap();
        let q = q_compensator(&f, &[0.0, 0.5, 2.0, 8.0]).unwrap();
        assert!(q.q.iter().all(|qf| qf.max_abs() == 0.0));
        assert_eq!(q.limit, 0.0);
    }

    #[test]
    fn compensator_identity_and_monotonicity() {
        let g = line(64);
        let f = dipole(&g);
        let grid = geometric_grid(0.05, 50.0, 25);
        let q = q_compensator(&f, &grid).unwrap();
        assert!(q.max_residual <= 1e-6);
        assert!(q.max_decrease <= 1e-8, "{}", q.max_decrease);
        assert!(q.total.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert!(q.q.iter().all(|qf| qf.values().iter().all(|&v| v >= -1e-8)));
        assert_eq!(q.total[0], 0.0);
        // ⟨ζ⁺⟩ − ⟨ζ⁻⟩ = M and q̄ = ⟨f⁻⟩ − ⟨ζ⁻⟩ on the torus
        let pos = positive_mass_path(&f, &grid).unwrap();
        for k in 0..grid.len() {
            assert!((pos[k] - q.negative_mass[k] - 1.0).abs() < 1e-9);
            assert!((q.total[k] - (q.limit - q.negative_mass[k])).abs() < 1e-6);
        }
    }

    #[test]
    fn compensator_limit_on_long_horizon() {
        let g = line(64);
        let q = q_compensator(&dipole(&g), &[0.0, 1.0, 10.0, 200.0]).unwrap();
        assert!((q.total[3] - 1.0).abs() < 1e-2);
        assert!(q.negative_mass[3] <= 1e-2);
        assert!(q.settle_time(0.01).is_some());
    }

    #[test]
    fn compensator_two_dimensions() {
        let g = Geometry::new(2, 12).unwrap();
        let f = Field::from_sites(&g, &[(vec![0, 0], 1.0), (vec![1, 0], -1.5), (vec![0, -1], 1.0)]).unwrap();
        let q = q_compensator(&f, &geometric_grid(0.1, 20.0, 10)).unwrap();
        assert!(q.max_decrease <= 1e-8);
        assert!(q.total.last().unwrap() > &1.0);
    }

    #[test]
    fn l1_distance_examples() {
        let g = line(128);
        let f = Field::point(&g, 0, 3.0);
        for t in [0.0, 1.0, 10.0] {
            assert!(l1_distance_to_point_source(&f, t).unwrap() < 1e-12);
        }
        let e1 = Field::point(&g, 1, 1.0);
        assert!((l1_distance_to_point_source(&e1, 0.0).unwrap() - 2.0).abs() < 1e-15);
        let d: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&t| l1_distance_to_point_source(&e1, t).unwrap())
            .collect();
        assert!(d[2] < d[1] && d[1] < d[0]);
        assert!(d[0] <= e1.abs_total() + 1.0);
    }

    #[test]
    fn negative_mass_decays_when_mass_nonnegative() {
        let g = line(64);
        let path = negative_mass_path(&dipole(&g), &geometric_grid(0.1, 100.0, 12)).unwrap();
        let first = path.iter().copied().find(|&v| v > 0.0).unwrap();
        assert!(path.last().unwrap() < &first);
        let pos = negative_mass_path(&Field::point(&g, 5, 1.0), &[0.0, 1.0, 5.0]).unwrap();
        assert!(pos.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn superposition(
            a in proptest::collection::vec(-5.0f64..5.0, 10),
            b in proptest::collection::vec(-5.0f64..5.0, 10),
            t in 0.0f64..20.0,
        ) {
            let g = line(10);
            let fa = Field::new(g.clone(), a).unwrap();
            let fb = Field::new(g.clone(), b).unwrap();
            let grid = [0.0, t.max(1e-3)];
            let sa = solve_heat(&fa, &grid).unwrap();
            let sb = solve_heat(&fb, &grid).unwrap();
            let sd = solve_heat(&fa.sub(&fb), &grid).unwrap();
            let diff = sa.at(1).sub(sb.at(1));
            prop_assert!(diff.max_abs_diff(sd.at(1)) <= 1e-10);
        }
    }

    #[test]
    fn shifted_walk_kernels_merge() {
        // Σ_i |pⁿ(0, i − 2) − pⁿ(0, i)| for the discrete simple walk on Z (period 2)
        let width = 801;
        let mut p = vec![0.0f64; width];
        p[width / 2] = 1.0;
        let mut prev = f64::INFINITY;
        for n in 1..=300u32 {
            let mut next = vec![0.0f64; width];
            for i in 1..width - 1 {
                next[i] = 0.5 * (p[i - 1] + p[i + 1]);
            }
            p = next;
            if n % 2 == 0 {
                let gap: f64 = (2..width).map(|i| (p[i - 2] - p[i]).abs()).sum();
                assert!(gap <= prev + 1e-15, "n = {n}");
                assert!(gap * f64::from(n).sqrt() < 4.0);
                prev = gap;
            }
        }
        assert!(prev < 0.15);
    }
}
