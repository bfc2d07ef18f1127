//! Exact simulation of the two-type branching particle system.
//!
//! At each site every opposite-type pair carries a clock of rate b|ρ|; each
//! type-1 particle has an individual clock of rate b(1 − |ρ|)·Y(k) and each
//! type-2 particle one of rate b(1 − |ρ|)·X(k); every particle jumps at rate
//! one to a uniform neighbor. A pair event kills both particles and replaces
//! them by 0 or 2 offspring each: for ρ > 0 both get the same number, for
//! ρ < 0 opposite numbers. An individual event replaces one particle by 0 or
//! 2 offspring.
//!
//! Sites are selected through a binary tree of per-site total rates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Field, Geometry};
use crate::rng::{Role, StreamKey};
use crate::sde::{run_sbm, SbmParams};
use crate::stats::{McEstimate, Moments, DEFAULT_LEVEL};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    geometry: Geometry,
    pub x: Vec<u64>,
    pub y: Vec<u64>,
}

impl ParticleState {
    pub fn new(geometry: &Geometry, x: Vec<u64>, y: Vec<u64>) -> Result<Self> {
        let n = geometry.site_count();
        if x.len() != n || y.len() != n {
            return Err(Error::config(format!(
                "particle counts need {n} sites, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self {
            t: 0.0,
            geometry: geometry.clone(),
            x,
            y,
        })
    }

    /// Counts round(n·density) per site.
    pub fn from_density(u: &Field, v: &Field, n: u64) -> Result<Self> {
        if u.geometry() != v.geometry() {
            return Err(Error::config("densities live on different geometries"));
        }
        u.require_nonnegative()?;
        v.require_nonnegative()?;
        let scale = n as f64;
        let round = |f: &Field| f.values().iter().map(|&d| (scale * d).round() as u64).collect();
        Self::new(u.geometry(), round(u), round(v))
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn total_x(&self) -> u64 {
        self.x.iter().sum()
    }

    pub fn total_y(&self) -> u64 {
        self.y.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParticleParams {
    pub b: f64,
    pub rho: f64,
    /// each particle carries mass 1/n
    pub mass_scale: u64,
}

impl ParticleParams {
    pub fn new(b: f64, rho: f64, mass_scale: u64) -> Result<Self> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::config(format!("branching rate must be >= 0, got {b}")));
        }
        if !(rho.abs() <= 1.0) {
            return Err(Error::config(format!("correlation must lie in [-1, 1], got {rho}")));
        }
        if mass_scale == 0 {
            return Err(Error::config("mass scale n must be positive"));
        }
        Ok(Self { b, rho, mass_scale })
    }

    fn pair_rate(&self) -> f64 {
        self.b * self.rho.abs()
    }

    fn single_rate(&self) -> f64 {
        self.b * (1.0 - self.rho.abs())
    }

    fn site_rate(&self, x: u64, y: u64) -> f64 {
        let xy = x as f64 * y as f64;
        (self.pair_rate() + 2.0 * self.single_rate()) * xy + (x + y) as f64
    }
}

pub fn total_event_rate(state: &ParticleState, params: &ParticleParams) -> f64 {
    state
        .x
        .iter()
        .zip(&state.y)
        .map(|(&x, &y)| params.site_rate(x, y))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Pair,
    SingleX,
    SingleY,
    MigrateX,
    MigrateY,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Pair => "pair",
            Channel::SingleX => "single_x",
            Channel::SingleY => "single_y",
            Channel::MigrateX => "migrate_x",
            Channel::MigrateY => "migrate_y",
        }
    }
}

/// One count change; a migration produces two records with the same time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub site: usize,
    pub channel: Channel,
    pub dx: i64,
    pub dy: i64,
}

/// Binary tree of nonnegative leaf weights with O(log n) update and search.
struct RateTree {
    size: usize,
    nodes: Vec<f64>,
}

impl RateTree {
    fn new(leaves: &[f64]) -> Self {
        let size = leaves.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + leaves.len()].copy_from_slice(leaves);
        for k in (1..size).rev() {
            nodes[k] = nodes[2 * k] + nodes[2 * k + 1];
        }
        Self { size, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, leaf: usize, value: f64) {
        let mut k = leaf + self.size;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `target` ∈ [0, total).
    fn find(&self, mut target: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.nodes[2 * k];
            if target < left || self.nodes[2 * k + 1] == 0.0 {
                k *= 2;
            } else {
                target -= left;
                k = 2 * k + 1;
            }
        }
        k - self.size
    }
}

#[derive(Clone, Debug)]
pub struct ParticleRun {
    /// snapshots at the record times
    pub snapshots: Vec<ParticleState>,
    pub events: u64,
    pub log: Option<Vec<EventRecord>>,
}

/// Gillespie simulation on [0, horizon], recording the state at each time of
/// `record_times` (nondecreasing, within [0, horizon]).
pub fn simulate_particles(
    init: &ParticleState,
    params: &ParticleParams,
    horizon: f64,
    key: StreamKey,
    record_times: &[f64],
    keep_log: bool,
) -> Result<ParticleRun> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config(format!("horizon must be >= 0, got {horizon}")));
    }
    if record_times.iter().any(|&t| !(0.0..=horizon).contains(&t))
        || record_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::config("record times must be nondecreasing within [0, horizon]"));
    }
    let mut rng = key.rng();
    let mut state = init.clone();
    state.t = 0.0;
    let rates: Vec<f64> = state
        .x
        .iter()
        .zip(&state.y)
        .map(|(&x, &y)| params.site_rate(x, y))
        .collect();
    let mut tree = RateTree::new(&rates);
    let mut snapshots = Vec::with_capacity(record_times.len());
    let mut next_record = 0;
    let mut events = 0u64;
    let mut log = keep_log.then(Vec::new);
    let end = record_times.last().copied().unwrap_or(horizon).min(horizon);

    loop {
        let total = tree.total();
        let t_next = if total > 0.0 {
            state.t - (-rng.random::<f64>()).ln_1p() / total
        } else {
            f64::INFINITY
        };
        while next_record < record_times.len() && record_times[next_record] < t_next {
            let mut snap = state.clone();
            snap.t = record_times[next_record];
            snapshots.push(snap);
            next_record += 1;
        }
        if t_next > end {
            break;
        }
        state.t = t_next;
        let site = tree.find(rng.random::<f64>() * total);
        apply_event(&mut state, params, site, &mut rng, &mut tree, log.as_mut());
        events += 1;
    }
    state.t = end;
    Ok(ParticleRun {
        snapshots,
        events,
        log,
    })
}

fn apply_event(
    state: &mut ParticleState,
    params: &ParticleParams,
    site: usize,
    rng: &mut ChaCha8Rng,
    tree: &mut RateTree,
    log: Option<&mut Vec<EventRecord>>,
) {
    let (x, y) = (state.x[site], state.y[site]);
    let xy = x as f64 * y as f64;
    let pair = params.pair_rate() * xy;
    let single = params.single_rate() * xy;
    let weights = [pair, single, single, x as f64, y as f64];
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut pick = 4;
    for (k, &w) in weights.iter().enumerate() {
        if target < w {
            pick = k;
            break;
        }
        target -= w;
    }
    // guard against rounding picking an empty channel
    while weights[pick] == 0.0 {
        pick = (pick + 4) % 5;
    }
    let up = rng.random::<bool>();
    let t = state.t;
    let mut records = [None, None];
    match pick {
        0 => {
            let (dx, dy) = match (params.rho > 0.0, up) {
                (true, true) => (1, 1),
                (true, false) => (-1, -1),
                (false, true) => (1, -1),
                (false, false) => (-1, 1),
            };
            bump(&mut state.x[site], dx);
            bump(&mut state.y[site], dy);
            records[0] = Some(EventRecord { t, site, channel: Channel::Pair, dx, dy });
        }
        1 | 2 => {
            let d = if up { 1 } else { -1 };
            let (channel, dx, dy) = if pick == 1 {
                (Channel::SingleX, d, 0)
            } else {
                (Channel::SingleY, 0, d)
            };
            bump(&mut state.x[site], dx);
            bump(&mut state.y[site], dy);
            records[0] = Some(EventRecord { t, site, channel, dx, dy });
        }
        _ => {
            let nb = state.geometry.neighbors(site);
            let target_site = nb[rng.random_range(0..nb.len())];
            let (channel, dx, dy) = if pick == 3 {
                state.x[site] -= 1;
                state.x[target_site] += 1;
                (Channel::MigrateX, 1, 0)
            } else {
                state.y[site] -= 1;
                state.y[target_site] += 1;
                (Channel::MigrateY, 0, 1)
            };
            records[0] = Some(EventRecord { t, site, channel, dx: -dx, dy: -dy });
            records[1] = Some(EventRecord { t, site: target_site, channel, dx, dy });
            tree.set(target_site, params.site_rate(state.x[target_site], state.y[target_site]));
        }
    }
    tree.set(site, params.site_rate(state.x[site], state.y[site]));
    if let Some(log) = log {
        log.extend(records.into_iter().flatten());
    }
}

fn bump(count: &mut u64, delta: i64) {
    *count = count.checked_add_signed(delta).expect("event channel requires a particle");
}

/// Moment estimates of the rescaled particle masses for one mass scale.
#[derive(Clone, Debug, Serialize)]
pub struct BridgeRow {
    pub n: u64,
    pub x_mean: McEstimate,
    pub x_second: McEstimate,
    pub y_mean: McEstimate,
    pub y_second: McEstimate,
    /// Σ over the four moments of |particle − diffusion|
    pub discrepancy: f64,
    pub mean_events: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BridgeReport {
    pub horizon: f64,
    pub u_mean: McEstimate,
    pub u_second: McEstimate,
    pub v_mean: McEstimate,
    pub v_second: McEstimate,
    pub rows: Vec<BridgeRow>,
}

impl BridgeReport {
    pub fn discrepancies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.discrepancy).collect()
    }
}

/// Compares E[X̄_T/n], E[(X̄_T/n)²] and the same for Y, with initial counts
/// round(n·density), against diffusion estimates from `sde_replicas` runs.
#[allow(clippy::too_many_arguments)]
pub fn scaling_bridge(
    u0: &Field,
    v0: &Field,
    b: f64,
    rho: f64,
    ns: &[u64],
    sde: &SbmParams,
    replicas: u64,
    sde_replicas: u64,
    seed: u64,
) -> Result<BridgeReport> {
    if replicas < 2 || sde_replicas < 2 {
        return Err(Error::config("scaling bridge needs at least two replicas"));
    }
    let horizon = sde.horizon;
    let sde = SbmParams { b, rho, ..*sde };
    sde.validate()?;
    let steps = sde.steps();
    let sde_totals: Vec<(f64, f64)> = (0..sde_replicas)
        .into_par_iter()
        .map(|r| {
            let mut noise = StreamKey::new(seed, r, Role::Primary).gaussian();
            let s = run_sbm(u0, v0, &sde, &mut noise, steps, |_, _| {})?;
            Ok((s.u.total(), s.v.total()))
        })
        .collect::<Result<_>>()?;
    let est = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let xs: Vec<f64> = sde_totals.iter().map(f).collect();
        McEstimate::from_moments(&Moments::from_slice(&xs), DEFAULT_LEVEL).with_seeds(seed, 0)
    };
    let u_mean = est(&|p| p.0);
    let u_second = est(&|p| p.0 * p.0);
    let v_mean = est(&|p| p.1);
    let v_second = est(&|p| p.1 * p.1);

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let params = ParticleParams::new(b, rho, n)?;
        let init = ParticleState::from_density(u0, v0, n)?;
        let scale = n as f64;
        let outcomes: Vec<(f64, f64, u64)> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let key = StreamKey::new(seed ^ n.rotate_left(40), r, Role::Particle);
                let run = simulate_particles(&init, &params, horizon, key, &[horizon], false)?;
                let s = &run.snapshots[0];
                Ok((s.total_x() as f64 / scale, s.total_y() as f64 / scale, run.events))
            })
            .collect::<Result<_>>()?;
        let est = |f: &dyn Fn(&(f64, f64, u64)) -> f64| {
            let xs: Vec<f64> = outcomes.iter().map(f).collect();
            McEstimate::from_moments(&Moments::from_slice(&xs), DEFAULT_LEVEL).with_seeds(seed, 0)
        };
        let x_mean = est(&|o| o.0);
        let x_second = est(&|o| o.0 * o.0);
        let y_mean = est(&|o| o.1);
        let y_second = est(&|o| o.1 * o.1);
        let discrepancy = (x_mean.mean - u_mean.mean).abs()
            + (x_second.mean - u_second.mean).abs()
            + (y_mean.mean - v_mean.mean).abs()
            + (y_second.mean - v_second.mean).abs();
        let mean_events = outcomes.iter().map(|o| o.2 as f64).sum::<f64>() / replicas as f64;
        rows.push(BridgeRow {
            n,
            x_mean,
            x_second,
            y_mean,
            y_second,
            discrepancy,
            mean_events,
        });
    }
    Ok(BridgeReport {
        horizon,
        u_mean,
        u_second,
        v_mean,
        v_second,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_site(x: u64, y: u64) -> ParticleState {
        ParticleState::new(&Geometry::new(1, 1).unwrap(), vec![x], vec![y]).unwrap()
    }

    #[test]
    fn rates() {
        let p = ParticleParams::new(1.5, 1.0, 1).unwrap();
        assert_eq!(total_event_rate(&single_site(0, 0), &p), 0.0);
        assert_eq!(total_event_rate(&single_site(1, 1), &p), 1.5 + 2.0);
        let p = ParticleParams::new(0.7, 0.0, 1).unwrap();
        assert!((total_event_rate(&single_site(2, 3), &p) - (2.0 * 0.7 * 6.0 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn tree_search() {
        let mut t = RateTree::new(&[1.0, 0.0, 2.0]);
        assert_eq!(t.total(), 3.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.999), 2);
        t.set(1, 4.0);
        assert_eq!(t.find(1.5), 1);
        assert_eq!(t.total(), 7.0);
    }

    #[test]
    fn coupled_pair_event() {
        // a single site has no migration target other than itself
        let p = ParticleParams::new(1.0, 1.0, 1).unwrap();
        let mut seen = [0u32; 2];
        for r in 0..400 {
            let key = StreamKey::new(3, r, Role::Particle);
            let run = simulate_particles(&single_site(1, 1), &p, 50.0, key, &[50.0], true).unwrap();
            let first = run.log.unwrap().into_iter().find(|e| e.channel == Channel::Pair).unwrap();
            assert_eq!(first.dx, first.dy);
            seen[(first.dx > 0) as usize] += 1;
        }
        assert!(seen[0] > 150 && seen[1] > 150, "{seen:?}");
    }

    #[test]
    fn anti_coupled_for_negative_rho() {
        let g = Geometry::new(1, 4).unwrap();
        let init = ParticleState::new(&g, vec![3, 0, 2, 1], vec![2, 2, 0, 1]).unwrap();
        let p = ParticleParams::new(2.0, -1.0, 1).unwrap();
        let run = simulate_particles(&init, &p, 2.0, StreamKey::new(1, 0, Role::Particle), &[2.0], true)
            .unwrap();
        let log = run.log.unwrap();
        assert!(log.iter().filter(|e| e.channel == Channel::Pair).all(|e| e.dx == -e.dy));
        assert!(log.iter().all(|e| e.channel != Channel::SingleX && e.channel != Channel::SingleY));
        let s = &run.snapshots[0];
        assert_eq!(s.total_x() + s.total_y(), 11);
    }

    #[test]
    fn no_branching_conserves_counts() {
        let g = Geometry::new(2, 4).unwrap();
        let mut x = vec![0; 16];
        let mut y = vec![0; 16];
        x[0] = 5;
        y[5] = 7;
        let init = ParticleState::new(&g, x, y).unwrap();
        let p = ParticleParams::new(0.0, 0.3, 1).unwrap();
        let run = simulate_particles(&init, &p, 3.0, StreamKey::new(2, 0, Role::Particle), &[1.0, 3.0], true)
            .unwrap();
        assert!(run.events > 0);
        for s in &run.snapshots {
            assert_eq!((s.total_x(), s.total_y()), (5, 7));
        }
        let log = run.log.unwrap();
        assert_eq!(log.len() as u64, 2 * run.events);
        assert!(log.iter().all(|e| e.t <= 3.0));
    }

    #[test]
    fn rho_one_difference_changes_only_by_migration() {
        let g = Geometry::new(1, 5).unwrap();
        let init = ParticleState::new(&g, vec![4, 1, 0, 2, 3], vec![1, 3, 2, 0, 2]).unwrap();
        let p = ParticleParams::new(3.0, 1.0, 1).unwrap();
        let run = simulate_particles(&init, &p, 1.0, StreamKey::new(4, 0, Role::Particle), &[1.0], true)
            .unwrap();
        for e in run.log.unwrap() {
            if !matches!(e.channel, Channel::MigrateX | Channel::MigrateY) {
                assert_eq!(e.dx, e.dy);
            }
        }
    }

    #[test]
    fn snapshot_at_zero_and_reproducible() {
        let init = single_site(3, 2);
        let p = ParticleParams::new(1.0, 0.5, 1).unwrap();
        let key = StreamKey::new(9, 1, Role::Particle);
        let a = simulate_particles(&init, &p, 2.0, key, &[0.0, 1.0, 2.0], false).unwrap();
        let b = simulate_particles(&init, &p, 2.0, key, &[0.0, 1.0, 2.0], false).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!((a.snapshots[0].x[0], a.snapshots[0].y[0]), (3, 2));
        assert!(simulate_particles(&init, &p, 2.0, key, &[3.0], false).is_err());
    }

    #[test]
    fn density_rounding() {
        let g = Geometry::new(1, 2).unwrap();
        let u = Field::new(g.clone(), vec![0.375, 0.0]).unwrap();
        let v = Field::new(g, vec![0.125, 1.0]).unwrap();
        let s = ParticleState::from_density(&u, &v, 10).unwrap();
        assert_eq!(s.x, vec![4, 0]);
        assert_eq!(s.y, vec![1, 10]);
    }
}
