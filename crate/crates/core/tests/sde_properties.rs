use rand::Rng;
use rand_distr::StandardNormal;

use sbm_core::lattice::{heat_semigroup_apply, Field, Geometry};
use sbm_core::rng::{NoiseSource, Role, StreamKey};
use sbm_core::sde::{
    simulate_pam_with_noise, simulate_sbm, simulate_sbm_bounded, simulate_sbm_with_noise, SbmParams, Scheme,
};
use sbm_core::stats::{McEstimate, Moments, DEFAULT_LEVEL};

fn estimate(xs: &[f64]) -> McEstimate {
    McEstimate::from_moments(&Moments::from_slice(xs), DEFAULT_LEVEL)
}

fn ring(side: usize) -> Geometry {
    Geometry::new(1, side).unwrap()
}

fn sites(g: &Geometry, list: &[(i64, f64)]) -> Field {
    let list: Vec<(Vec<i64>, f64)> = list.iter().map(|&(i, m)| (vec![i], m)).collect();
    Field::from_sites(g, &list).unwrap()
}

/// Replays a fixed sequence of standard normals.
struct Replay {
    draws: Vec<f64>,
    next: usize,
}

impl NoiseSource for Replay {
    fn standard_normal(&mut self) -> f64 {
        let x = self.draws[self.next];
        self.next += 1;
        x
    }

    fn feller(&mut self, x: f64, _scale: f64) -> f64 {
        x
    }
}

/// Fine-level normals per (step, site), summed in blocks of `block` steps and
/// renormalized so each coarse step sees the matching Brownian increment.
fn coarsen(fine: &[Vec<f64>], block: usize) -> Vec<f64> {
    let scale = (block as f64).sqrt();
    fine.chunks(block)
        .flat_map(|chunk| {
            (0..chunk[0].len()).map(move |i| chunk.iter().map(|row| row[i]).sum::<f64>() / scale)
        })
        .collect()
}

#[test]
fn pam_mean_follows_the_heat_semigroup() {
    let g = ring(8);
    let w0 = sites(&g, &[(0, 2.0), (3, 1.0)]);
    let p = SbmParams::new(0.5, 1.0, 0.01, 1.0).unwrap().with_scheme(Scheme::SplitStep);
    let n = 4000;
    let finals: Vec<Field> = (0..n)
        .map(|r| {
            let mut noise = StreamKey::new(21, r, Role::Primary).gaussian();
            simulate_pam_with_noise(&w0, &p, &mut noise, &[1.0]).unwrap().states[0].w.clone()
        })
        .collect();
    let exact = heat_semigroup_apply(&w0, 1.0, 1e-16).unwrap();
    for i in 0..g.site_count() {
        let xs: Vec<f64> = finals.iter().map(|w| w.get(i)).collect();
        let e = estimate(&xs);
        assert!(
            (e.mean - exact.get(i)).abs() <= 3.0 * e.std_error,
            "site {i}: {} ± {} vs {}",
            e.mean,
            e.std_error,
            exact.get(i)
        );
    }
}

#[test]
fn pam_schemes_agree_on_total_mass() {
    let g = ring(8);
    let w0 = sites(&g, &[(0, 1.0), (1, 1.0)]);
    let base = SbmParams::new(1.0, 1.0, 0.01, 1.0).unwrap();
    let n = 4000;
    let run = |scheme: Scheme, role: Role| {
        let p = base.with_scheme(scheme);
        let xs: Vec<f64> = (0..n)
            .map(|r| {
                let mut noise = StreamKey::new(22, r, role).gaussian();
                simulate_pam_with_noise(&w0, &p, &mut noise, &[1.0]).unwrap().states[0].w.total()
            })
            .collect();
        estimate(&xs)
    };
    let split = run(Scheme::SplitStep, Role::Primary);
    let euler = run(Scheme::TruncatedEuler, Role::Reference);
    let se = split.std_error.hypot(euler.std_error);
    assert!((split.mean - euler.mean).abs() <= 3.0 * se, "{split:?} vs {euler:?}");
}

#[test]
fn geometric_brownian_motion_on_one_site() {
    let g = ring(1);
    let w0 = Field::constant(&g, 1.0);
    let p = SbmParams::new(1.0, 1.0, 0.05, 1.0).unwrap().with_scheme(Scheme::SplitStep);
    let xs: Vec<f64> = (0..20_000)
        .map(|r| {
            let mut noise = StreamKey::new(23, r, Role::Primary).gaussian();
            simulate_pam_with_noise(&w0, &p, &mut noise, &[1.0]).unwrap().states[0].w.get(0)
        })
        .collect();
    let first = estimate(&xs);
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let second = estimate(&sq);
    assert!((first.mean - 1.0).abs() <= 3.0 * first.std_error);
    assert!((second.mean - 1f64.exp()).abs() <= 3.0 * second.std_error);
}

#[test]
fn truncation_bias_shrinks_under_refinement() {
    let g = ring(4);
    let u0 = sites(&g, &[(0, 2.0), (1, 0.5)]);
    let v0 = sites(&g, &[(1, 1.0), (2, 1.5)]);
    let levels = [0.2, 0.1, 0.05, 0.025];
    let fine_steps = (1.0 / levels[3]) as usize;
    let replicas = 3000;
    let mut bias = vec![0.0; levels.len()];
    for r in 0..replicas {
        let mut rng = StreamKey::new(24, r, Role::Oracle).rng();
        let fine: Vec<Vec<f64>> = (0..fine_steps)
            .map(|_| (0..g.site_count()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        for (k, &dt) in levels.iter().enumerate() {
            let p = SbmParams::new(2.0, 1.0, dt, 1.0).unwrap();
            let block = fine_steps / p.steps() as usize;
            let mut noise = Replay {
                draws: coarsen(&fine, block),
                next: 0,
            };
            let total = simulate_sbm_with_noise(&u0, &v0, &p, &mut noise, &[1.0]).unwrap().states[0]
                .u
                .total();
            bias[k] += (total - u0.total()) / replicas as f64;
        }
    }
    assert!(bias.iter().all(|&b| b > 0.0), "bias {bias:?}");
    assert!(bias.windows(2).all(|w| w[1] < w[0]), "bias {bias:?}");
    assert!(bias[3] < 0.5 * bias[0], "bias {bias:?}");
}

#[test]
fn huge_bound_matches_unbounded_moments() {
    let g = ring(6);
    let u0 = sites(&g, &[(0, 1.0), (2, 0.5)]);
    let v0 = sites(&g, &[(1, 1.0)]);
    let p = SbmParams::new(1.0, 0.5, 0.01, 1.0).unwrap();
    let bounded = p.with_bound(1e6).unwrap();
    let n = 2000;
    let totals = |params: &SbmParams, bounded: bool, base: u64| {
        let xs: Vec<f64> = (0..n)
            .map(|r| {
                let t = if bounded {
                    simulate_sbm_bounded(&u0, &v0, params, base + r, &[1.0])
                } else {
                    simulate_sbm(&u0, &v0, params, base + r, &[1.0])
                };
                t.unwrap().states[0].u.total()
            })
            .collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        (estimate(&xs), estimate(&sq))
    };
    let (m1, s1) = totals(&p, false, 0);
    let (m2, s2) = totals(&bounded, true, 1_000_000);
    assert!((m1.mean - m2.mean).abs() <= 3.0 * m1.std_error.hypot(m2.std_error));
    assert!((s1.mean - s2.mean).abs() <= 3.0 * s1.std_error.hypot(s2.std_error));
}

#[test]
fn record_time_zero_is_the_initial_state() {
    let g = ring(5);
    let u0 = sites(&g, &[(0, 1.0)]);
    let v0 = sites(&g, &[(2, 1.0)]);
    let p = SbmParams::new(1.0, 0.0, 0.1, 1.0).unwrap();
    let t = simulate_sbm(&u0, &v0, &p, 3, &[0.0]).unwrap();
    assert_eq!(t.states[0].u, u0);
    assert_eq!(t.states[0].v, v0);
    assert_eq!(t.states[0].t, 0.0);
}
